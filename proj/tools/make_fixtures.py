"""Regenerates the small fixtures under data/fixtures (deterministic)."""

import pathlib
import random
import struct

ROOT = pathlib.Path(__file__).resolve().parent.parent / "data" / "fixtures"


def write_aakt(path, shape, values):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"AAKT")
        f.write(struct.pack("<II", 1, len(shape)))
        for n in shape:
            f.write(struct.pack("<Q", n))
        f.write(struct.pack("<%dd" % len(values), *values))


def write_meta(path, query, gallery):
    lines = []
    for role, rows in (("query", query), ("gallery", gallery)):
        for tid, ident, cam, amb in rows:
            extra = ",".join(str(a) for a in amb) if amb else "-"
            lines.append(f"{role} {tid} {ident} {cam} {extra}")
    path.write_text("\n".join(lines) + "\n")


def eval_fixture():
    d = ROOT / "eval"
    d.mkdir(parents=True, exist_ok=True)
    query = [
        (1, 1, 1, []), (2, 2, 1, []), (3, 3, 2, []),
        (4, 4, 2, []), (5, 5, 1, []), (6, 7, 3, []),
    ]
    gallery = [
        (101, 1, 2, []), (102, 0, 1, []), (103, 2, 2, [3]), (104, 0, 1, []),
        (105, 3, 1, []), (106, 3, 2, []), (107, 4, 1, []), (108, 0, 2, []),
        (109, 5, 2, []), (110, 6, 2, []), (111, 2, 3, []), (112, 0, 3, []),
    ]
    rng = random.Random(7)
    dist = [round(rng.uniform(0.1, 2.0) * 20) / 20 for _ in range(len(query) * len(gallery))]
    write_meta(d / "meta.txt", query, gallery)
    write_aakt(d / "distances.aakt", [len(query), len(gallery)], dist)
    (d / "corrections.txt").write_text(
        "# corrections for the evaluation fixture\n"
        "VERSION 1\n"
        "RELABEL 110 7\n"
        "AMBIG 105 4\n"
        "DUPDIST 1 102\n"
        "DUPDIST 5 104\n"
    )


def duplicate_fixture():
    d = ROOT / "duplicate_distractor"
    d.mkdir(parents=True, exist_ok=True)
    write_meta(d / "meta.txt", [(100, 5, 1, [])],
               [(200, 0, 1, []), (201, 5, 2, []), (202, 9, 2, [])])
    write_aakt(d / "distances.aakt", [1, 3], [0.1, 0.2, 0.3])
    (d / "corrections.txt").write_text("VERSION 1\nDUPDIST 100 200\n")


def align_fixture():
    d = ROOT / "align"
    h, w = 48, 32
    people = {"A": (0.9, 0.2, 0.2), "B": (0.2, 0.3, 0.9)}
    # frame -> list of (who, x, y, bw, bh, conf); B occludes A in frame 2
    script = {
        "t001": [
            [("A", 4, 4, 14, 40, 0.95)],
            [("A", 5, 4, 14, 40, 0.9), ("B", 20, 10, 8, 30, 0.7)],
            [("A", 6, 6, 8, 30, 0.6), ("B", 8, 2, 20, 44, 0.99)],
            [("A", 7, 4, 14, 40, 0.9)],
        ],
        "t002": [
            [("B", 10, 6, 16, 36, 0.9)],
            [],
            [("B", 11, 6, 16, 36, 0.85)],
        ],
    }
    features = {"A": (1.0, 0.0), "B": (0.0, 1.0)}
    rows = ["# D=2"]
    for tid, frames in script.items():
        for k, boxes in enumerate(frames):
            img = [[[0.5 for _ in range(w)] for _ in range(h)] for _ in range(3)]
            for who, x, y, bw, bh, conf in boxes:
                for c in range(3):
                    for yy in range(y, y + bh):
                        for xx in range(x, x + bw):
                            img[c][yy][xx] = people[who][c]
                fx, fy = features[who]
                rows.append(f"{tid}\t{k}\t{x}\t{y}\t{bw}\t{bh}\t{conf}\t{fx}\t{fy}")
            flat = [v for ch in img for row in ch for v in row]
            write_aakt(d / "frames" / tid / f"frame_{k}.aakt", [3, h, w], flat)
    (d / "candidates.tsv").write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    eval_fixture()
    duplicate_fixture()
    align_fixture()
