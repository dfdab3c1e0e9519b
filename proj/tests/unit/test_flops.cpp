#include <doctest.h>

#include "cfaan/errors.hpp"
#include "cfaan/flops.hpp"

using namespace cfaan;

namespace {

AttentionConfig tiny(std::size_t c_in, std::size_t c_qk, std::size_t c_out, std::size_t heads,
                     std::size_t scales, Encoding enc, std::size_t T, std::size_t H, std::size_t W) {
  AttentionConfig c;
  c.c_in = c_in;
  c.c_qk = c_qk;
  c.c_out = c_out;
  c.heads = heads;
  c.scales = scales;
  c.encoding = enc;
  c.frames = T;
  c.height = H;
  c.width = W;
  return c;
}

// Direct per-frame MAC count of a residual 50-layer net, written out stage by stage.
std::uint64_t hand_resnet50(std::uint64_t H, std::uint64_t W, std::uint64_t last_stride) {
  auto cd = [](std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; };
  std::uint64_t total = 0;
  std::uint64_t h = cd(H, 2), w = cd(W, 2);
  total += h * w * 3 * 64 * 49;
  h = cd(h, 2);
  w = cd(w, 2);
  std::uint64_t cin = 64;
  const std::uint64_t widths[4] = {64, 128, 256, 512}, blocks[4] = {3, 4, 6, 3};
  const std::uint64_t strides[4] = {1, 2, 2, last_stride};
  for (int s = 0; s < 4; ++s) {
    for (std::uint64_t b = 0; b < blocks[s]; ++b) {
      const std::uint64_t st = b == 0 ? strides[s] : 1, wd = widths[s];
      const std::uint64_t h2 = cd(h, st), w2 = cd(w, st);
      total += h * w * cin * wd + h2 * w2 * wd * wd * 9 + h2 * w2 * wd * 4 * wd;
      if (b == 0) total += h2 * w2 * cin * 4 * wd;
      h = h2;
      w = w2;
      cin = 4 * wd;
    }
  }
  return total;
}

}  // namespace

TEST_CASE("backbone count") {
  BackboneSpec spec;
  const CountingConvention conv;
  FlopReport r6 = backbone_flops(spec, 6, conv);
  CHECK(r6.total() == 6 * hand_resnet50(256, 128, 1));
  CHECK(to_gflops(r6.total()) == doctest::Approx(24.520).epsilon(0.05));
  FlopReport r1 = backbone_flops(spec, 1, conv);
  CHECK(r1.total() * 6 == r6.total());

  BackboneSpec wide = spec;
  wide.input_w = 256;
  FlopReport rw = backbone_flops(wide, 6, conv);
  REQUIRE(rw.rows.size() == r6.rows.size());
  for (std::size_t i = 0; i < rw.rows.size(); ++i) CHECK(rw.rows[i].flops == 2 * r6.rows[i].flops);

  BackboneSpec s2 = spec;
  s2.last_stride = 2;
  CHECK(backbone_flops(s2, 6, conv).total() == 6 * hand_resnet50(256, 128, 2));

  std::uint64_t sum = 0;
  for (const auto& row : r6.rows) sum += row.flops;
  CHECK(sum == r6.total());

  CountingConvention with_bn;
  with_bn.include_bn_relu = true;
  CHECK(backbone_flops(spec, 6, with_bn).total() > r6.total());
  CHECK(backbone_flops(spec, 6, CountingConvention::parse("mac=2")).total() == 2 * r6.total());
}

TEST_CASE("insertion points follow the stride schedule") {
  auto pts = default_insertion_points(BackboneSpec{});
  REQUIRE(pts.size() == 5);
  CHECK(pts[0].channels == 512);
  CHECK(pts[0].height == 32);
  CHECK(pts[0].width == 16);
  CHECK(pts[4].channels == 1024);
  CHECK(pts[4].height == 16);
  CHECK(pts[4].width == 8);
}

TEST_CASE("analytic counts equal instrumented kernel counts") {
  struct Case {
    VariantSpec v;
    AttentionConfig c;
  };
  std::vector<Case> cases{
      {{AttentionVariant::nonlocal3d, 1, 1}, tiny(4, 2, 4, 1, 1, Encoding::none, 2, 2, 2)},
      {{AttentionVariant::nonlocal3d, 2, 1}, tiny(3, 4, 2, 2, 1, Encoding::none, 1, 3, 2)},
      {{AttentionVariant::axial, 1, 1}, tiny(4, 2, 4, 1, 1, Encoding::none, 2, 2, 2)},
      {{AttentionVariant::axial, 2, 1}, tiny(3, 4, 4, 2, 1, Encoding::none, 3, 4, 2)},
      {{AttentionVariant::axial_sinusoidal, 2, 1}, tiny(2, 4, 2, 2, 1, Encoding::sinusoidal, 2, 3, 3)},
      {{AttentionVariant::axial_relative, 2, 1}, tiny(4, 4, 4, 2, 1, Encoding::relative, 3, 2, 4)},
      {{AttentionVariant::cfaa, 1, 2}, tiny(4, 2, 4, 1, 2, Encoding::relative, 2, 3, 3)},
      {{AttentionVariant::cfaa, 2, 2}, tiny(4, 4, 8, 2, 2, Encoding::relative, 2, 4, 4)},
      {{AttentionVariant::cfaa, 1, 3}, tiny(6, 6, 3, 1, 3, Encoding::relative, 2, 4, 4)},
  };
  for (const auto& [v, c] : cases) {
    CAPTURE(to_string(v.variant));
    CHECK(count_oracle_multiplies(v, c) == analytic_attention_counts(v, c));
  }
}

TEST_CASE("complexity examples at H=W=T=2 and a single position") {
  const std::size_t cq = 3;
  AttentionConfig c = tiny(2, cq, 3, 1, 1, Encoding::none, 2, 2, 2);
  CHECK(count_oracle_multiplies({AttentionVariant::nonlocal3d, 1, 1}, c).score_macs == 64 * cq);
  CHECK(count_oracle_multiplies({AttentionVariant::axial, 1, 1}, c).score_macs == 48 * cq);
  AttentionConfig one = tiny(2, cq, 3, 1, 1, Encoding::none, 1, 1, 1);
  CHECK(count_oracle_multiplies({AttentionVariant::nonlocal3d, 1, 1}, one).score_macs == cq);
  // three single-element axial passes
  CHECK(count_oracle_multiplies({AttentionVariant::axial, 1, 1}, one).score_macs == 3 * cq);
}

TEST_CASE("cost ordering holds under every convention") {
  CalibrationReport cal = calibrate();
  CHECK(cal.entries.size() == all_conventions().size());
  CHECK(cal.ordering_holds_everywhere());
  for (std::size_t i = 1; i < cal.entries.size(); ++i) {
    CHECK(cal.entries[i - 1].score <= cal.entries[i].score);
  }
}

TEST_CASE("table rows under the default convention") {
  auto rows = ablation_table(CountingConvention{});
  REQUIRE(rows.size() == 7);
  CHECK(rows[0].within_tolerance());
  CHECK(rows[1].within_tolerance());  // non-local
  CHECK(rows[2].within_tolerance());  // plain axial
  CHECK(rows[3].within_tolerance());  // sinusoidal
}

TEST_CASE("model presets are additive") {
  const BackboneSpec spec;
  const CountingConvention conv;
  auto table = model_table(model_presets(), spec, 6, conv);
  REQUIRE(table.size() == 3);
  const auto att = attention_flops({AttentionVariant::cfaa, 2, 4}, default_insertion_points(spec), 6,
                                   {}, conv);
  CHECK(table[2].total() - table[0].total() == att.total());
  CHECK(table[2].delta() == static_cast<std::int64_t>(att.total()));
  CHECK(to_gflops(table[1].total()) == doctest::Approx(41.733).epsilon(0.10));
  CHECK(to_gflops(table[2].total()) == doctest::Approx(24.646).epsilon(0.05));
  CHECK_THROWS_AS(model_flops("p3d", spec, 6, conv), ConfigError);
}

TEST_CASE("one-scale cfaa equals axial-relative") {
  const auto pts = default_insertion_points(BackboneSpec{});
  for (const auto& conv : all_conventions()) {
    CHECK(attention_flops({AttentionVariant::cfaa, 8, 1}, pts, 6, {}, conv).total() ==
          attention_flops({AttentionVariant::axial_relative, 8, 1}, pts, 6, {}, conv).total());
  }
}

TEST_CASE("convention parsing") {
  CountingConvention c = CountingConvention::parse("mac=2,softmax=1,positional=shared");
  CHECK(c.macs_per_flop == 2);
  CHECK(c.include_softmax_exp);
  CHECK(c.positional == PositionalCounting::shared);
  CHECK(CountingConvention::parse(c.tag()) == c);
  CHECK(CountingConvention::parse("default") == CountingConvention{});
  CHECK_THROWS_AS(CountingConvention::parse("mac=3"), ConfigError);
  CHECK_THROWS_AS(CountingConvention::parse("bogus=1"), ConfigError);
  CHECK_THROWS_AS(parse_variant("transformer"), ConfigError);
}
