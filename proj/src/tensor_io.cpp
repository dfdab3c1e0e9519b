#include "cfaan/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cfaan/errors.hpp"

namespace cfaan {

namespace {

template <typename U>
void put_le(std::ostream& os, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw ValidationError("tensor container truncated");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

Tensor::Shape parse_shape(const std::string& text) {
  if (text.size() < 2 || text.front() != '[' || text.back() != ']') {
    throw ValidationError("manifest: bad shape '" + text + "'");
  }
  Tensor::Shape shape;
  std::string body = text.substr(1, text.size() - 2);
  std::istringstream is(body);
  std::string part;
  while (std::getline(is, part, 'x')) {
    if (part.empty()) continue;
    shape.push_back(static_cast<std::size_t>(std::stoull(part)));
  }
  return shape;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic, 4);
  put_le<std::uint32_t>(os, kTensorFormatVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) put_le<std::uint64_t>(os, e);
  for (double v : t.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("write_tensor: stream error");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw ValidationError("not a tensor container (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(is);
  if (version != kTensorFormatVersion) {
    throw ValidationError("unsupported tensor container version " + std::to_string(version));
  }
  const auto rank = get_le<std::uint32_t>(is);
  if (rank > 16) throw ValidationError("tensor container rank too large");
  Tensor::Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(is));
  std::vector<double> data(shape_volume(shape));
  for (double& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + path.string());
  return read_tensor(is);
}

void save_checkpoint(const std::filesystem::path& dir, const NamedTensors& tensors) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  for (const auto& [name, tensor] : tensors) {
    if (name.empty() || name.find_first_of("\t\n/") != std::string::npos) {
      throw ValidationError("checkpoint: invalid parameter name '" + name + "'");
    }
    const std::string file = name + ".aakt";
    save_tensor(dir / file, tensor);
    manifest << name << '\t' << shape_string(tensor.shape()) << '\t' << file << '\n';
  }
}

NamedTensors load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw ValidationError("checkpoint: no manifest in " + dir.string());
  NamedTensors out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string name, shape, file;
    if (!std::getline(is, name, '\t') || !std::getline(is, shape, '\t') ||
        !std::getline(is, file)) {
      throw ValidationError("checkpoint manifest line " + std::to_string(line_no) +
                            ": expected name, shape, file");
    }
    Tensor t = load_tensor(dir / file);
    if (t.shape() != parse_shape(shape)) {
      throw ValidationError("checkpoint manifest line " + std::to_string(line_no) +
                            ": shape " + shape + " does not match file " +
                            shape_string(t.shape()));
    }
    out.emplace_back(name, std::move(t));
  }
  return out;
}

}  // namespace cfaan
