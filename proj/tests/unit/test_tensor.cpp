#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "cfaan/errors.hpp"
#include "cfaan/rng.hpp"
#include "cfaan/tensor.hpp"
#include "cfaan/tensor_io.hpp"

using namespace cfaan;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < a.dim(1); ++p) s += (long double)a.at({i, p}) * b.at({p, j});
      out.at({i, j}) = (double)s;
    }
  return out;
}

}  // namespace

TEST_CASE("tensor construction rejects zero extents and mismatched data") {
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor scalar;
  CHECK(scalar.rank() == 0);
  CHECK(scalar.size() == 1);
  CHECK(shape_string({2, 3}) == "[2x3]");
}

TEST_CASE("matmul small cases") {
  Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  Tensor col = Tensor::matrix({{3}, {4}});
  CHECK(matmul(eye, col) == col);
  CHECK(matmul(Tensor::matrix({{1, 2}}), col)[0] == 11.0);
  CHECK_THROWS_AS(matmul(col, col), DimensionError);
  try {
    matmul(col, col);
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("[2x1]") != std::string::npos);
  }
}

TEST_CASE("matmul matches triple loop oracle and is associative") {
  Rng rng(11);
  Tensor a = random_uniform({5, 7}, -1, 1, rng);
  Tensor b = random_uniform({7, 3}, -1, 1, rng);
  Tensor c = random_uniform({3, 4}, -1, 1, rng);
  CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
  CHECK(max_abs_diff(matmul_tn(transpose(a), b), matmul(a, b)) < 1e-12);
  CHECK(max_abs_diff(matmul_nt(a, transpose(b)), matmul(a, b)) < 1e-12);
  Tensor left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
  CHECK(max_abs_diff(left, right) <= 1e-9 * max_abs(left));
}

TEST_CASE("softmax") {
  Tensor u({3});
  Tensor s = softmax(u, 0);
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  Tensor big({2}, std::vector<double>{1000, 1000});
  Tensor sb = softmax(big, 0);
  CHECK(sb[0] == 0.5);
  CHECK(sb[1] == 0.5);

  Tensor x({3}, std::vector<double>{1, 2, 3});
  Tensor sx = softmax(x, 0);
  long double z = expl(1.0L) + expl(2.0L) + expl(3.0L);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(sx[i] - (double)(expl((long double)(i + 1)) / z)) < 1e-15);

  Rng rng(3);
  Tensor r = random_uniform({6, 9}, -1e3, 1e3, rng);
  Tensor sr = softmax(r, 1);
  for (std::size_t i = 0; i < 6; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < 9; ++j) sum += sr.at({i, j});
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(softmax(x, 1), DimensionError);
}

TEST_CASE("average pooling and nearest upsampling") {
  Tensor c({2, 1, 5, 3}, 4.25);
  CHECK(avg_pool_2d(c, 2) == Tensor({2, 1, 3, 2}, 4.25));
  Tensor x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  CHECK(avg_pool_2d(x, 2)[0] == 2.5);
  CHECK(avg_pool_2d(x, 1) == x);
  CHECK_THROWS(avg_pool_2d(x, 0));

  Tensor one({1, 1, 1, 1}, 5.0);
  CHECK(upsample_nearest_2d(one, 2) == Tensor({1, 1, 2, 2}, 5.0));
  CHECK(upsample_nearest_2d(x, 1) == x);
  CHECK_THROWS(upsample_nearest_2d(x, 0));
  CHECK(upsample_nearest_2d(avg_pool_2d(c, 4), 4, 5, 3) == c);

  // partial edge window: 3 wide with factor 2 -> second column averages one cell
  Tensor y({1, 1, 1, 3}, std::vector<double>{1, 3, 7});
  Tensor py = avg_pool_2d(y, 2);
  CHECK(py[0] == 2.0);
  CHECK(py[1] == 7.0);
}

TEST_CASE("pool and upsample backward are adjoints") {
  Rng rng(5);
  Tensor x = random_uniform({2, 2, 5, 3}, -1, 1, rng);
  Tensor gy = random_uniform({2, 2, 3, 2}, -1, 1, rng);
  CHECK(std::abs(dot(avg_pool_2d(x, 2), gy) - dot(x, avg_pool_2d_backward(gy, x.shape(), 2))) <
        1e-12);
  Tensor g2 = random_uniform({2, 2, 5, 3}, -1, 1, rng);
  Tensor z = random_uniform({2, 2, 3, 2}, -1, 1, rng);
  CHECK(std::abs(dot(upsample_nearest_2d(z, 2, 5, 3), g2) -
                 dot(z, upsample_nearest_2d_backward(g2, z.shape(), 2))) < 1e-12);
}

TEST_CASE("channel slice and concat round trip") {
  Rng rng(1);
  Tensor x = random_uniform({4, 2, 2, 2}, -1, 1, rng);
  CHECK(concat_channels({slice_channels(x, 0, 1), slice_channels(x, 1, 4)}) == x);
}

TEST_CASE("rng determinism") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(9);
  Tensor w = init_uniform({8, 4}, 4, c);
  for (double v : w.data()) CHECK(std::abs(v) <= 0.5);
  Rng d(9);
  CHECK(init_uniform({8, 4}, 4, d) == w);
}

TEST_CASE("tensor container round trip and corruption") {
  Rng rng(2);
  Tensor t = random_normal({3, 1, 2}, 1.0, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "AAKT");
  std::stringstream in(bytes);
  CHECK(read_tensor(in) == t);
  std::stringstream bad(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS(read_tensor(bad));
  std::string wrong = bytes;
  wrong[0] = 'X';
  std::stringstream bad2(wrong);
  CHECK_THROWS(read_tensor(bad2));

  auto dir = std::filesystem::temp_directory_path() / "cfaan_ckpt_test";
  std::filesystem::remove_all(dir);
  NamedTensors named{{"a.w", t}, {"b", Tensor({2}, 1.5)}};
  save_checkpoint(dir, named);
  NamedTensors back = load_checkpoint(dir);
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "a.w");
  CHECK(back[0].second == t);
  CHECK(back[1].second == named[1].second);
  std::filesystem::remove_all(dir);
}
