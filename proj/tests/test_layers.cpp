#include <cmath>
#include <random>

#include "doctest.h"
#include "rgbt/layers.hpp"
#include "support.hpp"

using namespace rgbt;
using test::random_tensor;

namespace {

// Direct six-loop convolution.
Tensor<double> naive_conv(const ConvParams<double>& p, const Tensor<double>& x) {
  const auto& s = p.spec;
  const int oh = s.out_size(x.h());
  const int ow = s.out_size(x.w());
  Tensor<double> y(x.n(), s.out_channels, oh, ow);
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < s.out_channels; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = p.bias.value[o];
          for (int c = 0; c < s.in_channels; ++c)
            for (int ki = 0; ki < s.kernel; ++ki)
              for (int kj = 0; kj < s.kernel; ++kj) {
                const int yy = i * s.stride - s.pad + ki * s.dilation;
                const int xx = j * s.stride - s.pad + kj * s.dilation;
                if (yy < 0 || yy >= x.h() || xx < 0 || xx >= x.w()) continue;
                acc += p.weight.value.at(o, c, ki, kj) * x.at(n, c, yy, xx);
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

ConvParams<double> random_conv(const ConvSpec& s, std::mt19937_64& rng) {
  ConvParams<double> p;
  p.init("c", ParamGroup::backbone, s);
  p.weight.value = random_tensor<double>(p.weight.value.shape(), rng);
  p.bias.value = random_tensor<double>(p.bias.value.shape(), rng);
  return p;
}

}  // namespace

TEST_CASE("conv2d matches a direct convolution") {
  std::mt19937_64 rng(1);
  for (ConvSpec s : {ConvSpec{3, 4, 7, 2, 0, 1}, ConvSpec{2, 3, 3, 1, 1, 1},
                     ConvSpec{2, 2, 3, 1, 2, 2}, ConvSpec{4, 5, 1, 2, 0, 1},
                     ConvSpec{3, 2, 5, 1, 2, 1}}) {
    auto p = random_conv(s, rng);
    auto x = random_tensor<double>({2, s.in_channels, 13, 13}, rng);
    auto y = conv2d_forward(p, x);
    auto ref = naive_conv(p, x);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d gradients") {
  std::mt19937_64 rng(2);
  for (ConvSpec s : {ConvSpec{2, 3, 3, 2, 0, 1}, ConvSpec{2, 2, 3, 1, 2, 2},
                     ConvSpec{3, 2, 1, 1, 0, 1}}) {
    auto p = random_conv(s, rng);
    auto x = random_tensor<double>({2, s.in_channels, 7, 7}, rng);
    auto w = random_tensor<double>(conv2d_forward(p, x).shape(), rng);
    auto loss = [&] { return test::probe(conv2d_forward(p, x), w); };
    p.weight.grad.zero();
    p.bias.grad.zero();
    Tensor<double> dx;
    conv2d_backward(p, x, w, &dx);
    CHECK(test::fd_check(x, dx, loss) < 1e-6);
    CHECK(test::fd_check(p.weight.value, p.weight.grad, loss) < 1e-6);
    CHECK(test::fd_check(p.bias.value, p.bias.grad, loss) < 1e-6);
  }
}

TEST_CASE("linear gradients") {
  std::mt19937_64 rng(3);
  LinearParams<double> p;
  p.init("fc", ParamGroup::fc_shared, 12, 5);
  p.weight.value = random_tensor<double>(p.weight.value.shape(), rng);
  auto x = random_tensor<double>({3, 3, 2, 2}, rng);
  auto w = random_tensor<double>({3, 5, 1, 1}, rng);
  auto loss = [&] { return test::probe(linear_forward(p, x), w); };
  Tensor<double> dx;
  linear_backward(p, x, w, &dx);
  CHECK(dx.shape() == x.shape());
  CHECK(test::fd_check(x, dx, loss) < 1e-6);
  CHECK(test::fd_check(p.weight.value, p.weight.grad, loss) < 1e-6);
  CHECK(test::fd_check(p.bias.value, p.bias.grad, loss) < 1e-6);
}

TEST_CASE("lrn forward and gradient") {
  std::mt19937_64 rng(4);
  LrnSpec s;
  s.alpha = 0.5;  // large enough that the normalization is not ~constant
  auto x = random_tensor<double>({2, 7, 3, 3}, rng, -2, 2);
  auto y = lrn_forward<double>(s, x, nullptr);
  // channel 3 window covers channels 1..5
  double sq = 0;
  for (int c = 1; c <= 5; ++c) sq += x.at(1, c, 2, 0) * x.at(1, c, 2, 0);
  CHECK(y.at(1, 3, 2, 0) ==
        doctest::Approx(x.at(1, 3, 2, 0) /
                        std::pow(s.k + s.alpha / s.size * sq, s.beta)));
  auto w = random_tensor<double>(x.shape(), rng);
  auto loss = [&] { return test::probe(lrn_forward<double>(s, x, nullptr), w); };
  LrnCache<double> cache;
  lrn_forward(s, x, &cache);
  CHECK(test::fd_check(x, lrn_backward(s, cache, w), loss) < 1e-6);
}

TEST_CASE("maxpool forward and gradient") {
  std::mt19937_64 rng(5);
  PoolSpec s{3, 2};
  auto x = random_tensor<double>({2, 3, 9, 9}, rng);
  auto y = maxpool_forward<double>(s, x, nullptr);
  CHECK(y.h() == 4);
  double m = -1e9;
  for (int i = 2; i < 5; ++i)
    for (int j = 4; j < 7; ++j) m = std::max(m, x.at(1, 2, i, j));
  CHECK(y.at(1, 2, 1, 2) == m);
  auto w = random_tensor<double>(y.shape(), rng);
  auto loss = [&] { return test::probe(maxpool_forward<double>(s, x, nullptr), w); };
  PoolCache cache;
  maxpool_forward(s, x, &cache);
  CHECK(test::fd_check(x, maxpool_backward(cache, w), loss) < 1e-6);
}

TEST_CASE("batch norm training gradient and running statistics") {
  std::mt19937_64 rng(6);
  BatchNormParams<double> p;
  p.init("bn", ParamGroup::adapter, 3);
  p.gamma.value = random_tensor<double>(p.gamma.value.shape(), rng, 0.5, 1.5);
  p.beta.value = random_tensor<double>(p.beta.value.shape(), rng);
  auto x = random_tensor<double>({4, 3, 2, 2}, rng, -2, 3);
  auto w = random_tensor<double>(x.shape(), rng);
  auto loss = [&] {
    return test::probe(batchnorm_forward<double>(p, x, true, nullptr), w);
  };
  BatchNormCache<double> cache;
  auto y = batchnorm_forward(p, x, true, &cache);
  auto dx = batchnorm_backward(p, cache, w);
  CHECK(test::fd_check(x, dx, loss) < 1e-5);
  CHECK(test::fd_check(p.gamma.value, p.gamma.grad, loss) < 1e-6);
  CHECK(test::fd_check(p.beta.value, p.beta.grad, loss) < 1e-6);

  // channel 0 mean and unbiased variance
  double mean = 0;
  for (int n = 0; n < 4; ++n)
    for (int i = 0; i < 4; ++i) mean += x.sample(n)[i];
  mean /= 16;
  double var = 0;
  for (int n = 0; n < 4; ++n)
    for (int i = 0; i < 4; ++i) var += std::pow(x.sample(n)[i] - mean, 2);
  var /= 15;
  batchnorm_update_running(p, cache);
  CHECK(p.running_mean[0] == doctest::Approx(0.1 * mean));
  CHECK(p.running_var[0] == doctest::Approx(0.9 + 0.1 * var));

  auto eval = batchnorm_forward<double>(p, x, false, nullptr);
  CHECK(eval.at(0, 0, 0, 0) ==
        doctest::Approx((x.at(0, 0, 0, 0) - p.running_mean[0]) /
                            std::sqrt(p.running_var[0] + p.eps) *
                            p.gamma.value[0] +
                        p.beta.value[0]));
}

TEST_CASE("dropout is inverted and its mask drives the backward") {
  std::mt19937_64 rng(7);
  Tensor<double> x(Shape{1, 1, 100, 100}, 1.0);
  Tensor<double> mask;
  dropout_inplace(x, 0.5, rng, &mask);
  int kept = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK((x[i] == 0.0 || x[i] == 2.0));
    kept += x[i] != 0.0;
    CHECK(mask[i] == x[i]);
  }
  CHECK(kept > 4700);
  CHECK(kept < 5300);
  Tensor<double> dy(x.shape(), 3.0);
  dropout_backward_inplace(mask, dy);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(dy[i] == 3.0 * mask[i]);

  Tensor<double> y(Shape{1, 1, 2, 2}, 1.0);
  Tensor<double> m2;
  dropout_inplace(y, 0.0, rng, &m2);
  CHECK(m2.empty());
  for (double v : y.span()) CHECK(v == 1.0);
}

TEST_CASE("concat and split are inverse") {
  std::mt19937_64 rng(8);
  auto a = random_tensor<double>({2, 3, 2, 2}, rng);
  auto b = random_tensor<double>({2, 5, 2, 2}, rng);
  auto ab = concat_channels(a, b);
  CHECK(ab.c() == 8);
  Tensor<double> a2, b2;
  split_channels(ab, 3, a2, b2);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a2[i] == a[i]);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b2[i] == b[i]);
  CHECK(ab.at(1, 4, 1, 0) == b.at(1, 1, 1, 0));
}

TEST_CASE("group names") {
  CHECK(std::string(group_name(ParamGroup::backbone)) == "backbone");
  CHECK(std::string(group_name(ParamGroup::fc_shared)) == "fc_shared");
  CHECK(std::string(group_name(ParamGroup::fc_domain)) == "fc_domain");
  CHECK(std::string(group_name(ParamGroup::adapter)) == "adapter");
  CHECK(std::string(group_name(ParamGroup::dmc)) == "dmc");
}
