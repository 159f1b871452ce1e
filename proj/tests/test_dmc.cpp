#include <cmath>
#include <random>

#include "doctest.h"
#include "rgbt/dmc.hpp"
#include "support.hpp"

using namespace rgbt;
using test::random_tensor;

namespace {

template <typename T>
void randomize(DmcParams<T>& p, std::mt19937_64& rng, double scale) {
  for (auto* q : p.parameters()) {
    q->value = random_tensor<T>(q->value.shape(), rng, -scale, scale);
  }
}

template <typename T>
void zero(DmcParams<T>& p) {
  for (auto* q : p.parameters()) q->value.zero();
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace

TEST_CASE("msconv preserves shape at every level") {
  std::mt19937_64 rng(1);
  for (int level = 1; level <= 3; ++level) {
    auto p = make_dmc_params<double>(level, 8, 4, "d");
    randomize(p, rng, 0.3);
    FeatureMap<double> f{random_tensor<double>({2, 8, 7, 7}, rng), level,
                         Modality::rgb};
    auto out = msconv(p.msconv[0], p.fuse[0], f);
    CHECK(out.data.shape() == f.data.shape());
  }
}

TEST_CASE("level-1 msconv on 96x25x25 keeps its shape") {
  std::mt19937_64 rng(2);
  auto p = make_dmc_params<float>(1, 96, 4, "d");
  FeatureMap<float> f{random_tensor<float>({1, 96, 25, 25}, rng), 1,
                      Modality::rgb};
  // padding oracle: n + 2p - d(k-1) for (k,p,d) in the four branches
  for (auto [k, pad, dil] : {std::tuple{1, 0, 1}, {3, 1, 1}, {3, 2, 2},
                             {5, 2, 1}}) {
    CHECK(25 + 2 * pad - dil * (k - 1) == 25);
  }
  CHECK(msconv(p.msconv[0], p.fuse[0], f).data.shape() == f.data.shape());
}

TEST_CASE("msconv with zero parameters is zero") {
  std::mt19937_64 rng(3);
  auto p = make_dmc_params<double>(2, 6, 2, "d");
  zero(p);
  FeatureMap<double> f{random_tensor<double>({1, 6, 4, 4}, rng), 2,
                       Modality::thermal};
  auto out = msconv(p.msconv[1], p.fuse[1], f);
  for (double v : out.data.span()) CHECK(v == 0.0);
}

TEST_CASE("msconv with an identity 1x1 branch reproduces its input") {
  std::mt19937_64 rng(4);
  const int c = 3;
  auto p = make_dmc_params<double>(1, c, 4, "d");
  zero(p);
  auto& b0 = p.msconv[0].convs[0];
  for (int i = 0; i < c; ++i) b0.weight.value.at(i, i, 0, 0) = 1;
  for (int i = 0; i < c; ++i) p.fuse[0].weight.value.at(i, i, 0, 0) = 1;
  FeatureMap<double> f{random_tensor<double>({2, c, 5, 5}, rng), 1,
                       Modality::rgb};
  CHECK(max_abs_diff(msconv(p.msconv[0], p.fuse[0], f).data, f.data) == 0.0);
}

TEST_CASE("msconv rejects a level mismatch") {
  auto p = make_dmc_params<double>(2, 4, 2, "d");
  FeatureMap<double> f{Tensor<double>(1, 4, 3, 3), 1, Modality::rgb};
  CHECK_THROWS_AS(msconv(p.msconv[0], p.fuse[0], f), std::logic_error);
}

TEST_CASE("gate outputs") {
  std::mt19937_64 rng(5);
  ConvParams<double> g;
  g.init("g", ParamGroup::dmc, {4, 4, 1, 1, 0, 1});
  auto x = random_tensor<double>({1, 4, 3, 3}, rng, -50, 50);
  auto half = gate(g, x);
  for (double v : half.span()) CHECK(v == 0.5);

  g.bias.value.fill(20.0);
  const double s20 = 1.0 / (1.0 + std::exp(-20.0));
  auto high = gate(g, x);
  for (double v : high.span()) {
    CHECK(std::abs(v - 1.0) < 1e-6);
    CHECK(v == doctest::Approx(s20).epsilon(1e-12));
  }

  g.weight.value = random_tensor<double>(g.weight.value.shape(), rng, -3, 3);
  g.bias.value.zero();
  auto mixed = gate(g, random_tensor<double>({4, 4, 3, 3}, rng));
  for (double v : mixed.span()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("saturated gates stay strictly inside (0, 1)") {
  std::mt19937_64 rng(10);
  ConvParams<float> g;
  g.init("g", ParamGroup::dmc, {2, 2, 1, 1, 0, 1});
  const auto x = random_tensor<float>({1, 2, 3, 3}, rng);
  for (float b : {100.f, -200.f}) {
    g.bias.value.fill(b);
    const auto out = gate(g, x);
    for (float v : out.span()) {
      CHECK(v > 0.f);
      CHECK(v < 1.f);
    }
  }
}

TEST_CASE("zero-parameter closed forms") {
  std::mt19937_64 rng(6);
  for (int level = 1; level <= 3; ++level) {
    auto p = make_dmc_params<double>(level, 5, 4, "d");
    zero(p);
    auto fr = random_tensor<double>({2, 5, 4, 4}, rng, -3, 3);
    auto ft = random_tensor<double>({2, 5, 4, 4}, rng, -3, 3);
    auto [lr, lt] = mutual_condition_forward<double>(
        p, fr, ft, {GateMode::literal, DmcVariant::full}, nullptr);
    auto [gr, gt] = mutual_condition_forward<double>(
        p, fr, ft, {GateMode::gated_residual, DmcVariant::full}, nullptr);
    for (std::size_t i = 0; i < fr.size(); ++i) {
      CHECK(std::abs(lr[i] - (0.5 * fr[i] + 0.5)) <= 1e-12);
      CHECK(std::abs(lt[i] - (0.5 * ft[i] + 0.5)) <= 1e-12);
      CHECK(std::abs(gr[i] - (0.5 * fr[i] + 0.25 * ft[i])) <= 1e-12);
      CHECK(std::abs(gt[i] - (0.5 * ft[i] + 0.25 * fr[i])) <= 1e-12);
    }
  }
}

TEST_CASE("role swap exchanges outputs exactly") {
  std::mt19937_64 rng(7);
  for (auto mode : {GateMode::literal, GateMode::gated_residual}) {
    for (auto variant : {DmcVariant::full, DmcVariant::no_msconv,
                         DmcVariant::no_gate, DmcVariant::one_gate,
                         DmcVariant::no_shift}) {
      for (int level = 1; level <= 3; ++level) {
        auto p = make_dmc_params<double>(level, 4, 2, "d");
        randomize(p, rng, 0.5);
        auto q = swap_roles(p);
        auto fr = random_tensor<double>({1, 4, 5, 5}, rng);
        auto ft = random_tensor<double>({1, 4, 5, 5}, rng);
        auto [a_r, a_t] =
            mutual_condition_forward<double>(p, fr, ft, {mode, variant}, nullptr);
        auto [b_r, b_t] =
            mutual_condition_forward<double>(q, ft, fr, {mode, variant}, nullptr);
        CHECK(max_abs_diff(a_r, b_t) == 0.0);
        CHECK(max_abs_diff(a_t, b_r) == 0.0);
      }
    }
  }
}

TEST_CASE("mutual_condition rejects level mismatch") {
  auto p = make_dmc_params<double>(1, 4, 2, "d");
  FeatureMap<double> r{Tensor<double>(1, 4, 3, 3), 2, Modality::rgb};
  FeatureMap<double> t{Tensor<double>(1, 4, 3, 3), 2, Modality::thermal};
  CHECK_THROWS_AS(mutual_condition(p, r, t), std::logic_error);
}

TEST_CASE("mutual_condition gradients match finite differences") {
  std::mt19937_64 rng(8);
  for (auto mode : {GateMode::literal, GateMode::gated_residual}) {
    for (auto variant : {DmcVariant::full, DmcVariant::no_msconv,
                         DmcVariant::no_gate, DmcVariant::one_gate,
                         DmcVariant::no_shift}) {
      for (int level = 1; level <= 3; ++level) {
        CAPTURE(level);
        CAPTURE(to_string(mode));
        CAPTURE(to_string(variant));
        const DmcOptions opt{mode, variant};
        auto p = make_dmc_params<double>(level, 4, 2, "d");
        randomize(p, rng, 0.4);
        auto fr = random_tensor<double>({2, 4, 5, 5}, rng);
        auto ft = random_tensor<double>({2, 4, 5, 5}, rng);
        auto wr = random_tensor<double>(fr.shape(), rng);
        auto wt = random_tensor<double>(fr.shape(), rng);
        auto loss = [&] {
          auto [r, t] = mutual_condition_forward<double>(p, fr, ft, opt, nullptr);
          return test::probe(r, wr) + test::probe(t, wt);
        };
        for (auto* q : p.parameters()) q->grad.zero();
        DmcCache<double> cache;
        mutual_condition_forward(p, fr, ft, opt, &cache);
        auto [dr, dt] = mutual_condition_backward(p, opt, cache, wr, wt);
        CHECK(test::fd_check(fr, dr, loss) < 1e-4);
        CHECK(test::fd_check(ft, dt, loss) < 1e-4);
        for (auto* q : p.parameters()) {
          CAPTURE(q->name);
          CHECK(test::fd_check(q->value, q->grad, loss) < 1e-4);
        }
      }
    }
  }
}

TEST_CASE("frozen gates scale a perturbation on the gated path linearly") {
  // With G1..G4 fixed at constants m, out_T = f_T*m1 + m2: a perturbation
  // delta on f_T moves out_T by exactly m1*delta.
  std::mt19937_64 rng(9);
  auto p = make_dmc_params<double>(2, 3, 1, "d");
  randomize(p, rng, 0.5);
  const double m = 0.3;
  for (auto& g : p.gates) {
    g.weight.value.zero();
    g.bias.value.fill(std::log(m / (1 - m)));
  }
  auto fr = random_tensor<double>({1, 3, 4, 4}, rng);
  auto ft = random_tensor<double>({1, 3, 4, 4}, rng);
  auto delta = random_tensor<double>(ft.shape(), rng);
  auto base = mutual_condition_forward<double>(p, fr, ft, {}, nullptr);
  for (double k : {1.0, 2.0, -0.5}) {
    auto ftp = ft;
    for (std::size_t i = 0; i < ft.size(); ++i) ftp[i] += k * delta[i];
    auto moved = mutual_condition_forward<double>(p, fr, ftp, {}, nullptr);
    for (std::size_t i = 0; i < ft.size(); ++i) {
      CHECK(moved.second[i] - base.second[i] ==
            doctest::Approx(m * k * delta[i]).epsilon(1e-9));
    }
  }
}
