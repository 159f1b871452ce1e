#include <cmath>
#include <random>

#include "doctest.h"
#include "rgbt/motion.hpp"
#include "textures.hpp"

using namespace rgbt;
using namespace rgbt::test;

TEST_CASE("local_region arithmetic") {
  const ImageBounds big{1000, 1000};
  CHECK(local_region({50, 50, 10, 10}, big) == BoundingBox{40, 40, 30, 30});
  CHECK(local_region({50, 50, 1, 1}, big) == BoundingBox{49, 49, 3, 3});
  const auto corner = local_region({0, 0, 20, 20}, {100, 100});
  CHECK(corner.x >= 0);
  CHECK(corner.y >= 0);
  CHECK(corner.x + corner.w <= 100);
  CHECK(corner.w == 40);
}

TEST_CASE("identical frames give zero flow") {
  auto [prev, cur] = translated_pair(160, 120, 0, 0, 1);
  BlockMatchingFlow est;
  auto d = mean_displacement(prev, cur, {40, 30, 60, 50}, est);
  CHECK(d.confident);
  CHECK(std::abs(d.dx) < 1e-6);
  CHECK(std::abs(d.dy) < 1e-6);
  CHECK(est.calls() == 1);
}

TEST_CASE("synthetic translations are recovered") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> off(-10, 10);
  BlockMatchingFlow est;
  for (auto [dx, dy] : {std::pair{6, 0}, {-3, 8}}) {
    auto [prev, cur] = translated_pair(200, 160, dx, dy, 3);
    auto d = mean_displacement(prev, cur, {60, 50, 60, 45}, est);
    CHECK(std::abs(d.dx - dx) <= 1.0);
    CHECK(std::abs(d.dy - dy) <= 1.0);
    auto back = mean_displacement(cur, prev, {60, 50, 60, 45}, est);
    CHECK(std::abs(back.dx + d.dx) <= 1.0);
    CHECK(std::abs(back.dy + d.dy) <= 1.0);
  }
}

TEST_CASE("textureless regions are flagged") {
  GrayImage flat(100, 100, 128.f);
  BlockMatchingFlow est;
  auto d = mean_displacement(flat, flat, {20, 20, 40, 40}, est);
  CHECK_FALSE(d.confident);
  CHECK(d.dx == 0.0);
  CHECK(d.dy == 0.0);
}

TEST_CASE("dis backend agrees on a translation") {
  auto [prev, cur] = translated_pair(200, 160, 5, -4, 4);
  DisFlow est;
  auto d = mean_displacement(prev, cur, {60, 50, 60, 45}, est);
  CHECK(std::abs(d.dx - 5) <= 1.0);
  CHECK(std::abs(d.dy + 4) <= 1.0);
}

TEST_CASE("detect truth table") {
  const double u = 5;
  for (double sx : {-1.0, 1.0}) {
    for (double sy : {-1.0, 1.0}) {
      for (double mx : {3.0, 8.0}) {
        for (double my : {3.0, 8.0}) {
          const Displacement d{sx * mx, sy * my};
          const auto m = detect(d, u);
          CHECK(m.horizontal == (mx > u));
          CHECK(m.vertical == (my > u));
          CHECK(m.triggered == (m.horizontal || m.vertical));
          CHECK(m.dir_x == (m.horizontal ? -static_cast<int>(sx) : 0));
          CHECK(m.dir_y == (m.vertical ? -static_cast<int>(sy) : 0));
        }
      }
    }
  }
  auto a = detect({-8, 1}, 5);
  CHECK(a.horizontal);
  CHECK(a.dir_x == 1);
  CHECK_FALSE(a.vertical);
  CHECK_FALSE(detect({2, 3}, 5).triggered);
  CHECK_FALSE(detect({5.0, -5.0}, 5).triggered);
}

TEST_CASE("resample stepping and clamping") {
  const ImageBounds big{2000, 2000};
  MotionDecision h{true, true, false, 1, 0};
  const auto prev = BoundingBox::from_center(100, 100, 40, 30);
  auto boxes = resample(prev, h, big);
  REQUIRE(boxes.size() == 16);
  for (int k = 0; k < 16; ++k) {
    CHECK(boxes[k].cx() == doctest::Approx(110 + 10 * k));
    CHECK(boxes[k].cy() == doctest::Approx(100));
    CHECK(boxes[k].w == 40);
    CHECK(boxes[k].h == 30);
  }
  MotionDecision both{true, true, true, -1, 1};
  boxes = resample(BoundingBox::from_center(1000, 1000, 40, 32), both, big);
  for (int k = 1; k <= 16; ++k) {
    CHECK(boxes[k - 1].cx() == doctest::Approx(1000 - 10.0 * k));
    CHECK(boxes[k - 1].cy() == doctest::Approx(1000 + 8.0 * k));
  }
  boxes = resample({250, 100, 40, 30}, h, {300, 300});
  REQUIRE(boxes.size() == 16);
  for (const auto& b : boxes) {
    CHECK(b.x + b.w <= 300);
    CHECK(b.w == 40);
  }
  CHECK(boxes.back().x == 260);
}
