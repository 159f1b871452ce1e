#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <utility>

#include "rgbt/motion.hpp"

namespace rgbt::test {

// Random texture: uniform noise under a 3x3 box blur.
inline GrayImage texture(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  GrayImage noise(w, h);
  for (auto& v : noise.values) v = static_cast<float>(u(rng) * 255);
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0;
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = std::clamp(x + dx, 0, w - 1);
          const int yy = std::clamp(y + dy, 0, h - 1);
          s += noise.at(xx, yy);
          ++n;
        }
      out.at(x, y) = static_cast<float>(s / n);
    }
  }
  return out;
}

// cur(x, y) = base(x - dx + m, y - dy + m): content moves by (+dx, +dy).
inline std::pair<GrayImage, GrayImage> translated_pair(int w, int h, int dx, int dy,
                                                std::uint64_t seed) {
  const int m = 16;
  GrayImage base = texture(w + 2 * m, h + 2 * m, seed);
  GrayImage prev(w, h), cur(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      prev.at(x, y) = base.at(x + m, y + m);
      cur.at(x, y) = base.at(x - dx + m, y - dy + m);
    }
  }
  return {prev, cur};
}

}  // namespace rgbt::test
