#include "rgbt/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rgbt/errors.hpp"

namespace rgbt {

GrayImage to_gray(const Image& img) {
  GrayImage g(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.channels >= 3) {
        g.at(x, y) = 0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) +
                     0.114f * img.at(x, y, 2);
      } else {
        g.at(x, y) = img.at(x, y, 0);
      }
    }
  }
  return g;
}

Image to_three_channels(const Image& img) {
  if (img.channels == 3) return img;
  Image out(img.width, img.height, 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const auto v = img.at(x, y, 0);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = v;
    }
  }
  return out;
}

Image read_image(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw LoadError(path + ": cannot read image");
  if (m.depth() != CV_8U) m.convertTo(m, CV_8U);
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2RGB);
  else if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  Image img(m.cols, m.rows, m.channels());
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    std::copy(row, row + static_cast<std::size_t>(m.cols) * m.channels(),
              img.pixels.begin() +
                  static_cast<std::ptrdiff_t>(y) * m.cols * m.channels());
  }
  return img;
}

void write_image(const std::string& path, const Image& img) {
  cv::Mat m(img.height, img.width, CV_8UC(img.channels),
            const_cast<std::uint8_t*>(img.pixels.data()));
  cv::Mat out;
  if (img.channels == 3) cv::cvtColor(m, out, cv::COLOR_RGB2BGR);
  else out = m;
  if (!cv::imwrite(path, out)) throw LoadError(path + ": cannot write image");
}

}  // namespace rgbt
