#include "bsm/raster_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <stdexcept>

namespace bsm {

namespace {

cv::Mat read_mat(const std::string& path, int flags) {
  cv::Mat m = cv::imread(path, flags);
  if (m.empty())
    throw std::runtime_error("cannot read image file: " + path);
  if (m.depth() != CV_8U)
    throw std::runtime_error("unsupported bit depth (want 8-bit): " + path);
  return m;
}

}  // namespace

ImageU8 read_image_rgb(const std::string& path) {
  cv::Mat m = read_mat(path, cv::IMREAD_COLOR);  // BGR
  cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  ImageU8 out(m.rows, m.cols, 3);
  for (int y = 0; y < m.rows; ++y)
    std::copy_n(m.ptr<std::uint8_t>(y), static_cast<std::size_t>(m.cols) * 3,
                out.v.data() + static_cast<std::size_t>(y) * m.cols * 3);
  return out;
}

ImageU8 read_image_gray(const std::string& path) {
  cv::Mat m = read_mat(path, cv::IMREAD_GRAYSCALE);
  ImageU8 out(m.rows, m.cols, 1);
  for (int y = 0; y < m.rows; ++y)
    std::copy_n(m.ptr<std::uint8_t>(y), static_cast<std::size_t>(m.cols),
                out.v.data() + static_cast<std::size_t>(y) * m.cols);
  return out;
}

void write_image(const std::string& path, const ImageU8& img) {
  if (img.c != 1 && img.c != 3)
    throw std::runtime_error("write_image: channel count must be 1 or 3");
  const cv::Mat m(img.h, img.w, img.c == 1 ? CV_8UC1 : CV_8UC3,
                  const_cast<std::uint8_t*>(img.v.data()));
  cv::Mat to_write;
  if (img.c == 3)
    cv::cvtColor(m, to_write, cv::COLOR_RGB2BGR);  // fresh buffer, input untouched
  else
    to_write = m;
  if (!cv::imwrite(path, to_write))
    throw std::runtime_error("cannot write image file: " + path);
}

}  // namespace bsm
