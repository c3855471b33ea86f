#include "bsm/chart.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <stdexcept>

namespace bsm {

void render_bar_chart(const std::vector<std::pair<std::string, double>>& bars,
                      const std::string& title, const std::string& path) {
  const int n = static_cast<int>(bars.size());
  const int bar_w = 56, gap = 24, margin = 60;
  const int width = std::max(360, margin * 2 + n * (bar_w + gap));
  const int height = 360;
  const int base_y = height - 70;
  const int top_y = 50;

  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::putText(img, title, {margin, 28}, cv::FONT_HERSHEY_SIMPLEX, 0.6,
              {30, 30, 30}, 1, cv::LINE_AA);
  cv::line(img, {margin - 10, base_y}, {width - margin + 10, base_y}, {0, 0, 0}, 1);

  for (int g = 0; g <= 100; g += 25) {
    const int y = base_y - g * (base_y - top_y) / 100;
    cv::line(img, {margin - 10, y}, {width - margin + 10, y}, {225, 225, 225}, 1);
    cv::putText(img, std::to_string(g), {8, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                {120, 120, 120}, 1, cv::LINE_AA);
  }

  for (int i = 0; i < n; ++i) {
    const double v = std::clamp(bars[i].second, 0.0, 100.0);
    const int x0 = margin + i * (bar_w + gap);
    const int y0 = base_y - static_cast<int>(v * (base_y - top_y) / 100.0);
    cv::rectangle(img, {x0, y0}, {x0 + bar_w, base_y}, {180, 120, 40}, cv::FILLED);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", bars[i].second);
    cv::putText(img, buf, {x0 - 4, y0 - 6}, cv::FONT_HERSHEY_SIMPLEX, 0.42,
                {30, 30, 30}, 1, cv::LINE_AA);
    cv::putText(img, bars[i].first, {x0 - 4, base_y + 20}, cv::FONT_HERSHEY_SIMPLEX,
                0.42, {30, 30, 30}, 1, cv::LINE_AA);
  }

  if (!cv::imwrite(path, img))
    throw std::runtime_error("cannot write chart: " + path);
}

}  // namespace bsm
