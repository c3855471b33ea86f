#pragma once

#include <string>
#include <utility>
#include <vector>

namespace bsm {

// Renders a labeled bar chart (values expected in [0, 100]) to a raster file.
void render_bar_chart(const std::vector<std::pair<std::string, double>>& bars,
                      const std::string& title, const std::string& path);

}  // namespace bsm
