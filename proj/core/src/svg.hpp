#pragma once

// Minimal self-contained SVG charts for the report stage.

#include <optional>
#include <string>
#include <vector>

namespace dreamprm::detail::svg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line chart; non-finite points are skipped.
std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series, int width = 720, int height = 420);

/// Vertical bars with an optional dashed horizontal reference line.
std::string bar_chart(const std::string& title, const std::vector<std::string>& labels, const std::vector<double>& values,
                      std::optional<double> reference = std::nullopt, int width = 720, int height = 420);

}  // namespace dreamprm::detail::svg
