#pragma once

// Dense image and point-cloud containers shared by mixing, data-io and the
// trainer.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "hyperada/types.hpp"

namespace hyperada {

/// H x W x C channels (row-major, channel fastest) plus an H x W label map.
struct LabeledImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;
  std::vector<int> labels;  // kUnlabeled for unknown pixels

  LabeledImage() = default;
  LabeledImage(int h, int w, int c)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, 0.0f),
        labels(static_cast<std::size_t>(h) * w, kUnlabeled) {}

  std::size_t pixels() const noexcept { return static_cast<std::size_t>(height) * width; }
  float& at(int row, int col, int ch) {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  float at(int row, int col, int ch) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  int& label(int row, int col) { return labels[static_cast<std::size_t>(row) * width + col]; }
  int label(int row, int col) const { return labels[static_cast<std::size_t>(row) * width + col]; }
  /// Throws InvalidArgument if channel and label shapes disagree.
  void validate() const;
};

struct CloudPoint {
  // Stored in double so rotations stay exact to ~1e-15; files hold float32.
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;

  /// Azimuth in [0, 2*pi); zero when x and y are both zero.
  double azimuth() const noexcept {
    if (x == 0.0 && y == 0.0) return 0.0;
    double a = std::atan2(y, x);
    if (a < 0.0) a += 2.0 * std::numbers::pi;
    return a >= 2.0 * std::numbers::pi ? 0.0 : a;
  }

  bool operator==(const CloudPoint&) const = default;
};

struct LabeledCloud {
  std::vector<CloudPoint> points;
  std::vector<int> labels;     // semantic class per point
  std::vector<int> instances;  // empty, or one instance id per point

  std::size_t size() const noexcept { return points.size(); }
  bool has_instances() const noexcept { return !instances.empty(); }
  void validate() const;
};

}  // namespace hyperada
