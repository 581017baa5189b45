#include "hyperada/containers.hpp"

#include <string>

#include "hyperada/errors.hpp"

namespace hyperada {

void LabeledImage::validate() const {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw InvalidArgument("image dimensions must be positive");
  }
  if (data.size() != pixels() * static_cast<std::size_t>(channels)) {
    throw InvalidArgument("image channel buffer has " + std::to_string(data.size()) +
                          " values, expected " + std::to_string(pixels() * channels));
  }
  if (labels.size() != pixels()) {
    throw InvalidArgument("image label map has " + std::to_string(labels.size()) +
                          " entries, expected " + std::to_string(pixels()));
  }
}

void LabeledCloud::validate() const {
  if (labels.size() != points.size()) {
    throw InvalidArgument("cloud has " + std::to_string(points.size()) + " points but " +
                          std::to_string(labels.size()) + " labels");
  }
  if (!instances.empty() && instances.size() != points.size()) {
    throw InvalidArgument("cloud instance ids do not match point count");
  }
}

}  // namespace hyperada
