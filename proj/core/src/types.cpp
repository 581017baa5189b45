#include "hyperada/types.hpp"

#include "hyperada/errors.hpp"

namespace hyperada {

std::string to_string(Modality m) { return m == Modality::kRgb ? "rgb" : "lidar"; }

Modality modality_from_string(const std::string& name) {
  if (name == "rgb") return Modality::kRgb;
  if (name == "lidar") return Modality::kLidar;
  throw InvalidArgument("unknown modality '" + name + "' (expected rgb or lidar)");
}

}  // namespace hyperada
