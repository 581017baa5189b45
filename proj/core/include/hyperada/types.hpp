#pragma once

#include <string>

namespace hyperada {

/// Label value for cells without ground truth or pseudo-label.
inline constexpr int kUnlabeled = -1;

enum class Modality { kRgb, kLidar };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& name);

}  // namespace hyperada
