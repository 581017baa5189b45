#pragma once

// Input-space domain mixing: confidence-gated cut-and-paste for images and
// sector swap / instance rotate-paste for point clouds.

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "hyperada/containers.hpp"
#include "hyperada/geometry.hpp"
#include "hyperada/random.hpp"

namespace hyperada::mixing {

using geometry::Matrix;

struct PseudoLabels {
  std::vector<int> labels;          // argmax where confident, kUnlabeled elsewhere
  std::vector<std::uint8_t> mask;   // confident cells
  double threshold = 0.0;           // score cut; cells with score <= threshold are confident
};

inline constexpr double kDefaultTauPercentile = 60.0;

/// Confident cells are the ceil(tau/100 * N) lowest-uncertainty cells,
/// extended to every cell tied with the cut value. tau = 0 gives an empty
/// mask, tau = 100 a full one.
PseudoLabels pseudo_label(const Matrix& probs, std::span<const double> scores,
                          double tau_percentile = kDefaultTauPercentile);

enum class DacsDirection {
  kTargetOntoSource,   // confident target regions pasted onto the source image
  kSourceOntoTarget,   // classic: half of the source classes pasted onto the target
};

struct DacsResult {
  LabeledImage mixed;
  std::vector<std::uint8_t> paste_mask;  // 1 where the pixel came from the pasted image
};

/// `target` supplies channels only; its labels are ignored in favour of
/// `pseudo`. The rng is used by the classic direction to pick source classes.
DacsResult dacs_mix(const LabeledImage& source, const LabeledImage& target,
                    const PseudoLabels& pseudo, Rng& rng,
                    DacsDirection direction = DacsDirection::kTargetOntoSource);

/// Where an output point came from: input 0 (a) or 1 (b), and its index there.
struct PointOrigin {
  std::uint8_t input = 0;
  std::uint32_t index = 0;
  bool operator==(const PointOrigin&) const = default;
};

struct MixedCloud {
  LabeledCloud cloud;
  std::vector<PointOrigin> origin;
};

/// True iff azimuth lies in [theta0, theta0 + sigma) modulo 2 pi.
bool in_sector(double azimuth, double theta0, double sigma);

/// Points of a outside the sector followed by points of b inside it.
/// sigma must lie in (0, 2 pi).
MixedCloud polarmix_sector_swap(const LabeledCloud& a, const LabeledCloud& b, double theta0,
                                double sigma);

struct SectorParams {
  double theta0 = 0.0;
  double sigma = 3.14159265358979323846;
};

/// theta0 ~ U[0, 2 pi), sigma = pi.
SectorParams sample_sector(Rng& rng);

/// Rotates (x, y) about the z axis.
CloudPoint rotate_z(const CloudPoint& p, double angle);

/// Appends to a, for each angle, a copy of every point of b whose label is
/// in `classes` rotated about z by that angle. When `b_confident` is given,
/// only points flagged confident are pasted.
MixedCloud polarmix_instance_paste(const LabeledCloud& a, const LabeledCloud& b,
                                   const std::set<int>& classes, std::span<const double> rotations,
                                   std::span<const std::uint8_t> b_confident = {});

/// Rarest third (at least one) of the classes present across `clouds`,
/// ranked by point count with ties to the higher class id.
std::set<int> rare_classes(std::span<const LabeledCloud> clouds, int num_classes);

/// Default paste angles: three random rotations in [0, 2 pi).
std::vector<double> sample_rotations(Rng& rng, int count = 3);

}  // namespace hyperada::mixing
