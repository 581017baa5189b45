#pragma once

// Binary file formats and deterministic synthetic worlds.
//
// Point clouds use the SemanticKITTI layout: a points file of little-endian
// float32 quadruples (x, y, z, intensity) and a labels file of little-endian
// uint32 words, semantic class in the low 16 bits and instance id in the high
// 16 bits.
//
// Tensor files:
//   offset 0   4 bytes  magic "HYTS"
//   offset 4   uint8    dtype tag (0 f32, 1 f64, 2 u8, 3 u32)
//   offset 5   uint8    rank (<= 8)
//   offset 6   uint16   reserved, zero
//   offset 8   rank x uint64 shape
//   then       row-major payload
// All integers little-endian.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hyperada/containers.hpp"

namespace hyperada::io {

using Bytes = std::vector<std::uint8_t>;

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

struct CloudFilePair {
  std::filesystem::path points;
  std::filesystem::path labels;
};

inline constexpr std::size_t kPointRecordSize = 16;
inline constexpr std::size_t kLabelRecordSize = 4;

/// Parses in-memory cloud and label files. Throws FormatError naming the
/// offending byte offset.
LabeledCloud parse_cloud(std::span<const std::uint8_t> points, std::span<const std::uint8_t> labels);
std::pair<Bytes, Bytes> serialize_cloud(const LabeledCloud& cloud);

LabeledCloud read_cloud(const CloudFilePair& pair);
void write_cloud(const LabeledCloud& cloud, const CloudFilePair& pair);

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2, kU32 = 3 };

std::size_t dtype_size(DType t);
std::string to_string(DType t);

struct Tensor {
  DType dtype = DType::kF32;
  std::vector<std::uint64_t> shape;
  Bytes payload;  // little-endian, row-major

  std::uint64_t element_count() const;

  static Tensor from_f32(std::vector<std::uint64_t> shape, std::span<const float> values);
  static Tensor from_f64(std::vector<std::uint64_t> shape, std::span<const double> values);
  static Tensor from_u8(std::vector<std::uint64_t> shape, std::span<const std::uint8_t> values);
  static Tensor from_u32(std::vector<std::uint64_t> shape, std::span<const std::uint32_t> values);
  std::vector<float> as_f32() const;
  std::vector<double> as_f64() const;
  std::vector<std::uint32_t> as_u32() const;

  bool operator==(const Tensor&) const = default;
};

inline constexpr std::size_t kTensorMaxRank = 8;
inline constexpr std::size_t kTensorHeaderFixed = 8;

Tensor parse_tensor(std::span<const std::uint8_t> bytes);
Bytes serialize_tensor(const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const Tensor& t, const std::filesystem::path& path);

/// Images as tensors: channels H x W x C f32, labels H x W u32 with
/// kUnlabeled stored as 0xFFFFFFFF.
Tensor image_channels_tensor(const LabeledImage& image);
Tensor image_labels_tensor(const LabeledImage& image);
LabeledImage image_from_tensors(const Tensor& channels, const Tensor& labels);

/// Raw label id -> training id table, loaded from
///   { "name": str, "mapping": { raw_id: train_id }, "ignore_ids": [int] }
struct ClassMap {
  std::string name;
  std::map<int, int> mapping;
  std::set<int> ignore_ids;

  /// Training id, or kUnlabeled for ignored and unmapped raw ids.
  int apply(int raw) const;
  int num_classes() const;
  void apply_to(LabeledCloud& cloud) const;
};

ClassMap parse_class_map(const std::string& json_text);
ClassMap read_class_map(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic worlds.

struct DomainShift {
  double noise_scale = 0.0;      // images: extra pixel noise; clouds: range noise (m)
  double hue_shift = 0.0;        // images: rotation about the grey axis (radians)
  double thin_dropout = 0.0;     // images: probability a pole is drawn one pixel thinner
  double density_factor = 1.0;   // clouds: share of returns kept
  double beam_distortion = 0.0;  // clouds: non-uniform beam spacing strength
  double intensity_gain = 1.0;   // clouds: intensity multiplier
  double intensity_offset = 0.0;

  bool is_zero() const;
  /// Shifts used by the default simulations.
  static DomainShift rgb_default();
  static DomainShift lidar_default();
};

struct SyntheticWorldConfig {
  std::uint64_t seed = 1;
  int num_classes = 5;
  DomainShift shift;
  int height = 24;
  int width = 24;
  int beams = 12;
  int azimuth_steps = 120;
  int scene_count = 8;
};

/// Source and target rendering of the same scene.
template <typename T>
struct DomainPair {
  T source;
  T target;
};

namespace rgb_classes {
inline constexpr int kRoad = 0, kSky = 1, kBuilding = 2, kCar = 3, kPole = 4;
}
namespace lidar_classes {
inline constexpr int kGround = 0, kCar = 1, kPerson = 2, kTrunk = 3, kBuilding = 4;
}

DomainPair<LabeledImage> generate_rgb_scene(const SyntheticWorldConfig& cfg, int scene_index);
std::vector<DomainPair<LabeledImage>> generate_rgb_world(const SyntheticWorldConfig& cfg);

DomainPair<LabeledCloud> generate_lidar_scene(const SyntheticWorldConfig& cfg, int scene_index);
std::vector<DomainPair<LabeledCloud>> generate_lidar_world(const SyntheticWorldConfig& cfg);

}  // namespace hyperada::io
