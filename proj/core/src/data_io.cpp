#include "hyperada/data_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

#include "hyperada/errors.hpp"
#include "hyperada/random.hpp"

namespace hyperada::io {

// ---------------------------------------------------------------------------
// Little-endian helpers.

namespace {

template <typename T>
T load_le(const std::uint8_t* p) {
  std::array<std::uint8_t, sizeof(T)> buf;
  std::memcpy(buf.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
  T v;
  std::memcpy(&v, buf.data(), sizeof(T));
  return v;
}

template <typename T>
void store_le(Bytes& out, T v) {
  std::array<std::uint8_t, sizeof(T)> buf;
  std::memcpy(buf.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
  out.insert(out.end(), buf.begin(), buf.end());
}

}  // namespace

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + path.string() + "' for reading");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidArgument("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Clouds.

LabeledCloud parse_cloud(std::span<const std::uint8_t> points, std::span<const std::uint8_t> labels) {
  if (points.size() % kPointRecordSize != 0) {
    throw FormatError("points file truncated: " + std::to_string(points.size()) +
                          " bytes is not a multiple of 16",
                      points.size() - points.size() % kPointRecordSize);
  }
  if (labels.size() % kLabelRecordSize != 0) {
    throw FormatError("labels file truncated: " + std::to_string(labels.size()) +
                          " bytes is not a multiple of 4",
                      labels.size() - labels.size() % kLabelRecordSize);
  }
  const std::size_t n = points.size() / kPointRecordSize;
  const std::size_t m = labels.size() / kLabelRecordSize;
  if (n != m) {
    throw FormatError("point/label count disagreement: " + std::to_string(n) + " points, " +
                          std::to_string(m) + " labels",
                      std::min(n, m) * kLabelRecordSize);
  }
  LabeledCloud cloud;
  cloud.points.resize(n);
  cloud.labels.resize(n);
  cloud.instances.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = points.data() + i * kPointRecordSize;
    CloudPoint& pt = cloud.points[i];
    pt.x = load_le<float>(p);
    pt.y = load_le<float>(p + 4);
    pt.z = load_le<float>(p + 8);
    pt.intensity = load_le<float>(p + 12);
    // Non-finite values are rejected: a signalling NaN would not survive the
    // float -> double -> float round trip bit for bit.
    const double fields[] = {pt.x, pt.y, pt.z, pt.intensity};
    for (int f = 0; f < 4; ++f) {
      if (!std::isfinite(fields[f])) {
        throw FormatError("non-finite value in point " + std::to_string(i), i * kPointRecordSize + 4 * f);
      }
    }
    const std::uint32_t word = load_le<std::uint32_t>(labels.data() + i * kLabelRecordSize);
    cloud.labels[i] = static_cast<int>(word & 0xFFFFu);
    cloud.instances[i] = static_cast<int>(word >> 16);
  }
  return cloud;
}

std::pair<Bytes, Bytes> serialize_cloud(const LabeledCloud& cloud) {
  cloud.validate();
  Bytes points;
  Bytes labels;
  points.reserve(cloud.size() * kPointRecordSize);
  labels.reserve(cloud.size() * kLabelRecordSize);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const CloudPoint& p = cloud.points[i];
    store_le(points, static_cast<float>(p.x));
    store_le(points, static_cast<float>(p.y));
    store_le(points, static_cast<float>(p.z));
    store_le(points, static_cast<float>(p.intensity));
    const int sem = cloud.labels[i];
    const int inst = cloud.has_instances() ? cloud.instances[i] : 0;
    if (sem < 0 || sem > 0xFFFF || inst < 0 || inst > 0xFFFF) {
      throw InvalidArgument("cloud label " + std::to_string(sem) + "/instance " +
                            std::to_string(inst) + " does not fit 16 bits");
    }
    store_le(labels, static_cast<std::uint32_t>((static_cast<std::uint32_t>(inst) << 16) |
                                                static_cast<std::uint32_t>(sem)));
  }
  return {std::move(points), std::move(labels)};
}

LabeledCloud read_cloud(const CloudFilePair& pair) {
  const Bytes points = read_file(pair.points);
  const Bytes labels = read_file(pair.labels);
  try {
    return parse_cloud(points, labels);
  } catch (const FormatError& e) {
    throw FormatError(pair.points.string() + " / " + pair.labels.string() + ": " + e.what(),
                      e.offset());
  }
}

void write_cloud(const LabeledCloud& cloud, const CloudFilePair& pair) {
  const auto [points, labels] = serialize_cloud(cloud);
  write_file(pair.points, points);
  write_file(pair.labels, labels);
}

// ---------------------------------------------------------------------------
// Tensors.

namespace {
constexpr std::array<std::uint8_t, 4> kTensorMagic{'H', 'Y', 'T', 'S'};
}

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
    case DType::kU32: return 4;
  }
  throw InvalidArgument("unknown dtype");
}

std::string to_string(DType t) {
  switch (t) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kU8: return "u8";
    case DType::kU32: return "u32";
  }
  return "unknown";
}

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (std::uint64_t d : shape) n *= d;
  return n;
}

namespace {

template <typename T>
Tensor make_tensor(DType dtype, std::vector<std::uint64_t> shape, std::span<const T> values) {
  Tensor t;
  t.dtype = dtype;
  t.shape = std::move(shape);
  if (t.element_count() != values.size()) {
    throw InvalidArgument("tensor shape does not match value count");
  }
  t.payload.reserve(values.size() * sizeof(T));
  for (T v : values) store_le(t.payload, v);
  return t;
}

template <typename T>
std::vector<T> tensor_values(const Tensor& t, DType expected) {
  if (t.dtype != expected) {
    throw InvalidArgument("tensor holds " + to_string(t.dtype) + ", requested " + to_string(expected));
  }
  std::vector<T> out(t.payload.size() / sizeof(T));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = load_le<T>(t.payload.data() + i * sizeof(T));
  return out;
}

}  // namespace

Tensor Tensor::from_f32(std::vector<std::uint64_t> shape, std::span<const float> values) {
  return make_tensor(DType::kF32, std::move(shape), values);
}
Tensor Tensor::from_f64(std::vector<std::uint64_t> shape, std::span<const double> values) {
  return make_tensor(DType::kF64, std::move(shape), values);
}
Tensor Tensor::from_u8(std::vector<std::uint64_t> shape, std::span<const std::uint8_t> values) {
  return make_tensor(DType::kU8, std::move(shape), values);
}
Tensor Tensor::from_u32(std::vector<std::uint64_t> shape, std::span<const std::uint32_t> values) {
  return make_tensor(DType::kU32, std::move(shape), values);
}
std::vector<float> Tensor::as_f32() const { return tensor_values<float>(*this, DType::kF32); }
std::vector<double> Tensor::as_f64() const { return tensor_values<double>(*this, DType::kF64); }
std::vector<std::uint32_t> Tensor::as_u32() const {
  return tensor_values<std::uint32_t>(*this, DType::kU32);
}

Tensor parse_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kTensorHeaderFixed) {
    throw FormatError("tensor header truncated (" + std::to_string(bytes.size()) + " bytes)",
                      bytes.size());
  }
  if (!std::equal(kTensorMagic.begin(), kTensorMagic.end(), bytes.begin())) {
    throw FormatError("bad tensor magic", 0);
  }
  const std::uint8_t tag = bytes[4];
  if (tag > static_cast<std::uint8_t>(DType::kU32)) {
    throw FormatError("unknown tensor dtype tag " + std::to_string(tag), 4);
  }
  const std::size_t rank = bytes[5];
  if (rank > kTensorMaxRank) throw FormatError("tensor rank " + std::to_string(rank) + " exceeds 8", 5);
  if (load_le<std::uint16_t>(bytes.data() + 6) != 0) {
    throw FormatError("reserved tensor header bytes are not zero", 6);
  }
  const std::size_t header = kTensorHeaderFixed + 8 * rank;
  if (bytes.size() < header) throw FormatError("tensor shape truncated", bytes.size());

  Tensor t;
  t.dtype = static_cast<DType>(tag);
  const std::uint64_t elem = dtype_size(t.dtype);
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::uint64_t d = load_le<std::uint64_t>(bytes.data() + kTensorHeaderFixed + 8 * i);
    if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / elem / d) {
      throw FormatError("tensor shape overflows", kTensorHeaderFixed + 8 * i);
    }
    count *= d;
    t.shape.push_back(d);
  }
  const std::uint64_t expected = count * elem;
  const std::uint64_t actual = bytes.size() - header;
  if (actual != expected) {
    throw FormatError("tensor payload is " + std::to_string(actual) + " bytes, shape needs " +
                          std::to_string(expected),
                      header + std::min(actual, expected));
  }
  t.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return t;
}

Bytes serialize_tensor(const Tensor& t) {
  if (t.shape.size() > kTensorMaxRank) throw InvalidArgument("tensor rank exceeds 8");
  if (t.element_count() * dtype_size(t.dtype) != t.payload.size()) {
    throw InvalidArgument("tensor payload length does not match its shape");
  }
  Bytes out(kTensorMagic.begin(), kTensorMagic.end());
  out.push_back(static_cast<std::uint8_t>(t.dtype));
  out.push_back(static_cast<std::uint8_t>(t.shape.size()));
  store_le<std::uint16_t>(out, 0);
  for (std::uint64_t d : t.shape) store_le(out, d);
  out.insert(out.end(), t.payload.begin(), t.payload.end());
  return out;
}

Tensor read_tensor(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  try {
    return parse_tensor(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  write_file(path, serialize_tensor(t));
}

Tensor image_channels_tensor(const LabeledImage& image) {
  image.validate();
  return Tensor::from_f32({static_cast<std::uint64_t>(image.height),
                           static_cast<std::uint64_t>(image.width),
                           static_cast<std::uint64_t>(image.channels)},
                          image.data);
}

Tensor image_labels_tensor(const LabeledImage& image) {
  image.validate();
  std::vector<std::uint32_t> labels(image.labels.size());
  std::transform(image.labels.begin(), image.labels.end(), labels.begin(), [](int l) {
    return l == kUnlabeled ? 0xFFFFFFFFu : static_cast<std::uint32_t>(l);
  });
  return Tensor::from_u32(
      {static_cast<std::uint64_t>(image.height), static_cast<std::uint64_t>(image.width)}, labels);
}

LabeledImage image_from_tensors(const Tensor& channels, const Tensor& labels) {
  if (channels.shape.size() != 3 || labels.shape.size() != 2 ||
      channels.shape[0] != labels.shape[0] || channels.shape[1] != labels.shape[1]) {
    throw InvalidArgument("image tensors must be H x W x C and H x W with matching H, W");
  }
  constexpr std::uint64_t kMaxSide = 1u << 20;
  if (channels.shape[0] > kMaxSide || channels.shape[1] > kMaxSide || channels.shape[2] > 64) {
    throw InvalidArgument("image tensor dimensions are implausibly large");
  }
  LabeledImage img(static_cast<int>(channels.shape[0]), static_cast<int>(channels.shape[1]),
                   static_cast<int>(channels.shape[2]));
  img.data = channels.as_f32();
  const auto raw = labels.as_u32();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    img.labels[i] = raw[i] == 0xFFFFFFFFu ? kUnlabeled : static_cast<int>(raw[i]);
  }
  img.validate();
  return img;
}

// ---------------------------------------------------------------------------
// Class maps.

int ClassMap::apply(int raw) const {
  if (ignore_ids.contains(raw)) return kUnlabeled;
  const auto it = mapping.find(raw);
  return it == mapping.end() ? kUnlabeled : it->second;
}

int ClassMap::num_classes() const {
  int hi = -1;
  for (const auto& [raw, id] : mapping) hi = std::max(hi, id);
  return hi + 1;
}

void ClassMap::apply_to(LabeledCloud& cloud) const {
  for (int& l : cloud.labels) l = apply(l);
}

ClassMap parse_class_map(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("class map is not valid JSON: ") + e.what(), e.byte);
  }
  if (!j.is_object()) throw FormatError("class map must be a JSON object", 0);
  for (const auto& [key, value] : j.items()) {
    if (key != "name" && key != "mapping" && key != "ignore_ids") {
      throw InvalidArgument("class map: unknown key '" + key + "'");
    }
  }
  ClassMap map;
  try {
    map.name = j.at("name").get<std::string>();
    for (const auto& [raw, id] : j.at("mapping").items()) {
      std::size_t used = 0;
      const int raw_id = std::stoi(raw, &used);
      if (used != raw.size()) throw InvalidArgument("class map: raw id '" + raw + "' is not an integer");
      const int train_id = id.get<int>();
      if (train_id < 0) throw InvalidArgument("class map: negative training id");
      map.mapping[raw_id] = train_id;
    }
    if (j.contains("ignore_ids")) {
      for (int id : j.at("ignore_ids").get<std::vector<int>>()) map.ignore_ids.insert(id);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("class map: ") + e.what());
  } catch (const std::logic_error& e) {
    throw InvalidArgument(std::string("class map: bad raw id: ") + e.what());
  }
  return map;
}

ClassMap read_class_map(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  return parse_class_map(std::string(bytes.begin(), bytes.end()));
}

// ---------------------------------------------------------------------------
// Synthetic image world.

bool DomainShift::is_zero() const {
  return noise_scale == 0.0 && hue_shift == 0.0 && thin_dropout == 0.0 && density_factor == 1.0 &&
         beam_distortion == 0.0 && intensity_gain == 1.0 && intensity_offset == 0.0;
}

DomainShift DomainShift::rgb_default() {
  DomainShift s;
  s.noise_scale = 0.3;
  s.hue_shift = 0.8;
  s.thin_dropout = 0.5;
  return s;
}

DomainShift DomainShift::lidar_default() {
  DomainShift s;
  s.noise_scale = 0.03;
  s.density_factor = 0.8;
  s.beam_distortion = 0.5;
  s.intensity_gain = 0.7;
  return s;
}

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 5> kBaseColors{{
    {0.42, 0.42, 0.45},  // road
    {0.55, 0.72, 0.95},  // sky
    {0.62, 0.38, 0.28},  // building
    {0.82, 0.12, 0.14},  // car
    {0.92, 0.84, 0.20},  // pole
}};

Rgb rotate_hue(const Rgb& c, double angle) {
  // Rodrigues rotation about the grey axis (1, 1, 1) / sqrt(3).
  const double k = 1.0 / std::sqrt(3.0);
  const double cs = std::cos(angle);
  const double sn = std::sin(angle);
  const double dot = k * (c[0] + c[1] + c[2]);
  const Rgb cross{k * (c[2] - c[1]), k * (c[0] - c[2]), k * (c[1] - c[0])};
  Rgb out;
  for (int i = 0; i < 3; ++i) out[i] = c[i] * cs + cross[i] * sn + k * dot * (1.0 - cs);
  return out;
}

struct Rect {
  int top, left, bottom, right;  // inclusive-exclusive
};

struct RgbScene {
  int horizon = 0;
  std::vector<Rect> buildings;
  std::vector<Rect> cars;
  struct Pole {
    int col, top, bottom;
  };
  std::vector<Pole> poles;
  std::array<Rgb, 5> colors{};
  std::vector<Rgb> building_colors;
  std::vector<Rgb> car_colors;
};

RgbScene sample_rgb_scene(const SyntheticWorldConfig& cfg, Rng& rng) {
  const int h = cfg.height;
  const int w = cfg.width;
  RgbScene s;
  s.horizon = static_cast<int>(std::lround(h * rng.uniform(0.38, 0.52)));
  for (int c = 0; c < 5; ++c) {
    for (int ch = 0; ch < 3; ++ch) s.colors[c][ch] = kBaseColors[c][ch] + rng.uniform(-0.06, 0.06);
  }
  const int n_buildings = 2 + static_cast<int>(rng.index(3));
  for (int i = 0; i < n_buildings; ++i) {
    const int bw = std::max(2, static_cast<int>(w * rng.uniform(0.15, 0.35)));
    const int left = static_cast<int>(rng.index(static_cast<std::size_t>(std::max(1, w - bw))));
    const int top = static_cast<int>(rng.index(static_cast<std::size_t>(std::max(1, s.horizon - 2))));
    s.buildings.push_back({top, left, s.horizon, std::min(w, left + bw)});
    Rgb col = s.colors[2];
    for (double& v : col) v += rng.uniform(-0.05, 0.05);
    s.building_colors.push_back(col);
  }
  const int n_cars = 1 + static_cast<int>(rng.index(3));
  for (int i = 0; i < n_cars; ++i) {
    const int ch = std::max(2, static_cast<int>(h * rng.uniform(0.08, 0.15)));
    const int cw = std::max(3, static_cast<int>(w * rng.uniform(0.15, 0.25)));
    const int bottom = s.horizon + ch + static_cast<int>(rng.index(
                                            static_cast<std::size_t>(std::max(1, h - s.horizon - ch))));
    const int left = static_cast<int>(rng.index(static_cast<std::size_t>(std::max(1, w - cw))));
    s.cars.push_back({std::min(h, bottom) - ch, left, std::min(h, bottom), std::min(w, left + cw)});
    Rgb col = s.colors[3];
    for (double& v : col) v += rng.uniform(-0.05, 0.05);
    s.car_colors.push_back(col);
  }
  const int n_poles = 1 + static_cast<int>(rng.index(3));
  for (int i = 0; i < n_poles; ++i) {
    const int col = static_cast<int>(rng.index(static_cast<std::size_t>(std::max(1, w - 2))));
    const int top = std::max(0, s.horizon - 3 - static_cast<int>(rng.index(static_cast<std::size_t>(std::max(1, s.horizon / 2)))));
    const int bottom = std::min(h, s.horizon + 1 + static_cast<int>(rng.index(4)));
    s.poles.push_back({col, top, bottom});
  }
  return s;
}

LabeledImage render_rgb(const SyntheticWorldConfig& cfg, const RgbScene& s, Rng noise_rng,
                        const DomainShift* shift, Rng shift_rng) {
  const int h = cfg.height;
  const int w = cfg.width;
  LabeledImage img(h, w, 3);
  std::vector<Rgb> color(img.pixels());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int cls = r < s.horizon ? rgb_classes::kSky : rgb_classes::kRoad;
      img.label(r, c) = cls;
      color[static_cast<std::size_t>(r) * w + c] = s.colors[cls];
    }
  }
  auto paint = [&](const Rect& rect, int cls, const Rgb& col) {
    for (int r = std::max(0, rect.top); r < std::min(h, rect.bottom); ++r) {
      for (int c = std::max(0, rect.left); c < std::min(w, rect.right); ++c) {
        img.label(r, c) = cls;
        color[static_cast<std::size_t>(r) * w + c] = col;
      }
    }
  };
  for (std::size_t i = 0; i < s.buildings.size(); ++i) paint(s.buildings[i], rgb_classes::kBuilding, s.building_colors[i]);
  for (std::size_t i = 0; i < s.cars.size(); ++i) paint(s.cars[i], rgb_classes::kCar, s.car_colors[i]);
  for (const auto& pole : s.poles) {
    // Poles are two pixels wide; the target may draw them one pixel wide.
    const bool thin = shift && shift_rng.uniform() < shift->thin_dropout;
    paint({pole.top, pole.col, pole.bottom, pole.col + (thin ? 1 : 2)}, rgb_classes::kPole,
          s.colors[rgb_classes::kPole]);
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      Rgb px = color[static_cast<std::size_t>(r) * w + c];
      if (shift && shift->hue_shift != 0.0) px = rotate_hue(px, shift->hue_shift);
      for (int ch = 0; ch < 3; ++ch) {
        double v = px[ch] + 0.03 * noise_rng.normal();
        if (shift && shift->noise_scale != 0.0) v += shift->noise_scale * shift_rng.normal();
        img.at(r, c, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

void check_world(const SyntheticWorldConfig& cfg, Modality m) {
  if (cfg.num_classes != 5) throw InvalidArgument("synthetic worlds have exactly 5 classes");
  if (cfg.scene_count < 1) throw InvalidArgument("synthetic world needs at least one scene");
  if (m == Modality::kRgb && (cfg.height < 8 || cfg.width < 8)) {
    throw InvalidArgument("synthetic images must be at least 8 x 8");
  }
  if (m == Modality::kLidar && (cfg.beams < 2 || cfg.azimuth_steps < 8)) {
    throw InvalidArgument("synthetic scanner needs >= 2 beams and >= 8 azimuth steps");
  }
  if (!(cfg.shift.density_factor > 0.0 && cfg.shift.density_factor <= 1.0)) {
    throw InvalidArgument("density factor must lie in (0, 1]");
  }
}

}  // namespace

DomainPair<LabeledImage> generate_rgb_scene(const SyntheticWorldConfig& cfg, int scene_index) {
  check_world(cfg, Modality::kRgb);
  const Rng base = Rng(cfg.seed).fork("rgb").fork(static_cast<std::uint64_t>(scene_index));
  Rng layout = base.fork("layout");
  const RgbScene scene = sample_rgb_scene(cfg, layout);
  DomainPair<LabeledImage> out;
  out.source = render_rgb(cfg, scene, base.fork("noise"), nullptr, base.fork("shift"));
  out.target = render_rgb(cfg, scene, base.fork("noise"), &cfg.shift, base.fork("shift"));
  return out;
}

std::vector<DomainPair<LabeledImage>> generate_rgb_world(const SyntheticWorldConfig& cfg) {
  std::vector<DomainPair<LabeledImage>> out;
  out.reserve(static_cast<std::size_t>(cfg.scene_count));
  for (int i = 0; i < cfg.scene_count; ++i) out.push_back(generate_rgb_scene(cfg, i));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic point-cloud world: a multi-beam scanner ray-cast against a ground
// plane, boxes and vertical cylinders.

namespace {

constexpr double kSensorHeight = 1.7;
constexpr double kMaxRange = 30.0;
constexpr std::array<double, 5> kBaseIntensity{0.25, 0.75, 0.45, 0.15, 0.55};

struct Box {
  std::array<double, 3> lo, hi;
  int cls;
  int instance;
};

struct Cylinder {
  double cx, cy, radius, z0, z1;
  int cls;
  int instance;
};

struct LidarScene {
  std::vector<Box> boxes;
  std::vector<Cylinder> cylinders;
};

LidarScene sample_lidar_scene(Rng& rng) {
  LidarScene s;
  int instance = 1;
  const double ground = -kSensorHeight;
  auto polar = [&](double r0, double r1) {
    const double r = rng.uniform(r0, r1);
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return std::pair{r * std::cos(a), r * std::sin(a)};
  };
  const int cars = 3 + static_cast<int>(rng.index(3));
  for (int i = 0; i < cars; ++i) {
    const auto [x, y] = polar(5.0, 18.0);
    const bool along_x = rng.coin();
    const double hx = along_x ? 2.0 : 0.9;
    const double hy = along_x ? 0.9 : 2.0;
    s.boxes.push_back({{x - hx, y - hy, ground}, {x + hx, y + hy, ground + 1.5}, lidar_classes::kCar, instance++});
  }
  const int buildings = 2 + static_cast<int>(rng.index(2));
  for (int i = 0; i < buildings; ++i) {
    const auto [x, y] = polar(18.0, 26.0);
    const double hx = rng.uniform(2.0, 5.0);
    const double hy = rng.uniform(2.0, 5.0);
    s.boxes.push_back({{x - hx, y - hy, ground}, {x + hx, y + hy, ground + rng.uniform(4.0, 7.0)},
                       lidar_classes::kBuilding, instance++});
  }
  const int people = 2 + static_cast<int>(rng.index(3));
  for (int i = 0; i < people; ++i) {
    const auto [x, y] = polar(3.0, 14.0);
    s.cylinders.push_back({x, y, 0.3, ground, ground + 1.8, lidar_classes::kPerson, instance++});
  }
  const int trunks = 3 + static_cast<int>(rng.index(4));
  for (int i = 0; i < trunks; ++i) {
    const auto [x, y] = polar(4.0, 18.0);
    s.cylinders.push_back({x, y, 0.22, ground, ground + 4.5, lidar_classes::kTrunk, instance++});
  }
  return s;
}

bool hit_box(const Box& b, const std::array<double, 3>& d, double& t_hit) {
  double t0 = 0.0;
  double t1 = kMaxRange;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-12) {
      if (0.0 < b.lo[i] || 0.0 > b.hi[i]) return false;
      continue;
    }
    double a = b.lo[i] / d[i];
    double c = b.hi[i] / d[i];
    if (a > c) std::swap(a, c);
    t0 = std::max(t0, a);
    t1 = std::min(t1, c);
    if (t0 > t1) return false;
  }
  t_hit = t0;
  return t0 > 0.0;
}

bool hit_cylinder(const Cylinder& cyl, const std::array<double, 3>& d, double& t_hit) {
  const double a = d[0] * d[0] + d[1] * d[1];
  if (a < 1e-12) return false;
  const double b = -2.0 * (d[0] * cyl.cx + d[1] * cyl.cy);
  const double c = cyl.cx * cyl.cx + cyl.cy * cyl.cy - cyl.radius * cyl.radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return false;
  const double t = (-b - std::sqrt(disc)) / (2.0 * a);
  if (t <= 0.0 || t > kMaxRange) return false;
  const double z = t * d[2];
  if (z < cyl.z0 || z > cyl.z1) return false;
  t_hit = t;
  return true;
}

std::vector<double> beam_elevations(int beams, double distortion) {
  // Uniform in [-25, 3] degrees; distortion packs beams towards the centre.
  constexpr double lo = -25.0;
  constexpr double hi = 3.0;
  const double mid = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo);
  std::vector<double> out(static_cast<std::size_t>(beams));
  for (int i = 0; i < beams; ++i) {
    const double u = -1.0 + 2.0 * i / (beams - 1);
    const double warped = std::copysign(std::pow(std::abs(u), 1.0 + distortion), u);
    out[static_cast<std::size_t>(i)] = (mid + half * warped) * std::numbers::pi / 180.0;
  }
  return out;
}

LabeledCloud render_lidar(const SyntheticWorldConfig& cfg, const LidarScene& scene, Rng noise_rng,
                          const DomainShift* shift) {
  LabeledCloud cloud;
  const std::vector<double> elevations =
      beam_elevations(cfg.beams, shift ? shift->beam_distortion : 0.0);
  for (int bi = 0; bi < cfg.beams; ++bi) {
    const double e = elevations[static_cast<std::size_t>(bi)];
    for (int ai = 0; ai < cfg.azimuth_steps; ++ai) {
      const double az = 2.0 * std::numbers::pi * (ai + 0.5) / cfg.azimuth_steps;
      const std::array<double, 3> d{std::cos(e) * std::cos(az), std::cos(e) * std::sin(az), std::sin(e)};
      double best = kMaxRange;
      int cls = -1;
      int instance = 0;
      if (d[2] < 0.0) {
        const double t = -kSensorHeight / d[2];
        if (t < best) {
          best = t;
          cls = lidar_classes::kGround;
        }
      }
      double t;
      for (const Box& b : scene.boxes) {
        if (hit_box(b, d, t) && t < best) {
          best = t;
          cls = b.cls;
          instance = b.instance;
        }
      }
      for (const Cylinder& c : scene.cylinders) {
        if (hit_cylinder(c, d, t) && t < best) {
          best = t;
          cls = c.cls;
          instance = c.instance;
        }
      }
      // Both noise draws happen for every ray so the stream stays aligned.
      const double range_noise = noise_rng.normal();
      const double intensity_noise = noise_rng.normal();
      if (cls < 0) continue;
      double range = best + 0.01 * range_noise;
      if (shift) range += shift->noise_scale * range_noise;
      double intensity = kBaseIntensity[static_cast<std::size_t>(cls)] + 0.04 * intensity_noise;
      if (shift) intensity = intensity * shift->intensity_gain + shift->intensity_offset;
      CloudPoint p;
      p.x = range * d[0];
      p.y = range * d[1];
      p.z = range * d[2];
      p.intensity = std::clamp(intensity, 0.0, 1.0);
      cloud.points.push_back(p);
      cloud.labels.push_back(cls);
      cloud.instances.push_back(instance);
    }
  }
  return cloud;
}

}  // namespace

DomainPair<LabeledCloud> generate_lidar_scene(const SyntheticWorldConfig& cfg, int scene_index) {
  check_world(cfg, Modality::kLidar);
  const Rng base = Rng(cfg.seed).fork("lidar").fork(static_cast<std::uint64_t>(scene_index));
  Rng layout = base.fork("layout");
  const LidarScene scene = sample_lidar_scene(layout);
  DomainPair<LabeledCloud> out;
  out.source = render_lidar(cfg, scene, base.fork("noise"), nullptr);
  LabeledCloud raw = render_lidar(cfg, scene, base.fork("noise"), &cfg.shift);
  if (cfg.shift.density_factor >= 1.0) {
    out.target = std::move(raw);
    return out;
  }
  // Thin the target: keep each return with probability density_factor and
  // never more than source - 1 returns.
  Rng keep_rng = base.fork("density");
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (keep_rng.uniform() < cfg.shift.density_factor) kept.push_back(i);
  }
  const std::size_t cap = out.source.size() == 0 ? 0 : out.source.size() - 1;
  while (kept.size() > cap) kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(keep_rng.index(kept.size())));
  for (std::size_t i : kept) {
    out.target.points.push_back(raw.points[i]);
    out.target.labels.push_back(raw.labels[i]);
    out.target.instances.push_back(raw.instances[i]);
  }
  return out;
}

std::vector<DomainPair<LabeledCloud>> generate_lidar_world(const SyntheticWorldConfig& cfg) {
  std::vector<DomainPair<LabeledCloud>> out;
  out.reserve(static_cast<std::size_t>(cfg.scene_count));
  for (int i = 0; i < cfg.scene_count; ++i) out.push_back(generate_lidar_scene(cfg, i));
  return out;
}

}  // namespace hyperada::io
