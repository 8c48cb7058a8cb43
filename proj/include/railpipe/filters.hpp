#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "railpipe/errors.hpp"
#include "railpipe/geometry.hpp"
#include "railpipe/types.hpp"

namespace railpipe {

struct RangeBox {
  double xmin = 0.0, ymin = 0.0, zmin = 0.0;
  double xmax = 1.0, ymax = 1.0, zmax = 1.0;

  RangeBox() = default;

  RangeBox(double xmin_, double ymin_, double zmin_, double xmax_,
           double ymax_, double zmax_)
      : xmin(xmin_), ymin(ymin_), zmin(zmin_), xmax(xmax_), ymax(ymax_),
        zmax(zmax_) {
    if (!(xmin < xmax) || !(ymin < ymax) || !(zmin < zmax)) {
      throw std::invalid_argument("RangeBox: min must be < max per axis");
    }
  }

  bool contains(double x, double y, double z) const {
    return x >= xmin && x <= xmax && y >= ymin && y <= ymax && z >= zmin &&
           z <= zmax;
  }
};

// Detection range used throughout: forward 216 m, +-54 m lateral,
// -3..6.8 m vertical.
inline RangeBox default_detection_range() {
  return RangeBox(0.0, -54.0, -3.0, 216.0, 54.0, 6.8);
}

namespace detail {

inline Frame select_frame(const Frame& f, const std::vector<char>& point_keep,
                          const std::vector<char>& label_keep) {
  Frame out;
  out.cloud = f.cloud.select(point_keep);
  out.labels.reserve(f.labels.size());
  for (std::size_t i = 0; i < f.labels.size(); ++i) {
    if (label_keep[i]) out.labels.push_back(f.labels[i]);
  }
  out.domain = f.domain;
  out.frame_id = f.frame_id;
  out.sequence_id = f.sequence_id;
  out.sensor = f.sensor;
  out.intensity_normalized = f.intensity_normalized;
  return out;
}

}  // namespace detail

// Drops points outside the range and labels whose box center is outside.
inline Frame clip_range(const Frame& f, const RangeBox& range) {
  std::vector<char> pk(f.cloud.size());
  for (std::size_t i = 0; i < f.cloud.size(); ++i) {
    pk[i] = range.contains(f.cloud.x[i], f.cloud.y[i], f.cloud.z[i]);
  }
  std::vector<char> lk(f.labels.size());
  for (std::size_t i = 0; i < f.labels.size(); ++i) {
    const auto& b = f.labels[i].box;
    lk[i] = range.contains(b.cx, b.cy, b.cz);
  }
  return detail::select_frame(f, pk, lk);
}

// Keeps the configured sensor's points when per-point sensor ids exist and a
// sensor was requested; otherwise falls back to an angular gate around +x.
// Labels survive even with zero points left (min-point filtering is a
// separate stage).
inline Frame frustum_filter(const Frame& f, double half_angle_deg,
                            std::optional<int> sensor_id = std::nullopt) {
  if (!(half_angle_deg > 0.0) || half_angle_deg > 180.0) {
    throw std::invalid_argument("frustum_filter: half angle out of (0, 180]");
  }
  std::vector<char> pk(f.cloud.size());
  if (sensor_id) {
    if (!f.cloud.has_sensor_id()) {
      throw ConfigError(
          "frustum_filter: sensor filter requested but the cloud carries no "
          "per-point sensor ids");
    }
    for (std::size_t i = 0; i < f.cloud.size(); ++i) {
      pk[i] = f.cloud.sensor_id[i] == *sensor_id;
    }
  } else {
    const double limit = half_angle_deg * kPi / 180.0;
    for (std::size_t i = 0; i < f.cloud.size(); ++i) {
      pk[i] = std::abs(std::atan2(f.cloud.y[i], f.cloud.x[i])) <= limit;
    }
  }
  std::vector<char> lk(f.labels.size(), 1);
  return detail::select_frame(f, pk, lk);
}

// Drops labels enclosing fewer than k points ("at least k" is inclusive:
// exactly k survives). Points are untouched.
inline Frame min_points_filter(const Frame& f, int k) {
  if (k < 1) throw std::invalid_argument("min_points_filter: k must be >= 1");
  std::vector<char> pk(f.cloud.size(), 1);
  std::vector<char> lk(f.labels.size());
  for (std::size_t i = 0; i < f.labels.size(); ++i) {
    lk[i] = count_points_in_box(f.cloud, f.labels[i].box) >=
            static_cast<std::size_t>(k);
  }
  return detail::select_frame(f, pk, lk);
}

// Rigid vertical shift: point z and label center z drop by z_offset.
// Relative point-to-box geometry is preserved exactly.
inline Frame ground_align(const Frame& f, double z_offset) {
  if (!std::isfinite(z_offset)) {
    throw std::invalid_argument("ground_align: non-finite offset");
  }
  Frame out = f;
  for (auto& z : out.cloud.z) z -= z_offset;
  for (auto& l : out.labels) l.box.cz -= z_offset;
  return out;
}

// Native: divide by the dataset's native maximum, clamp to [0,1]; a no-op on
// frames already flagged normalized, so re-running the chain cannot rescale
// twice. ConstantOne: (re)create the channel at 1.0. Absent: drop the
// channel.
inline Frame harmonize_intensity(const Frame& f, IntensityMode mode,
                                 double native_max = 1.0) {
  Frame out = f;
  switch (mode) {
    case IntensityMode::Native: {
      if (out.intensity_normalized) return out;
      if (!out.cloud.has_intensity()) {
        throw ConfigError(
            "harmonize_intensity: native mode but the cloud has no intensity "
            "channel");
      }
      if (!(native_max > 0.0) || !std::isfinite(native_max)) {
        throw ConfigError(
            "harmonize_intensity: native_intensity_max must be positive");
      }
      for (auto& v : out.cloud.intensity) {
        v = std::clamp(v / native_max, 0.0, 1.0);
      }
      break;
    }
    case IntensityMode::ConstantOne:
      out.cloud.intensity.assign(out.cloud.size(), 1.0);
      break;
    case IntensityMode::Absent:
      out.cloud.intensity.clear();
      break;
  }
  out.intensity_normalized = true;
  return out;
}

// ---------------------------------------------------------------------------
// Filter chain

enum class FilterStage { Clip, Frustum, GroundAlign, MinPoints, Intensity };

inline constexpr std::array<FilterStage, 5> kCanonicalFilterOrder{
    FilterStage::Clip, FilterStage::Frustum, FilterStage::GroundAlign,
    FilterStage::MinPoints, FilterStage::Intensity};

inline const char* to_string(FilterStage s) {
  switch (s) {
    case FilterStage::Clip: return "clip";
    case FilterStage::Frustum: return "frustum";
    case FilterStage::GroundAlign: return "ground_align";
    case FilterStage::MinPoints: return "min_points";
    default: return "intensity";
  }
}

inline std::optional<FilterStage> filter_stage_from_string(
    std::string_view s) {
  for (FilterStage st : kCanonicalFilterOrder) {
    if (s == to_string(st)) return st;
  }
  return std::nullopt;
}

// The pipeline order is fixed: clip -> frustum -> ground_align ->
// min_points -> intensity. A stage list may omit stages but must not
// reorder or repeat them.
inline void validate_stage_order(const std::vector<FilterStage>& stages) {
  std::size_t cursor = 0;  // next admissible canonical rank
  for (FilterStage st : stages) {
    std::size_t rank = 0;
    while (rank < kCanonicalFilterOrder.size() &&
           kCanonicalFilterOrder[rank] != st) {
      ++rank;
    }
    if (cursor > 0 && rank == cursor - 1) {
      throw ConfigError(std::string("filter stage repeated: '") +
                        to_string(st) + "'");
    }
    if (rank < cursor) {
      throw ConfigError(std::string("filter stages out of order: '") +
                        to_string(st) + "' must come before '" +
                        to_string(kCanonicalFilterOrder[cursor - 1]) + "'");
    }
    cursor = rank + 1;
  }
}

// Per-dataset harmonization constants; these come from the dataset manifest,
// not from the pipeline config.
struct DatasetHarmonics {
  double ground_z_offset = 0.0;
  IntensityMode intensity_mode = IntensityMode::Absent;
  double native_intensity_max = 1.0;
};

struct FilterParams {
  std::vector<FilterStage> stages{kCanonicalFilterOrder.begin(),
                                  kCanonicalFilterOrder.end()};
  RangeBox range = default_detection_range();
  double frustum_half_angle_deg = 7.5;  // narrow-sensor aperture halved
  std::optional<int> frustum_sensor_id;
  int min_points = 5;

  void validate() const {
    validate_stage_order(stages);
    if (!(frustum_half_angle_deg > 0.0) || frustum_half_angle_deg > 180.0) {
      throw ConfigError("filters: frustum_half_angle_deg out of (0, 180]");
    }
    if (min_points < 1) throw ConfigError("filters: min_points must be >= 1");
  }
};

inline Frame apply_filter_chain(Frame f, const FilterParams& params,
                                const DatasetHarmonics& h) {
  validate_stage_order(params.stages);
  for (FilterStage st : params.stages) {
    switch (st) {
      case FilterStage::Clip:
        f = clip_range(f, params.range);
        break;
      case FilterStage::Frustum:
        f = frustum_filter(f, params.frustum_half_angle_deg,
                           params.frustum_sensor_id);
        break;
      case FilterStage::GroundAlign:
        f = ground_align(f, h.ground_z_offset);
        break;
      case FilterStage::MinPoints:
        f = min_points_filter(f, params.min_points);
        break;
      case FilterStage::Intensity:
        f = harmonize_intensity(f, h.intensity_mode, h.native_intensity_max);
        break;
    }
  }
  return f;
}

}  // namespace railpipe
