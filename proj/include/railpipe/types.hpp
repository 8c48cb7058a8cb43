#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "railpipe/errors.hpp"

namespace railpipe {

inline constexpr double kPi = 3.14159265358979323846;

enum class ObjectClass { Car, Pedestrian };
enum class DomainKind { SyntheticRail, RealRail, RealAuto };
enum class Split { Train, Val, Test };
enum class IntensityMode { Native, ConstantOne, Absent };
enum class PointRecord { XYZ, XYZI };

inline const char* to_string(ObjectClass c) {
  return c == ObjectClass::Car ? "Car" : "Pedestrian";
}

inline const char* to_string(DomainKind k) {
  switch (k) {
    case DomainKind::SyntheticRail: return "synthetic_rail";
    case DomainKind::RealRail: return "real_rail";
    default: return "real_auto";
  }
}

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
  }
}

inline const char* to_string(IntensityMode m) {
  switch (m) {
    case IntensityMode::Native: return "native";
    case IntensityMode::ConstantOne: return "constant_one";
    default: return "absent";
  }
}

inline const char* to_string(PointRecord r) {
  return r == PointRecord::XYZ ? "xyz" : "xyzi";
}

inline std::optional<ObjectClass> object_class_from_string(std::string_view s) {
  if (s == "Car") return ObjectClass::Car;
  if (s == "Pedestrian") return ObjectClass::Pedestrian;
  return std::nullopt;
}

inline std::optional<DomainKind> domain_kind_from_string(std::string_view s) {
  if (s == "synthetic_rail") return DomainKind::SyntheticRail;
  if (s == "real_rail") return DomainKind::RealRail;
  if (s == "real_auto") return DomainKind::RealAuto;
  return std::nullopt;
}

inline std::optional<Split> split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  return std::nullopt;
}

inline std::optional<IntensityMode> intensity_mode_from_string(
    std::string_view s) {
  if (s == "native") return IntensityMode::Native;
  if (s == "constant_one") return IntensityMode::ConstantOne;
  if (s == "absent") return IntensityMode::Absent;
  return std::nullopt;
}

inline std::optional<PointRecord> point_record_from_string(std::string_view s) {
  if (s == "xyz") return PointRecord::XYZ;
  if (s == "xyzi") return PointRecord::XYZI;
  return std::nullopt;
}

// Maps yaw into (-pi, pi].
inline double normalize_yaw(double yaw) {
  double r = std::remainder(yaw, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  std::optional<double> intensity;
};

// Columnar point storage. Optional channels (intensity, sensor_id, origin)
// are either empty or exactly size() long. `origin` is a debug channel
// carrying the per-point origin domain after augmentation (0 = target,
// 1 = source).
struct PointCloud {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> z;
  std::vector<double> intensity;
  std::vector<std::uint8_t> sensor_id;
  std::vector<std::uint8_t> origin;

  std::size_t size() const { return x.size(); }
  bool empty() const { return x.empty(); }
  bool has_intensity() const { return !intensity.empty(); }
  bool has_sensor_id() const { return !sensor_id.empty(); }
  bool has_origin() const { return !origin.empty(); }

  void reserve(std::size_t n) {
    x.reserve(n);
    y.reserve(n);
    z.reserve(n);
  }

  void push_back(double px, double py, double pz) {
    if (has_intensity() || has_sensor_id() || has_origin()) {
      throw std::invalid_argument(
          "PointCloud::push_back(x,y,z) on a cloud with optional channels");
    }
    x.push_back(px);
    y.push_back(py);
    z.push_back(pz);
  }

  void push_back(const Point3& p) {
    if (!empty() && has_intensity() != p.intensity.has_value()) {
      throw std::invalid_argument(
          "PointCloud::push_back: intensity presence differs from cloud");
    }
    if (has_sensor_id() || has_origin()) {
      throw std::invalid_argument(
          "PointCloud::push_back: cloud has per-point channels that "
          "push_back cannot extend");
    }
    x.push_back(p.x);
    y.push_back(p.y);
    z.push_back(p.z);
    if (p.intensity) intensity.push_back(*p.intensity);
  }

  Point3 point(std::size_t i) const {
    Point3 p{x[i], y[i], z[i], std::nullopt};
    if (has_intensity()) p.intensity = intensity[i];
    return p;
  }

  // Keeps points where keep[i] != 0; channels follow.
  PointCloud select(const std::vector<char>& keep) const {
    if (keep.size() != size()) {
      throw std::invalid_argument("PointCloud::select: mask size mismatch");
    }
    PointCloud out;
    std::size_t n = 0;
    for (char k : keep) n += (k != 0);
    out.reserve(n);
    if (has_intensity()) out.intensity.reserve(n);
    for (std::size_t i = 0; i < size(); ++i) {
      if (!keep[i]) continue;
      out.x.push_back(x[i]);
      out.y.push_back(y[i]);
      out.z.push_back(z[i]);
      if (has_intensity()) out.intensity.push_back(intensity[i]);
      if (has_sensor_id()) out.sensor_id.push_back(sensor_id[i]);
      if (has_origin()) out.origin.push_back(origin[i]);
    }
    return out;
  }

  PointCloud select_indices(const std::vector<std::size_t>& idx) const {
    PointCloud out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
      if (i >= size()) {
        throw std::invalid_argument("PointCloud::select_indices: out of range");
      }
      out.x.push_back(x[i]);
      out.y.push_back(y[i]);
      out.z.push_back(z[i]);
      if (has_intensity()) out.intensity.push_back(intensity[i]);
      if (has_sensor_id()) out.sensor_id.push_back(sensor_id[i]);
      if (has_origin()) out.origin.push_back(origin[i]);
    }
    return out;
  }

  // Concatenates `other` after this cloud. Intensity must be present in
  // both or neither (harmonize first). Sensor ids do not survive mixing
  // unless both sides carry them. Missing origin tags are filled with 0.
  void append(const PointCloud& other) {
    if (has_intensity() != other.has_intensity() && !empty() &&
        !other.empty()) {
      throw std::invalid_argument(
          "PointCloud::append: intensity channel mismatch");
    }
    const bool keep_sensor =
        (has_sensor_id() || empty()) && (other.has_sensor_id() || other.empty());
    const bool any_origin = has_origin() || other.has_origin();
    if (any_origin) {
      origin.resize(size(), 0);
    }
    x.insert(x.end(), other.x.begin(), other.x.end());
    y.insert(y.end(), other.y.begin(), other.y.end());
    z.insert(z.end(), other.z.begin(), other.z.end());
    if (other.has_intensity() || has_intensity()) {
      intensity.insert(intensity.end(), other.intensity.begin(),
                       other.intensity.end());
    }
    if (keep_sensor) {
      sensor_id.insert(sensor_id.end(), other.sensor_id.begin(),
                       other.sensor_id.end());
    } else {
      sensor_id.clear();
    }
    if (any_origin) {
      if (other.has_origin()) {
        origin.insert(origin.end(), other.origin.begin(), other.origin.end());
      } else {
        origin.resize(size(), 0);
      }
    }
  }

  void check_consistent() const {
    if (y.size() != x.size() || z.size() != x.size()) {
      throw ValidationError("point cloud: coordinate columns differ in length");
    }
    if (has_intensity() && intensity.size() != x.size()) {
      throw ValidationError("point cloud: intensity channel length mismatch");
    }
    if (has_sensor_id() && sensor_id.size() != x.size()) {
      throw ValidationError("point cloud: sensor_id channel length mismatch");
    }
    if (has_origin() && origin.size() != x.size()) {
      throw ValidationError("point cloud: origin channel length mismatch");
    }
  }
};

// Yaw-oriented 3D box. `length` runs along the heading (local +x at yaw 0),
// `width` along local y, `height` along z. Yaw is normalized to (-pi, pi]
// at construction.
struct Box3D {
  double cx = 0.0, cy = 0.0, cz = 0.0;
  double length = 1.0, width = 1.0, height = 1.0;
  double yaw = 0.0;

  Box3D() = default;

  Box3D(double cx_, double cy_, double cz_, double length_, double width_,
        double height_, double yaw_)
      : cx(cx_), cy(cy_), cz(cz_), length(length_), width(width_),
        height(height_), yaw(yaw_) {
    if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(cz)) {
      throw std::invalid_argument("Box3D: non-finite center");
    }
    if (!(length > 0.0) || !(width > 0.0) || !(height > 0.0) ||
        !std::isfinite(length) || !std::isfinite(width) ||
        !std::isfinite(height)) {
      throw std::invalid_argument("Box3D: dimensions must be positive finite");
    }
    if (!std::isfinite(yaw)) {
      throw std::invalid_argument("Box3D: non-finite yaw");
    }
    yaw = normalize_yaw(yaw);
  }

  double volume() const { return length * width * height; }
  double z_min() const { return cz - 0.5 * height; }
  double z_max() const { return cz + 0.5 * height; }
};

inline bool operator==(const Box3D& a, const Box3D& b) {
  return a.cx == b.cx && a.cy == b.cy && a.cz == b.cz &&
         a.length == b.length && a.width == b.width && a.height == b.height &&
         a.yaw == b.yaw;
}

// A class-labeled box. `score` is present only on detections and
// pseudo-labels; ground truth carries no score.
struct LabeledBox {
  Box3D box;
  ObjectClass cls = ObjectClass::Car;
  std::optional<double> score;
};

inline bool operator==(const LabeledBox& a, const LabeledBox& b) {
  return a.box == b.box && a.cls == b.cls && a.score == b.score;
}

// Unit of all pipeline work: one cloud plus its labels plus identity.
// `intensity_normalized` records that harmonize_intensity already ran, so
// re-running the filter chain cannot rescale intensities twice.
struct Frame {
  PointCloud cloud;
  std::vector<LabeledBox> labels;
  DomainKind domain = DomainKind::RealRail;
  std::int64_t frame_id = 0;
  std::string sequence_id;
  std::string sensor;
  bool intensity_normalized = false;
};

}  // namespace railpipe
