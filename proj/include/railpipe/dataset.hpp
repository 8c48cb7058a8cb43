#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "railpipe/errors.hpp"
#include "railpipe/filters.hpp"
#include "railpipe/types.hpp"

namespace railpipe {

static_assert(std::endian::native == std::endian::little,
              "cloud files are little-endian float32; big-endian hosts need "
              "byte swapping");

// ---------------------------------------------------------------------------
// Split assignment: consecutive 10-frame batches, 1-based position within
// the batch; position 6 -> Test, positions 3 and 9 -> Val, the rest ->
// Train. A trailing partial batch uses the same positional rule. This
// yields the 70/20/10 proportions exactly whenever 10 divides the count.

inline Split split_for_position(std::size_t index_in_capture_order) {
  const std::size_t pos = index_in_capture_order % 10 + 1;
  if (pos == 6) return Split::Test;
  if (pos == 3 || pos == 9) return Split::Val;
  return Split::Train;
}

inline std::vector<Split> assign_splits_batch10(std::size_t frame_count) {
  std::vector<Split> out(frame_count);
  for (std::size_t i = 0; i < frame_count; ++i) out[i] = split_for_position(i);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct FrameRecord {
  std::int64_t frame_id = 0;
  std::string sequence_id;
  std::string cloud_path;
  std::string annotation_path;
  Split split = Split::Train;
};

struct DatasetManifest {
  std::string name;
  DomainKind kind = DomainKind::RealRail;
  std::vector<FrameRecord> frames;
  double ground_z_offset = 0.0;
  IntensityMode intensity_mode = IntensityMode::Absent;
  double native_intensity_max = 1.0;
  PointRecord point_record = PointRecord::XYZ;
  std::map<std::string, std::string> class_aliases;  // e.g. Vehicle -> Car

  // Directory the relative paths resolve against; set at load, not stored.
  std::filesystem::path base_dir;

  DatasetHarmonics harmonics() const {
    return DatasetHarmonics{ground_z_offset, intensity_mode,
                            native_intensity_max};
  }

  std::size_t count_split(Split s) const {
    std::size_t n = 0;
    for (const auto& f : frames) n += (f.split == s);
    return n;
  }

  void validate() const {
    if (name.empty()) throw ValidationError("manifest: empty dataset name");
    if (!std::isfinite(ground_z_offset)) {
      throw ValidationError("manifest: non-finite ground_z_offset");
    }
    if (intensity_mode == IntensityMode::Native &&
        (!(native_intensity_max > 0.0) ||
         !std::isfinite(native_intensity_max))) {
      throw ValidationError(
          "manifest: native intensity mode needs a positive "
          "native_intensity_max");
    }
    std::map<std::string, std::map<std::int64_t, std::size_t>> seen;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto& f = frames[i];
      if (f.cloud_path.empty() || f.annotation_path.empty()) {
        throw ValidationError("manifest: frame " + std::to_string(i) +
                              " has an empty path");
      }
      auto [it, fresh] = seen[f.sequence_id].emplace(f.frame_id, i);
      if (!fresh) {
        throw ValidationError("manifest: duplicate frame_id " +
                              std::to_string(f.frame_id) + " in sequence '" +
                              f.sequence_id + "'");
      }
    }
  }
};

// Sorts frames into capture order (sequence, then frame id) and assigns
// batch-of-10 splits over the concatenated order.
inline void assign_splits_batch10(DatasetManifest& m) {
  std::stable_sort(m.frames.begin(), m.frames.end(),
                   [](const FrameRecord& a, const FrameRecord& b) {
                     if (a.sequence_id != b.sequence_id) {
                       return a.sequence_id < b.sequence_id;
                     }
                     return a.frame_id < b.frame_id;
                   });
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    m.frames[i].split = split_for_position(i);
  }
}

// ---------------------------------------------------------------------------
// JSON helpers

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j,
                                           const char* key,
                                           const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw SchemaError(where + ": missing required field '" + key + "'");
  }
  return *it;
}

inline double require_number(const nlohmann::json& j, const char* key,
                             const std::string& where) {
  const auto& v = require_field(j, key, where);
  if (!v.is_number()) {
    throw SchemaError(where + ": field '" + key + "' must be a number");
  }
  return v.get<double>();
}

inline std::string require_string(const nlohmann::json& j, const char* key,
                                  const std::string& where) {
  const auto& v = require_field(j, key, where);
  if (!v.is_string()) {
    throw SchemaError(where + ": field '" + key + "' must be a string");
  }
  return v.get<std::string>();
}

inline std::array<double, 3> require_vec3(const nlohmann::json& j,
                                          const char* key,
                                          const std::string& where) {
  const auto& v = require_field(j, key, where);
  if (!v.is_array() || v.size() != 3 || !v[0].is_number() ||
      !v[1].is_number() || !v[2].is_number()) {
    throw SchemaError(where + ": field '" + key +
                      "' must be an array of 3 numbers");
  }
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

inline nlohmann::json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Annotation files: {"frame_id": n, "sensor": str, "boxes": [{"class",
// "center":[x,y,z], "size":[l,w,h], "yaw", "score"?}]}. Lengths in meters,
// yaw in radians.

struct AnnotationContent {
  std::int64_t frame_id = 0;
  std::string sensor;
  std::vector<LabeledBox> boxes;
};

// Counters for non-fatal ingest events.
struct IngestCounters {
  std::map<std::string, std::size_t> dropped_classes;
  std::size_t clamped_intensities = 0;

  std::size_t total_dropped() const {
    std::size_t n = 0;
    for (const auto& [cls, c] : dropped_classes) n += c;
    return n;
  }
};

inline AnnotationContent load_annotations(
    const std::filesystem::path& path,
    const std::map<std::string, std::string>& class_aliases = {},
    IngestCounters* counters = nullptr) {
  const nlohmann::json j = detail::parse_json_file(path);
  const std::string where = path.filename().string();
  if (!j.is_object()) throw SchemaError(where + ": top level must be an object");
  AnnotationContent out;
  out.frame_id = static_cast<std::int64_t>(
      detail::require_number(j, "frame_id", where));
  if (auto it = j.find("sensor"); it != j.end() && it->is_string()) {
    out.sensor = it->get<std::string>();
  }
  const auto& boxes = detail::require_field(j, "boxes", where);
  if (!boxes.is_array()) {
    throw SchemaError(where + ": 'boxes' must be an array");
  }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const std::string bw = where + ": boxes[" + std::to_string(i) + "]";
    const auto& bj = boxes[i];
    std::string cls_name = detail::require_string(bj, "class", bw);
    if (auto alias = class_aliases.find(cls_name);
        alias != class_aliases.end()) {
      cls_name = alias->second;
    }
    const auto cls = object_class_from_string(cls_name);
    if (!cls) {
      if (counters) ++counters->dropped_classes[cls_name];
      continue;
    }
    const auto center = detail::require_vec3(bj, "center", bw);
    const auto size = detail::require_vec3(bj, "size", bw);
    const double yaw = detail::require_number(bj, "yaw", bw);
    LabeledBox label;
    try {
      label.box = Box3D(center[0], center[1], center[2], size[0], size[1],
                        size[2], yaw);
    } catch (const std::invalid_argument& e) {
      throw SchemaError(bw + ": " + e.what());
    }
    label.cls = *cls;
    if (auto it = bj.find("score"); it != bj.end()) {
      if (!it->is_number()) {
        throw SchemaError(bw + ": field 'score' must be a number");
      }
      const double s = it->get<double>();
      if (!(s >= 0.0 && s <= 1.0)) {
        throw SchemaError(bw + ": score out of [0, 1]");
      }
      label.score = s;
    }
    out.boxes.push_back(label);
  }
  return out;
}

inline nlohmann::json annotations_to_json(const AnnotationContent& content) {
  nlohmann::json j;
  j["frame_id"] = content.frame_id;
  j["sensor"] = content.sensor;
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& label : content.boxes) {
    nlohmann::json bj;
    bj["class"] = to_string(label.cls);
    bj["center"] = {label.box.cx, label.box.cy, label.box.cz};
    bj["size"] = {label.box.length, label.box.width, label.box.height};
    bj["yaw"] = label.box.yaw;
    if (label.score) bj["score"] = *label.score;
    boxes.push_back(std::move(bj));
  }
  j["boxes"] = std::move(boxes);
  return j;
}

inline void save_annotations(const std::filesystem::path& path,
                             const AnnotationContent& content) {
  detail::write_text_file(path, annotations_to_json(content).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Cloud files: packed little-endian float32, no header. XYZ is 12 bytes per
// point, XYZI 16. XYZI intensities are clamped to [0, 1] on load with a
// counted warning.

inline PointCloud load_cloud(const std::filesystem::path& path,
                             PointRecord record,
                             IngestCounters* counters = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  const std::size_t record_size = record == PointRecord::XYZ ? 12 : 16;
  if (bytes.size() % record_size != 0) {
    throw SchemaError(path.string() + ": size " +
                      std::to_string(bytes.size()) +
                      " is not a multiple of the " +
                      std::to_string(record_size) + "-byte record");
  }
  const std::size_t n = bytes.size() / record_size;
  PointCloud cloud;
  cloud.reserve(n);
  if (record == PointRecord::XYZI) cloud.intensity.reserve(n);
  const char* p = bytes.data();
  for (std::size_t i = 0; i < n; ++i) {
    float v[4] = {0, 0, 0, 0};
    std::memcpy(v, p, record_size);
    p += record_size;
    if (!std::isfinite(v[0]) || !std::isfinite(v[1]) || !std::isfinite(v[2])) {
      throw SchemaError(path.string() + ": non-finite coordinate at point " +
                        std::to_string(i));
    }
    cloud.x.push_back(v[0]);
    cloud.y.push_back(v[1]);
    cloud.z.push_back(v[2]);
    if (record == PointRecord::XYZI) {
      if (!std::isfinite(v[3])) {
        throw SchemaError(path.string() + ": non-finite intensity at point " +
                          std::to_string(i));
      }
      double inten = v[3];
      if (inten < 0.0 || inten > 1.0) {
        inten = std::clamp(inten, 0.0, 1.0);
        if (counters) ++counters->clamped_intensities;
      }
      cloud.intensity.push_back(inten);
    }
  }
  return cloud;
}

inline void save_cloud(const std::filesystem::path& path,
                       const PointCloud& cloud, PointRecord record) {
  cloud.check_consistent();
  if (record == PointRecord::XYZI && !cloud.has_intensity()) {
    throw std::invalid_argument(
        "save_cloud: XYZI record requested but the cloud has no intensity");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t record_size = record == PointRecord::XYZ ? 12 : 16;
  std::vector<char> bytes(cloud.size() * record_size);
  char* p = bytes.data();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    float v[4];
    v[0] = static_cast<float>(cloud.x[i]);
    v[1] = static_cast<float>(cloud.y[i]);
    v[2] = static_cast<float>(cloud.z[i]);
    if (record == PointRecord::XYZI) {
      v[3] = static_cast<float>(cloud.intensity[i]);
    }
    std::memcpy(p, v, record_size);
    p += record_size;
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// Sidecar channel for per-point origin tags (one byte per point).
inline void save_origin_tags(const std::filesystem::path& path,
                             const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  std::vector<char> bytes(cloud.size(), 0);
  if (cloud.has_origin()) {
    std::memcpy(bytes.data(), cloud.origin.data(), cloud.size());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Manifest IO

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["name"] = m.name;
  j["kind"] = to_string(m.kind);
  j["ground_z_offset"] = m.ground_z_offset;
  j["intensity_mode"] = to_string(m.intensity_mode);
  j["native_intensity_max"] = m.native_intensity_max;
  j["point_record"] = to_string(m.point_record);
  j["class_aliases"] = m.class_aliases;
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : m.frames) {
    frames.push_back({{"frame_id", f.frame_id},
                      {"sequence_id", f.sequence_id},
                      {"cloud", f.cloud_path},
                      {"annotations", f.annotation_path},
                      {"split", to_string(f.split)}});
  }
  j["frames"] = std::move(frames);
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j,
                                          const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + ": top level must be an object");
  DatasetManifest m;
  m.name = detail::require_string(j, "name", where);
  const std::string kind = detail::require_string(j, "kind", where);
  if (auto k = domain_kind_from_string(kind)) {
    m.kind = *k;
  } else {
    throw SchemaError(where + ": unknown dataset kind '" + kind + "'");
  }
  m.ground_z_offset = detail::require_number(j, "ground_z_offset", where);
  const std::string im = detail::require_string(j, "intensity_mode", where);
  if (auto mode = intensity_mode_from_string(im)) {
    m.intensity_mode = *mode;
  } else {
    throw SchemaError(where + ": unknown intensity_mode '" + im + "'");
  }
  if (auto it = j.find("native_intensity_max"); it != j.end()) {
    if (!it->is_number()) {
      throw SchemaError(where + ": native_intensity_max must be a number");
    }
    m.native_intensity_max = it->get<double>();
  }
  const std::string pr = detail::require_string(j, "point_record", where);
  if (auto rec = point_record_from_string(pr)) {
    m.point_record = *rec;
  } else {
    throw SchemaError(where + ": unknown point_record '" + pr + "'");
  }
  if (auto it = j.find("class_aliases"); it != j.end()) {
    if (!it->is_object()) {
      throw SchemaError(where + ": class_aliases must be an object");
    }
    for (const auto& [key, val] : it->items()) {
      if (!val.is_string()) {
        throw SchemaError(where + ": class alias '" + key +
                          "' must map to a string");
      }
      m.class_aliases[key] = val.get<std::string>();
    }
  }
  const auto& frames = detail::require_field(j, "frames", where);
  if (!frames.is_array()) throw SchemaError(where + ": 'frames' must be an array");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string fw = where + ": frames[" + std::to_string(i) + "]";
    const auto& fj = frames[i];
    FrameRecord rec;
    rec.frame_id =
        static_cast<std::int64_t>(detail::require_number(fj, "frame_id", fw));
    rec.sequence_id = detail::require_string(fj, "sequence_id", fw);
    rec.cloud_path = detail::require_string(fj, "cloud", fw);
    rec.annotation_path = detail::require_string(fj, "annotations", fw);
    const std::string split = detail::require_string(fj, "split", fw);
    if (auto s = split_from_string(split)) {
      rec.split = *s;
    } else {
      throw SchemaError(fw + ": unknown split '" + split + "'");
    }
    m.frames.push_back(std::move(rec));
  }
  m.validate();
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  DatasetManifest m;
  try {
    m = manifest_from_json(detail::parse_json_file(path), path.string());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  m.base_dir = path.has_parent_path() ? path.parent_path()
                                      : std::filesystem::path(".");
  return m;
}

inline void save_manifest(const std::filesystem::path& path,
                          const DatasetManifest& m) {
  detail::write_text_file(path, manifest_to_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Frame loading

inline Frame load_frame(const DatasetManifest& m, const FrameRecord& rec,
                        IngestCounters* counters = nullptr) {
  Frame f;
  f.cloud = load_cloud(m.base_dir / rec.cloud_path, m.point_record, counters);
  AnnotationContent ann = load_annotations(m.base_dir / rec.annotation_path,
                                           m.class_aliases, counters);
  f.labels = std::move(ann.boxes);
  f.domain = m.kind;
  f.frame_id = rec.frame_id;
  f.sequence_id = rec.sequence_id;
  f.sensor = ann.sensor;
  return f;
}

// ---------------------------------------------------------------------------
// Dataset statistics

struct DatasetStats {
  std::size_t train_frames = 0;
  std::size_t val_frames = 0;
  std::size_t test_frames = 0;
  std::size_t car_labels = 0;
  std::size_t pedestrian_labels = 0;

  std::size_t total_frames() const {
    return train_frames + val_frames + test_frames;
  }
};

inline nlohmann::json stats_to_json(const DatasetStats& s) {
  return nlohmann::json{
      {"frames",
       {{"train", s.train_frames}, {"val", s.val_frames},
        {"test", s.test_frames}, {"total", s.total_frames()}}},
      {"labels",
       {{"Car", s.car_labels}, {"Pedestrian", s.pedestrian_labels}}}};
}

// Frame counts per split plus per-class label counts after the configured
// filters. Pass nullptr to count raw labels. Unreadable frames are
// aggregated into one error.
inline DatasetStats dataset_stats(const DatasetManifest& m,
                                  const FilterParams* filters = nullptr) {
  DatasetStats stats;
  std::vector<std::string> failures;
  const DatasetHarmonics harmonics = m.harmonics();
  for (const auto& rec : m.frames) {
    switch (rec.split) {
      case Split::Train: ++stats.train_frames; break;
      case Split::Val: ++stats.val_frames; break;
      case Split::Test: ++stats.test_frames; break;
    }
    try {
      Frame f = load_frame(m, rec);
      if (filters) f = apply_filter_chain(std::move(f), *filters, harmonics);
      for (const auto& label : f.labels) {
        if (label.cls == ObjectClass::Car) {
          ++stats.car_labels;
        } else {
          ++stats.pedestrian_labels;
        }
      }
    } catch (const ConfigError&) {
      throw;  // misconfiguration, not a per-frame data problem
    } catch (const std::exception& e) {
      failures.push_back(rec.cloud_path + ": " + e.what());
    }
  }
  if (!failures.empty()) {
    std::ostringstream msg;
    msg << "dataset_stats: " << failures.size() << " unreadable frame(s):";
    for (const auto& f : failures) msg << "\n  " << f;
    throw IoError(msg.str());
  }
  return stats;
}

}  // namespace railpipe
