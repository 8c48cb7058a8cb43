#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "railpipe/augment.hpp"
#include "railpipe/dataset.hpp"
#include "railpipe/errors.hpp"
#include "railpipe/filters.hpp"
#include "railpipe/metrics.hpp"
#include "railpipe/rng.hpp"
#include "railpipe/types.hpp"

// Deterministic synthetic scenes plus brute-force oracles. The oracles
// (Monte-Carlo BEV IoU, voxel-counting 3D IoU, reference AP40) re-derive
// membership, overlap and the precision/recall definition from scratch and
// never call into the geometry or metrics code they are used to check.
namespace railpipe::scenegen {

// ---------------------------------------------------------------------------
// Scene generation

struct ObjectPlacement {
  ObjectClass cls = ObjectClass::Car;
  Box3D box;
  std::size_t point_count = 0;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  double extent_x = 120.0;  // ground rectangle [0, extent_x] x [-extent_y, extent_y]
  double extent_y = 40.0;
  double ground_density = 0.2;  // points per square meter
  double frustum_half_angle_deg = 90.0;
  std::vector<ObjectPlacement> objects;
  double noise_sigma = 0.02;  // Gaussian z jitter on ground points
  DomainKind domain = DomainKind::SyntheticRail;
  std::int64_t frame_id = 0;
  std::string sequence_id = "synthetic";
};

namespace detail {

inline bool in_wedge(double x, double y, double half_angle_deg) {
  if (half_angle_deg >= 90.0) return x >= 0.0;
  return x >= 0.0 && std::abs(y) <= x * std::tan(half_angle_deg * kPi / 180.0);
}

}  // namespace detail

// Closed-form area of the frustum-clipped ground rectangle.
inline double ground_area(const SceneSpec& spec) {
  const double X = spec.extent_x;
  const double Y = spec.extent_y;
  if (spec.frustum_half_angle_deg >= 90.0) return 2.0 * X * Y;
  const double t = std::tan(spec.frustum_half_angle_deg * kPi / 180.0);
  if (X * t <= Y) return X * X * t;
  return 2.0 * X * Y - Y * Y / t;
}

// Ground plane points uniform over the frustum-clipped extent with Gaussian
// z jitter, plus exactly point_count points uniform inside each object box.
// Fully reproducible from the seed. Note the z jitter is bounded by ~8.6
// sigma (the Box-Muller tail at 53-bit resolution), so boxes whose bottom
// clears that band never capture ground points.
inline Frame gen_scene(const SceneSpec& spec) {
  if (!(spec.ground_density >= 0.0)) {
    throw ValidationError("gen_scene: negative ground density");
  }
  if (!(spec.extent_x > 0.0) || !(spec.extent_y > 0.0)) {
    throw ValidationError("gen_scene: extents must be positive");
  }
  if (!(spec.frustum_half_angle_deg > 0.0) ||
      spec.frustum_half_angle_deg > 180.0) {
    throw ValidationError("gen_scene: frustum half angle out of (0, 180]");
  }
  if (!(spec.noise_sigma >= 0.0)) {
    throw ValidationError("gen_scene: negative noise sigma");
  }
  for (const auto& obj : spec.objects) {
    if (obj.point_count > 0 &&
        (!detail::in_wedge(obj.box.cx, obj.box.cy,
                           spec.frustum_half_angle_deg) ||
         obj.box.cx > spec.extent_x ||
         std::abs(obj.box.cy) > spec.extent_y)) {
      throw ValidationError(
          "gen_scene: object with nonzero point count placed outside the "
          "frustum extent");
    }
  }
  Rng rng(spec.seed);
  Frame frame;
  frame.domain = spec.domain;
  frame.frame_id = spec.frame_id;
  frame.sequence_id = spec.sequence_id;

  const std::size_t ground_points = static_cast<std::size_t>(
      std::floor(spec.ground_density * ground_area(spec)));
  frame.cloud.reserve(ground_points);
  std::size_t placed = 0;
  while (placed < ground_points) {
    const double x = rng.uniform(0.0, spec.extent_x);
    const double y = rng.uniform(-spec.extent_y, spec.extent_y);
    if (!detail::in_wedge(x, y, spec.frustum_half_angle_deg)) continue;
    frame.cloud.push_back(x, y, rng.normal(0.0, spec.noise_sigma));
    ++placed;
  }

  for (const auto& obj : spec.objects) {
    const double c = std::cos(obj.box.yaw);
    const double s = std::sin(obj.box.yaw);
    for (std::size_t i = 0; i < obj.point_count; ++i) {
      const double u = rng.uniform(-0.5 * obj.box.length, 0.5 * obj.box.length);
      const double v = rng.uniform(-0.5 * obj.box.width, 0.5 * obj.box.width);
      const double w = rng.uniform(-0.5 * obj.box.height, 0.5 * obj.box.height);
      frame.cloud.push_back(obj.box.cx + c * u - s * v,
                            obj.box.cy + s * u + c * v, obj.box.cz + w);
    }
    frame.labels.push_back(LabeledBox{obj.box, obj.cls, std::nullopt});
  }
  return frame;
}

// ---------------------------------------------------------------------------
// Synthetic dataset on disk (clouds + annotations + manifest), for CLI and
// integration tests.

struct DatasetGenSpec {
  std::uint64_t seed = 1;
  std::size_t frame_count = 10;
  std::size_t cars_per_frame = 3;
  std::size_t pedestrians_per_frame = 2;
  std::size_t points_per_object = 40;
  double ground_density = 0.05;
  double extent_x = 120.0;
  double extent_y = 30.0;
  double frustum_half_angle_deg = 90.0;
  double noise_sigma = 0.02;
  std::string name = "synthetic";
  DomainKind kind = DomainKind::SyntheticRail;
  double ground_z_offset = 0.0;
  IntensityMode intensity_mode = IntensityMode::Absent;
  double native_intensity_max = 1.0;
  bool with_scores = false;  // emit pseudo-label style scored annotations
};

inline SceneSpec random_scene_spec(const DatasetGenSpec& spec,
                                   std::size_t frame_index) {
  Rng rng = Rng::for_stream(spec.seed, frame_index);
  SceneSpec scene;
  scene.seed = rng.next();
  scene.extent_x = spec.extent_x;
  scene.extent_y = spec.extent_y;
  scene.ground_density = spec.ground_density;
  scene.frustum_half_angle_deg = spec.frustum_half_angle_deg;
  scene.noise_sigma = spec.noise_sigma;
  scene.domain = spec.kind;
  scene.frame_id = static_cast<std::int64_t>(frame_index);
  scene.sequence_id = "seq0";
  const double t = std::tan(
      std::min(spec.frustum_half_angle_deg, 89.9) * kPi / 180.0);
  auto place = [&](ObjectClass cls, double l, double w, double h) {
    const double x = rng.uniform(0.15 * spec.extent_x, 0.85 * spec.extent_x);
    const double ymax =
        0.8 * std::min(spec.extent_y,
                       spec.frustum_half_angle_deg >= 90.0 ? spec.extent_y
                                                           : x * t);
    const double y = rng.uniform(-ymax, ymax);
    const double jitter = rng.uniform(0.9, 1.1);
    Box3D box(x, y, h * jitter / 2.0, l * jitter, w * jitter, h * jitter,
              rng.uniform(-kPi, kPi));
    scene.objects.push_back(
        ObjectPlacement{cls, box, spec.points_per_object});
  };
  for (std::size_t i = 0; i < spec.cars_per_frame; ++i) {
    place(ObjectClass::Car, 4.5, 1.9, 1.6);
  }
  for (std::size_t i = 0; i < spec.pedestrians_per_frame; ++i) {
    place(ObjectClass::Pedestrian, 0.7, 0.7, 1.75);
  }
  return scene;
}

inline DatasetManifest gen_dataset(const std::filesystem::path& dir,
                                   const DatasetGenSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "clouds");
  fs::create_directories(dir / "labels");
  DatasetManifest manifest;
  manifest.name = spec.name;
  manifest.kind = spec.kind;
  manifest.ground_z_offset = spec.ground_z_offset;
  manifest.intensity_mode = spec.intensity_mode;
  manifest.native_intensity_max = spec.native_intensity_max;
  manifest.point_record = spec.intensity_mode == IntensityMode::Absent
                              ? PointRecord::XYZ
                              : PointRecord::XYZI;
  manifest.class_aliases = {{"Vehicle", "Car"}, {"Person", "Pedestrian"}};
  manifest.base_dir = dir;

  for (std::size_t i = 0; i < spec.frame_count; ++i) {
    Frame frame = gen_scene(random_scene_spec(spec, i));
    Rng rng = Rng::for_stream(spec.seed ^ 0x5eedULL, i);
    if (manifest.point_record == PointRecord::XYZI) {
      frame.cloud.intensity.resize(frame.cloud.size());
      for (auto& v : frame.cloud.intensity) {
        v = rng.uniform(0.0, spec.native_intensity_max);
      }
    }
    char stem[32];
    std::snprintf(stem, sizeof(stem), "frame_%06zu", i);
    FrameRecord rec;
    rec.frame_id = frame.frame_id;
    rec.sequence_id = frame.sequence_id;
    rec.cloud_path = std::string("clouds/") + stem + ".bin";
    rec.annotation_path = std::string("labels/") + stem + ".json";
    rec.split = split_for_position(i);

    // Intensities above 1 are raw native values; they live in the file and
    // get normalized by the filter chain, so clamp-free saving matters here.
    PointCloud to_save = frame.cloud;
    save_cloud(dir / rec.cloud_path, to_save, manifest.point_record);

    AnnotationContent ann;
    ann.frame_id = frame.frame_id;
    ann.sensor = "synthetic_lidar";
    ann.boxes = frame.labels;
    if (spec.with_scores) {
      for (auto& b : ann.boxes) b.score = 0.3 + 0.7 * rng.uniform();
    }
    save_annotations(dir / rec.annotation_path, ann);
    manifest.frames.push_back(std::move(rec));
  }
  save_manifest(dir / "manifest.json", manifest);
  return manifest;
}

// ---------------------------------------------------------------------------
// Oracles. Everything below is deliberately self-contained.

namespace detail {

// Membership test written independently of the geometry module.
struct OracleBox {
  double cx, cy, cz, hl, hw, hh, cos_yaw, sin_yaw;

  explicit OracleBox(const Box3D& b)
      : cx(b.cx), cy(b.cy), cz(b.cz), hl(0.5 * b.length), hw(0.5 * b.width),
        hh(0.5 * b.height), cos_yaw(std::cos(b.yaw)), sin_yaw(std::sin(b.yaw)) {}

  bool contains_bev(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double u = cos_yaw * dx + sin_yaw * dy;
    const double v = -sin_yaw * dx + cos_yaw * dy;
    return std::abs(u) <= hl && std::abs(v) <= hw;
  }

  bool contains_z(double z) const { return std::abs(z - cz) <= hh; }

  // Axis-aligned bounding half-extents of the rotated footprint.
  double bound_x() const {
    return std::abs(hl * cos_yaw) + std::abs(hw * sin_yaw);
  }
  double bound_y() const {
    return std::abs(hl * sin_yaw) + std::abs(hw * cos_yaw);
  }
};

}  // namespace detail

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

// Rejection sampling over the joint bounding rectangle of the two
// footprints. The standard error of the ratio-of-counts estimator comes
// from the delta method; it collapses to zero for identical or disjoint
// boxes. Meaningful as an oracle from ~1e5 samples up.
inline McEstimate mc_iou_bev(const Box3D& a, const Box3D& b,
                             std::size_t samples, std::uint64_t seed) {
  const detail::OracleBox oa(a);
  const detail::OracleBox ob(b);
  const double lo_x = std::min(oa.cx - oa.bound_x(), ob.cx - ob.bound_x());
  const double hi_x = std::max(oa.cx + oa.bound_x(), ob.cx + ob.bound_x());
  const double lo_y = std::min(oa.cy - oa.bound_y(), ob.cy - ob.bound_y());
  const double hi_y = std::max(oa.cy + oa.bound_y(), ob.cy + ob.bound_y());
  Rng rng(seed);
  std::size_t n_both = 0, n_either = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double x = rng.uniform(lo_x, hi_x);
    const double y = rng.uniform(lo_y, hi_y);
    const bool in_a = oa.contains_bev(x, y);
    const bool in_b = ob.contains_bev(x, y);
    n_both += (in_a && in_b);
    n_either += (in_a || in_b);
  }
  McEstimate est;
  if (n_either == 0) return est;
  est.value = static_cast<double>(n_both) / static_cast<double>(n_either);
  const double n = static_cast<double>(samples);
  const double pi = static_cast<double>(n_both) / n;
  const double pu = static_cast<double>(n_either) / n;
  const double var_i = pi * (1.0 - pi);
  const double var_u = pu * (1.0 - pu);
  const double cov_iu = pi * (1.0 - pu);
  const double var =
      (var_i / (pu * pu) - 2.0 * pi * cov_iu / (pu * pu * pu) +
       pi * pi * var_u / (pu * pu * pu * pu)) /
      n;
  est.std_error = var > 0.0 ? std::sqrt(var) : 0.0;
  return est;
}

// Counts grid cells whose centers fall in a, in b and in both. Membership
// separates into a BEV test and a z-slab test, so the triple loop reduces
// to one BEV pass plus a z sweep; the counted sets are identical to the
// naive triple loop.
inline double voxel_iou_3d(const Box3D& a, const Box3D& b, double cell) {
  if (!(cell > 0.0) || cell > 0.05) {
    throw std::invalid_argument("voxel_iou_3d: cell must be in (0, 0.05]");
  }
  const detail::OracleBox oa(a);
  const detail::OracleBox ob(b);
  const double lo_x = std::min(oa.cx - oa.bound_x(), ob.cx - ob.bound_x());
  const double hi_x = std::max(oa.cx + oa.bound_x(), ob.cx + ob.bound_x());
  const double lo_y = std::min(oa.cy - oa.bound_y(), ob.cy - ob.bound_y());
  const double hi_y = std::max(oa.cy + oa.bound_y(), ob.cy + ob.bound_y());
  const double lo_z = std::min(oa.cz - oa.hh, ob.cz - ob.hh);
  const double hi_z = std::max(oa.cz + oa.hh, ob.cz + ob.hh);

  const auto cells = [cell](double lo, double hi) {
    return static_cast<std::size_t>(std::ceil((hi - lo) / cell)) + 1;
  };
  const std::size_t nx = cells(lo_x, hi_x);
  const std::size_t ny = cells(lo_y, hi_y);
  const std::size_t nz = cells(lo_z, hi_z);

  std::uint64_t bev_a = 0, bev_b = 0, bev_both = 0;
  for (std::size_t ix = 0; ix < nx; ++ix) {
    const double x = lo_x + (static_cast<double>(ix) + 0.5) * cell;
    for (std::size_t iy = 0; iy < ny; ++iy) {
      const double y = lo_y + (static_cast<double>(iy) + 0.5) * cell;
      const bool in_a = oa.contains_bev(x, y);
      const bool in_b = ob.contains_bev(x, y);
      bev_a += in_a;
      bev_b += in_b;
      bev_both += (in_a && in_b);
    }
  }
  std::uint64_t z_a = 0, z_b = 0, z_both = 0;
  for (std::size_t iz = 0; iz < nz; ++iz) {
    const double z = lo_z + (static_cast<double>(iz) + 0.5) * cell;
    const bool in_a = oa.contains_z(z);
    const bool in_b = ob.contains_z(z);
    z_a += in_a;
    z_b += in_b;
    z_both += (in_a && in_b);
  }
  const std::uint64_t vol_a = bev_a * z_a;
  const std::uint64_t vol_b = bev_b * z_b;
  const std::uint64_t vol_i = bev_both * z_both;
  const std::uint64_t vol_u = vol_a + vol_b - vol_i;
  if (vol_u == 0) return 0.0;
  return static_cast<double>(vol_i) / static_cast<double>(vol_u);
}

// Reference AP40 for tiny axis-aligned instances, written directly from the
// precision/recall definition: greedy best-IoU matching in score order,
// then for each of the 40 recall positions scan every prefix for the best
// reachable precision. Shares no code with the metrics module.
inline double exhaustive_ap40(const std::vector<Detection>& dets,
                              const std::vector<LabeledBox>& gts,
                              double iou_threshold, IouMode mode) {
  if (dets.size() > 50) {
    throw std::invalid_argument("exhaustive_ap40: instance too large");
  }
  for (const auto& d : dets) {
    if (d.box.yaw != 0.0) {
      throw std::invalid_argument("exhaustive_ap40: axis-aligned boxes only");
    }
  }
  for (const auto& g : gts) {
    if (g.box.yaw != 0.0) {
      throw std::invalid_argument("exhaustive_ap40: axis-aligned boxes only");
    }
  }
  const auto overlap_1d = [](double c1, double e1, double c2, double e2) {
    return std::max(0.0, std::min(c1 + 0.5 * e1, c2 + 0.5 * e2) -
                             std::max(c1 - 0.5 * e1, c2 - 0.5 * e2));
  };
  const auto iou = [&](const Box3D& p, const Box3D& q) {
    const double ox = overlap_1d(p.cx, p.length, q.cx, q.length);
    const double oy = overlap_1d(p.cy, p.width, q.cy, q.width);
    if (mode == IouMode::Bev) {
      const double inter = ox * oy;
      const double uni = p.length * p.width + q.length * q.width - inter;
      return uni <= 0.0 ? 0.0 : inter / uni;
    }
    const double oz = overlap_1d(p.cz, p.height, q.cz, q.height);
    const double inter = ox * oy * oz;
    const double uni = p.length * p.width * p.height +
                       q.length * q.width * q.height - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
  };

  if (gts.empty()) {
    throw std::invalid_argument("exhaustive_ap40: needs at least one GT");
  }

  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) {
                     return dets[i].score > dets[j].score;
                   });
  std::vector<bool> gt_used(gts.size(), false);
  std::vector<bool> is_tp(dets.size(), false);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t d = order[oi];
    double best = 0.0;
    int best_g = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g]) continue;
      const double v = iou(dets[d].box, gts[g].box);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0) {
      gt_used[best_g] = true;
      is_tp[d] = true;
    }
  }

  // Precision/recall after each prefix of the score-ordered list.
  const std::size_t n = dets.size();
  std::vector<double> prec(n), rec(n);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    tp += is_tp[order[k]] ? 1 : 0;
    prec[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    rec[k] = static_cast<double>(tp) / static_cast<double>(gts.size());
  }
  double total = 0.0;
  for (int j = 1; j <= 40; ++j) {
    const double r = static_cast<double>(j) / 40.0;
    double best = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (rec[k] >= r) best = std::max(best, prec[k]);
    }
    total += best;
  }
  return 100.0 / 40.0 * total;
}

// ---------------------------------------------------------------------------
// Random pair generators shared by the self test, unit tests and the
// acceptance suite.

// Draws happen one per statement: several rng calls inside one argument
// list would leave the draw order up to the compiler.
inline Box3D random_bev_box(Rng& rng) {
  const double cx = rng.uniform(-2.0, 2.0);
  const double cy = rng.uniform(-2.0, 2.0);
  const double cz = rng.uniform(-0.5, 0.5);
  const double length = rng.uniform(0.8, 5.0);
  const double width = rng.uniform(0.8, 3.0);
  const double height = rng.uniform(0.8, 2.5);
  const double yaw = rng.uniform(-kPi, kPi);
  return Box3D(cx, cy, cz, length, width, height, yaw);
}

inline std::pair<Box3D, Box3D> random_bev_pair(Rng& rng) {
  Box3D a = random_bev_box(rng);
  Box3D b = random_bev_box(rng);
  // Nudge b toward a so a healthy share of pairs overlap.
  b.cx = a.cx + rng.uniform(-3.0, 3.0);
  b.cy = a.cy + rng.uniform(-3.0, 3.0);
  return {a, b};
}

// Pairs sized so the voxel oracle's O(cell) bias stays well inside the
// agreement tolerance: tall boxes, moderate footprints.
inline std::pair<Box3D, Box3D> random_3d_pair(Rng& rng) {
  const double acx = rng.uniform(-1.0, 1.0);
  const double acy = rng.uniform(-1.0, 1.0);
  const double acz = rng.uniform(-0.5, 0.5);
  const double al = rng.uniform(1.0, 2.5);
  const double aw = rng.uniform(1.0, 2.5);
  const double ah = rng.uniform(2.0, 4.0);
  const double ayaw = rng.uniform(-kPi, kPi);
  const Box3D a(acx, acy, acz, al, aw, ah, ayaw);
  const double bcx = a.cx + rng.uniform(-1.0, 1.0);
  const double bcy = a.cy + rng.uniform(-1.0, 1.0);
  const double bcz = a.cz + rng.uniform(-0.8, 0.8);
  const double bl = rng.uniform(1.0, 2.5);
  const double bw = rng.uniform(1.0, 2.5);
  const double bh = rng.uniform(2.0, 4.0);
  const double byaw = rng.uniform(-kPi, kPi);
  return {a, Box3D(bcx, bcy, bcz, bl, bw, bh, byaw)};
}

// Axis-aligned detection/GT instances on a coarse grid, for AP agreement.
inline std::pair<std::vector<Detection>, std::vector<LabeledBox>>
random_ap_instance(Rng& rng, std::size_t max_dets) {
  const std::size_t n_gt = 1 + rng.uniform_int(10);
  const std::size_t n_det = rng.uniform_int(max_dets + 1);
  std::vector<LabeledBox> gts;
  for (std::size_t i = 0; i < n_gt; ++i) {
    const double x = 0.25 * static_cast<double>(rng.uniform_int(160));
    const double y = 0.25 * static_cast<double>(rng.uniform_int(80));
    gts.push_back(LabeledBox{Box3D(x, y, 1.0, 4.0, 2.0, 2.0, 0.0),
                             ObjectClass::Car, std::nullopt});
  }
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < n_det; ++i) {
    const auto& anchor = gts[rng.uniform_int(n_gt)].box;
    const double dx = 0.25 * (static_cast<double>(rng.uniform_int(33)) - 16.0);
    const double dy = 0.25 * (static_cast<double>(rng.uniform_int(17)) - 8.0);
    Detection d;
    d.box = Box3D(anchor.cx + dx, anchor.cy + dy, anchor.cz, 4.0, 2.0, 2.0, 0.0);
    d.cls = ObjectClass::Car;
    d.score = (1.0 + static_cast<double>(rng.uniform_int(999))) / 1000.0;
    dets.push_back(d);
  }
  return {dets, gts};
}

// ---------------------------------------------------------------------------
// CutMix structural invariants, checked independently of the augment code.
// Returns human-readable violations; empty means all hold.

inline std::vector<std::string> check_cutmix_invariants(
    const Frame& source, const Frame& target, const CutRegion& region,
    const Frame& hybrid, const CutmixStats& stats) {
  std::vector<std::string> bad;
  const double fx = stats.footprint.cx;
  const double fy = stats.footprint.cy;
  // Slack absorbs the one rounding step between shifting a point and
  // shifting the region center.
  const double eps = 1e-9;
  const auto in_rect = [](double px, double py, double cx, double cy,
                          double hx, double hy) {
    return std::abs(px - cx) <= hx && std::abs(py - cy) <= hy;
  };

  std::size_t src_inside = 0;
  for (std::size_t i = 0; i < source.cloud.size(); ++i) {
    src_inside += in_rect(source.cloud.x[i], source.cloud.y[i], region.cx,
                          region.cy, region.half_x, region.half_y);
  }
  std::size_t tgt_outside = 0;
  for (std::size_t i = 0; i < target.cloud.size(); ++i) {
    tgt_outside += !in_rect(target.cloud.x[i], target.cloud.y[i], fx, fy,
                            stats.footprint.half_x, stats.footprint.half_y);
  }
  if (hybrid.cloud.size() != src_inside + tgt_outside) {
    bad.push_back("point count not conserved: " +
                  std::to_string(hybrid.cloud.size()) + " vs " +
                  std::to_string(src_inside) + "+" +
                  std::to_string(tgt_outside));
  }
  if (!hybrid.cloud.has_origin()) {
    bad.push_back("hybrid cloud carries no origin tags");
    return bad;
  }
  for (std::size_t i = 0; i < hybrid.cloud.size(); ++i) {
    const double dx = std::abs(hybrid.cloud.x[i] - fx);
    const double dy = std::abs(hybrid.cloud.y[i] - fy);
    const bool inside_loose =
        dx <= stats.footprint.half_x + eps && dy <= stats.footprint.half_y + eps;
    const bool inside_strict =
        dx <= stats.footprint.half_x && dy <= stats.footprint.half_y;
    if (hybrid.cloud.origin[i] == kOriginSource && !inside_loose) {
      bad.push_back("source-origin point " + std::to_string(i) +
                    " outside the translated footprint");
    }
    if (hybrid.cloud.origin[i] == kOriginTarget && inside_strict) {
      bad.push_back("target-origin point " + std::to_string(i) +
                    " inside the translated footprint");
    }
  }
  std::size_t src_labels = 0;
  for (const auto& label : hybrid.labels) {
    if (in_rect(label.box.cx, label.box.cy, fx, fy, stats.footprint.half_x,
                stats.footprint.half_y)) {
      ++src_labels;
    }
  }
  if (stats.cut_labels == 0 || src_labels == 0) {
    bad.push_back("hybrid frame holds no source label");
  }
  // Background outside the footprint must survive bit-exactly, in order.
  std::size_t h = 0;
  for (std::size_t i = 0; i < target.cloud.size(); ++i) {
    if (in_rect(target.cloud.x[i], target.cloud.y[i], fx, fy,
                stats.footprint.half_x, stats.footprint.half_y)) {
      continue;
    }
    if (h >= hybrid.cloud.size() ||
        hybrid.cloud.x[h] != target.cloud.x[i] ||
        hybrid.cloud.y[h] != target.cloud.y[i] ||
        hybrid.cloud.z[h] != target.cloud.z[i]) {
      bad.push_back("target background not preserved bit-exactly at kept "
                    "point " + std::to_string(i));
      break;
    }
    ++h;
  }
  return bad;
}

// ---------------------------------------------------------------------------
// Self test: oracle agreement at reduced scale, runnable from the CLI.

struct SelftestCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SelftestReport {
  std::vector<SelftestCheck> checks;

  bool all_pass() const {
    for (const auto& c : checks) {
      if (!c.pass) return false;
    }
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    std::size_t failed = 0;
    for (const auto& c : checks) {
      arr.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
      failed += c.pass ? 0 : 1;
    }
    return nlohmann::json{{"checks", arr},
                          {"passed", checks.size() - failed},
                          {"failed", failed}};
  }
};

inline SelftestReport run_selftest(std::size_t samples, std::uint64_t seed) {
  SelftestReport report;
  samples = std::max<std::size_t>(samples, 4);

  {  // BEV IoU vs Monte-Carlo
    Rng rng = Rng::for_stream(seed, 1);
    double worst = 0.0;
    bool ok = true;
    for (std::size_t i = 0; i < samples; ++i) {
      const auto [a, b] = random_bev_pair(rng);
      const McEstimate mc = mc_iou_bev(a, b, 200000, rng.next());
      const double diff = std::abs(iou_bev(a, b) - mc.value);
      const double tol = std::max(1e-3, 4.0 * mc.std_error);
      worst = std::max(worst, diff - tol);
      ok = ok && diff <= tol;
    }
    report.checks.push_back({"iou_bev_vs_monte_carlo", ok,
                             "worst margin " + std::to_string(worst)});
  }
  {  // 3D IoU vs voxel counting
    Rng rng = Rng::for_stream(seed, 2);
    double worst = 0.0;
    const std::size_t pairs = std::max<std::size_t>(samples / 4, 2);
    for (std::size_t i = 0; i < pairs; ++i) {
      const auto [a, b] = random_3d_pair(rng);
      worst = std::max(worst, std::abs(iou_3d(a, b) - voxel_iou_3d(a, b, 0.01)));
    }
    report.checks.push_back({"iou_3d_vs_voxel", worst <= 2e-3,
                             "worst |diff| " + std::to_string(worst)});
  }
  {  // AP40 vs reference implementation
    Rng rng = Rng::for_stream(seed, 3);
    double worst = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
      const auto [dets, gts] = random_ap_instance(rng, 20);
      const double reference = exhaustive_ap40(dets, gts, 0.5, IouMode::Bev);
      std::vector<Box3D> gt_boxes;
      for (const auto& g : gts) gt_boxes.push_back(g.box);
      const MatchResult m = match_detections(
          dets, gt_boxes,
          [](const Box3D& x, const Box3D& y) { return iou_bev(x, y); }, 0.5);
      std::vector<ScoredFlag> flags;
      for (std::size_t d = 0; d < dets.size(); ++d) {
        flags.push_back({dets[d].score, m.det_is_tp[d] != 0});
      }
      const auto ap = ap40(flags, gts.size());
      worst = std::max(worst, std::abs(reference - ap.value_or(-1.0)));
    }
    report.checks.push_back({"ap40_vs_reference", worst <= 1e-9,
                             "worst |diff| " + std::to_string(worst)});
  }
  {  // Split rule proportions
    const auto splits = assign_splits_batch10(10000);
    std::size_t train = 0, val = 0, test = 0;
    for (Split s : splits) {
      train += s == Split::Train;
      val += s == Split::Val;
      test += s == Split::Test;
    }
    const bool ok = train == 7000 && val == 2000 && test == 1000;
    report.checks.push_back({"split_rule_70_20_10", ok,
                             std::to_string(train) + "/" + std::to_string(val) +
                                 "/" + std::to_string(test)});
  }
  {  // CutMix structural invariants
    Rng rng = Rng::for_stream(seed, 4);
    std::size_t violations = 0;
    const std::size_t pairs = std::max<std::size_t>(samples / 4, 2);
    for (std::size_t i = 0; i < pairs; ++i) {
      DatasetGenSpec gen;
      gen.seed = rng.next();
      gen.frame_count = 0;  // in-memory scenes only
      const Frame source = gen_scene(random_scene_spec(gen, 0));
      const Frame target = gen_scene(random_scene_spec(gen, 1));
      AugConfig cfg;
      cfg.region_half_extent_min = 5.0;
      cfg.region_half_extent_max = 20.0;
      Rng region_rng(rng.next());
      const CutRegion region = select_cut_region(source, cfg, region_rng);
      CutmixStats stats;
      const Frame hybrid = cutmix(source, target, region, &stats);
      violations +=
          check_cutmix_invariants(source, target, region, hybrid, stats).size();
    }
    report.checks.push_back({"cutmix_invariants", violations == 0,
                             std::to_string(violations) + " violation(s)"});
  }
  {  // Min-points rule
    Frame f;
    std::vector<std::size_t> counts{4, 5, 6};
    for (std::size_t b = 0; b < counts.size(); ++b) {
      const double cx = 10.0 * (static_cast<double>(b) + 1.0);
      f.labels.push_back(LabeledBox{Box3D(cx, 0, 0, 2, 2, 2, 0),
                                    ObjectClass::Pedestrian, std::nullopt});
      for (std::size_t i = 0; i < counts[b]; ++i) {
        f.cloud.push_back(cx + 0.1 * static_cast<double>(i), 0.0, 0.0);
      }
    }
    const Frame out = min_points_filter(f, 5);
    const bool ok = out.labels.size() == 2 && out.labels[0].box.cx == 20.0 &&
                    out.labels[1].box.cx == 30.0;
    report.checks.push_back(
        {"min_points_inclusive", ok,
         std::to_string(out.labels.size()) + " label(s) kept"});
  }
  {  // Determinism
    SceneSpec spec;
    spec.seed = seed;
    spec.objects.push_back(ObjectPlacement{
        ObjectClass::Car, Box3D(30, 0, 0.8, 4.5, 1.9, 1.6, 0.3), 50});
    const Frame f1 = gen_scene(spec);
    const Frame f2 = gen_scene(spec);
    const bool ok = f1.cloud.x == f2.cloud.x && f1.cloud.y == f2.cloud.y &&
                    f1.cloud.z == f2.cloud.z;
    report.checks.push_back({"scene_determinism", ok,
                             ok ? "bit-identical" : "streams diverged"});
  }
  return report;
}

}  // namespace railpipe::scenegen
