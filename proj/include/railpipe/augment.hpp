#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "railpipe/errors.hpp"
#include "railpipe/geometry.hpp"
#include "railpipe/rng.hpp"
#include "railpipe/types.hpp"

namespace railpipe {

// Per-point origin tags written into PointCloud::origin by the
// augmentations.
inline constexpr std::uint8_t kOriginTarget = 0;
inline constexpr std::uint8_t kOriginSource = 1;

// Axis-aligned BEV rectangle: center plus half-widths. Rectangles (rather
// than angular partitions) keep the footprint-removal step exact under the
// narrow-frustum targets.
struct CutRegion {
  double cx = 0.0;
  double cy = 0.0;
  double half_x = 1.0;
  double half_y = 1.0;

  // Closed membership, consistent with the closed-box convention.
  bool contains(double px, double py) const {
    return std::abs(px - cx) <= half_x && std::abs(py - cy) <= half_y;
  }
};

inline bool operator==(const CutRegion& a, const CutRegion& b) {
  return a.cx == b.cx && a.cy == b.cy && a.half_x == b.half_x &&
         a.half_y == b.half_y;
}

struct AugConfig {
  double p_cutmix = 0.30;
  double p_mixup = 0.50;
  // Half-width sampling bounds for the cut rectangle, meters.
  double region_half_extent_min = 4.0;
  double region_half_extent_max = 20.0;
  int max_region_attempts = 50;
  double mixup_alpha = 1.0;  // Beta(alpha, alpha); 1.0 = uniform lambda
  double pseudo_score_threshold = 0.6;

  void validate() const {
    if (!(p_cutmix >= 0.0 && p_cutmix <= 1.0) ||
        !(p_mixup >= 0.0 && p_mixup <= 1.0)) {
      throw ConfigError("augment: probabilities must be in [0, 1]");
    }
    if (!(region_half_extent_min > 0.0) ||
        !(region_half_extent_max >= region_half_extent_min)) {
      throw ConfigError("augment: bad region extent bounds");
    }
    if (max_region_attempts < 1) {
      throw ConfigError("augment: max_region_attempts must be >= 1");
    }
    if (!(mixup_alpha > 0.0)) {
      throw ConfigError("augment: mixup_alpha must be > 0");
    }
    if (!(pseudo_score_threshold >= 0.0 && pseudo_score_threshold <= 1.0)) {
      throw ConfigError("augment: pseudo_score_threshold must be in [0, 1]");
    }
  }
};

// Pool of source datasets for CutMix. Frames are fetched through a callback
// so the pool works the same over manifests and in-memory test fixtures.
struct SourcePool {
  struct Source {
    std::string name;
    std::size_t train_frame_count = 0;
    std::function<Frame(std::size_t)> frame_at;
  };
  std::vector<Source> sources;

  void validate() const {
    if (sources.empty()) throw ConfigError("source pool is empty");
    for (const auto& s : sources) {
      if (s.train_frame_count == 0) {
        throw ConfigError("source pool: '" + s.name +
                          "' has zero train frames");
      }
      if (!s.frame_at) {
        throw ConfigError("source pool: '" + s.name +
                          "' has no frame provider");
      }
    }
  }
};

// Picks source i with probability n_i / sum(n_j), n_i = train frame count.
// Integer arithmetic, so the proportions are exact.
inline std::size_t size_aware_pick(const SourcePool& pool, Rng& rng) {
  pool.validate();
  std::uint64_t total = 0;
  for (const auto& s : pool.sources) total += s.train_frame_count;
  std::uint64_t draw = rng.uniform_int(total);
  for (std::size_t i = 0; i < pool.sources.size(); ++i) {
    const std::uint64_t n = pool.sources[i].train_frame_count;
    if (draw < n) return i;
    draw -= n;
  }
  return pool.sources.size() - 1;  // unreachable
}

// Samples a cut rectangle over the source cloud's BEV bounding box and
// re-samples until it holds at least one ground-truth box center.
inline CutRegion select_cut_region(const Frame& source, const AugConfig& cfg,
                                   Rng& rng) {
  cfg.validate();
  if (source.labels.empty()) {
    throw std::invalid_argument("select_cut_region: source frame has no labels");
  }
  if (source.cloud.empty()) {
    throw std::invalid_argument("select_cut_region: source cloud is empty");
  }
  const auto [min_x, max_x] =
      std::minmax_element(source.cloud.x.begin(), source.cloud.x.end());
  const auto [min_y, max_y] =
      std::minmax_element(source.cloud.y.begin(), source.cloud.y.end());
  for (int attempt = 0; attempt < cfg.max_region_attempts; ++attempt) {
    CutRegion region;
    region.cx = rng.uniform(*min_x, *max_x);
    region.cy = rng.uniform(*min_y, *max_y);
    region.half_x =
        rng.uniform(cfg.region_half_extent_min, cfg.region_half_extent_max);
    region.half_y =
        rng.uniform(cfg.region_half_extent_min, cfg.region_half_extent_max);
    for (const auto& label : source.labels) {
      if (region.contains(label.box.cx, label.box.cy)) return region;
    }
  }
  throw RegionSearchError(
      "select_cut_region: no region containing a ground-truth box center "
      "after " +
      std::to_string(cfg.max_region_attempts) + " attempts");
}

struct CutmixStats {
  Vec2 translation;
  CutRegion footprint;
  std::size_t cut_points = 0;
  std::size_t cut_labels = 0;
  std::size_t removed_target_points = 0;
  std::size_t removed_target_labels = 0;
};

// Inter-domain cut-paste, source into target:
//   1. cut the source points and labels inside `region` (centers for labels),
//   2. translate them horizontally so the region center lands on the target
//      point nearest to it in the (x, y) plane,
//   3. clear the translated footprint in the target,
//   4. merge. The target background outside the footprint is preserved
//      bit-exactly. Output points carry origin tags (0 target / 1 source).
inline Frame cutmix(const Frame& source, const Frame& target,
                    const CutRegion& region, CutmixStats* stats = nullptr) {
  if (!(region.half_x > 0.0) || !(region.half_y > 0.0)) {
    throw std::invalid_argument("cutmix: region extents must be positive");
  }
  if (target.cloud.empty()) {
    throw std::invalid_argument("cutmix: target cloud is empty");
  }
  if (source.cloud.has_intensity() != target.cloud.has_intensity()) {
    throw std::invalid_argument(
        "cutmix: intensity channel mismatch between source and target; "
        "harmonize first");
  }

  // Cut from the source.
  std::vector<char> cut_mask(source.cloud.size());
  for (std::size_t i = 0; i < source.cloud.size(); ++i) {
    cut_mask[i] = region.contains(source.cloud.x[i], source.cloud.y[i]);
  }
  PointCloud cut = source.cloud.select(cut_mask);
  std::vector<LabeledBox> cut_labels;
  for (const auto& label : source.labels) {
    if (region.contains(label.box.cx, label.box.cy)) {
      cut_labels.push_back(label);
    }
  }

  // Nearest target point to the region center, planar distance; ties break
  // to the lowest index.
  std::size_t nearest = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < target.cloud.size(); ++i) {
    const double dx = target.cloud.x[i] - region.cx;
    const double dy = target.cloud.y[i] - region.cy;
    const double d2 = dx * dx + dy * dy;
    if (d2 < best) {
      best = d2;
      nearest = i;
    }
  }
  const Vec2 v{target.cloud.x[nearest] - region.cx,
               target.cloud.y[nearest] - region.cy};

  cut = translated(std::move(cut), v);
  cut.origin.assign(cut.size(), kOriginSource);
  for (auto& label : cut_labels) label = translated(label, v);

  CutRegion footprint = region;
  footprint.cx += v.x;
  footprint.cy += v.y;

  // Clear the footprint in the target.
  std::vector<char> keep_mask(target.cloud.size());
  for (std::size_t i = 0; i < target.cloud.size(); ++i) {
    keep_mask[i] = !footprint.contains(target.cloud.x[i], target.cloud.y[i]);
  }
  Frame out;
  out.cloud = target.cloud.select(keep_mask);
  if (!out.cloud.has_origin()) {
    out.cloud.origin.assign(out.cloud.size(), kOriginTarget);
  }
  for (const auto& label : target.labels) {
    if (!footprint.contains(label.box.cx, label.box.cy)) {
      out.labels.push_back(label);
    }
  }

  if (stats) {
    stats->translation = v;
    stats->footprint = footprint;
    stats->cut_points = cut.size();
    stats->cut_labels = cut_labels.size();
    stats->removed_target_points = target.cloud.size() - out.cloud.size();
    stats->removed_target_labels = target.labels.size() - out.labels.size();
  }

  out.cloud.append(cut);
  out.labels.insert(out.labels.end(), cut_labels.begin(), cut_labels.end());
  out.domain = target.domain;
  out.frame_id = target.frame_id;
  out.sequence_id = target.sequence_id;
  out.sensor = target.sensor;
  out.intensity_normalized =
      target.intensity_normalized && source.intensity_normalized;
  return out;
}

// Keeps boxes with score >= tau (inclusive). Every box must carry a score.
inline std::vector<LabeledBox> pseudo_label_filter(
    const std::vector<LabeledBox>& boxes, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw std::invalid_argument("pseudo_label_filter: tau out of [0, 1]");
  }
  std::vector<LabeledBox> out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!boxes[i].score) {
      throw std::invalid_argument(
          "pseudo_label_filter: box " + std::to_string(i) +
          " carries no score");
    }
    if (*boxes[i].score >= tau) out.push_back(boxes[i]);
  }
  return out;
}

namespace detail {

// k distinct indices from [0, n), ascending. Partial Fisher-Yates.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                           std::size_t k,
                                                           Rng& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_int(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace detail

// Intra-domain MixUp with an explicit mixing ratio: keeps
// floor(lambda*|A|) points of `a` and floor((1-lambda)*|B|) of `b`, both
// uniformly chosen. Labels: all of a's, plus b's labels that still enclose
// at least one surviving b point.
inline Frame pointmixup_with_lambda(const Frame& a, const Frame& b,
                                    double lambda, Rng& rng) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("pointmixup: lambda out of [0, 1]");
  }
  if (a.domain != b.domain) {
    throw std::invalid_argument(
        "pointmixup: frames must come from the same (target) domain");
  }
  if (a.cloud.empty() || b.cloud.empty()) {
    throw std::invalid_argument("pointmixup: empty frame");
  }
  if (a.cloud.has_intensity() != b.cloud.has_intensity()) {
    throw std::invalid_argument(
        "pointmixup: intensity channel mismatch; harmonize first");
  }
  const std::size_t keep_a =
      static_cast<std::size_t>(std::floor(lambda * a.cloud.size()));
  const std::size_t keep_b =
      static_cast<std::size_t>(std::floor((1.0 - lambda) * b.cloud.size()));
  const auto idx_a =
      detail::sample_without_replacement(a.cloud.size(), keep_a, rng);
  const auto idx_b =
      detail::sample_without_replacement(b.cloud.size(), keep_b, rng);

  Frame out;
  out.cloud = a.cloud.select_indices(idx_a);
  PointCloud from_b = b.cloud.select_indices(idx_b);
  out.cloud.append(from_b);
  out.labels = a.labels;
  for (const auto& label : b.labels) {
    if (count_points_in_box(from_b, label.box) >= 1) {
      out.labels.push_back(label);
    }
  }
  out.domain = a.domain;
  out.frame_id = a.frame_id;
  out.sequence_id = a.sequence_id;
  out.sensor = a.sensor;
  out.intensity_normalized = a.intensity_normalized && b.intensity_normalized;
  return out;
}

inline Frame pointmixup(const Frame& a, const Frame& b, const AugConfig& cfg,
                        Rng& rng) {
  cfg.validate();
  const double lambda = rng.beta(cfg.mixup_alpha);
  return pointmixup_with_lambda(a, b, lambda, rng);
}

struct AugOutcome {
  Frame frame;
  bool cutmix_fired = false;    // the Bernoulli draw fired
  bool cutmix_applied = false;  // a region was found and pasted
  bool cutmix_skipped = false;  // fired but no usable region/source labels
  bool mixup_fired = false;
  std::optional<std::size_t> source_index;
  std::optional<std::size_t> source_frame_index;
  std::optional<CutRegion> region;
  std::optional<CutmixStats> cutmix_stats;
  std::optional<double> mixup_lambda;
};

// One augmentation pass over a target frame. CutMix fires with p_cutmix and
// MixUp independently with p_mixup; both, one or neither may apply. The rng
// should be a per-frame stream so results are a pure function of
// (seed, frame id). A region search that exhausts its attempts (or draws a
// source frame with no labels left after filtering) downgrades to a counted
// skip rather than an error.
inline AugOutcome apply_pipeline(
    const Frame& target, const SourcePool& pool,
    const std::function<Frame(Rng&)>& mixup_partner, const AugConfig& cfg,
    Rng& rng) {
  cfg.validate();
  AugOutcome out;
  out.frame = target;
  if (rng.uniform() < cfg.p_cutmix) {
    out.cutmix_fired = true;
    pool.validate();
    const std::size_t si = size_aware_pick(pool, rng);
    const auto& src = pool.sources[si];
    const std::size_t fi = rng.uniform_int(src.train_frame_count);
    out.source_index = si;
    out.source_frame_index = fi;
    const Frame source = src.frame_at(fi);
    if (source.labels.empty() || source.cloud.empty()) {
      out.cutmix_skipped = true;
    } else {
      try {
        const CutRegion region = select_cut_region(source, cfg, rng);
        CutmixStats stats;
        out.frame = cutmix(source, out.frame, region, &stats);
        out.region = region;
        out.cutmix_stats = stats;
        out.cutmix_applied = true;
      } catch (const RegionSearchError&) {
        out.cutmix_skipped = true;
      }
    }
  }
  if (rng.uniform() < cfg.p_mixup) {
    out.mixup_fired = true;
    if (!mixup_partner) {
      throw ConfigError(
          "apply_pipeline: mixup fired but no partner provider is configured");
    }
    const Frame partner = mixup_partner(rng);
    const double lambda = rng.beta(cfg.mixup_alpha);
    out.frame = pointmixup_with_lambda(out.frame, partner, lambda, rng);
    out.mixup_lambda = lambda;
  }
  return out;
}

}  // namespace railpipe
