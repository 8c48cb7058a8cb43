#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "railpipe/errors.hpp"
#include "railpipe/geometry.hpp"
#include "railpipe/types.hpp"

namespace railpipe {

struct Detection {
  Box3D box;
  ObjectClass cls = ObjectClass::Car;
  double score = 0.0;
};

enum class IouMode { Bev, Full3D };

inline const char* to_string(IouMode m) {
  return m == IouMode::Bev ? "bev" : "3d";
}

inline double box_iou(const Box3D& a, const Box3D& b, IouMode mode) {
  return mode == IouMode::Bev ? iou_bev(a, b) : iou_3d(a, b);
}

// IoU thresholds per class: cars at 0.7 and 0.5, pedestrians at 0.5 and
// 0.25.
struct EvalConfig {
  std::vector<std::pair<ObjectClass, std::vector<double>>> thresholds{
      {ObjectClass::Car, {0.7, 0.5}},
      {ObjectClass::Pedestrian, {0.5, 0.25}}};

  void validate() const {
    for (const auto& [cls, taus] : thresholds) {
      for (double t : taus) {
        if (!(t > 0.0 && t <= 1.0)) {
          throw ConfigError("eval: IoU threshold out of (0, 1]");
        }
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Matching

struct MatchResult {
  std::vector<std::uint8_t> det_is_tp;  // per detection, input order
  std::vector<int> det_matched_gt;      // -1 for FPs
  std::vector<std::uint8_t> gt_matched;
  std::size_t tp = 0, fp = 0, fn = 0;
};

// Greedy KITTI-style matching: detections in descending score order (ties by
// input order) each take the unmatched GT with the highest IoU, provided it
// reaches the threshold. One GT matches at most once.
inline MatchResult match_detections(
    const std::vector<Detection>& dets, const std::vector<Box3D>& gts,
    const std::function<double(const Box3D&, const Box3D&)>& iou,
    double threshold) {
  MatchResult r;
  r.det_is_tp.assign(dets.size(), 0);
  r.det_matched_gt.assign(dets.size(), -1);
  r.gt_matched.assign(gts.size(), 0);

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return dets[a].score > dets[b].score;
                   });

  for (std::size_t d : order) {
    int best_gt = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (r.gt_matched[g]) continue;
      const double v = iou(dets[d].box, gts[g]);
      if (v >= threshold && v > best_iou) {
        best_iou = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      r.det_is_tp[d] = 1;
      r.det_matched_gt[d] = best_gt;
      r.gt_matched[best_gt] = 1;
      ++r.tp;
    } else {
      ++r.fp;
    }
  }
  r.fn = gts.size() - r.tp;
  return r;
}

// ---------------------------------------------------------------------------
// AP40

struct ScoredFlag {
  double score = 0.0;
  bool tp = false;
};

// KITTI AP40: interpolated precision sampled at the 40 recall positions
// 1/40 .. 40/40, averaged and scaled to percent. Precision/recall come from
// the globally score-sorted detection list. Zero ground truth has no
// defined recall; the result is an explicit empty optional, never a silent
// zero.
inline std::optional<double> ap40(std::vector<ScoredFlag> flags,
                                  std::size_t gt_count) {
  if (gt_count == 0) return std::nullopt;
  std::stable_sort(flags.begin(), flags.end(),
                   [](const ScoredFlag& a, const ScoredFlag& b) {
                     return a.score > b.score;
                   });
  const std::size_t n = flags.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    tp += flags[k].tp ? 1 : 0;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(gt_count);
  }
  // max precision over suffixes: p_interp(r) = max{prec[k] : recall[k] >= r}
  std::vector<double> suffix_max(n);
  double running = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    running = std::max(running, precision[k]);
    suffix_max[k] = running;
  }
  double acc = 0.0;
  std::size_t k = 0;
  for (int j = 1; j <= 40; ++j) {
    const double r = static_cast<double>(j) / 40.0;
    while (k < n && recall[k] < r) ++k;
    acc += (k < n) ? suffix_max[k] : 0.0;
  }
  return 100.0 / 40.0 * acc;
}

// ---------------------------------------------------------------------------
// Closed Gap

// Fraction of the source-only -> oracle gap recovered by the adapted model,
// in percent. May exceed 100 or go negative.
inline double closed_gap(double ap_model, double ap_source_only,
                         double ap_oracle) {
  const double denom = ap_oracle - ap_source_only;
  if (std::abs(denom) < 1e-12) {
    throw ValidationError(
        "closed_gap: oracle equals source-only; the gap is degenerate");
  }
  return (ap_model - ap_source_only) / denom * 100.0;
}

// ---------------------------------------------------------------------------
// Evaluation report

struct EvalEntry {
  ObjectClass cls = ObjectClass::Car;
  double threshold = 0.5;
  IouMode mode = IouMode::Bev;
  std::optional<double> ap;  // empty = no ground truth of this class
  std::size_t tp = 0, fp = 0, fn = 0, gt_count = 0;
};

struct GapEntry {
  ObjectClass cls = ObjectClass::Car;
  double threshold = 0.5;
  std::optional<double> gap_bev;
  std::optional<double> gap_3d;
};

struct EvalReport {
  std::vector<EvalEntry> entries;
  std::vector<GapEntry> gaps;

  std::optional<double> find_ap(ObjectClass cls, double threshold,
                                IouMode mode) const {
    for (const auto& e : entries) {
      if (e.cls == cls && e.mode == mode &&
          std::abs(e.threshold - threshold) < 1e-9) {
        return e.ap;
      }
    }
    return std::nullopt;
  }
};

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries) {
    nlohmann::json je{{"class", to_string(e.cls)},
                      {"threshold", e.threshold},
                      {"mode", to_string(e.mode)},
                      {"tp", e.tp},
                      {"fp", e.fp},
                      {"fn", e.fn},
                      {"gt_count", e.gt_count}};
    if (e.ap) {
      je["ap"] = *e.ap;
    } else {
      je["ap"] = nullptr;
    }
    entries.push_back(std::move(je));
  }
  nlohmann::json gaps = nlohmann::json::array();
  for (const auto& g : r.gaps) {
    nlohmann::json jg{{"class", to_string(g.cls)},
                      {"threshold", g.threshold}};
    jg["gap_bev"] = g.gap_bev ? nlohmann::json(*g.gap_bev) : nullptr;
    jg["gap_3d"] = g.gap_3d ? nlohmann::json(*g.gap_3d) : nullptr;
    gaps.push_back(std::move(jg));
  }
  return nlohmann::json{{"entries", entries}, {"closed_gaps", gaps}};
}

inline EvalReport report_from_json(const nlohmann::json& j,
                                   const std::string& where);

namespace detail {

inline EvalReport report_from_json_impl(const nlohmann::json& j,
                                        const std::string& where) {
  if (!j.is_object() || !j.contains("entries") || !j["entries"].is_array()) {
    throw SchemaError(where + ": report needs an 'entries' array");
  }
  EvalReport r;
  for (const auto& je : j["entries"]) {
    EvalEntry e;
    const std::string cls = je.value("class", std::string());
    const auto oc = object_class_from_string(cls);
    if (!oc) throw SchemaError(where + ": unknown class '" + cls + "'");
    e.cls = *oc;
    if (!je.contains("threshold") || !je["threshold"].is_number()) {
      throw SchemaError(where + ": entry missing numeric 'threshold'");
    }
    e.threshold = je["threshold"].get<double>();
    const std::string mode = je.value("mode", std::string());
    if (mode == "bev") {
      e.mode = IouMode::Bev;
    } else if (mode == "3d") {
      e.mode = IouMode::Full3D;
    } else {
      throw SchemaError(where + ": unknown mode '" + mode + "'");
    }
    if (je.contains("ap") && je["ap"].is_number()) {
      e.ap = je["ap"].get<double>();
    }
    e.tp = je.value("tp", 0u);
    e.fp = je.value("fp", 0u);
    e.fn = je.value("fn", 0u);
    e.gt_count = je.value("gt_count", 0u);
    r.entries.push_back(e);
  }
  return r;
}

}  // namespace detail

inline EvalReport report_from_json(const nlohmann::json& j,
                                   const std::string& where) {
  try {
    return detail::report_from_json_impl(j, where);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(where + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Frame-set evaluation

struct DetectionSet {
  std::int64_t frame_id = 0;
  std::vector<Detection> boxes;
};

struct GroundTruthSet {
  std::int64_t frame_id = 0;
  std::vector<LabeledBox> boxes;
};

namespace detail {

inline void check_frame_alignment(const std::vector<DetectionSet>& dets,
                                  const std::vector<GroundTruthSet>& gts) {
  std::set<std::int64_t> det_ids, gt_ids;
  for (const auto& d : dets) det_ids.insert(d.frame_id);
  for (const auto& g : gts) gt_ids.insert(g.frame_id);
  if (det_ids == gt_ids && det_ids.size() == dets.size() &&
      gt_ids.size() == gts.size()) {
    return;
  }
  std::ostringstream msg;
  msg << "evaluate: detection and ground-truth frame sets differ;";
  msg << " missing detections for [";
  bool first = true;
  for (std::int64_t id : gt_ids) {
    if (!det_ids.count(id)) {
      msg << (first ? "" : " ") << id;
      first = false;
    }
  }
  msg << "], missing ground truth for [";
  first = true;
  for (std::int64_t id : det_ids) {
    if (!gt_ids.count(id)) {
      msg << (first ? "" : " ") << id;
      first = false;
    }
  }
  msg << "]";
  if (det_ids.size() != dets.size() || gt_ids.size() != gts.size()) {
    msg << " (duplicate frame ids present)";
  }
  throw ValidationError(msg.str());
}

}  // namespace detail

// AP BEV and AP 3D per (class, threshold), with Closed-Gap pairs when
// baseline reports are supplied. When the oracle equals the source-only
// baseline the gap is left empty rather than divided through zero.
inline EvalReport evaluate(const std::vector<DetectionSet>& det_frames,
                           const std::vector<GroundTruthSet>& gt_frames,
                           const EvalConfig& cfg,
                           const EvalReport* source_only = nullptr,
                           const EvalReport* oracle = nullptr) {
  cfg.validate();
  detail::check_frame_alignment(det_frames, gt_frames);

  std::vector<const GroundTruthSet*> gt_by_id;
  {
    std::map<std::int64_t, const GroundTruthSet*> index;
    for (const auto& g : gt_frames) index[g.frame_id] = &g;
    for (const auto& d : det_frames) gt_by_id.push_back(index.at(d.frame_id));
  }

  EvalReport report;
  for (const auto& [cls, taus] : cfg.thresholds) {
    for (double tau : taus) {
      for (IouMode mode : {IouMode::Bev, IouMode::Full3D}) {
        std::vector<ScoredFlag> flags;
        std::size_t gt_total = 0, tp = 0, fp = 0;
        for (std::size_t fi = 0; fi < det_frames.size(); ++fi) {
          std::vector<Detection> dets;
          for (const auto& d : det_frames[fi].boxes) {
            if (d.cls == cls) dets.push_back(d);
          }
          std::vector<Box3D> gts;
          for (const auto& g : gt_by_id[fi]->boxes) {
            if (g.cls == cls) gts.push_back(g.box);
          }
          gt_total += gts.size();
          const MatchResult m = match_detections(
              dets, gts,
              [mode](const Box3D& a, const Box3D& b) {
                return box_iou(a, b, mode);
              },
              tau);
          tp += m.tp;
          fp += m.fp;
          for (std::size_t d = 0; d < dets.size(); ++d) {
            flags.push_back({dets[d].score, m.det_is_tp[d] != 0});
          }
        }
        EvalEntry entry;
        entry.cls = cls;
        entry.threshold = tau;
        entry.mode = mode;
        entry.ap = ap40(flags, gt_total);
        entry.tp = tp;
        entry.fp = fp;
        entry.fn = gt_total - tp;
        entry.gt_count = gt_total;
        report.entries.push_back(entry);
      }
    }
  }

  if (source_only && oracle) {
    for (const auto& [cls, taus] : cfg.thresholds) {
      for (double tau : taus) {
        GapEntry gap;
        gap.cls = cls;
        gap.threshold = tau;
        for (IouMode mode : {IouMode::Bev, IouMode::Full3D}) {
          const auto model_ap = report.find_ap(cls, tau, mode);
          const auto src_ap = source_only->find_ap(cls, tau, mode);
          const auto ora_ap = oracle->find_ap(cls, tau, mode);
          std::optional<double> value;
          if (model_ap && src_ap && ora_ap &&
              std::abs(*ora_ap - *src_ap) >= 1e-12) {
            value = closed_gap(*model_ap, *src_ap, *ora_ap);
          }
          if (mode == IouMode::Bev) {
            gap.gap_bev = value;
          } else {
            gap.gap_3d = value;
          }
        }
        report.gaps.push_back(gap);
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Plain-text table, one column group per (class, threshold) with AP BEV,
// AP 3D and the closed-gap pair.

namespace detail {

inline std::string fmt_ap(const std::optional<double>& v) {
  char buf[32];
  if (!v) return "   n/a";
  std::snprintf(buf, sizeof(buf), "%6.2f", *v);
  return buf;
}

inline std::string fmt_num(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f", *v);
  return buf;
}

inline std::string fmt_gap(const std::optional<double>& b,
                           const std::optional<double>& g) {
  if (!b && !g) return "       -       ";
  std::string cell = fmt_num(b) + " / " + fmt_num(g);
  if (cell.size() < 15) cell = std::string(15 - cell.size(), ' ') + cell;
  return cell;
}

}  // namespace detail

struct TableRow {
  std::string label;
  const EvalReport* report = nullptr;
  bool with_gaps = false;
};

inline std::string format_report_table(const std::vector<TableRow>& rows,
                                       const EvalConfig& cfg) {
  std::ostringstream out;
  out << std::left;
  const int label_w = 14;
  out << std::string(label_w, ' ');
  for (const auto& [cls, taus] : cfg.thresholds) {
    for (double tau : taus) {
      char head[64];
      std::snprintf(head, sizeof(head), "%s %.2f", to_string(cls), tau);
      std::string h(head);
      //  6 + 1 + 6 + 1 + 15 = 29 columns per group
      if (h.size() < 29) h += std::string(29 - h.size(), ' ');
      out << "| " << h;
    }
  }
  out << "\n" << std::string(label_w, ' ');
  for (const auto& [cls, taus] : cfg.thresholds) {
    for (std::size_t i = 0; i < taus.size(); ++i) {
      out << "| AP BEV AP 3D      Closed Gap ";
    }
  }
  out << "\n";
  for (const auto& row : rows) {
    std::string label = row.label.substr(0, label_w - 1);
    label += std::string(label_w - label.size(), ' ');
    out << label;
    for (const auto& [cls, taus] : cfg.thresholds) {
      for (double tau : taus) {
        const auto bev = row.report->find_ap(cls, tau, IouMode::Bev);
        const auto full = row.report->find_ap(cls, tau, IouMode::Full3D);
        std::optional<double> gb, g3;
        if (row.with_gaps) {
          for (const auto& g : row.report->gaps) {
            if (g.cls == cls && std::abs(g.threshold - tau) < 1e-9) {
              gb = g.gap_bev;
              g3 = g.gap_3d;
            }
          }
        }
        out << "|" << detail::fmt_ap(bev) << " " << detail::fmt_ap(full) << " "
            << detail::fmt_gap(gb, g3) << " ";
      }
    }
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Point-cloud statistics

struct CloudStats {
  std::size_t point_count = 0;
  double height_mean = 0.0, height_std = 0.0;
  double range_mean = 0.0, range_std = 0.0;
};

// Mean and population standard deviation of point height (z) and 3D range
// (Euclidean distance from the sensor origin). With a class filter, only
// points inside at least one box of that class count. Returns empty when no
// point survives the filter.
inline std::optional<CloudStats> cloud_stats(
    const std::vector<Frame>& frames,
    std::optional<ObjectClass> class_filter = std::nullopt) {
  std::vector<double> heights, ranges;
  for (const auto& f : frames) {
    std::vector<char> mask(f.cloud.size(), class_filter ? 0 : 1);
    if (class_filter) {
      for (const auto& label : f.labels) {
        if (label.cls != *class_filter) continue;
        for (std::size_t i : points_in_box(f.cloud, label.box)) mask[i] = 1;
      }
    }
    for (std::size_t i = 0; i < f.cloud.size(); ++i) {
      if (!mask[i]) continue;
      heights.push_back(f.cloud.z[i]);
      ranges.push_back(std::sqrt(f.cloud.x[i] * f.cloud.x[i] +
                                 f.cloud.y[i] * f.cloud.y[i] +
                                 f.cloud.z[i] * f.cloud.z[i]));
    }
  }
  if (heights.empty()) return std::nullopt;
  auto mean_std = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::pair<double, double>(mean, std::sqrt(acc / n));
  };
  CloudStats s;
  s.point_count = heights.size();
  std::tie(s.height_mean, s.height_std) = mean_std(heights);
  std::tie(s.range_mean, s.range_std) = mean_std(ranges);
  return s;
}

}  // namespace railpipe
