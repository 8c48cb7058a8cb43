#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "railpipe/augment.hpp"
#include "railpipe/dataset.hpp"
#include "railpipe/errors.hpp"
#include "railpipe/filters.hpp"
#include "railpipe/metrics.hpp"
#include "railpipe/parallel.hpp"
#include "railpipe/rng.hpp"
#include "railpipe/scenegen.hpp"
#include "railpipe/types.hpp"

namespace railpipe::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Pipeline configuration. One JSON file drives every command; flags override
// config fields, config fields override defaults.

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  unsigned jobs = 0;  // 0 = hardware parallelism
  std::string target_manifest;
  std::vector<std::string> source_manifests;
  std::string pseudo_manifest;
  bool provenance = true;
  FilterParams filters;
  std::map<std::string, int> min_points_per_dataset;
  AugConfig augment;
  EvalConfig eval;
  fs::path base_dir = ".";

  FilterParams filters_for(const std::string& dataset_name) const {
    FilterParams p = filters;
    if (auto it = min_points_per_dataset.find(dataset_name);
        it != min_points_per_dataset.end()) {
      p.min_points = it->second;
    }
    return p;
  }

  fs::path resolve(const std::string& path) const {
    fs::path p(path);
    return p.is_absolute() ? p : base_dir / p;
  }
};

inline PipelineConfig parse_config(const nlohmann::json& j,
                                   const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": top level must be an object");
  PipelineConfig cfg;
  if (!j.contains("seed") || !j["seed"].is_number_unsigned()) {
    throw ConfigError(where +
                      ": 'seed' is required (runs must not seed from the "
                      "wall clock)");
  }
  cfg.seed = j["seed"].get<std::uint64_t>();
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  cfg.jobs = j.value("jobs", cfg.jobs);
  cfg.provenance = j.value("provenance", cfg.provenance);
  if (j.contains("target")) {
    if (!j["target"].is_string()) {
      throw ConfigError(where + ": 'target' must be a single manifest path");
    }
    cfg.target_manifest = j["target"].get<std::string>();
  }
  if (j.contains("sources")) {
    if (!j["sources"].is_array()) {
      throw ConfigError(where + ": 'sources' must be an array of paths");
    }
    for (const auto& s : j["sources"]) {
      if (!s.is_string()) throw ConfigError(where + ": source paths must be strings");
      cfg.source_manifests.push_back(s.get<std::string>());
    }
  }
  cfg.pseudo_manifest = j.value("pseudo_labels", std::string());

  if (j.contains("filters")) {
    const auto& f = j["filters"];
    if (!f.is_object()) throw ConfigError(where + ": 'filters' must be an object");
    if (f.contains("stages")) {
      cfg.filters.stages.clear();
      for (const auto& s : f["stages"]) {
        if (!s.is_string()) throw ConfigError(where + ": filter stages must be strings");
        const auto st = filter_stage_from_string(s.get<std::string>());
        if (!st) {
          throw ConfigError(where + ": unknown filter stage '" +
                            s.get<std::string>() + "'");
        }
        cfg.filters.stages.push_back(*st);
      }
    }
    if (f.contains("range")) {
      const auto& r = f["range"];
      if (!r.is_array() || r.size() != 6) {
        throw ConfigError(where + ": filters.range must be [xmin,ymin,zmin,xmax,ymax,zmax]");
      }
      try {
        cfg.filters.range =
            RangeBox(r[0].get<double>(), r[1].get<double>(), r[2].get<double>(),
                     r[3].get<double>(), r[4].get<double>(), r[5].get<double>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": filters.range: " + e.what());
      }
    }
    cfg.filters.frustum_half_angle_deg =
        f.value("frustum_half_angle_deg", cfg.filters.frustum_half_angle_deg);
    if (f.contains("frustum_sensor_id")) {
      if (!f["frustum_sensor_id"].is_number_integer()) {
        throw ConfigError(where + ": filters.frustum_sensor_id must be an integer");
      }
      cfg.filters.frustum_sensor_id = f["frustum_sensor_id"].get<int>();
    }
    cfg.filters.min_points = f.value("min_points", cfg.filters.min_points);
    if (f.contains("min_points_per_dataset")) {
      for (const auto& [name, v] : f["min_points_per_dataset"].items()) {
        if (!v.is_number_integer()) {
          throw ConfigError(where + ": per-dataset min_points must be integers");
        }
        cfg.min_points_per_dataset[name] = v.get<int>();
      }
    }
    try {
      cfg.filters.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }

  if (j.contains("augment")) {
    const auto& a = j["augment"];
    if (!a.is_object()) throw ConfigError(where + ": 'augment' must be an object");
    cfg.augment.p_cutmix = a.value("p_cutmix", cfg.augment.p_cutmix);
    cfg.augment.p_mixup = a.value("p_mixup", cfg.augment.p_mixup);
    cfg.augment.region_half_extent_min =
        a.value("region_half_extent_min", cfg.augment.region_half_extent_min);
    cfg.augment.region_half_extent_max =
        a.value("region_half_extent_max", cfg.augment.region_half_extent_max);
    cfg.augment.max_region_attempts =
        a.value("max_region_attempts", cfg.augment.max_region_attempts);
    cfg.augment.mixup_alpha = a.value("mixup_alpha", cfg.augment.mixup_alpha);
    cfg.augment.pseudo_score_threshold =
        a.value("pseudo_score_threshold", cfg.augment.pseudo_score_threshold);
    try {
      cfg.augment.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }

  if (j.contains("eval")) {
    const auto& e = j["eval"];
    if (!e.is_object()) throw ConfigError(where + ": 'eval' must be an object");
    cfg.eval.thresholds.clear();
    for (const auto& [cls_name, taus] : e.items()) {
      const auto cls = object_class_from_string(cls_name);
      if (!cls) throw ConfigError(where + ": unknown eval class '" + cls_name + "'");
      if (!taus.is_array() || taus.empty()) {
        throw ConfigError(where + ": eval thresholds must be a non-empty array");
      }
      std::vector<double> values;
      for (const auto& t : taus) {
        if (!t.is_number()) throw ConfigError(where + ": eval thresholds must be numbers");
        values.push_back(t.get<double>());
      }
      cfg.eval.thresholds.emplace_back(*cls, std::move(values));
    }
    try {
      cfg.eval.validate();
    } catch (const ConfigError& e2) {
      throw ConfigError(where + ": " + e2.what());
    }
  }
  return cfg;
}

inline PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  PipelineConfig cfg;
  try {
    cfg = parse_config(j, path.string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  cfg.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return cfg;
}

// ---------------------------------------------------------------------------
// Dry-run aware output writer.

class OutputWriter {
 public:
  OutputWriter(bool dry_run, std::ostream& log) : dry_(dry_run), log_(log) {}

  bool dry() const { return dry_; }

  template <typename Fn>
  void emit(const fs::path& path, Fn&& write_fn) {
    if (dry_) {
      log_ << "dry-run: would write " << path.string() << "\n";
      return;
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_fn(path);
  }

 private:
  bool dry_;
  std::ostream& log_;
};

// ---------------------------------------------------------------------------
// validate: schema and invariant checks over one dataset manifest.

inline int cmd_validate(const fs::path& manifest_path, std::ostream& out) {
  std::vector<std::string> issues;
  DatasetManifest m;
  try {
    m = load_manifest(manifest_path);
  } catch (const ValidationError& e) {
    out << "invalid manifest: " << e.what() << "\n";
    return 1;
  }
  IngestCounters counters;
  std::size_t car = 0, ped = 0;
  for (const auto& rec : m.frames) {
    try {
      const Frame f = load_frame(m, rec, &counters);
      f.cloud.check_consistent();
      for (const auto& label : f.labels) {
        (label.cls == ObjectClass::Car ? car : ped) += 1;
      }
    } catch (const ValidationError& e) {
      issues.push_back(e.what());
    } catch (const IoError& e) {
      issues.push_back(e.what());
    }
  }
  out << "dataset '" << m.name << "' (" << to_string(m.kind) << ")\n";
  out << "frames: " << m.frames.size() << " (train " << m.count_split(Split::Train)
      << " / val " << m.count_split(Split::Val) << " / test "
      << m.count_split(Split::Test) << ")\n";
  out << "labels: " << car << " Car, " << ped << " Pedestrian\n";
  if (counters.total_dropped() > 0) {
    out << "dropped labels outside the class set:";
    for (const auto& [cls, n] : counters.dropped_classes) {
      out << " " << cls << " x" << n;
    }
    out << "\n";
  }
  if (counters.clamped_intensities > 0) {
    out << "clamped intensities: " << counters.clamped_intensities << "\n";
  }
  if (issues.empty()) {
    out << "ok\n";
    return 0;
  }
  out << issues.size() << " issue(s):\n";
  for (const auto& i : issues) out << "  " << i << "\n";
  return 1;
}

// ---------------------------------------------------------------------------
// split: assign batch-of-10 splits and write the updated manifest.

inline int cmd_split(const fs::path& manifest_path, const fs::path& out_dir,
                     OutputWriter& writer, std::ostream& out) {
  DatasetManifest m = load_manifest(manifest_path);
  assign_splits_batch10(m);
  // Paths stay valid from the new manifest's directory.
  for (auto& rec : m.frames) {
    rec.cloud_path =
        fs::relative(fs::absolute(m.base_dir / rec.cloud_path), fs::absolute(out_dir))
            .generic_string();
    rec.annotation_path =
        fs::relative(fs::absolute(m.base_dir / rec.annotation_path),
                     fs::absolute(out_dir))
            .generic_string();
  }
  const fs::path target = out_dir / (m.name + ".manifest.json");
  writer.emit(target, [&](const fs::path& p) { save_manifest(p, m); });
  out << "splits: train " << m.count_split(Split::Train) << " / val "
      << m.count_split(Split::Val) << " / test " << m.count_split(Split::Test)
      << "\n";
  if (!writer.dry()) out << "wrote " << target.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// filter: harmonize every configured dataset and write it back out in the
// ingest formats, with before/after statistics.

namespace detail {

struct FilteredDataset {
  DatasetManifest manifest;  // output manifest
  DatasetStats before;
  DatasetStats after;
};

inline bool chain_has(const FilterParams& p, FilterStage st) {
  return std::find(p.stages.begin(), p.stages.end(), st) != p.stages.end();
}

// Output manifests describe already-harmonized data, so re-running the
// chain on a filtered dataset is a no-op for the alignment stages.
inline void mark_harmonized(DatasetManifest& m, const FilterParams& params,
                            bool has_intensity) {
  if (chain_has(params, FilterStage::GroundAlign)) m.ground_z_offset = 0.0;
  if (chain_has(params, FilterStage::Intensity)) {
    m.native_intensity_max = 1.0;
    if (m.intensity_mode == IntensityMode::ConstantOne) {
      // stays constant_one; re-applying writes the same values
    } else {
      m.intensity_mode =
          has_intensity ? IntensityMode::Native : IntensityMode::Absent;
    }
  }
  m.point_record = has_intensity ? PointRecord::XYZI : PointRecord::XYZ;
}

inline FilteredDataset filter_dataset(const DatasetManifest& m,
                                      const FilterParams& params,
                                      const fs::path& out_root,
                                      unsigned jobs, OutputWriter& writer) {
  FilteredDataset result;
  result.before = dataset_stats(m);
  const DatasetHarmonics harmonics = m.harmonics();

  std::vector<Frame> filtered(m.frames.size());
  parallel_for(m.frames.size(), jobs, [&](std::size_t i) {
    Frame f = load_frame(m, m.frames[i]);
    filtered[i] = apply_filter_chain(std::move(f), params, harmonics);
  });

  DatasetManifest out_manifest = m;
  out_manifest.base_dir = out_root;
  bool has_intensity = false;
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    has_intensity = has_intensity || filtered[i].cloud.has_intensity();
    switch (m.frames[i].split) {
      case Split::Train: ++result.after.train_frames; break;
      case Split::Val: ++result.after.val_frames; break;
      case Split::Test: ++result.after.test_frames; break;
    }
    for (const auto& label : filtered[i].labels) {
      if (label.cls == ObjectClass::Car) {
        ++result.after.car_labels;
      } else {
        ++result.after.pedestrian_labels;
      }
    }
  }
  mark_harmonized(out_manifest, params, has_intensity);

  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    const auto& rec = out_manifest.frames[i];
    const Frame& f = filtered[i];
    writer.emit(out_root / rec.cloud_path, [&](const fs::path& p) {
      save_cloud(p, f.cloud, out_manifest.point_record);
    });
    writer.emit(out_root / rec.annotation_path, [&](const fs::path& p) {
      AnnotationContent ann;
      ann.frame_id = f.frame_id;
      ann.sensor = f.sensor;
      ann.boxes = f.labels;
      save_annotations(p, ann);
    });
  }
  writer.emit(out_root / "manifest.json",
              [&](const fs::path& p) { save_manifest(p, out_manifest); });
  result.manifest = std::move(out_manifest);
  return result;
}

}  // namespace detail

inline int cmd_filter(const PipelineConfig& cfg, unsigned jobs,
                      const fs::path& out_dir, OutputWriter& writer,
                      std::ostream& out) {
  if (cfg.target_manifest.empty()) {
    throw ConfigError("filter: config names no target dataset");
  }
  std::vector<std::string> manifests{cfg.target_manifest};
  manifests.insert(manifests.end(), cfg.source_manifests.begin(),
                   cfg.source_manifests.end());
  if (!cfg.pseudo_manifest.empty()) manifests.push_back(cfg.pseudo_manifest);

  for (const auto& path : manifests) {
    const DatasetManifest m = load_manifest(cfg.resolve(path));
    const FilterParams params = cfg.filters_for(m.name);
    const fs::path out_root = out_dir / (m.name + "_filtered");
    const auto result =
        detail::filter_dataset(m, params, out_root, jobs, writer);
    writer.emit(out_dir / (m.name + "_filter_stats.json"),
                [&](const fs::path& p) {
                  nlohmann::json j{{"before", stats_to_json(result.before)},
                                   {"after", stats_to_json(result.after)}};
                  railpipe::detail::write_text_file(p, j.dump(2) + "\n");
                });
    out << m.name << ": labels " << result.before.car_labels << "/"
        << result.before.pedestrian_labels << " -> " << result.after.car_labels
        << "/" << result.after.pedestrian_labels << " (Car/Pedestrian)\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// augment: CutMix + MixUp over the target train split.

inline int cmd_augment(const PipelineConfig& cfg, std::uint64_t seed,
                       unsigned jobs, const fs::path& out_dir,
                       OutputWriter& writer, std::ostream& out) {
  if (cfg.target_manifest.empty()) {
    throw ConfigError("augment: config names no target dataset");
  }
  const DatasetManifest target = load_manifest(cfg.resolve(cfg.target_manifest));
  const FilterParams target_params = cfg.filters_for(target.name);
  const DatasetHarmonics target_harmonics = target.harmonics();

  const bool target_has_channel =
      detail::chain_has(target_params, FilterStage::Intensity)
          ? target.intensity_mode != IntensityMode::Absent
          : target.point_record == PointRecord::XYZI;

  SourcePool pool;
  std::vector<DatasetManifest> source_manifests;
  std::vector<std::vector<FrameRecord>> source_train;
  source_manifests.reserve(cfg.source_manifests.size());
  for (const auto& path : cfg.source_manifests) {
    source_manifests.push_back(load_manifest(cfg.resolve(path)));
  }
  for (const auto& sm : source_manifests) {
    const FilterParams sp = cfg.filters_for(sm.name);
    const bool channel = detail::chain_has(sp, FilterStage::Intensity)
                             ? sm.intensity_mode != IntensityMode::Absent
                             : sm.point_record == PointRecord::XYZI;
    if (cfg.augment.p_cutmix > 0.0 && channel != target_has_channel) {
      throw ConfigError(
          "augment: dataset '" + sm.name +
          "' ends up with a different intensity channel than the target; "
          "align the intensity modes in the manifests");
    }
  }
  for (std::size_t si = 0; si < source_manifests.size(); ++si) {
    std::vector<FrameRecord> train;
    for (const auto& rec : source_manifests[si].frames) {
      if (rec.split == Split::Train) train.push_back(rec);
    }
    source_train.push_back(std::move(train));
  }
  for (std::size_t si = 0; si < source_manifests.size(); ++si) {
    const DatasetManifest* sm = &source_manifests[si];
    const std::vector<FrameRecord>* train = &source_train[si];
    if (train->empty()) {
      throw ConfigError("augment: source '" + sm->name +
                        "' has no train frames");
    }
    const FilterParams params = cfg.filters_for(sm->name);
    const DatasetHarmonics harmonics = sm->harmonics();
    pool.sources.push_back(SourcePool::Source{
        sm->name, train->size(), [sm, train, params, harmonics](std::size_t i) {
          Frame f = load_frame(*sm, (*train)[i]);
          return apply_filter_chain(std::move(f), params, harmonics);
        }});
  }
  if (cfg.augment.p_cutmix > 0.0 && pool.sources.empty()) {
    throw ConfigError("augment: cutmix enabled but the config lists no sources");
  }

  std::function<Frame(Rng&)> partner;
  DatasetManifest pseudo;
  std::vector<FrameRecord> pseudo_train;
  if (!cfg.pseudo_manifest.empty()) {
    pseudo = load_manifest(cfg.resolve(cfg.pseudo_manifest));
    if (pseudo.kind != target.kind) {
      throw ConfigError(
          "augment: pseudo-label dataset must come from the target domain");
    }
    for (const auto& rec : pseudo.frames) {
      if (rec.split == Split::Train) pseudo_train.push_back(rec);
    }
    if (pseudo_train.empty()) {
      throw ConfigError("augment: pseudo-label dataset has no train frames");
    }
    const FilterParams params = cfg.filters_for(pseudo.name);
    const DatasetHarmonics harmonics = pseudo.harmonics();
    const double tau = cfg.augment.pseudo_score_threshold;
    partner = [&pseudo, &pseudo_train, params, harmonics, tau](Rng& rng) {
      const std::size_t i = rng.uniform_int(pseudo_train.size());
      Frame f = load_frame(pseudo, pseudo_train[i]);
      f = apply_filter_chain(std::move(f), params, harmonics);
      for (std::size_t b = 0; b < f.labels.size(); ++b) {
        if (!f.labels[b].score) {
          throw ValidationError(
              "augment: pseudo-label frame " +
              std::to_string(pseudo_train[i].frame_id) +
              " carries an unscored box; pseudo-label files must score every "
              "box");
        }
      }
      f.labels = pseudo_label_filter(f.labels, tau);
      return f;
    };
  } else if (cfg.augment.p_mixup > 0.0) {
    throw ConfigError(
        "augment: mixup probability is positive but the config names no "
        "pseudo_labels manifest");
  }

  std::vector<FrameRecord> train;
  for (const auto& rec : target.frames) {
    if (rec.split == Split::Train) train.push_back(rec);
  }
  if (train.empty()) throw ConfigError("augment: target has no train frames");

  std::vector<AugOutcome> outcomes(train.size());
  parallel_for(train.size(), jobs, [&](std::size_t i) {
    // per-frame stream keyed on the frame identity, not the list position
    const std::uint64_t key =
        fnv1a(train[i].sequence_id) ^
        splitmix64(static_cast<std::uint64_t>(train[i].frame_id));
    Rng rng = Rng::for_stream(seed, key);
    Frame f = load_frame(target, train[i]);
    f = apply_filter_chain(std::move(f), target_params, target_harmonics);
    outcomes[i] = apply_pipeline(f, pool, partner, cfg.augment, rng);
  });

  const fs::path out_root = out_dir / (target.name + "_augmented");
  DatasetManifest out_manifest = target;
  out_manifest.base_dir = out_root;
  out_manifest.frames.clear();
  bool has_intensity = false;
  for (const auto& o : outcomes) {
    has_intensity = has_intensity || o.frame.cloud.has_intensity();
  }
  detail::mark_harmonized(out_manifest, target_params, has_intensity);

  std::size_t cutmix_fired = 0, cutmix_applied = 0, cutmix_skipped = 0,
              mixup_fired = 0;
  std::ostringstream provenance;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const AugOutcome& o = outcomes[i];
    cutmix_fired += o.cutmix_fired;
    cutmix_applied += o.cutmix_applied;
    cutmix_skipped += o.cutmix_skipped;
    mixup_fired += o.mixup_fired;

    FrameRecord rec = train[i];
    out_manifest.frames.push_back(rec);
    writer.emit(out_root / rec.cloud_path, [&](const fs::path& p) {
      save_cloud(p, o.frame.cloud, out_manifest.point_record);
    });
    if (cfg.provenance) {
      writer.emit(out_root / (rec.cloud_path + ".origin"),
                  [&](const fs::path& p) { save_origin_tags(p, o.frame.cloud); });
    }
    writer.emit(out_root / rec.annotation_path, [&](const fs::path& p) {
      AnnotationContent ann;
      ann.frame_id = o.frame.frame_id;
      ann.sensor = o.frame.sensor;
      ann.boxes = o.frame.labels;
      save_annotations(p, ann);
    });

    nlohmann::json entry{{"frame_id", rec.frame_id},
                         {"sequence_id", rec.sequence_id}};
    nlohmann::json cm{{"fired", o.cutmix_fired},
                      {"applied", o.cutmix_applied},
                      {"skipped", o.cutmix_skipped}};
    if (o.source_index) {
      cm["source"] = pool.sources[*o.source_index].name;
      cm["source_frame"] = *o.source_frame_index;
    }
    if (o.region) {
      cm["region"] = {{"cx", o.region->cx},
                      {"cy", o.region->cy},
                      {"half_x", o.region->half_x},
                      {"half_y", o.region->half_y}};
    }
    if (o.cutmix_stats) {
      cm["translation"] = {o.cutmix_stats->translation.x,
                           o.cutmix_stats->translation.y};
      cm["cut_points"] = o.cutmix_stats->cut_points;
      cm["cut_labels"] = o.cutmix_stats->cut_labels;
      cm["removed_points"] = o.cutmix_stats->removed_target_points;
      cm["removed_labels"] = o.cutmix_stats->removed_target_labels;
    }
    entry["cutmix"] = std::move(cm);
    nlohmann::json mu{{"fired", o.mixup_fired}};
    if (o.mixup_lambda) mu["lambda"] = *o.mixup_lambda;
    entry["mixup"] = std::move(mu);
    provenance << entry.dump() << "\n";
  }

  writer.emit(out_root / "manifest.json",
              [&](const fs::path& p) { save_manifest(p, out_manifest); });
  writer.emit(out_root / "provenance.jsonl", [&](const fs::path& p) {
    railpipe::detail::write_text_file(p, provenance.str());
  });
  const double n = static_cast<double>(train.size());
  nlohmann::json summary{
      {"frames", train.size()},
      {"seed", seed},
      {"cutmix",
       {{"fired", cutmix_fired},
        {"applied", cutmix_applied},
        {"skipped", cutmix_skipped},
        {"fire_rate", static_cast<double>(cutmix_fired) / n}}},
      {"mixup",
       {{"fired", mixup_fired},
        {"fire_rate", static_cast<double>(mixup_fired) / n}}}};
  writer.emit(out_root / "summary.json", [&](const fs::path& p) {
    railpipe::detail::write_text_file(p, summary.dump(2) + "\n");
  });

  out << "augmented " << train.size() << " train frame(s): cutmix fired "
      << cutmix_fired << " (applied " << cutmix_applied << ", skipped "
      << cutmix_skipped << "), mixup fired " << mixup_fired << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval: AP40 + Closed Gap over detection/ground-truth directories, or a gap
// re-computation over previously written reports.

namespace detail {

inline std::vector<fs::path> sorted_json_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw IoError("not a directory: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace detail

struct EvalOptions {
  std::string det_dir;
  std::string gt_dir;
  std::string from_report;
  std::string baseline_source;
  std::string baseline_oracle;
};

inline int cmd_eval(const EvalOptions& opts, const PipelineConfig& cfg,
                    unsigned jobs, const fs::path& out_dir,
                    OutputWriter& writer, std::ostream& out) {
  std::optional<EvalReport> source_only, oracle;
  if (!opts.baseline_source.empty()) {
    source_only = report_from_json(
        railpipe::detail::parse_json_file(opts.baseline_source),
        opts.baseline_source);
  }
  if (!opts.baseline_oracle.empty()) {
    oracle = report_from_json(
        railpipe::detail::parse_json_file(opts.baseline_oracle),
        opts.baseline_oracle);
  }
  if ((source_only.has_value()) != (oracle.has_value())) {
    throw ConfigError(
        "eval: closed gaps need both --baseline-source and --baseline-oracle");
  }

  EvalReport report;
  if (!opts.from_report.empty()) {
    report = report_from_json(
        railpipe::detail::parse_json_file(opts.from_report), opts.from_report);
    if (source_only) {
      report.gaps.clear();
      for (const auto& [cls, taus] : cfg.eval.thresholds) {
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
            (mode == IouMode::Bev ? gap.gap_bev : gap.gap_3d) = value;
          }
          report.gaps.push_back(gap);
        }
      }
    }
  } else {
    if (opts.det_dir.empty() || opts.gt_dir.empty()) {
      throw ConfigError("eval: need --dets and --gts (or --from-report)");
    }
    const auto det_files = detail::sorted_json_files(opts.det_dir);
    const auto gt_files = detail::sorted_json_files(opts.gt_dir);
    std::vector<DetectionSet> det_frames(det_files.size());
    std::vector<GroundTruthSet> gt_frames(gt_files.size());
    parallel_for(det_files.size(), jobs, [&](std::size_t i) {
      const AnnotationContent ann = load_annotations(det_files[i]);
      DetectionSet set;
      set.frame_id = ann.frame_id;
      for (const auto& b : ann.boxes) {
        if (!b.score) {
          throw ValidationError(det_files[i].string() +
                                ": detection box without a score");
        }
        set.boxes.push_back(Detection{b.box, b.cls, *b.score});
      }
      det_frames[i] = std::move(set);
    });
    parallel_for(gt_files.size(), jobs, [&](std::size_t i) {
      const AnnotationContent ann = load_annotations(gt_files[i]);
      gt_frames[i] = GroundTruthSet{ann.frame_id, ann.boxes};
    });
    report = evaluate(det_frames, gt_frames, cfg.eval,
                      source_only ? &*source_only : nullptr,
                      oracle ? &*oracle : nullptr);
  }

  std::vector<TableRow> rows;
  if (source_only) rows.push_back({"source-only", &*source_only, false});
  if (oracle) rows.push_back({"oracle", &*oracle, false});
  rows.push_back({"model", &report, source_only.has_value()});
  const std::string table = format_report_table(rows, cfg.eval);
  out << table;

  writer.emit(out_dir / "eval_report.json", [&](const fs::path& p) {
    railpipe::detail::write_text_file(p, report_to_json(report).dump(2) + "\n");
  });
  writer.emit(out_dir / "eval_report.txt", [&](const fs::path& p) {
    railpipe::detail::write_text_file(p, table);
  });
  return 0;
}

// ---------------------------------------------------------------------------
// stats: point height/range statistics in "mean +- std" form.

inline int cmd_stats(const fs::path& manifest_path,
                     const std::optional<ObjectClass>& cls, unsigned jobs,
                     std::ostream& out) {
  const DatasetManifest m = load_manifest(manifest_path);
  std::vector<Frame> frames(m.frames.size());
  parallel_for(m.frames.size(), jobs,
               [&](std::size_t i) { frames[i] = load_frame(m, m.frames[i]); });
  const auto stats = cloud_stats(frames, cls);
  out << "dataset '" << m.name << "'";
  if (cls) out << ", class " << to_string(*cls);
  out << "\n";
  if (!stats) {
    out << "no points selected\n";
    return 0;
  }
  char line[128];
  std::snprintf(line, sizeof(line), "points: %zu\n", stats->point_count);
  out << line;
  std::snprintf(line, sizeof(line), "height: %.2f m ± %.2f\n",
                stats->height_mean, stats->height_std);
  out << line;
  std::snprintf(line, sizeof(line), "range: %.2f m ± %.2f\n",
                stats->range_mean, stats->range_std);
  out << line;
  return 0;
}

// ---------------------------------------------------------------------------
// selftest: oracle agreement summary as pass/fail JSON.

inline int cmd_selftest(std::size_t samples, std::uint64_t seed,
                        std::ostream& out) {
  const auto report = scenegen::run_selftest(samples, seed);
  out << report.to_json().dump(2) << "\n";
  return report.all_pass() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// gen: synthetic dataset for demos and integration runs.

struct GenOptions {
  std::size_t frames = 20;
  std::string name = "synthetic";
  std::string kind = "synthetic_rail";
  bool with_scores = false;
  double ground_z_offset = 0.0;
};

inline int cmd_gen(const GenOptions& opts, std::uint64_t seed,
                   const fs::path& out_dir, OutputWriter& writer,
                   std::ostream& out) {
  scenegen::DatasetGenSpec spec;
  spec.seed = seed;
  spec.frame_count = opts.frames;
  spec.name = opts.name;
  spec.with_scores = opts.with_scores;
  spec.ground_z_offset = opts.ground_z_offset;
  const auto kind = domain_kind_from_string(opts.kind);
  if (!kind) throw ConfigError("gen: unknown dataset kind '" + opts.kind + "'");
  spec.kind = *kind;
  const fs::path dir = out_dir / opts.name;
  if (writer.dry()) {
    writer.emit(dir / "manifest.json", [](const fs::path&) {});
    return 0;
  }
  const DatasetManifest m = scenegen::gen_dataset(dir, spec);
  out << "wrote " << m.frames.size() << " frame(s) under " << dir.string()
      << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Argument parsing and dispatch.

inline int run(const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err) {
  CLI::App app{"railway LiDAR domain-adaptation data pipeline"};
  app.require_subcommand(0, 1);

  struct Common {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    unsigned jobs = 0;
    bool dry_run = false;
    bool seed_given = false;
    bool out_given = false;
    bool jobs_given = false;
  } common;

  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "pipeline config JSON");
    sub->add_option("--out", common.out_dir, "output directory")
        ->each([&common](const std::string&) { common.out_given = true; });
    sub->add_option("--seed", common.seed, "global random seed")
        ->each([&common](const std::string&) { common.seed_given = true; });
    sub->add_option("--jobs", common.jobs, "worker threads (default: cores)")
        ->each([&common](const std::string&) { common.jobs_given = true; });
    sub->add_flag("--dry-run", common.dry_run,
                  "report planned actions, write nothing");
  };

  std::string manifest_arg;
  auto* validate = app.add_subcommand("validate", "check a dataset manifest");
  validate->add_option("manifest", manifest_arg, "manifest path")->required();
  add_common(validate);

  auto* split = app.add_subcommand("split", "assign batch-of-10 splits");
  split->add_option("manifest", manifest_arg, "manifest path")->required();
  add_common(split);

  auto* filter = app.add_subcommand("filter", "harmonize configured datasets");
  add_common(filter);

  auto* augment =
      app.add_subcommand("augment", "CutMix/MixUp the target train split");
  add_common(augment);

  EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "AP40 + Closed Gap evaluation");
  eval->add_option("--dets", eval_opts.det_dir, "detection annotation dir");
  eval->add_option("--gts", eval_opts.gt_dir, "ground-truth annotation dir");
  eval->add_option("--from-report", eval_opts.from_report,
                   "recompute gaps from an existing report JSON");
  eval->add_option("--baseline-source", eval_opts.baseline_source,
                   "source-only baseline report JSON");
  eval->add_option("--baseline-oracle", eval_opts.baseline_oracle,
                   "oracle baseline report JSON");
  add_common(eval);

  std::string stats_class;
  auto* stats = app.add_subcommand("stats", "point height/range statistics");
  stats->add_option("manifest", manifest_arg, "manifest path")->required();
  stats->add_option("--class", stats_class, "restrict to Car or Pedestrian");
  add_common(stats);

  std::size_t selftest_samples = 32;
  auto* selftest =
      app.add_subcommand("selftest", "run the built-in oracle agreement suite");
  selftest->add_option("--samples", selftest_samples, "per-check sample count");
  add_common(selftest);

  GenOptions gen_opts;
  auto* gen = app.add_subcommand("gen", "generate a synthetic demo dataset");
  gen->add_option("--frames", gen_opts.frames, "frame count");
  gen->add_option("--name", gen_opts.name, "dataset name");
  gen->add_option("--kind", gen_opts.kind, "dataset kind");
  gen->add_option("--ground-z-offset", gen_opts.ground_z_offset,
                  "sensor height recorded in the manifest");
  gen->add_flag("--scores", gen_opts.with_scores,
                "emit pseudo-label style scored annotations");
  add_common(gen);

  std::vector<std::string> argv_store;
  argv_store.push_back("railpipe");
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  argv.reserve(argv_store.size());
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    PipelineConfig cfg;
    if (!common.config_path.empty()) cfg = load_config(common.config_path);
    if (common.seed_given) cfg.seed = common.seed;
    if (common.out_given) cfg.output_dir = common.out_dir;
    if (common.jobs_given) cfg.jobs = common.jobs;
    const unsigned jobs = cfg.jobs == 0 ? default_jobs() : cfg.jobs;
    const fs::path out_dir = common.out_given
                                 ? fs::path(common.out_dir)
                                 : (common.config_path.empty()
                                        ? fs::path(cfg.output_dir)
                                        : cfg.resolve(cfg.output_dir));
    OutputWriter writer(common.dry_run, out);

    if (validate->parsed()) return cmd_validate(manifest_arg, out);
    if (split->parsed()) return cmd_split(manifest_arg, out_dir, writer, out);
    if (filter->parsed()) {
      if (common.config_path.empty()) throw ConfigError("filter: --config is required");
      return cmd_filter(cfg, jobs, out_dir, writer, out);
    }
    if (augment->parsed()) {
      if (common.config_path.empty()) throw ConfigError("augment: --config is required");
      return cmd_augment(cfg, cfg.seed, jobs, out_dir, writer, out);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_opts, cfg, jobs, out_dir, writer, out);
    }
    if (stats->parsed()) {
      std::optional<ObjectClass> cls;
      if (!stats_class.empty()) {
        cls = object_class_from_string(stats_class);
        if (!cls) throw ConfigError("stats: unknown class '" + stats_class + "'");
      }
      return cmd_stats(manifest_arg, cls, jobs, out);
    }
    if (selftest->parsed()) return cmd_selftest(selftest_samples, cfg.seed, out);
    if (gen->parsed()) return cmd_gen(gen_opts, cfg.seed, out_dir, writer, out);

    err << app.help();
    return 2;
  } catch (const ConfigError& e) {
    err << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "error: io: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    err << "error: validation: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace railpipe::cli
