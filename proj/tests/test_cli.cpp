#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "railpipe/cli.hpp"
#include "railpipe/scenegen.hpp"

using namespace railpipe;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  RunResult r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("railpipe_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

// relative path -> file bytes, for tree comparisons
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) {
      out[fs::relative(entry.path(), root).generic_string()] =
          slurp(entry.path());
    }
  }
  return out;
}

fs::path make_dataset(const fs::path& dir, std::uint64_t seed,
                      std::size_t frames, DomainKind kind,
                      const std::string& name, bool scores = false) {
  scenegen::DatasetGenSpec spec;
  spec.seed = seed;
  spec.frame_count = frames;
  spec.kind = kind;
  spec.name = name;
  spec.with_scores = scores;
  scenegen::gen_dataset(dir, spec);
  return dir / "manifest.json";
}

std::string fixture(const std::string& name) {
  return std::string(RAILPIPE_FIXTURE_DIR) + "/" + name;
}

}  // namespace

TEST_CASE("cli: help exits zero") {
  const RunResult r = run_cli({"--help"});
  REQUIRE(r.code == 0);
  REQUIRE(r.out.find("augment") != std::string::npos);
}

TEST_CASE("cli: unknown arguments are config errors") {
  REQUIRE(run_cli({"frobnicate"}).code == 2);
  REQUIRE(run_cli({"eval", "--no-such-flag"}).code == 2);
}

TEST_CASE("cli: validate a clean and a broken dataset") {
  const fs::path dir = temp_dir("validate");
  const fs::path manifest = make_dataset(dir / "data", 31, 10,
                                         DomainKind::SyntheticRail, "syn");
  REQUIRE(run_cli({"validate", manifest.string()}).code == 0);

  // truncate one cloud so its size stops matching the record width
  const auto m = load_manifest(manifest);
  const fs::path victim = dir / "data" / m.frames[0].cloud_path;
  const std::string bytes = slurp(victim);
  write_file(victim, bytes.substr(0, bytes.size() - 5));
  const RunResult r = run_cli({"validate", manifest.string()});
  REQUIRE(r.code == 1);
  REQUIRE(r.out.find("issue") != std::string::npos);

  // missing manifest is an io error
  REQUIRE(run_cli({"validate", (dir / "nope.json").string()}).code == 3);
}

TEST_CASE("cli: split assigns 70/20/10 and honors dry-run") {
  const fs::path dir = temp_dir("split");
  const fs::path manifest =
      make_dataset(dir / "data", 33, 30, DomainKind::SyntheticRail, "syn");
  const fs::path out_dir = dir / "out";

  const RunResult dry = run_cli({"split", manifest.string(), "--out",
                                 out_dir.string(), "--dry-run"});
  REQUIRE(dry.code == 0);
  REQUIRE_FALSE(fs::exists(out_dir / "syn.manifest.json"));
  REQUIRE(dry.out.find("dry-run") != std::string::npos);

  const RunResult r =
      run_cli({"split", manifest.string(), "--out", out_dir.string()});
  REQUIRE(r.code == 0);
  REQUIRE(r.out.find("train 21 / val 6 / test 3") != std::string::npos);
  const DatasetManifest written =
      load_manifest(out_dir / "syn.manifest.json");
  REQUIRE(written.count_split(Split::Train) == 21);
  // rewritten paths stay loadable from the new location
  REQUIRE_NOTHROW(load_frame(written, written.frames[0]));
}

TEST_CASE("cli: filter writes harmonized datasets with stats") {
  const fs::path dir = temp_dir("filter");
  const fs::path target = make_dataset(dir / "target", 35, 10,
                                       DomainKind::RealRail, "rail");
  const fs::path source = make_dataset(dir / "source", 37, 10,
                                       DomainKind::SyntheticRail, "syn");
  nlohmann::json cfg{
      {"seed", 5},
      {"target", target.string()},
      {"sources", {source.string()}},
      {"filters",
       {{"stages", {"clip", "min_points", "intensity"}},
        {"range", {0, -54, -3, 216, 54, 6.8}},
        {"min_points", 5}}}};
  const fs::path cfg_path = dir / "config.json";
  write_file(cfg_path, cfg.dump(2));
  const fs::path out_dir = dir / "out";

  const RunResult r = run_cli({"filter", "--config", cfg_path.string(),
                               "--out", out_dir.string()});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(out_dir / "rail_filtered" / "manifest.json"));
  REQUIRE(fs::exists(out_dir / "rail_filter_stats.json"));
  REQUIRE(fs::exists(out_dir / "syn_filtered" / "manifest.json"));

  const nlohmann::json stats =
      nlohmann::json::parse(slurp(out_dir / "rail_filter_stats.json"));
  REQUIRE(stats["before"]["frames"]["total"].get<int>() == 10);
  REQUIRE(stats["after"]["labels"]["Car"].get<int>() <=
          stats["before"]["labels"]["Car"].get<int>());

  // the filtered manifest must validate and load cleanly
  REQUIRE(run_cli({"validate",
                   (out_dir / "rail_filtered" / "manifest.json").string()})
              .code == 0);

  // a second run with the same config is byte-identical
  const fs::path out_again = dir / "out_again";
  REQUIRE(run_cli({"filter", "--config", cfg_path.string(), "--out",
                   out_again.string(), "--jobs", "2"})
              .code == 0);
  REQUIRE(tree_bytes(out_dir) == tree_bytes(out_again));
}

TEST_CASE("cli: filter rejects reordered stages") {
  const fs::path dir = temp_dir("filter_order");
  const fs::path target =
      make_dataset(dir / "t", 39, 4, DomainKind::RealRail, "rail");
  nlohmann::json cfg{{"seed", 1},
                     {"target", target.string()},
                     {"filters", {{"stages", {"min_points", "clip"}}}}};
  const fs::path cfg_path = dir / "config.json";
  write_file(cfg_path, cfg.dump());
  const RunResult r = run_cli({"filter", "--config", cfg_path.string()});
  REQUIRE(r.code == 2);
  REQUIRE(r.err.find("out of order") != std::string::npos);
}

TEST_CASE("cli: config without seed is rejected") {
  const fs::path dir = temp_dir("noseed");
  write_file(dir / "config.json", R"({"target": "x.json"})");
  const RunResult r =
      run_cli({"filter", "--config", (dir / "config.json").string()});
  REQUIRE(r.code == 2);
  REQUIRE(r.err.find("seed") != std::string::npos);
}

TEST_CASE("cli: augment with zero probabilities reproduces the input bytes") {
  const fs::path dir = temp_dir("aug_identity");
  const fs::path target = make_dataset(dir / "target", 41, 10,
                                       DomainKind::RealRail, "rail");
  nlohmann::json cfg{{"seed", 9},
                     {"target", target.string()},
                     {"provenance", false},
                     {"filters", {{"stages", nlohmann::json::array()}}},
                     {"augment", {{"p_cutmix", 0.0}, {"p_mixup", 0.0}}}};
  const fs::path cfg_path = dir / "config.json";
  write_file(cfg_path, cfg.dump(2));
  const fs::path out_dir = dir / "out";
  const RunResult r = run_cli({"augment", "--config", cfg_path.string(),
                               "--out", out_dir.string()});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);

  const DatasetManifest in_manifest = load_manifest(target);
  const DatasetManifest out_manifest =
      load_manifest(out_dir / "rail_augmented" / "manifest.json");
  REQUIRE(out_manifest.frames.size() == in_manifest.count_split(Split::Train));
  for (const auto& rec : out_manifest.frames) {
    REQUIRE(slurp(out_dir / "rail_augmented" / rec.cloud_path) ==
            slurp(dir / "target" / rec.cloud_path));
    REQUIRE(slurp(out_dir / "rail_augmented" / rec.annotation_path) ==
            slurp(dir / "target" / rec.annotation_path));
  }
}

TEST_CASE("cli: augment is deterministic and counts fire rates") {
  const fs::path dir = temp_dir("aug_full");
  const fs::path target = make_dataset(dir / "target", 43, 20,
                                       DomainKind::RealRail, "rail");
  const fs::path source = make_dataset(dir / "source", 45, 20,
                                       DomainKind::SyntheticRail, "syn");
  const fs::path pseudo = make_dataset(dir / "pseudo", 47, 20,
                                       DomainKind::RealRail, "pseudo", true);
  nlohmann::json cfg{
      {"seed", 2024},
      {"target", target.string()},
      {"sources", {source.string()}},
      {"pseudo_labels", pseudo.string()},
      {"provenance", true},
      {"filters", {{"stages", {"min_points"}}, {"min_points", 5}}},
      {"augment",
       {{"p_cutmix", 0.6},
        {"p_mixup", 0.6},
        {"region_half_extent_min", 5.0},
        {"region_half_extent_max", 20.0},
        {"pseudo_score_threshold", 0.5}}}};
  const fs::path cfg_path = dir / "config.json";
  write_file(cfg_path, cfg.dump(2));

  const fs::path out1 = dir / "out1";
  const fs::path out2 = dir / "out2";
  const RunResult r1 = run_cli({"augment", "--config", cfg_path.string(),
                                "--out", out1.string()});
  CAPTURE(r1.err);
  REQUIRE(r1.code == 0);
  const RunResult r2 = run_cli({"augment", "--config", cfg_path.string(),
                                "--out", out2.string(), "--jobs", "3"});
  REQUIRE(r2.code == 0);

  // byte-identical output trees, regardless of worker count
  REQUIRE(tree_bytes(out1) == tree_bytes(out2));

  const nlohmann::json summary = nlohmann::json::parse(
      slurp(out1 / "rail_augmented" / "summary.json"));
  REQUIRE(summary["frames"].get<int>() == 14);  // 70% of 20
  REQUIRE(summary["cutmix"]["fired"].get<int>() +
              summary["mixup"]["fired"].get<int>() >=
          1);
  REQUIRE(fs::exists(out1 / "rail_augmented" / "provenance.jsonl"));

  // provenance sidecars exist and are one byte per point
  const DatasetManifest out_manifest =
      load_manifest(out1 / "rail_augmented" / "manifest.json");
  for (const auto& rec : out_manifest.frames) {
    const fs::path cloud_path = out1 / "rail_augmented" / rec.cloud_path;
    const fs::path origin_path =
        out1 / "rail_augmented" / (rec.cloud_path + ".origin");
    REQUIRE(fs::exists(origin_path));
    REQUIRE(fs::file_size(origin_path) * 12 == fs::file_size(cloud_path));
  }

  // a different seed changes the output
  nlohmann::json cfg2 = cfg;
  cfg2["seed"] = 2025;
  write_file(dir / "config2.json", cfg2.dump(2));
  const fs::path out3 = dir / "out3";
  REQUIRE(run_cli({"augment", "--config", (dir / "config2.json").string(),
                   "--out", out3.string()})
              .code == 0);
  REQUIRE(tree_bytes(out1) != tree_bytes(out3));
}

TEST_CASE("cli: augment with mixup but no pseudo labels is a config error") {
  const fs::path dir = temp_dir("aug_nopseudo");
  const fs::path target =
      make_dataset(dir / "t", 49, 4, DomainKind::RealRail, "rail");
  nlohmann::json cfg{{"seed", 1},
                     {"target", target.string()},
                     {"augment", {{"p_cutmix", 0.0}, {"p_mixup", 0.5}}}};
  write_file(dir / "config.json", cfg.dump());
  const RunResult r =
      run_cli({"augment", "--config", (dir / "config.json").string()});
  REQUIRE(r.code == 2);
  REQUIRE(r.err.find("pseudo") != std::string::npos);
}

TEST_CASE("cli: eval on detections equal to ground truth prints 100s") {
  const fs::path dir = temp_dir("eval_perfect");
  const fs::path data = dir / "data";
  const fs::path manifest =
      make_dataset(data, 51, 5, DomainKind::RealRail, "rail");
  const DatasetManifest m = load_manifest(manifest);
  const fs::path gt_dir = dir / "gt";
  const fs::path det_dir = dir / "det";
  fs::create_directories(gt_dir);
  fs::create_directories(det_dir);
  for (const auto& rec : m.frames) {
    AnnotationContent ann = load_annotations(data / rec.annotation_path);
    save_annotations(gt_dir / (std::to_string(rec.frame_id) + ".json"), ann);
    for (auto& b : ann.boxes) b.score = 1.0;
    save_annotations(det_dir / (std::to_string(rec.frame_id) + ".json"), ann);
  }
  const fs::path out_dir = dir / "out";
  const RunResult r = run_cli({"eval", "--dets", det_dir.string(), "--gts",
                               gt_dir.string(), "--out", out_dir.string(),
                               "--seed", "1"});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  REQUIRE(r.out.find("100.00") != std::string::npos);
  const nlohmann::json report =
      nlohmann::json::parse(slurp(out_dir / "eval_report.json"));
  for (const auto& e : report["entries"]) {
    REQUIRE(e["ap"].get<double>() == 100.0);
  }
}

TEST_CASE("cli: eval alignment failure lists the offending frames") {
  const fs::path dir = temp_dir("eval_misaligned");
  write_file(dir / "det" / "0.json",
             R"({"frame_id": 0, "sensor": "", "boxes": []})");
  write_file(dir / "gt" / "1.json",
             R"({"frame_id": 1, "sensor": "", "boxes": []})");
  const RunResult r = run_cli({"eval", "--dets", (dir / "det").string(),
                               "--gts", (dir / "gt").string(), "--seed", "1",
                               "--out", (dir / "out").string()});
  REQUIRE(r.code == 1);
  REQUIRE(r.err.find("frame sets differ") != std::string::npos);
}

TEST_CASE("cli: eval from report reproduces the published gap columns") {
  const fs::path dir = temp_dir("eval_fixture");
  const RunResult r = run_cli(
      {"eval", "--from-report", fixture("reports/report_w2o_mixup.json"),
       "--baseline-source", fixture("reports/report_w_only.json"),
       "--baseline-oracle", fixture("reports/report_oracle.json"), "--seed",
       "1", "--out", (dir / "out").string()});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  // Person 0.25: 157.90 BEV / 123.47 3D
  REQUIRE(r.out.find("157.90 / 123.47") != std::string::npos);
  // Car 0.70 and 0.50 BEV: 102.84
  REQUIRE(r.out.find("102.84") != std::string::npos);

  const nlohmann::json report =
      nlohmann::json::parse(slurp(dir / "out" / "eval_report.json"));
  bool found = false;
  for (const auto& g : report["closed_gaps"]) {
    if (g["class"] == "Pedestrian" && g["threshold"].get<double>() == 0.25) {
      REQUIRE(std::abs(g["gap_bev"].get<double>() - 157.90) <= 0.01);
      REQUIRE(std::abs(g["gap_3d"].get<double>() - 123.47) <= 0.01);
      found = true;
    }
  }
  REQUIRE(found);
}

TEST_CASE("cli: stats prints mean +- std lines") {
  const fs::path dir = temp_dir("stats");
  const fs::path manifest =
      make_dataset(dir / "data", 53, 4, DomainKind::SyntheticRail, "syn");
  const RunResult r = run_cli({"stats", manifest.string()});
  REQUIRE(r.code == 0);
  REQUIRE(r.out.find("height:") != std::string::npos);
  REQUIRE(r.out.find("range:") != std::string::npos);
  REQUIRE(r.out.find("±") != std::string::npos);

  const RunResult by_class =
      run_cli({"stats", manifest.string(), "--class", "Pedestrian"});
  REQUIRE(by_class.code == 0);
  REQUIRE(by_class.out.find("Pedestrian") != std::string::npos);

  REQUIRE(run_cli({"stats", manifest.string(), "--class", "Llama"}).code == 2);
}

TEST_CASE("cli: selftest emits a pass/fail JSON summary") {
  const RunResult r = run_cli({"selftest", "--samples", "6", "--seed", "7"});
  CAPTURE(r.out);
  REQUIRE(r.code == 0);
  const nlohmann::json j = nlohmann::json::parse(r.out);
  REQUIRE(j["failed"].get<int>() == 0);
  REQUIRE(j["passed"].get<int>() >= 5);
}

TEST_CASE("cli: gen produces a dataset that validates") {
  const fs::path dir = temp_dir("gen");
  const RunResult r = run_cli({"gen", "--frames", "8", "--name", "demo",
                               "--out", dir.string(), "--seed", "3"});
  REQUIRE(r.code == 0);
  REQUIRE(run_cli({"validate", (dir / "demo" / "manifest.json").string()})
              .code == 0);
}

TEST_CASE("cli: dry-run writes nothing anywhere") {
  const fs::path dir = temp_dir("dryrun");
  const fs::path target =
      make_dataset(dir / "t", 55, 6, DomainKind::RealRail, "rail");
  nlohmann::json cfg{{"seed", 4},
                     {"target", target.string()},
                     {"filters", {{"stages", {"min_points"}}}},
                     {"augment", {{"p_cutmix", 0.0}, {"p_mixup", 0.0}}}};
  write_file(dir / "config.json", cfg.dump());
  const fs::path out_dir = dir / "out";
  for (const char* sub : {"filter", "augment"}) {
    const RunResult r =
        run_cli({sub, "--config", (dir / "config.json").string(), "--out",
                 out_dir.string(), "--dry-run"});
    CAPTURE(sub, r.err);
    REQUIRE(r.code == 0);
    REQUIRE_FALSE(fs::exists(out_dir));
  }

  const RunResult gen = run_cli({"gen", "--frames", "2", "--out",
                                 out_dir.string(), "--seed", "1", "--dry-run"});
  REQUIRE(gen.code == 0);
  REQUIRE_FALSE(fs::exists(out_dir));

  const RunResult eval = run_cli(
      {"eval", "--from-report", fixture("reports/report_oracle.json"),
       "--seed", "1", "--out", out_dir.string(), "--dry-run"});
  REQUIRE(eval.code == 0);
  REQUIRE_FALSE(fs::exists(out_dir));
}

TEST_CASE("cli: the installed binary runs end to end") {
  const fs::path dir = temp_dir("binary");
  const std::string cmd = std::string(RAILPIPE_CLI_BIN) +
                          " selftest --samples 4 --seed 5 > " +
                          (dir / "out.txt").string() + " 2>&1";
  REQUIRE(std::system(cmd.c_str()) == 0);
  const nlohmann::json j = nlohmann::json::parse(slurp(dir / "out.txt"));
  REQUIRE(j["failed"].get<int>() == 0);
}
