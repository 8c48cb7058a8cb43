#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "railpipe/dataset.hpp"
#include "railpipe/rng.hpp"
#include "railpipe/scenegen.hpp"

using namespace railpipe;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("railpipe_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace

TEST_CASE("split rule: batch positions") {
  const auto splits = assign_splits_batch10(10);
  std::size_t train = 0, val = 0, test = 0;
  for (Split s : splits) {
    train += s == Split::Train;
    val += s == Split::Val;
    test += s == Split::Test;
  }
  REQUIRE(train == 7);
  REQUIRE(val == 2);
  REQUIRE(test == 1);
  REQUIRE(splits[5] == Split::Test);   // position 6
  REQUIRE(splits[2] == Split::Val);    // position 3
  REQUIRE(splits[8] == Split::Val);    // position 9
  REQUIRE(splits[0] == Split::Train);
}

TEST_CASE("split rule: single frame and trailing partial batch") {
  REQUIRE(assign_splits_batch10(1) == std::vector<Split>{Split::Train});
  const auto splits = assign_splits_batch10(7);
  std::size_t train = 0, val = 0, test = 0;
  for (Split s : splits) {
    train += s == Split::Train;
    val += s == Split::Val;
    test += s == Split::Test;
  }
  REQUIRE(train == 5);
  REQUIRE(val == 1);
  REQUIRE(test == 1);
}

TEST_CASE("split rule: pure function of position mod 10") {
  for (std::size_t i = 0; i < 200; ++i) {
    REQUIRE(split_for_position(i) == split_for_position(i % 10));
  }
}

TEST_CASE("split rule: 4838 frames stay within one batch of 70/20/10") {
  const std::size_t n = 4838;
  const auto splits = assign_splits_batch10(n);
  std::size_t train = 0, val = 0, test = 0;
  for (Split s : splits) {
    train += s == Split::Train;
    val += s == Split::Val;
    test += s == Split::Test;
  }
  REQUIRE(std::abs(static_cast<double>(train) - 0.7 * n) <= 7.0);
  REQUIRE(std::abs(static_cast<double>(val) - 0.2 * n) <= 2.0);
  REQUIRE(std::abs(static_cast<double>(test) - 0.1 * n) <= 1.0);
}

TEST_CASE("annotations: schema round trip for one car entry") {
  const fs::path dir = temp_dir("ann_single");
  AnnotationContent content;
  content.frame_id = 7;
  content.sensor = "tele";
  content.boxes.push_back(LabeledBox{Box3D(1, 2, 3, 4, 2, 2, 0.5),
                                     ObjectClass::Car, std::nullopt});
  save_annotations(dir / "a.json", content);
  const auto loaded = load_annotations(dir / "a.json");
  REQUIRE(loaded.frame_id == 7);
  REQUIRE(loaded.boxes.size() == 1);
  REQUIRE(loaded.boxes[0].box == content.boxes[0].box);
  REQUIRE(loaded.boxes[0].cls == ObjectClass::Car);
  REQUIRE_FALSE(loaded.boxes[0].score.has_value());
}

TEST_CASE("annotations: empty list round trips") {
  const fs::path dir = temp_dir("ann_empty");
  save_annotations(dir / "a.json", AnnotationContent{});
  REQUIRE(load_annotations(dir / "a.json").boxes.empty());
}

TEST_CASE("annotations: writer/reader inverse on random boxes") {
  const fs::path dir = temp_dir("ann_roundtrip");
  Rng rng(5);
  AnnotationContent content;
  content.frame_id = 42;
  for (int i = 0; i < 100; ++i) {
    LabeledBox b;
    b.box = Box3D(rng.uniform(-100, 200), rng.uniform(-60, 60),
                  rng.uniform(-3, 7), rng.uniform(0.3, 6), rng.uniform(0.3, 3),
                  rng.uniform(0.5, 3), rng.uniform(-kPi, kPi));
    b.cls = rng.uniform() < 0.5 ? ObjectClass::Car : ObjectClass::Pedestrian;
    if (rng.uniform() < 0.5) b.score = rng.uniform();
    content.boxes.push_back(b);
  }
  save_annotations(dir / "a.json", content);
  const auto loaded = load_annotations(dir / "a.json");
  REQUIRE(loaded.boxes == content.boxes);

  // a second write of the loaded content is byte-identical
  save_annotations(dir / "b.json", loaded);
  std::ifstream fa(dir / "a.json", std::ios::binary);
  std::ifstream fb(dir / "b.json", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {});
  const std::string sb((std::istreambuf_iterator<char>(fb)), {});
  REQUIRE(sa == sb);
}

TEST_CASE("annotations: aliases map and unknown classes drop with a count") {
  const fs::path dir = temp_dir("ann_alias");
  write_file(dir / "a.json", R"({
    "frame_id": 1, "sensor": "",
    "boxes": [
      {"class": "Vehicle", "center": [1,2,3], "size": [4,2,2], "yaw": 0.0},
      {"class": "Person", "center": [5,0,1], "size": [0.7,0.7,1.8], "yaw": 0.0},
      {"class": "Cyclist", "center": [9,0,1], "size": [2,1,2], "yaw": 0.0}
    ]})");
  IngestCounters counters;
  const auto loaded = load_annotations(
      dir / "a.json", {{"Vehicle", "Car"}, {"Person", "Pedestrian"}},
      &counters);
  REQUIRE(loaded.boxes.size() == 2);
  REQUIRE(loaded.boxes[0].cls == ObjectClass::Car);
  REQUIRE(loaded.boxes[1].cls == ObjectClass::Pedestrian);
  REQUIRE(counters.dropped_classes.at("Cyclist") == 1);
}

TEST_CASE("annotations: malformed and schema-violating files") {
  const fs::path dir = temp_dir("ann_bad");
  write_file(dir / "broken.json", "{ not json");
  REQUIRE_THROWS_AS(load_annotations(dir / "broken.json"), SchemaError);

  write_file(dir / "missing.json",
             R"({"frame_id": 1, "boxes": [{"class": "Car", "center": [1,2,3], "yaw": 0}]})");
  REQUIRE_THROWS_WITH(load_annotations(dir / "missing.json"),
                      Catch::Matchers::ContainsSubstring("size"));

  write_file(dir / "badscore.json",
             R"({"frame_id": 1, "boxes": [{"class": "Car", "center": [1,2,3],
                 "size": [4,2,2], "yaw": 0, "score": 1.5}]})");
  REQUIRE_THROWS_AS(load_annotations(dir / "badscore.json"), SchemaError);

  write_file(dir / "baddims.json",
             R"({"frame_id": 1, "boxes": [{"class": "Car", "center": [1,2,3],
                 "size": [0,2,2], "yaw": 0}]})");
  REQUIRE_THROWS_AS(load_annotations(dir / "baddims.json"), SchemaError);

  REQUIRE_THROWS_AS(load_annotations(dir / "does_not_exist.json"), IoError);
}

TEST_CASE("clouds: zero-byte file loads as an empty cloud") {
  const fs::path dir = temp_dir("cloud_empty");
  write_file(dir / "c.bin", "");
  REQUIRE(load_cloud(dir / "c.bin", PointRecord::XYZ).empty());
  REQUIRE(load_cloud(dir / "c.bin", PointRecord::XYZI).empty());
}

TEST_CASE("clouds: write-then-read is exact for float data") {
  const fs::path dir = temp_dir("cloud_roundtrip");
  Rng rng(9);
  PointCloud cloud;
  for (int i = 0; i < 1000; ++i) {
    // values generated as float so the 32-bit file format is lossless
    cloud.x.push_back(static_cast<float>(rng.uniform(-200, 200)));
    cloud.y.push_back(static_cast<float>(rng.uniform(-60, 60)));
    cloud.z.push_back(static_cast<float>(rng.uniform(-5, 10)));
    cloud.intensity.push_back(static_cast<float>(rng.uniform(0, 1)));
  }
  save_cloud(dir / "c.bin", cloud, PointRecord::XYZI);
  const PointCloud loaded = load_cloud(dir / "c.bin", PointRecord::XYZI);
  REQUIRE(loaded.x == cloud.x);
  REQUIRE(loaded.y == cloud.y);
  REQUIRE(loaded.z == cloud.z);
  REQUIRE(loaded.intensity == cloud.intensity);
}

TEST_CASE("clouds: record size mismatch is a format error") {
  const fs::path dir = temp_dir("cloud_badsize");
  PointCloud cloud;
  cloud.push_back(1, 2, 3);  // 12 bytes as XYZ
  save_cloud(dir / "c.bin", cloud, PointRecord::XYZ);
  REQUIRE_THROWS_AS(load_cloud(dir / "c.bin", PointRecord::XYZI), SchemaError);
}

TEST_CASE("clouds: non-finite values name the point index") {
  const fs::path dir = temp_dir("cloud_nan");
  const float values[6] = {1.f, 2.f, 3.f, 4.f,
                           std::numeric_limits<float>::quiet_NaN(), 6.f};
  std::ofstream out(dir / "c.bin", std::ios::binary);
  out.write(reinterpret_cast<const char*>(values), sizeof(values));
  out.close();
  REQUIRE_THROWS_WITH(load_cloud(dir / "c.bin", PointRecord::XYZ),
                      Catch::Matchers::ContainsSubstring("point 1"));
}

TEST_CASE("clouds: out-of-range intensities clamp with a count") {
  const fs::path dir = temp_dir("cloud_clamp");
  const float values[8] = {1.f, 2.f, 3.f, 7.5f, 4.f, 5.f, 6.f, -0.5f};
  std::ofstream out(dir / "c.bin", std::ios::binary);
  out.write(reinterpret_cast<const char*>(values), sizeof(values));
  out.close();
  IngestCounters counters;
  const PointCloud cloud =
      load_cloud(dir / "c.bin", PointRecord::XYZI, &counters);
  REQUIRE(counters.clamped_intensities == 2);
  REQUIRE(cloud.intensity[0] == 1.0);
  REQUIRE(cloud.intensity[1] == 0.0);
}

TEST_CASE("manifest: round trip and validation") {
  const fs::path dir = temp_dir("manifest");
  DatasetManifest m;
  m.name = "demo";
  m.kind = DomainKind::SyntheticRail;
  m.ground_z_offset = 2.5;
  m.intensity_mode = IntensityMode::ConstantOne;
  m.point_record = PointRecord::XYZ;
  m.class_aliases = {{"Vehicle", "Car"}};
  m.frames.push_back(
      {0, "seq0", "clouds/0.bin", "labels/0.json", Split::Train});
  m.frames.push_back({1, "seq0", "clouds/1.bin", "labels/1.json", Split::Val});
  save_manifest(dir / "manifest.json", m);
  const DatasetManifest loaded = load_manifest(dir / "manifest.json");
  REQUIRE(loaded.name == m.name);
  REQUIRE(loaded.kind == m.kind);
  REQUIRE(loaded.ground_z_offset == 2.5);
  REQUIRE(loaded.intensity_mode == IntensityMode::ConstantOne);
  REQUIRE(loaded.class_aliases.at("Vehicle") == "Car");
  REQUIRE(loaded.frames.size() == 2);
  REQUIRE(loaded.base_dir == dir);

  DatasetManifest dup = m;
  dup.frames.push_back(
      {1, "seq0", "clouds/1b.bin", "labels/1b.json", Split::Val});
  REQUIRE_THROWS_WITH(dup.validate(),
                      Catch::Matchers::ContainsSubstring("duplicate frame_id"));
}

TEST_CASE("manifest: unknown enum strings are schema errors") {
  const fs::path dir = temp_dir("manifest_bad");
  write_file(dir / "m.json", R"({
    "name": "x", "kind": "hovercraft", "ground_z_offset": 0,
    "intensity_mode": "absent", "point_record": "xyz", "frames": []})");
  REQUIRE_THROWS_AS(load_manifest(dir / "m.json"), SchemaError);
}

TEST_CASE("dataset_stats: counts from a generated dataset") {
  const fs::path dir = temp_dir("stats_gen");
  scenegen::DatasetGenSpec spec;
  spec.seed = 21;
  spec.frame_count = 10;
  spec.cars_per_frame = 3;
  spec.pedestrians_per_frame = 2;
  spec.points_per_object = 40;
  const DatasetManifest m = scenegen::gen_dataset(dir, spec);

  const DatasetStats raw = dataset_stats(m);
  REQUIRE(raw.car_labels == 30);
  REQUIRE(raw.pedestrian_labels == 20);
  REQUIRE(raw.total_frames() == 10);
  REQUIRE(raw.train_frames == 7);
  REQUIRE(raw.val_frames == 2);
  REQUIRE(raw.test_frames == 1);

  // every object carries 40 points, so a 5-point threshold drops nothing
  FilterParams params;
  params.stages = {FilterStage::MinPoints};
  params.min_points = 5;
  const DatasetStats filtered = dataset_stats(m, &params);
  REQUIRE(filtered.car_labels == 30);
  REQUIRE(filtered.pedestrian_labels == 20);
}

TEST_CASE("dataset_stats: empty manifest and one frame per split") {
  DatasetManifest empty;
  empty.name = "empty";
  const DatasetStats zeros = dataset_stats(empty);
  REQUIRE(zeros.total_frames() == 0);
  REQUIRE(zeros.car_labels == 0);
  REQUIRE(zeros.pedestrian_labels == 0);

  const fs::path dir = temp_dir("stats_splits");
  scenegen::DatasetGenSpec spec;
  spec.seed = 3;
  spec.frame_count = 3;
  DatasetManifest m = scenegen::gen_dataset(dir, spec);
  m.frames[0].split = Split::Train;
  m.frames[1].split = Split::Val;
  m.frames[2].split = Split::Test;
  const DatasetStats stats = dataset_stats(m);
  REQUIRE(stats.train_frames == 1);
  REQUIRE(stats.val_frames == 1);
  REQUIRE(stats.test_frames == 1);
}

TEST_CASE("dataset_stats: unreadable frames aggregate into one error") {
  const fs::path dir = temp_dir("stats_broken");
  scenegen::DatasetGenSpec spec;
  spec.seed = 4;
  spec.frame_count = 3;
  DatasetManifest m = scenegen::gen_dataset(dir, spec);
  fs::remove(dir / m.frames[1].cloud_path);
  fs::remove(dir / m.frames[2].cloud_path);
  REQUIRE_THROWS_WITH(dataset_stats(m),
                      Catch::Matchers::ContainsSubstring("2 unreadable"));
}

TEST_CASE("manifest split assignment orders by sequence and frame id") {
  DatasetManifest m;
  m.name = "ordered";
  for (int i = 0; i < 25; ++i) {
    m.frames.push_back({25 - i, "seq0", "c.bin", "a.json", Split::Train});
  }
  assign_splits_batch10(m);
  REQUIRE(m.frames.front().frame_id == 1);
  REQUIRE(m.frames[5].split == Split::Test);
  REQUIRE(m.frames[2].split == Split::Val);
  std::size_t test = 0;
  for (const auto& f : m.frames) test += f.split == Split::Test;
  REQUIRE(test == 2);  // positions 6 and 16
}
