#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <string>

#include "bandmatch/config.hpp"
#include "test_util.hpp"

using namespace bandmatch;
using testutil::error_code_of;
using testutil::TempDir;

namespace {

void check_equal(const RunConfig& a, const RunConfig& b) {
  CHECK(a.seed == b.seed);
  CHECK(a.threads == b.threads);
  CHECK(a.scene.n_images == b.scene.n_images);
  CHECK(a.scene.points_per_image == b.scene.points_per_image);
  CHECK(a.scene.overlap_band == b.scene.overlap_band);
  CHECK(a.scene.noise_sigma == b.scene.noise_sigma);
  CHECK(a.scene.outlier_fraction == b.scene.outlier_fraction);
  CHECK(a.retrieval.k_words == b.retrieval.k_words);
  CHECK(a.retrieval.p_percent == b.retrieval.p_percent);
  CHECK(a.retrieval.h_top_scale == b.retrieval.h_top_scale);
  CHECK(a.retrieval.top_n == b.retrieval.top_n);
  CHECK(a.retrieval.kmeans_max_iters == b.retrieval.kmeans_max_iters);
  CHECK(a.retrieval.hnsw.max_neighbors == b.retrieval.hnsw.max_neighbors);
  CHECK(a.retrieval.hnsw.ef_construction == b.retrieval.hnsw.ef_construction);
  CHECK(a.retrieval.hnsw.ef_search == b.retrieval.hnsw.ef_search);
  CHECK(a.schedule.size_blk == b.schedule.size_blk);
  CHECK(a.schedule.gpu_images == b.schedule.gpu_images);
  CHECK(a.schedule.gpu_memory_units == b.schedule.gpu_memory_units);
  CHECK(a.schedule.strategy == b.schedule.strategy);
  CHECK(a.hash.tables == b.hash.tables);
  CHECK(a.hash.coarse_bits == b.hash.coarse_bits);
  CHECK(a.hash.fine_bits == b.hash.fine_bits);
  CHECK(a.matching.k_nearest == b.matching.k_nearest);
  CHECK(a.matching.ratio == b.matching.ratio);
  CHECK(a.verify.sao.n_neighbors == b.verify.sao.n_neighbors);
  CHECK(a.verify.sao.score_threshold == b.verify.sao.score_threshold);
  CHECK(a.verify.ransac.max_iters == b.verify.ransac.max_iters);
  CHECK(a.verify.ransac.epipolar_threshold == b.verify.ransac.epipolar_threshold);
  CHECK(a.verify.ransac.confidence == b.verify.ransac.confidence);
  CHECK(a.paths.features_dir == b.paths.features_dir);
  CHECK(a.paths.out_dir == b.paths.out_dir);
}

RunConfig scrambled() {
  RunConfig cfg;
  cfg.seed = 777;
  cfg.threads = 3;
  cfg.scene.n_images = 12;
  cfg.scene.points_per_image = 33;
  cfg.scene.overlap_band = 2;
  cfg.scene.noise_sigma = 0.5;
  cfg.scene.outlier_fraction = 0.125;
  cfg.retrieval.k_words = 16;
  cfg.retrieval.p_percent = 33.5;
  cfg.retrieval.h_top_scale = 11;
  cfg.retrieval.top_n = 9;
  cfg.retrieval.kmeans_max_iters = 4;
  cfg.retrieval.hnsw.max_neighbors = 8;
  cfg.retrieval.hnsw.ef_construction = 55;
  cfg.retrieval.hnsw.ef_search = 31;
  cfg.schedule.size_blk = 5;
  cfg.schedule.gpu_images = 20;
  cfg.schedule.gpu_memory_units = 123456;
  cfg.schedule.strategy = "group_block";
  cfg.hash.tables = 4;
  cfg.hash.coarse_bits = 10;
  cfg.hash.fine_bits = 256;
  cfg.matching.k_nearest = 5;
  cfg.matching.ratio = 0.75;
  cfg.verify.sao.n_neighbors = 9;
  cfg.verify.sao.score_threshold = 0.25;
  cfg.verify.ransac.max_iters = 512;
  cfg.verify.ransac.epipolar_threshold = 1.5;
  cfg.verify.ransac.confidence = 0.95;
  cfg.paths.features_dir = "scratch/features";
  cfg.paths.out_dir = "scratch/out";
  return cfg;
}

}  // namespace

TEST_CASE("defaults match the per-module defaults") {
  const RunConfig cfg;
  CHECK(cfg.seed == 42);
  CHECK(cfg.threads == 0);
  CHECK(cfg.scene.n_images == 100);
  CHECK(cfg.scene.points_per_image == 200);
  CHECK(cfg.scene.overlap_band == 5);

  const HnswParams hnsw;
  CHECK(cfg.retrieval.hnsw.max_neighbors == hnsw.max_neighbors);
  CHECK(cfg.retrieval.hnsw.ef_construction == hnsw.ef_construction);
  CHECK(cfg.retrieval.hnsw.ef_search == hnsw.ef_search);
  CHECK(cfg.retrieval.k_words == 64);
  CHECK(cfg.retrieval.p_percent == 10.0);
  CHECK(cfg.retrieval.h_top_scale == 200);
  CHECK(cfg.retrieval.top_n == 30);

  const HashParams hash;
  CHECK(cfg.hash.tables == hash.tables);
  CHECK(cfg.hash.coarse_bits == hash.coarse_bits);
  CHECK(cfg.hash.fine_bits == hash.fine_bits);
  const MatchParams match;
  CHECK(cfg.matching.k_nearest == match.k_nearest);
  CHECK(cfg.matching.ratio == match.ratio);

  const SaoParams sao;
  CHECK(cfg.verify.sao.n_neighbors == sao.n_neighbors);
  CHECK(cfg.verify.sao.score_threshold == sao.score_threshold);
  const RansacParams ransac;
  CHECK(cfg.verify.ransac.max_iters == ransac.max_iters);
  CHECK(cfg.verify.ransac.epipolar_threshold == ransac.epipolar_threshold);
  CHECK(cfg.verify.ransac.confidence == ransac.confidence);

  CHECK(cfg.schedule.strategy == "mbr");
  CHECK(cfg.validate().empty());
}

TEST_CASE("configs round trip through JSON losslessly") {
  const RunConfig def;
  check_equal(RunConfig::from_json(def.to_json()), def);

  const RunConfig cfg = scrambled();
  CHECK(cfg.validate().empty());
  const std::string text = cfg.to_json();
  const RunConfig back = RunConfig::from_json(text);
  check_equal(back, cfg);
  CHECK(back.to_json() == text);  // byte-stable re-serialization
}

TEST_CASE("partial configs keep defaults for what they omit") {
  const RunConfig cfg = RunConfig::from_json(R"({"retrieval": {"k_words": 8}})");
  CHECK(cfg.retrieval.k_words == 8);
  CHECK(cfg.retrieval.top_n == 30);
  CHECK(cfg.seed == 42);
  CHECK(cfg.schedule.strategy == "mbr");

  const RunConfig empty = RunConfig::from_json("{}");
  check_equal(empty, RunConfig{});
}

TEST_CASE("unknown keys are rejected at every level") {
  for (const char* text : {
           R"({"bogus": 1})",
           R"({"scene": {"bogus": 1}})",
           R"({"retrieval": {"bogus": 1}})",
           R"({"retrieval": {"hnsw": {"bogus": 1}}})",
           R"({"schedule": {"bogus": 1}})",
           R"({"matching": {"bogus": 1}})",
           R"({"verify": {"bogus": 1}})",
           R"({"verify": {"ransac": {"bogus": 1}}})",
           R"({"paths": {"bogus": 1}})",
       }) {
    CAPTURE(text);
    CHECK(error_code_of([&] { RunConfig::from_json(text); }) == "FormatError");
  }
}

TEST_CASE("malformed documents and wrong types are rejected") {
  for (const char* text : {
           "{{",
           "[1, 2]",
           R"("just a string")",
           R"({"seed": -1})",
           R"({"seed": 1.5})",
           R"({"seed": "many"})",
           R"({"threads": 1.5})",
           R"({"scene": 5})",
           R"({"scene": {"noise_sigma": "low"}})",
           R"({"schedule": {"strategy": 3}})",
           R"({"schedule": {"gpu_memory_units": -4}})",
           R"({"paths": {"out_dir": 9}})",
       }) {
    CAPTURE(text);
    CHECK(error_code_of([&] { RunConfig::from_json(text); }) == "FormatError");
  }
}

TEST_CASE("validation names every inconsistent field") {
  RunConfig cfg;
  REQUIRE(cfg.validate().empty());

  cfg.threads = -1;
  cfg.scene.n_images = 0;
  cfg.scene.outlier_fraction = 1.0;
  cfg.retrieval.k_words = 0;
  cfg.retrieval.p_percent = 101.0;
  cfg.retrieval.hnsw.max_neighbors = 1;
  cfg.schedule.size_blk = 1;
  cfg.schedule.strategy = "warp";
  cfg.hash.coarse_bits = 31;
  cfg.matching.ratio = 0.0;
  cfg.verify.sao.n_neighbors = 2;
  cfg.verify.ransac.confidence = 1.0;

  const auto problems = cfg.validate();
  // Twelve fields broken; zeroing n_images also invalidates the default
  // overlap_band, which must stay below it.
  CHECK(problems.size() == 13);
  const auto mentions = [&problems](const std::string& needle) {
    for (const std::string& p : problems)
      if (p.find(needle) != std::string::npos) return true;
    return false;
  };
  CHECK(mentions("threads"));
  CHECK(mentions("n_images"));
  CHECK(mentions("outlier_fraction"));
  CHECK(mentions("k_words"));
  CHECK(mentions("p_percent"));
  CHECK(mentions("max_neighbors"));
  CHECK(mentions("size_blk"));
  CHECK(mentions("strategy"));
  CHECK(mentions("coarse_bits"));
  CHECK(mentions("ratio"));
  CHECK(mentions("n_neighbors"));
  CHECK(mentions("confidence"));
}

TEST_CASE("single-field validation boundaries") {
  {
    RunConfig cfg;
    cfg.scene.overlap_band = cfg.scene.n_images;  // band must leave room
    CHECK(cfg.validate().size() == 1);
  }
  {
    RunConfig cfg;
    cfg.matching.ratio = 1.0;  // inclusive upper bound
    CHECK(cfg.validate().empty());
  }
  {
    // A unit-denominated capacity stands in for the image count.
    RunConfig cfg;
    cfg.schedule.gpu_images = 0;
    cfg.schedule.gpu_memory_units = 50000;
    CHECK(cfg.validate().empty());
  }
  {
    RunConfig cfg;
    cfg.schedule.gpu_images = 0;
    cfg.schedule.gpu_memory_units = 0;
    CHECK(cfg.validate().size() == 1);
  }
  {
    RunConfig cfg;
    cfg.verify.ransac.epipolar_threshold = 0.0;
    CHECK(cfg.validate().size() == 1);
  }
}

TEST_CASE("config files round trip on disk") {
  TempDir dir;
  const RunConfig cfg = scrambled();
  const auto path = dir.file("run.json");
  write_config(path, cfg);
  check_equal(read_config(path), cfg);

  CHECK(error_code_of([&] { read_config(dir.file("absent.json")); }) ==
        "FormatError");
  CHECK(error_code_of([&] { write_config(dir.path(), cfg); }) == "FormatError");

  std::ofstream(dir.file("broken.json")) << "{\"seed\": ";
  CHECK(error_code_of([&] { read_config(dir.file("broken.json")); }) ==
        "FormatError");
}

TEST_CASE("the scene seed is split from the root seed") {
  RunConfig cfg;
  cfg.scene.n_images = 7;
  cfg.scene.overlap_band = 3;

  const SyntheticScene a = cfg.scene_for_seed();
  CHECK(a.n_images == 7);
  CHECK(a.overlap_band == 3);
  CHECK(a.points_per_image == cfg.scene.points_per_image);
  CHECK(a.noise_sigma == cfg.scene.noise_sigma);
  CHECK(a.outlier_fraction == cfg.scene.outlier_fraction);
  CHECK(a.seed != cfg.seed);  // stage-split, not passed through raw

  const SyntheticScene b = cfg.scene_for_seed();
  CHECK(b.seed == a.seed);

  cfg.seed = 43;
  CHECK(cfg.scene_for_seed().seed != a.seed);
}
