#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bandmatch/engine.hpp"
#include "bandmatch/features.hpp"
#include "bandmatch/hashmatch.hpp"
#include "bandmatch/retrieval.hpp"
#include "bandmatch/verify.hpp"

namespace bandmatch {

// Everything a pipeline run needs, with defaults matching the module-level
// defaults. All randomness flows from `seed`, split per stage.
struct RunConfig {
  std::uint64_t seed = 42;
  int threads = 0;  // 0: hardware concurrency, capped at 8

  struct SceneConfig {
    int n_images = 100;
    int points_per_image = 200;
    int overlap_band = 5;
    double noise_sigma = 0.02;
    double outlier_fraction = 0.2;
  } scene;

  struct RetrievalConfig {
    int k_words = 64;
    double p_percent = 10.0;
    int h_top_scale = 200;
    int top_n = 30;
    int kmeans_max_iters = 25;
    HnswParams hnsw;
  } retrieval;

  struct ScheduleConfig {
    int size_blk = 400;
    int gpu_images = 400;                 // capacity as a largest-image count
    std::uint64_t gpu_memory_units = 0;   // capacity in descriptor units (overrides)
    std::string strategy = "mbr";
  } schedule;

  MatchParams matching;  // K and ratio; table shape below
  HashParams hash;       // L tables, m coarse bits, n fine bits

  struct VerifyConfig {
    SaoParams sao;
    RansacParams ransac;
  } verify;

  struct Paths {
    std::string features_dir;
    std::string out_dir;
  } paths;

  // Empty when consistent; one message per problem otherwise.
  std::vector<std::string> validate() const;

  std::string to_json() const;  // lossless round-trip, 2-space indent
  static RunConfig from_json(const std::string& text);  // FormatError on
                                                        // malformed or unknown keys

  SyntheticScene scene_for_seed() const;  // scene params + stage-split seed
};

void write_config(const std::filesystem::path& path, const RunConfig& cfg);
RunConfig read_config(const std::filesystem::path& path);

}  // namespace bandmatch
