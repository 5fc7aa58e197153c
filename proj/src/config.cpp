#include "bandmatch/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include "json.hpp"

#include "bandmatch/mbr.hpp"

namespace bandmatch {
namespace {

using nlohmann::json;

// Unknown keys are configuration typos; refusing them beats silently running
// with a default the caller thought they had overridden.
void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) fail("FormatError", "unknown config key \"" + where + it.key() + "\"");
  }
}

const json* member(const json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

void get_int(const json& j, const char* key, int& out, const std::string& where) {
  if (const json* v = member(j, key)) {
    if (!v->is_number_integer() && !v->is_number_unsigned())
      fail("FormatError", where + key + " must be an integer");
    out = v->get<int>();
  }
}

void get_u64(const json& j, const char* key, std::uint64_t& out, const std::string& where) {
  if (const json* v = member(j, key)) {
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
      fail("FormatError", where + key + " must be a non-negative integer");
    out = v->get<std::uint64_t>();
  }
}

void get_double(const json& j, const char* key, double& out, const std::string& where) {
  if (const json* v = member(j, key)) {
    if (!v->is_number()) fail("FormatError", where + key + " must be a number");
    out = v->get<double>();
  }
}

void get_string(const json& j, const char* key, std::string& out, const std::string& where) {
  if (const json* v = member(j, key)) {
    if (!v->is_string()) fail("FormatError", where + key + " must be a string");
    out = v->get<std::string>();
  }
}

const json* object_member(const json& j, const char* key, const std::string& where) {
  if (const json* v = member(j, key)) {
    if (!v->is_object()) fail("FormatError", where + key + " must be an object");
    return v;
  }
  return nullptr;
}

}  // namespace

std::vector<std::string> RunConfig::validate() const {
  std::vector<std::string> problems;
  const auto require = [&problems](bool ok, const std::string& message) {
    if (!ok) problems.push_back(message);
  };

  require(threads >= 0, "threads must be >= 0 (0 selects hardware concurrency)");

  require(scene.n_images >= 1, "scene.n_images must be >= 1");
  require(scene.points_per_image >= 1, "scene.points_per_image must be >= 1");
  require(scene.overlap_band >= 0 && scene.overlap_band < scene.n_images,
          "scene.overlap_band must be in [0, n_images)");
  require(scene.noise_sigma >= 0.0, "scene.noise_sigma must be >= 0");
  require(scene.outlier_fraction >= 0.0 && scene.outlier_fraction < 1.0,
          "scene.outlier_fraction must be in [0, 1)");

  require(retrieval.k_words >= 1, "retrieval.k_words must be >= 1");
  require(retrieval.p_percent > 0.0 && retrieval.p_percent <= 100.0,
          "retrieval.p_percent must be in (0, 100]");
  require(retrieval.h_top_scale >= 1, "retrieval.h_top_scale must be >= 1");
  require(retrieval.top_n >= 1, "retrieval.top_n must be >= 1");
  require(retrieval.kmeans_max_iters >= 1, "retrieval.kmeans_max_iters must be >= 1");
  require(retrieval.hnsw.max_neighbors >= 2, "retrieval.hnsw.max_neighbors must be >= 2");
  require(retrieval.hnsw.ef_construction >= 1, "retrieval.hnsw.ef_construction must be >= 1");
  require(retrieval.hnsw.ef_search >= 1, "retrieval.hnsw.ef_search must be >= 1");

  require(schedule.size_blk >= 2, "schedule.size_blk must be >= 2");
  require(schedule.gpu_images >= 2 || schedule.gpu_memory_units > 0,
          "schedule.gpu_images must be >= 2 when gpu_memory_units is unset");
  bool strategy_ok = true;
  try {
    strategy_from_string(schedule.strategy);
  } catch (const Error&) {
    strategy_ok = false;
  }
  require(strategy_ok,
          "schedule.strategy must be one of sequential, load_free_list, group_block, mbr");

  require(hash.tables >= 1, "matching.tables must be >= 1");
  require(hash.coarse_bits >= 1 && hash.coarse_bits <= 30,
          "matching.coarse_bits must be in [1, 30]");
  require(hash.fine_bits >= 1 && hash.fine_bits <= 1024,
          "matching.fine_bits must be in [1, 1024]");
  require(matching.k_nearest >= 1, "matching.k_nearest must be >= 1");
  require(matching.ratio > 0.0 && matching.ratio <= 1.0, "matching.ratio must be in (0, 1]");

  require(verify.sao.n_neighbors >= 3, "verify.n_neighbors must be >= 3");
  require(verify.sao.score_threshold >= 0.0 && verify.sao.score_threshold <= 1.0,
          "verify.score_threshold must be in [0, 1]");
  require(verify.ransac.max_iters >= 1, "verify.ransac.max_iters must be >= 1");
  require(verify.ransac.epipolar_threshold > 0.0, "verify.ransac.epipolar_threshold must be > 0");
  require(verify.ransac.confidence > 0.0 && verify.ransac.confidence < 1.0,
          "verify.ransac.confidence must be in (0, 1)");

  return problems;
}

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["threads"] = threads;
  j["scene"] = {
      {"n_images", scene.n_images},
      {"points_per_image", scene.points_per_image},
      {"overlap_band", scene.overlap_band},
      {"noise_sigma", scene.noise_sigma},
      {"outlier_fraction", scene.outlier_fraction},
  };
  j["retrieval"] = {
      {"k_words", retrieval.k_words},
      {"p_percent", retrieval.p_percent},
      {"h_top_scale", retrieval.h_top_scale},
      {"top_n", retrieval.top_n},
      {"kmeans_max_iters", retrieval.kmeans_max_iters},
      {"hnsw",
       {
           {"max_neighbors", retrieval.hnsw.max_neighbors},
           {"ef_construction", retrieval.hnsw.ef_construction},
           {"ef_search", retrieval.hnsw.ef_search},
       }},
  };
  j["schedule"] = {
      {"size_blk", schedule.size_blk},
      {"gpu_images", schedule.gpu_images},
      {"gpu_memory_units", schedule.gpu_memory_units},
      {"strategy", schedule.strategy},
  };
  j["matching"] = {
      {"tables", hash.tables},
      {"coarse_bits", hash.coarse_bits},
      {"fine_bits", hash.fine_bits},
      {"k_nearest", matching.k_nearest},
      {"ratio", matching.ratio},
  };
  j["verify"] = {
      {"n_neighbors", verify.sao.n_neighbors},
      {"score_threshold", verify.sao.score_threshold},
      {"ransac",
       {
           {"max_iters", verify.ransac.max_iters},
           {"epipolar_threshold", verify.ransac.epipolar_threshold},
           {"confidence", verify.ransac.confidence},
       }},
  };
  j["paths"] = {
      {"features_dir", paths.features_dir},
      {"out_dir", paths.out_dir},
  };
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail("FormatError", std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail("FormatError", "config root must be a JSON object");

  RunConfig cfg;
  check_keys(j, "", {"seed", "threads", "scene", "retrieval", "schedule", "matching",
                     "verify", "paths"});
  get_u64(j, "seed", cfg.seed, "");
  get_int(j, "threads", cfg.threads, "");

  if (const json* s = object_member(j, "scene", "")) {
    check_keys(*s, "scene.",
               {"n_images", "points_per_image", "overlap_band", "noise_sigma",
                "outlier_fraction"});
    get_int(*s, "n_images", cfg.scene.n_images, "scene.");
    get_int(*s, "points_per_image", cfg.scene.points_per_image, "scene.");
    get_int(*s, "overlap_band", cfg.scene.overlap_band, "scene.");
    get_double(*s, "noise_sigma", cfg.scene.noise_sigma, "scene.");
    get_double(*s, "outlier_fraction", cfg.scene.outlier_fraction, "scene.");
  }

  if (const json* r = object_member(j, "retrieval", "")) {
    check_keys(*r, "retrieval.",
               {"k_words", "p_percent", "h_top_scale", "top_n", "kmeans_max_iters", "hnsw"});
    get_int(*r, "k_words", cfg.retrieval.k_words, "retrieval.");
    get_double(*r, "p_percent", cfg.retrieval.p_percent, "retrieval.");
    get_int(*r, "h_top_scale", cfg.retrieval.h_top_scale, "retrieval.");
    get_int(*r, "top_n", cfg.retrieval.top_n, "retrieval.");
    get_int(*r, "kmeans_max_iters", cfg.retrieval.kmeans_max_iters, "retrieval.");
    if (const json* h = object_member(*r, "hnsw", "retrieval.")) {
      check_keys(*h, "retrieval.hnsw.", {"max_neighbors", "ef_construction", "ef_search"});
      get_int(*h, "max_neighbors", cfg.retrieval.hnsw.max_neighbors, "retrieval.hnsw.");
      get_int(*h, "ef_construction", cfg.retrieval.hnsw.ef_construction, "retrieval.hnsw.");
      get_int(*h, "ef_search", cfg.retrieval.hnsw.ef_search, "retrieval.hnsw.");
    }
  }

  if (const json* s = object_member(j, "schedule", "")) {
    check_keys(*s, "schedule.", {"size_blk", "gpu_images", "gpu_memory_units", "strategy"});
    get_int(*s, "size_blk", cfg.schedule.size_blk, "schedule.");
    get_int(*s, "gpu_images", cfg.schedule.gpu_images, "schedule.");
    get_u64(*s, "gpu_memory_units", cfg.schedule.gpu_memory_units, "schedule.");
    get_string(*s, "strategy", cfg.schedule.strategy, "schedule.");
  }

  if (const json* m = object_member(j, "matching", "")) {
    check_keys(*m, "matching.", {"tables", "coarse_bits", "fine_bits", "k_nearest", "ratio"});
    get_int(*m, "tables", cfg.hash.tables, "matching.");
    get_int(*m, "coarse_bits", cfg.hash.coarse_bits, "matching.");
    get_int(*m, "fine_bits", cfg.hash.fine_bits, "matching.");
    get_int(*m, "k_nearest", cfg.matching.k_nearest, "matching.");
    get_double(*m, "ratio", cfg.matching.ratio, "matching.");
  }

  if (const json* v = object_member(j, "verify", "")) {
    check_keys(*v, "verify.", {"n_neighbors", "score_threshold", "ransac"});
    get_int(*v, "n_neighbors", cfg.verify.sao.n_neighbors, "verify.");
    get_double(*v, "score_threshold", cfg.verify.sao.score_threshold, "verify.");
    if (const json* r = object_member(*v, "ransac", "verify.")) {
      check_keys(*r, "verify.ransac.", {"max_iters", "epipolar_threshold", "confidence"});
      get_int(*r, "max_iters", cfg.verify.ransac.max_iters, "verify.ransac.");
      get_double(*r, "epipolar_threshold", cfg.verify.ransac.epipolar_threshold,
                 "verify.ransac.");
      get_double(*r, "confidence", cfg.verify.ransac.confidence, "verify.ransac.");
    }
  }

  if (const json* p = object_member(j, "paths", "")) {
    check_keys(*p, "paths.", {"features_dir", "out_dir"});
    get_string(*p, "features_dir", cfg.paths.features_dir, "paths.");
    get_string(*p, "out_dir", cfg.paths.out_dir, "paths.");
  }

  return cfg;
}

SyntheticScene RunConfig::scene_for_seed() const {
  SyntheticScene s;
  s.n_images = scene.n_images;
  s.points_per_image = scene.points_per_image;
  s.overlap_band = scene.overlap_band;
  s.noise_sigma = scene.noise_sigma;
  s.outlier_fraction = scene.outlier_fraction;
  s.seed = seed_for(seed, "scene");
  return s;
}

void write_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) fail("FormatError", "cannot open config file for writing: " + path.string());
  os << cfg.to_json() << '\n';
  if (!os) fail("FormatError", "write failed: " + path.string());
}

RunConfig read_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail("FormatError", "cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return RunConfig::from_json(buf.str());
}

}  // namespace bandmatch
