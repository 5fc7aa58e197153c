// Single-binary command-line front end. Subcommands cover the pipeline stages
// (gen, retrieve, schedule, match, run) plus reporting (compare, stats). All
// stages draw their randomness from one root seed, so any artifact can be
// reproduced from the config echo it carries.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bandmatch/config.hpp"
#include "bandmatch/engine.hpp"
#include "bandmatch/features.hpp"
#include "bandmatch/hashmatch.hpp"
#include "bandmatch/mbr.hpp"
#include "bandmatch/retrieval.hpp"
#include "bandmatch/view_graph.hpp"

namespace fs = std::filesystem;
using namespace bandmatch;

namespace {

// Raised for problems a user fixes in the config file, not in the inputs;
// mapped to exit code 2 instead of the module-error exit code 1.
struct ConfigProblems {
  std::vector<std::string> problems;
};

void require_config(bool ok, const std::string& problem) {
  if (!ok) throw ConfigProblems{{problem}};
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return std::clamp(static_cast<int>(hw == 0 ? 1 : hw), 1, 8);
}

std::string feature_file_name(ImageId id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "image_%06llu.feat",
                static_cast<unsigned long long>(id));
  return buf;
}

std::map<ImageId, FeatureSet> load_features_dir(const fs::path& dir) {
  if (!fs::is_directory(dir))
    fail("FormatError", "features directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".feat")
      files.push_back(entry.path());
  if (files.empty()) fail("EmptyInput", "no .feat files in " + dir.string());
  std::sort(files.begin(), files.end());
  std::map<ImageId, FeatureSet> out;
  for (const fs::path& p : files) {
    FeatureSet set = read_features(p);
    const ImageId id = set.image_id;
    if (!out.emplace(id, std::move(set)).second)
      fail("FormatError",
           "duplicate image id " + std::to_string(id) + " in " + dir.string());
  }
  return out;
}

std::vector<FeatureSet> features_by_id(const std::map<ImageId, FeatureSet>& m) {
  std::vector<FeatureSet> v;
  v.reserve(m.size());
  for (const auto& [id, set] : m) v.push_back(set);
  return v;
}

// Budget in image counts. gpu_memory_units, when set, converts to an image
// budget against the largest feature set so the unit-level capacity is safe
// for any combination of resident images. Block size is clamped to half the
// device budget, the largest value the block generator accepts.
ScheduleBudget resolve_budget(const RunConfig& cfg,
                              const std::map<ImageId, FeatureSet>& features) {
  int gpu_images = cfg.schedule.gpu_images;
  if (cfg.schedule.gpu_memory_units > 0) {
    std::uint64_t largest = 0;
    for (const auto& [id, set] : features)
      largest = std::max<std::uint64_t>(largest, set.size());
    if (largest == 0) largest = 1;
    gpu_images = static_cast<int>(
        std::min<std::uint64_t>(cfg.schedule.gpu_memory_units / largest, 1 << 20));
  }
  if (gpu_images < 2)
    fail("BudgetTooSmall", "device budget holds fewer than two images");
  ScheduleBudget budget;
  budget.size_gpu = gpu_images;
  budget.size_blk = std::clamp(cfg.schedule.size_blk, 1, gpu_images / 2);
  return budget;
}

std::uint64_t arena_capacity(const RunConfig& cfg,
                             const std::map<ImageId, FeatureSet>& features,
                             int size_gpu) {
  if (cfg.schedule.gpu_memory_units > 0) return cfg.schedule.gpu_memory_units;
  return arena_units_for(features, size_gpu);
}

nlohmann::json config_json(const RunConfig& cfg) {
  return nlohmann::json::parse(cfg.to_json());
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("FormatError", "cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
  os.flush();
  if (!os) fail("FormatError", "write failed for " + path.string());
}

void report_timing(const PipelineMetrics& m) {
  std::fprintf(stderr, "wall_time_s=%.3f pairs_per_second=%.1f\n", m.wall_time_s,
               m.pairs_per_second);
}

struct RetrievalArtifacts {
  Codebook codebook;
  ViewGraph graph;
};

// Shared by cmd_retrieve and cmd_run: training-pool sampling, codebook
// training, and neighbor selection, each on its own seed stream.
RetrievalArtifacts build_retrieval(const RunConfig& cfg,
                                   const std::vector<FeatureSet>& features) {
  const std::vector<Descriptor> pool = select_training_descriptors(
      features, cfg.retrieval.p_percent, cfg.retrieval.h_top_scale,
      seed_for(cfg.seed, "retrieval.sample"));
  RetrievalArtifacts art;
  art.codebook = train_codebook(pool, cfg.retrieval.k_words,
                                cfg.retrieval.kmeans_max_iters,
                                seed_for(cfg.seed, "retrieval.kmeans"));
  art.graph = select_pairs(features, art.codebook, cfg.retrieval.top_n,
                           cfg.retrieval.hnsw, cfg.seed);
  return art;
}

void cmd_gen(const RunConfig& cfg) {
  require_config(!cfg.paths.features_dir.empty(), "paths.features_dir must be set for gen");
  const fs::path dir = cfg.paths.features_dir;
  fs::create_directories(dir);

  const SyntheticDataset data = generate_synthetic(cfg.scene_for_seed());
  std::size_t n_features = 0;
  for (const FeatureSet& set : data.images) {
    write_features(dir / feature_file_name(set.image_id), set);
    n_features += set.size();
  }
  write_pairs(dir / "true_pairs.txt", data.true_pairs);
  write_correspondences(dir / "true_correspondences.txt", data.true_correspondences);
  write_config(dir / "gen_config.json", cfg);

  std::fprintf(stderr, "generated %zu images, %zu features, %zu true pairs\n",
               data.images.size(), n_features, data.true_pairs.size());
}

void cmd_retrieve(const RunConfig& cfg) {
  require_config(!cfg.paths.features_dir.empty(),
                 "paths.features_dir must be set for retrieve");
  require_config(!cfg.paths.out_dir.empty(), "paths.out_dir must be set for retrieve");
  const auto features = load_features_dir(cfg.paths.features_dir);
  const auto ordered = features_by_id(features);

  const RetrievalArtifacts art = build_retrieval(cfg, ordered);

  const fs::path out = cfg.paths.out_dir;
  fs::create_directories(out);
  write_codebook(out / "codebook.bmcb", art.codebook);
  write_view_graph(out / "view_graph.mtx", art.graph);
  write_config(out / "retrieve_config.json", cfg);

  std::printf("images=%d pairs=%zu\n", art.graph.size(), art.graph.edge_count());
}

void cmd_schedule(const RunConfig& cfg, const std::string& graph_arg) {
  require_config(!cfg.paths.out_dir.empty(), "paths.out_dir must be set for schedule");
  const fs::path out = cfg.paths.out_dir;
  const fs::path graph_path =
      graph_arg.empty() ? out / "view_graph.mtx" : fs::path(graph_arg);
  const ViewGraph g = read_view_graph(graph_path);

  std::map<ImageId, FeatureSet> features;
  if (cfg.schedule.gpu_memory_units > 0) {
    // Unit budgets need per-image sizes to place an image-count bound.
    require_config(!cfg.paths.features_dir.empty(),
                   "paths.features_dir must be set when gpu_memory_units is used");
    features = load_features_dir(cfg.paths.features_dir);
  }
  const ScheduleBudget budget = resolve_budget(cfg, features);
  const SchedulePlan plan =
      plan_baseline(g, strategy_from_string(cfg.schedule.strategy), budget);

  fs::create_directories(out);
  const std::string echo = cfg.to_json();
  write_plan(out / "plan.json", plan, &echo);

  const int before = bandwidth(g);
  const int after = plan.iterations.empty() ? before : plan.iterations.front().bandwidth_after;
  std::printf("bandwidth before=%d after=%d\n", before, after);
  std::printf("strategy=%s iterations=%zu pairs=%zu\n", plan.strategy.c_str(),
              plan.iterations.size(), plan.pair_count());
}

void cmd_match(const RunConfig& cfg, const std::string& plan_arg) {
  require_config(!cfg.paths.features_dir.empty(), "paths.features_dir must be set for match");
  require_config(!cfg.paths.out_dir.empty(), "paths.out_dir must be set for match");
  const fs::path out = cfg.paths.out_dir;
  const fs::path plan_path = plan_arg.empty() ? out / "plan.json" : fs::path(plan_arg);

  const auto features = load_features_dir(cfg.paths.features_dir);
  const SchedulePlan plan = read_plan(plan_path);
  const HashFunctions hf =
      make_hash_functions(seed_for(cfg.seed, "matching"), cfg.hash);
  DeviceArena arena(arena_capacity(cfg, features, plan.budget.size_gpu));

  ExecuteOptions opts;
  opts.match = cfg.matching;
  opts.verify.enabled = false;
  opts.threads = resolve_threads(cfg.threads);
  opts.seed = cfg.seed;
  const ExecutionResult result = execute_plan(plan, features, hf, arena, opts);

  fs::create_directories(out);
  write_matches_binary(out / "matches.bin", result.matches);
  const std::string echo = cfg.to_json();
  write_metrics(out / "metrics.json", result.metrics, &echo);
  write_config(out / "match_config.json", cfg);

  std::printf("pairs=%zu initial_matches=%zu uploads=%llu\n",
              result.metrics.pairs_matched, result.metrics.initial_matches,
              static_cast<unsigned long long>(result.metrics.uploads));
  report_timing(result.metrics);
}

void cmd_run(const RunConfig& cfg) {
  require_config(!cfg.paths.features_dir.empty(), "paths.features_dir must be set for run");
  require_config(!cfg.paths.out_dir.empty(), "paths.out_dir must be set for run");
  const fs::path out = cfg.paths.out_dir;
  fs::create_directories(out);
  const std::string echo = cfg.to_json();

  const auto features = load_features_dir(cfg.paths.features_dir);
  const auto ordered = features_by_id(features);

  RetrievalArtifacts art = build_retrieval(cfg, ordered);
  write_codebook(out / "codebook.bmcb", art.codebook);
  write_view_graph(out / "view_graph.mtx", art.graph);

  const ScheduleBudget budget = resolve_budget(cfg, features);
  const SchedulePlan plan =
      plan_baseline(art.graph, strategy_from_string(cfg.schedule.strategy), budget);
  write_plan(out / "plan.json", plan, &echo);

  const HashFunctions hf =
      make_hash_functions(seed_for(cfg.seed, "matching"), cfg.hash);
  DeviceArena arena(arena_capacity(cfg, features, plan.budget.size_gpu));

  ExecuteOptions opts;
  opts.match = cfg.matching;
  opts.verify.enabled = true;
  opts.verify.sao = cfg.verify.sao;
  opts.verify.ransac = cfg.verify.ransac;
  opts.threads = resolve_threads(cfg.threads);
  opts.seed = cfg.seed;
  const ExecutionResult result = execute_plan(plan, features, hf, arena, opts, &art.graph);

  write_matches_binary(out / "matches.bin", result.matches);
  write_pair_outcomes(out / "pair_stats.jsonl", result.outcomes);
  write_metrics(out / "metrics.json", result.metrics, &echo);
  write_config(out / "run_config.json", cfg);

  std::printf("pairs_matched=%zu verified_matches=%zu uploads=%llu\n",
              result.metrics.pairs_matched, result.metrics.verified_matches,
              static_cast<unsigned long long>(result.metrics.uploads));
  report_timing(result.metrics);
}

void cmd_compare(const RunConfig& cfg, const std::string& graph_arg) {
  require_config(!cfg.paths.features_dir.empty(),
                 "paths.features_dir must be set for compare");
  require_config(!cfg.paths.out_dir.empty(), "paths.out_dir must be set for compare");
  const fs::path out = cfg.paths.out_dir;
  const fs::path graph_path =
      graph_arg.empty() ? out / "view_graph.mtx" : fs::path(graph_arg);

  const ViewGraph g = read_view_graph(graph_path);
  const auto features = load_features_dir(cfg.paths.features_dir);
  const ScheduleBudget budget = resolve_budget(cfg, features);
  const HashFunctions hf =
      make_hash_functions(seed_for(cfg.seed, "matching"), cfg.hash);

  const StrategyKind kinds[] = {StrategyKind::kSequential, StrategyKind::kLoadFreeList,
                                StrategyKind::kGroupBlock, StrategyKind::kMbr};
  nlohmann::json rows = nlohmann::json::array();
  std::string csv = "strategy,uploads,units_uploaded,utilization_proxy,pairs\n";
  std::printf("%-16s %10s %14s %18s %8s\n", "strategy", "uploads", "units_uploaded",
              "utilization_proxy", "pairs");
  for (StrategyKind kind : kinds) {
    const SchedulePlan plan = plan_baseline(g, kind, budget);
    DeviceArena arena(arena_capacity(cfg, features, budget.size_gpu));
    ExecuteOptions opts;
    opts.match = cfg.matching;
    opts.verify.enabled = false;
    opts.threads = resolve_threads(cfg.threads);
    opts.seed = cfg.seed;
    const ExecutionResult result = execute_plan(plan, features, hf, arena, opts);
    const PipelineMetrics& m = result.metrics;

    rows.push_back({{"strategy", m.strategy},
                    {"uploads", m.uploads},
                    {"units_uploaded", m.units_uploaded},
                    {"utilization_proxy", m.utilization_proxy},
                    {"pairs", m.pairs_matched}});
    char line[160];
    std::snprintf(line, sizeof(line), "%s,%llu,%llu,%.6f,%zu\n", m.strategy.c_str(),
                  static_cast<unsigned long long>(m.uploads),
                  static_cast<unsigned long long>(m.units_uploaded),
                  m.utilization_proxy, m.pairs_matched);
    csv += line;
    std::printf("%-16s %10llu %14llu %18.6f %8zu\n", m.strategy.c_str(),
                static_cast<unsigned long long>(m.uploads),
                static_cast<unsigned long long>(m.units_uploaded),
                m.utilization_proxy, m.pairs_matched);
  }

  fs::create_directories(out);
  std::ofstream csv_os(out / "compare.csv", std::ios::trunc);
  if (!csv_os) fail("FormatError", "cannot open compare.csv for writing");
  csv_os << csv;
  csv_os.flush();
  if (!csv_os) fail("FormatError", "write failed for compare.csv");
  write_json_file(out / "compare.json",
                  {{"config", config_json(cfg)}, {"strategies", rows}});
}

void cmd_stats(const RunConfig& cfg, const std::string& in_arg) {
  require_config(!cfg.paths.out_dir.empty(), "paths.out_dir must be set for stats");
  const fs::path out = cfg.paths.out_dir;
  const fs::path in_path = in_arg.empty() ? out / "pair_stats.jsonl" : fs::path(in_arg);

  std::ifstream is(in_path);
  if (!is) fail("FormatError", "cannot open " + in_path.string() + " for reading");

  std::size_t pairs = 0, initial = 0, after_sao = 0, inliers = 0;
  std::size_t no_model = 0, passthrough = 0, fallback = 0;
  double ratio_sum = 0.0, ratio_min = 1.0, ratio_max = 0.0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail("FormatError", "bad stats line in " + in_path.string() + ": " + e.what());
    }
    try {
      ++pairs;
      initial += j.at("initial").get<std::size_t>();
      after_sao += j.at("after_sao").get<std::size_t>();
      inliers += j.at("inliers").get<std::size_t>();
      const double r = j.at("inlier_ratio").get<double>();
      ratio_sum += r;
      ratio_min = std::min(ratio_min, r);
      ratio_max = std::max(ratio_max, r);
      no_model += j.at("no_model").get<bool>() ? 1 : 0;
      passthrough += j.at("sao_passthrough").get<bool>() ? 1 : 0;
      fallback += j.at("delaunay_fallback").get<bool>() ? 1 : 0;
    } catch (const nlohmann::json::exception& e) {
      fail("FormatError", "stats line missing fields: " + std::string(e.what()));
    }
  }
  if (pairs == 0) fail("EmptyInput", "no pair records in " + in_path.string());

  const double mean_ratio = ratio_sum / static_cast<double>(pairs);
  const double mean_inliers = static_cast<double>(inliers) / static_cast<double>(pairs);

  fs::create_directories(out);
  write_json_file(out / "stats.json",
                  {{"config", config_json(cfg)},
                   {"pairs", pairs},
                   {"initial_matches", initial},
                   {"after_sao", after_sao},
                   {"inliers", inliers},
                   {"mean_inliers_per_pair", mean_inliers},
                   {"mean_inlier_ratio", mean_ratio},
                   {"min_inlier_ratio", ratio_min},
                   {"max_inlier_ratio", ratio_max},
                   {"no_model_pairs", no_model},
                   {"sao_passthrough_pairs", passthrough},
                   {"delaunay_fallback_pairs", fallback}});

  std::printf("pairs=%zu inliers=%zu mean_inlier_ratio=%.4f min=%.4f max=%.4f\n", pairs,
              inliers, mean_ratio, ratio_min, ratio_max);
  std::printf("no_model=%zu sao_passthrough=%zu delaunay_fallback=%zu\n", no_model,
              passthrough, fallback);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"block-scheduled cascade-hashing feature matching pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed_override = 0;
  int threads_override = 0;
  std::string features_override, out_override, graph_arg, plan_arg, in_arg;
  std::string strategy_override;

  app.add_option("--config", config_path, "JSON config file");
  CLI::Option* seed_opt = app.add_option("--seed", seed_override, "root seed override");
  CLI::Option* threads_opt =
      app.add_option("--threads", threads_override, "worker thread cap (0 = auto)");
  CLI::Option* feat_opt =
      app.add_option("--features-dir", features_override, "feature file directory");
  CLI::Option* out_opt = app.add_option("--out-dir", out_override, "output directory");
  CLI::Option* strat_opt = app.add_option(
      "--strategy", strategy_override, "sequential | load_free_list | group_block | mbr");

  CLI::App* c_gen = app.add_subcommand("gen", "generate a synthetic scene");
  CLI::App* c_retrieve =
      app.add_subcommand("retrieve", "train codebook and select match pairs");
  CLI::App* c_schedule = app.add_subcommand("schedule", "plan the block schedule");
  c_schedule->add_option("--graph", graph_arg, "view graph file (.mtx)");
  CLI::App* c_match = app.add_subcommand("match", "execute a plan, matching only");
  c_match->add_option("--plan", plan_arg, "schedule plan file (.json)");
  CLI::App* c_run =
      app.add_subcommand("run", "full pipeline: retrieve, schedule, match, verify");
  CLI::App* c_compare =
      app.add_subcommand("compare", "run all four schedule strategies on one graph");
  c_compare->add_option("--graph", graph_arg, "view graph file (.mtx)");
  CLI::App* c_stats = app.add_subcommand("stats", "summarize per-pair verification stats");
  c_stats->add_option("--in", in_arg, "pair stats file (.jsonl)");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = read_config(config_path);
    if (seed_opt->count()) cfg.seed = seed_override;
    if (threads_opt->count()) cfg.threads = threads_override;
    if (feat_opt->count()) cfg.paths.features_dir = features_override;
    if (out_opt->count()) cfg.paths.out_dir = out_override;
    if (strat_opt->count()) cfg.schedule.strategy = strategy_override;

    const std::vector<std::string> problems = cfg.validate();
    if (!problems.empty()) throw ConfigProblems{problems};

    if (c_gen->parsed()) cmd_gen(cfg);
    if (c_retrieve->parsed()) cmd_retrieve(cfg);
    if (c_schedule->parsed()) cmd_schedule(cfg, graph_arg);
    if (c_match->parsed()) cmd_match(cfg, plan_arg);
    if (c_run->parsed()) cmd_run(cfg);
    if (c_compare->parsed()) cmd_compare(cfg, graph_arg);
    if (c_stats->parsed()) cmd_stats(cfg, in_arg);
    return 0;
  } catch (const ConfigProblems& cp) {
    const nlohmann::json j = {{"error", "InvalidConfig"}, {"problems", cp.problems}};
    std::cerr << j.dump() << '\n';
    return 2;
  } catch (const Error& e) {
    // what() is "code: message"; strip the code prefix for the message field.
    std::string message = e.what();
    const std::string prefix = e.code() + ": ";
    if (message.rfind(prefix, 0) == 0) message = message.substr(prefix.size());
    const nlohmann::json j = {{"error", e.code()}, {"message", message}};
    std::cerr << j.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    const nlohmann::json j = {{"error", "Internal"}, {"message", e.what()}};
    std::cerr << j.dump() << '\n';
    return 1;
  }
}
