#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "bandmatch/engine.hpp"
#include "bandmatch/features.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace bandmatch;
using testutil::error_code_of;
using testutil::TempDir;

namespace {

// Replays a plan against a unit-size arena: every upload/evict directive runs
// under real capacity accounting, so a budget violation or a bogus eviction
// throws. Returns the upload count.
std::uint64_t replay_uploads(const SchedulePlan& plan, int size_gpu) {
  DeviceArena arena(static_cast<std::uint64_t>(size_gpu));
  for (const ScheduleIteration& iteration : plan.iterations) {
    for (const BlockRow& row : iteration.rows) {
      std::set<ImageId> needed(row.row_images.begin(), row.row_images.end());
      for (const ScheduleBlock& blk : row.blocks)
        needed.insert(blk.col_images.begin(), blk.col_images.end());
      for (ImageId id : needed) arena.upload(id, 1);
      for (ImageId id : row.evict_after) arena.evict(id);
    }
  }
  CHECK(arena.occupancy() == 0);  // every strategy hands the arena back empty
  return arena.uploads();
}

std::map<ImageId, FeatureSet> band_features(int n, int base_count) {
  std::map<ImageId, FeatureSet> features;
  for (int i = 0; i < n; ++i)
    features.emplace(i, oracle::tiny_features(i, base_count + i, 500 + i));
  return features;
}

// True iff index i belongs to the scattered minority in translated_pair:
// every seventh feature, so the troublemakers spread across the grid instead
// of wiping out a whole neighborhood.
bool is_scattered(int i) { return i % 7 == 3; }

// Two images sharing every descriptor. Query keypoints sit on a jittered
// grid; train keypoints follow a fixed translation except for the scattered
// minority, which lands uniformly and so breaks the geometry.
std::pair<FeatureSet, FeatureSet> translated_pair(int n_total,
                                                  std::mt19937_64& rng) {
  std::uniform_real_distribution<float> jitter(-4.0f, 4.0f);
  std::uniform_real_distribution<float> sx(0.0f, 360.0f), sy(0.0f, 240.0f);
  std::normal_distribution<float> gauss(0.0f, 1.0f);

  FeatureSet a, b;
  a.image_id = 1;
  b.image_id = 2;
  for (int i = 0; i < n_total; ++i) {
    std::array<float, kDescriptorDim> raw{};
    for (float& x : raw) x = gauss(rng);
    const Descriptor d = normalize(raw);
    a.descriptors.push_back(d);
    b.descriptors.push_back(d);

    Keypoint qk;
    qk.x = static_cast<float>(i % 10) * 40.0f + jitter(rng);
    qk.y = static_cast<float>(i / 10) * 40.0f + jitter(rng);
    a.keypoints.push_back(qk);

    Keypoint tk;
    if (is_scattered(i)) {
      tk.x = sx(rng);
      tk.y = sy(rng);
    } else {
      tk.x = qk.x + 37.0f;
      tk.y = qk.y + 21.0f;
    }
    b.keypoints.push_back(tk);
  }
  return {a, b};
}

void check_same_results(const ExecutionResult& x, const ExecutionResult& y) {
  REQUIRE(x.matches.size() == y.matches.size());
  for (std::size_t i = 0; i < x.matches.size(); ++i) {
    CHECK(x.matches[i].query_image == y.matches[i].query_image);
    CHECK(x.matches[i].train_image == y.matches[i].train_image);
    CHECK(x.matches[i].stage == y.matches[i].stage);
    CHECK(x.matches[i].matches == y.matches[i].matches);
  }
  REQUIRE(x.outcomes.size() == y.outcomes.size());
  for (std::size_t i = 0; i < x.outcomes.size(); ++i) {
    CHECK(x.outcomes[i].pair == y.outcomes[i].pair);
    CHECK(x.outcomes[i].initial == y.outcomes[i].initial);
    CHECK(x.outcomes[i].after_sao == y.outcomes[i].after_sao);
    CHECK(x.outcomes[i].inliers == y.outcomes[i].inliers);
    CHECK(x.outcomes[i].ransac_iterations == y.outcomes[i].ransac_iterations);
    CHECK(x.outcomes[i].no_model == y.outcomes[i].no_model);
  }
  CHECK(x.metrics.pairs_matched == y.metrics.pairs_matched);
  CHECK(x.metrics.initial_matches == y.metrics.initial_matches);
  CHECK(x.metrics.verified_matches == y.metrics.verified_matches);
  CHECK(x.metrics.uploads == y.metrics.uploads);
  CHECK(x.metrics.evictions == y.metrics.evictions);
  CHECK(x.metrics.units_uploaded == y.metrics.units_uploaded);
  CHECK(x.metrics.peak_occupancy == y.metrics.peak_occupancy);
}

}  // namespace

TEST_CASE("arena accounting follows uploads and evictions") {
  DeviceArena arena(10);
  CHECK(arena.capacity() == 10);
  arena.upload(1, 4);
  arena.upload(2, 4);
  CHECK(arena.occupancy() == 8);
  CHECK(arena.uploads() == 2);
  CHECK(arena.units_uploaded() == 8);
  CHECK(arena.resident(1));
  CHECK(arena.resident_count() == 2);

  // A third image would overflow; nothing changes on the failed attempt.
  CHECK(error_code_of([&] { arena.upload(3, 4); }) == "CapacityExceeded");
  CHECK(arena.occupancy() == 8);
  CHECK(arena.uploads() == 2);

  // Re-uploading a resident image is a silent no-op.
  arena.upload(2, 4);
  CHECK(arena.uploads() == 2);
  CHECK(arena.units_uploaded() == 8);

  arena.evict(1);
  CHECK(arena.occupancy() == 4);
  CHECK(arena.evictions() == 1);
  CHECK(!arena.resident(1));
  CHECK(error_code_of([&] { arena.evict(1); }) == "NotResident");

  arena.upload(3, 4);
  CHECK(arena.occupancy() == 8);
  CHECK(arena.peak_occupancy() == 8);

  // Upload, evict, upload again: the counter sees both uploads.
  arena.evict(3);
  arena.upload(3, 4);
  CHECK(arena.uploads() == 4);
  CHECK(arena.units_uploaded() == 16);
  CHECK(arena.peak_occupancy() == 8);
}

TEST_CASE("strategy names round trip") {
  for (StrategyKind kind : {StrategyKind::kSequential, StrategyKind::kLoadFreeList,
                            StrategyKind::kGroupBlock, StrategyKind::kMbr})
    CHECK(strategy_from_string(to_string(kind)) == kind);
  CHECK(to_string(StrategyKind::kMbr) == "mbr");
  CHECK(to_string(StrategyKind::kLoadFreeList) == "load_free_list");
  CHECK(error_code_of([] { strategy_from_string("turbo"); }) == "InvalidArgument");
}

TEST_CASE("the per-pair baseline loads two images for every pair") {
  ViewGraph g = make_view_graph({0, 1, 2, 3}, {{0, 1}, {1, 2}, {2, 3}});
  const SchedulePlan plan = plan_baseline(g, StrategyKind::kSequential, {1, 2});
  CHECK(plan.strategy == "sequential");
  REQUIRE(plan.iterations.size() == 1);
  REQUIRE(plan.iterations[0].rows.size() == 3);
  for (const BlockRow& row : plan.iterations[0].rows) {
    CHECK(row.row_images.size() == 2);
    CHECK(row.evict_after.size() == 2);  // both gone right after the match
    REQUIRE(row.blocks.size() == 1);
    CHECK(row.blocks[0].pairs.size() == 1);
  }
  CHECK(oracle::covers_exactly_once(plan, g));
  CHECK(replay_uploads(plan, 2) == 6);  // two uploads per pair, nothing cached

  CHECK(error_code_of([&] {
          plan_baseline(g, StrategyKind::kSequential, {1, 1});
        }) == "BudgetTooSmall");
}

TEST_CASE("edgeless and empty graphs at the planner boundary") {
  ViewGraph isolated(std::vector<ImageId>{4, 5, 6});
  for (StrategyKind kind : {StrategyKind::kSequential, StrategyKind::kLoadFreeList,
                            StrategyKind::kGroupBlock}) {
    const SchedulePlan plan = plan_baseline(isolated, kind, {1, 4});
    CHECK(plan.iterations.empty());
    CHECK(plan.pair_count() == 0);
  }
  CHECK(error_code_of([] {
          plan_baseline(ViewGraph{}, StrategyKind::kSequential, {1, 4});
        }) == "EmptyGraph");
  CHECK(error_code_of([&] {
          plan_baseline(isolated, StrategyKind::kGroupBlock, {1, 1});
        }) == "BudgetTooSmall");
  CHECK(error_code_of([&] {
          plan_baseline(isolated, StrategyKind::kLoadFreeList, {1, 1});
        }) == "BudgetTooSmall");
}

TEST_CASE("the load/free list frees images as their pairs run out") {
  // Path 0-1-2-3 at capacity 2: each image can be loaded exactly once.
  ViewGraph path = make_view_graph({0, 1, 2, 3}, {{0, 1}, {1, 2}, {2, 3}});
  const SchedulePlan plan = plan_baseline(path, StrategyKind::kLoadFreeList, {1, 2});
  CHECK(plan.strategy == "load_free_list");
  CHECK(oracle::covers_exactly_once(plan, path));
  CHECK(replay_uploads(plan, 2) == 4);

  // A hub with more partners than the window forces chunked visits; the hub
  // stays resident while leaves cycle through.
  ViewGraph star = make_view_graph({0, 1, 2, 3, 4, 5},
                                   {{0, 5}, {1, 5}, {2, 5}, {3, 5}, {4, 5}});
  const SchedulePlan sp = plan_baseline(star, StrategyKind::kLoadFreeList, {1, 2});
  CHECK(oracle::covers_exactly_once(sp, star));
  CHECK(replay_uploads(sp, 2) == 6);  // five leaves plus the hub, once each
}

TEST_CASE("every strategy covers every pair exactly once within budget") {
  std::mt19937_64 rng(424242);
  std::vector<ViewGraph> graphs;
  for (int t = 0; t < 12; ++t) {
    const int n = 2 + static_cast<int>(rng() % 39);
    std::uniform_real_distribution<double> dens(0.05, 0.3);
    graphs.push_back(oracle::random_graph(n, dens(rng), rng));
  }
  graphs.push_back(oracle::band_graph(30, 4));
  graphs.push_back(make_view_graph({0, 1, 2, 3, 4},
                                   {{0, 1}, {0, 2}, {0, 3}, {0, 4}}));

  for (const ViewGraph& g : graphs) {
    const int n = g.size();
    const ScheduleBudget budget{std::max(1, n / 4), std::max(4, n)};
    for (StrategyKind kind : {StrategyKind::kSequential, StrategyKind::kLoadFreeList,
                              StrategyKind::kGroupBlock, StrategyKind::kMbr}) {
      const SchedulePlan plan = plan_baseline(g, kind, budget);
      CHECK(oracle::covers_exactly_once(plan, g));
      replay_uploads(plan, budget.size_gpu);  // throws on any budget violation
    }
  }
}

TEST_CASE("upload counts on a banded graph order by strategy quality") {
  const ViewGraph g = oracle::band_graph(100, 5);
  const ScheduleBudget budget{10, 40};

  std::map<StrategyKind, std::uint64_t> uploads;
  for (StrategyKind kind : {StrategyKind::kSequential, StrategyKind::kLoadFreeList,
                            StrategyKind::kGroupBlock, StrategyKind::kMbr}) {
    const SchedulePlan plan = plan_baseline(g, kind, budget);
    CHECK(oracle::covers_exactly_once(plan, g));
    uploads[kind] = replay_uploads(plan, budget.size_gpu);
  }

  CHECK(uploads[StrategyKind::kMbr] <= uploads[StrategyKind::kGroupBlock]);
  CHECK(uploads[StrategyKind::kGroupBlock] <= uploads[StrategyKind::kSequential]);
  // 485 pairs over capacity 40: the bandwidth-aware schedule must beat
  // pair-at-a-time loading outright.
  CHECK(uploads[StrategyKind::kMbr] < uploads[StrategyKind::kSequential]);
}

TEST_CASE("executing a band schedule uploads each image once") {
  const ViewGraph g = oracle::band_graph(6, 1);
  ViewGraph marked = g;
  const SchedulePlan plan = iterate_schedule(g, 2, 4);

  const auto features = band_features(6, 10);  // sizes 10..15, total 75 units
  const HashFunctions hf = make_hash_functions(31);
  DeviceArena arena(arena_units_for(features, 4));
  CHECK(arena.capacity() == 60);  // four copies of the largest image

  ExecuteOptions opts;
  opts.verify.enabled = false;
  std::vector<ImageId> uploaded, evicted;
  std::uint64_t hook_units = 0;
  opts.backend.on_upload = [&](ImageId id, std::uint64_t units) {
    uploaded.push_back(id);
    hook_units += units;
  };
  opts.backend.on_evict = [&](ImageId id) { evicted.push_back(id); };

  const ExecutionResult res = execute_plan(plan, features, hf, arena, opts, &marked);

  CHECK(res.metrics.strategy == "mbr");
  CHECK(res.metrics.pairs_matched == 5);
  CHECK(res.metrics.uploads == 6);
  CHECK(res.metrics.evictions == 6);
  CHECK(res.metrics.units_uploaded == 75);
  CHECK(res.metrics.utilization_proxy == doctest::Approx(5.0 / 6.0));
  // Rows hold {0..3} then {2..5}: the handover keeps 2 and 3 on device.
  CHECK(res.metrics.peak_occupancy == 12 + 13 + 14 + 15);
  REQUIRE(res.metrics.per_iteration.size() == plan.iterations.size());
  std::uint64_t iter_uploads = 0;
  std::size_t iter_pairs = 0;
  for (const IterationMetrics& im : res.metrics.per_iteration) {
    iter_uploads += im.uploads;
    iter_pairs += im.pairs;
  }
  CHECK(iter_uploads == res.metrics.uploads);
  CHECK(iter_pairs == res.metrics.pairs_matched);

  // The backend hook saw exactly the arena transitions, image by image.
  CHECK(uploaded.size() == 6);
  CHECK(std::set<ImageId>(uploaded.begin(), uploaded.end()).size() == 6);
  CHECK(hook_units == 75);
  CHECK(evicted.size() == 6);
  CHECK(arena.occupancy() == 0);

  REQUIRE(res.matches.size() == 5);
  CHECK(std::is_sorted(res.matches.begin(), res.matches.end(),
                       [](const PairMatches& x, const PairMatches& y) {
                         return IdPair(x.query_image, x.train_image) <
                                IdPair(y.query_image, y.train_image);
                       }));
  for (const PairMatches& pm : res.matches)
    CHECK(pm.stage == PairMatches::Stage::kInitial);  // verification was off
  CHECK(res.outcomes.empty());

  for (const IdPair& p : g.pairs())
    CHECK(marked.pair_state(p) == PairState::kProcessed);
}

TEST_CASE("an empty plan executes to zeros") {
  const SchedulePlan plan;
  const std::map<ImageId, FeatureSet> features;
  const HashFunctions hf = make_hash_functions(1);
  DeviceArena arena(0);
  const ExecutionResult res = execute_plan(plan, features, hf, arena, {});
  CHECK(res.matches.empty());
  CHECK(res.outcomes.empty());
  CHECK(res.metrics.pairs_matched == 0);
  CHECK(res.metrics.uploads == 0);
  CHECK(res.metrics.units_uploaded == 0);
  CHECK(res.metrics.utilization_proxy == 0.0);
  CHECK(res.metrics.per_iteration.empty());
}

TEST_CASE("execution is deterministic for a fixed seed") {
  const ViewGraph g = oracle::band_graph(5, 2);
  const SchedulePlan plan = iterate_schedule(g, 1, 3);
  const auto features = band_features(5, 12);
  const HashFunctions hf = make_hash_functions(77);

  ExecuteOptions opts;
  opts.seed = 99;
  opts.threads = 2;

  DeviceArena arena_a(arena_units_for(features, 3));
  const ExecutionResult a = execute_plan(plan, features, hf, arena_a, opts);
  DeviceArena arena_b(arena_units_for(features, 3));
  const ExecutionResult b = execute_plan(plan, features, hf, arena_b, opts);
  check_same_results(a, b);
}

TEST_CASE("worker count and queue depth cannot change the outcome") {
  SyntheticScene scene;
  scene.n_images = 8;
  scene.points_per_image = 50;
  scene.overlap_band = 2;
  scene.noise_sigma = 0.01;
  scene.outlier_fraction = 0.0;
  scene.seed = 99;
  const SyntheticDataset data = generate_synthetic(scene);

  std::map<ImageId, FeatureSet> features;
  for (const FeatureSet& fs : data.images) features.emplace(fs.image_id, fs);

  std::vector<ImageId> ids;
  for (const FeatureSet& fs : data.images) ids.push_back(fs.image_id);
  const ViewGraph g = make_view_graph(ids, data.true_pairs);
  const SchedulePlan plan = iterate_schedule(g, 2, 6);
  const HashFunctions hf = make_hash_functions(13);

  ExecuteOptions narrow;
  narrow.seed = 7;
  narrow.threads = 1;
  DeviceArena arena_a(arena_units_for(features, 6));
  const ExecutionResult one = execute_plan(plan, features, hf, arena_a, narrow);

  ExecuteOptions wide = narrow;
  wide.threads = 4;
  wide.queue_capacity = 2;  // force backpressure on the hand-off
  DeviceArena arena_b(arena_units_for(features, 6));
  const ExecutionResult many = execute_plan(plan, features, hf, arena_b, wide);

  check_same_results(one, many);
  CHECK(one.metrics.pairs_matched == g.edge_count());
  for (const PairMatches& pm : one.matches)
    CHECK(pm.stage == PairMatches::Stage::kVerified);
}

TEST_CASE("verification strips geometry-breaking matches from the stream") {
  std::mt19937_64 rng(3);
  const auto [qf, tf] = translated_pair(70, rng);
  std::map<ImageId, FeatureSet> features;
  features.emplace(qf.image_id, qf);
  features.emplace(tf.image_id, tf);

  const ViewGraph g = make_view_graph({1, 2}, {{1, 2}});
  const SchedulePlan plan = plan_baseline(g, StrategyKind::kSequential, {1, 2});
  const HashFunctions hf = make_hash_functions(8);
  DeviceArena arena(arena_units_for(features, 2));

  ExecuteOptions opts;
  opts.seed = 21;
  opts.threads = 2;
  const ExecutionResult res = execute_plan(plan, features, hf, arena, opts);

  REQUIRE(res.outcomes.size() == 1);
  const PairOutcome& oc = res.outcomes[0];
  CHECK(oc.pair == IdPair(1, 2));
  CHECK(oc.initial == 70);  // every shared descriptor matches
  CHECK(res.metrics.initial_matches == 70);
  CHECK(!oc.no_model);
  CHECK(!oc.sao_passthrough);
  CHECK(oc.after_sao <= 70);
  CHECK(oc.inliers <= oc.after_sao);
  CHECK(oc.inlier_ratio == doctest::Approx(oc.inliers / 70.0));
  CHECK(oc.ransac_iterations >= 1);

  REQUIRE(res.matches.size() == 1);
  std::size_t good = 0, bad = 0;
  for (const auto& [q, t] : res.matches[0].matches) {
    CHECK(q == t);  // matching itself is an identity map here
    (is_scattered(q) ? bad : good)++;
  }
  CHECK(good >= 55);  // translated majority survives
  CHECK(bad <= 2);    // scattered minority is gone
  CHECK(res.metrics.verified_matches == res.matches[0].matches.size());
}

TEST_CASE("a pair with nothing in common verifies to nothing") {
  const ViewGraph g = make_view_graph({1, 2}, {{1, 2}});
  const SchedulePlan plan = plan_baseline(g, StrategyKind::kSequential, {1, 2});
  const HashFunctions hf = make_hash_functions(5);

  // An empty train image cannot produce a single candidate.
  {
    std::map<ImageId, FeatureSet> features;
    features.emplace(1, oracle::tiny_features(1, 30, 100));
    FeatureSet empty;
    empty.image_id = 2;
    features.emplace(2, empty);
    DeviceArena arena(arena_units_for(features, 2));
    const ExecutionResult res = execute_plan(plan, features, hf, arena, {});
    REQUIRE(res.outcomes.size() == 1);
    CHECK(res.outcomes[0].initial == 0);
    CHECK(res.outcomes[0].no_model);
    CHECK(res.outcomes[0].inlier_ratio == 0.0);
    REQUIRE(res.matches.size() == 1);
    CHECK(res.matches[0].matches.empty());
    CHECK(res.metrics.verified_matches == 0);
  }

  // Unrelated images still cough up a few lone-bucket candidates, but their
  // geometry is random, so verification leaves (almost) nothing standing.
  {
    std::map<ImageId, FeatureSet> features;
    features.emplace(1, oracle::tiny_features(1, 30, 100));
    features.emplace(2, oracle::tiny_features(2, 30, 999));
    DeviceArena arena(arena_units_for(features, 2));
    const ExecutionResult res = execute_plan(plan, features, hf, arena, {});
    REQUIRE(res.outcomes.size() == 1);
    CHECK(res.outcomes[0].initial < 30);
    CHECK((res.outcomes[0].no_model || res.outcomes[0].inliers <= 2));
    REQUIRE(res.matches.size() == 1);
    CHECK(res.matches[0].matches.size() <= 2);
  }
}

TEST_CASE("execution surfaces planner and capacity faults") {
  const ViewGraph g = make_view_graph({1, 2}, {{1, 2}});
  const SchedulePlan plan = plan_baseline(g, StrategyKind::kSequential, {1, 2});
  const HashFunctions hf = make_hash_functions(4);

  std::map<ImageId, FeatureSet> partial;
  partial.emplace(1, oracle::tiny_features(1, 10, 1));
  DeviceArena arena(100);
  CHECK(error_code_of([&] {
          execute_plan(plan, partial, hf, arena, {});
        }) == "InvalidArgument");

  std::map<ImageId, FeatureSet> both = partial;
  both.emplace(2, oracle::tiny_features(2, 10, 2));
  DeviceArena cramped(15);  // room for one image and a half
  CHECK(error_code_of([&] {
          execute_plan(plan, both, hf, cramped, {});
        }) == "CapacityExceeded");
}

TEST_CASE("arena sizing fits the requested number of largest images") {
  std::map<ImageId, FeatureSet> features;
  features.emplace(0, oracle::tiny_features(0, 10, 3));
  features.emplace(1, oracle::tiny_features(1, 20, 3));
  features.emplace(2, oracle::tiny_features(2, 15, 3));
  CHECK(arena_units_for(features, 3) == 60);
  CHECK(arena_units_for(features, 1) == 20);
  CHECK(arena_units_for(features, 0) == 0);
  CHECK(arena_units_for({}, 4) == 0);
}

TEST_CASE("metrics and outcome files carry the deterministic fields") {
  TempDir dir;
  PipelineMetrics m;
  m.strategy = "mbr";
  m.pairs_matched = 5;
  m.uploads = 6;
  m.utilization_proxy = 5.0 / 6.0;
  m.per_iteration.push_back({6, 5, 6, 75});
  m.wall_time_s = 1.25;  // timing never lands in the file

  const auto path = dir.file("metrics.json");
  write_metrics(path, m);
  std::stringstream ss;
  ss << std::ifstream(path).rdbuf();
  const std::string text = ss.str();
  CHECK(text.find("\"strategy\": \"mbr\"") != std::string::npos);
  CHECK(text.find("per_iteration") != std::string::npos);
  CHECK(text.find("wall_time") == std::string::npos);
  CHECK(text.find("config") == std::string::npos);

  const std::string echo = R"({"seed": 5})";
  write_metrics(path, m, &echo);
  std::stringstream ss2;
  ss2 << std::ifstream(path).rdbuf();
  CHECK(ss2.str().find("\"config\"") != std::string::npos);

  const std::string broken = "{{";
  CHECK(error_code_of([&] { write_metrics(path, m, &broken); }) == "FormatError");
  CHECK(error_code_of([&] { write_metrics(dir.path(), m); }) == "FormatError");

  std::vector<PairOutcome> outcomes(2);
  outcomes[0].pair = IdPair(1, 2);
  outcomes[0].initial = 70;
  outcomes[0].inliers = 60;
  outcomes[0].inlier_ratio = 60.0 / 70.0;
  outcomes[1].pair = IdPair(1, 3);
  outcomes[1].no_model = true;
  const auto opath = dir.file("outcomes.jsonl");
  write_pair_outcomes(opath, outcomes);
  std::ifstream is(opath);
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) {
    CHECK(line.find("\"query\"") != std::string::npos);
    CHECK(line.find("inlier_ratio") != std::string::npos);
    ++lines;
  }
  CHECK(lines == 2);
  CHECK(error_code_of([&] { write_pair_outcomes(dir.path(), outcomes); }) ==
        "FormatError");
}
