#include "bandmatch/engine.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <memory>
#include <mutex>
#include <set>
#include <thread>

#include "json.hpp"

namespace bandmatch {

void DeviceArena::upload(ImageId id, std::uint64_t units) {
  if (resident_.count(id)) return;
  if (occupancy_ + units > capacity_)
    fail("CapacityExceeded",
         "uploading image " + std::to_string(id) + " (" + std::to_string(units) +
             " units) would raise occupancy to " + std::to_string(occupancy_ + units) +
             " of " + std::to_string(capacity_));
  resident_.emplace(id, units);
  occupancy_ += units;
  peak_ = std::max(peak_, occupancy_);
  ++uploads_;
  units_uploaded_ += units;
}

void DeviceArena::evict(ImageId id) {
  const auto it = resident_.find(id);
  if (it == resident_.end())
    fail("NotResident", "cannot evict image " + std::to_string(id) +
                            ": not resident");
  occupancy_ -= it->second;
  resident_.erase(it);
  ++evictions_;
}

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kSequential: return "sequential";
    case StrategyKind::kLoadFreeList: return "load_free_list";
    case StrategyKind::kGroupBlock: return "group_block";
    case StrategyKind::kMbr: return "mbr";
  }
  fail("InvalidArgument", "unknown strategy kind");
}

StrategyKind strategy_from_string(const std::string& name) {
  if (name == "sequential") return StrategyKind::kSequential;
  if (name == "load_free_list") return StrategyKind::kLoadFreeList;
  if (name == "group_block") return StrategyKind::kGroupBlock;
  if (name == "mbr") return StrategyKind::kMbr;
  fail("InvalidArgument", "unknown strategy '" + name + "'");
}

namespace {

std::vector<ImageId> ids_of(const ViewGraph& g, const std::vector<int>& positions) {
  std::vector<ImageId> ids;
  ids.reserve(positions.size());
  for (int p : positions) ids.push_back(g.id_at(p));
  return ids;
}

SchedulePlan plan_skeleton(const ViewGraph& g, const char* strategy,
                           const ScheduleBudget& budget) {
  SchedulePlan plan;
  plan.strategy = strategy;
  plan.budget = budget;
  plan.final_dimension = 0;
  if (g.edge_count() == 0) return plan;
  ScheduleIteration iter;
  iter.dimension = g.size();
  iter.bandwidth_before = bandwidth(g);
  iter.bandwidth_after = iter.bandwidth_before;  // these strategies never reorder
  plan.iterations.push_back(std::move(iter));
  return plan;
}

// One row per pair: load both images, match, free both.
SchedulePlan plan_sequential(const ViewGraph& g, const ScheduleBudget& budget) {
  if (budget.size_gpu < 2)
    fail("BudgetTooSmall", "sequential strategy needs room for 2 images");
  SchedulePlan plan = plan_skeleton(g, "sequential", budget);
  if (plan.iterations.empty()) return plan;

  std::vector<BlockRow>& rows = plan.iterations[0].rows;
  int t = 0;
  for (const IdPair& p : g.pairs()) {
    BlockRow row;
    row.row_chunk = t;
    row.row_images = {p.a, p.b};
    ScheduleBlock blk;
    blk.row_chunk = t;
    blk.col_chunk = t;
    blk.row_images = row.row_images;
    blk.col_images = row.row_images;
    blk.pairs = {p};
    row.blocks.push_back(std::move(blk));
    row.evict_after = {p.a, p.b};
    rows.push_back(std::move(row));
    ++t;
  }
  return plan;
}

// Visit images in graph order; on each visit match the newcomer against its
// already-visited partners (chunked when they exceed capacity). Images are
// freed the moment their last pair is done; when the arena is still full, the
// least-recently-touched non-needed image goes first (exhausted ones ahead of
// live ones).
SchedulePlan plan_load_free_list(const ViewGraph& g, const ScheduleBudget& budget) {
  const int cap = budget.size_gpu;
  if (cap < 2) fail("BudgetTooSmall", "load/free list needs room for 2 images");
  SchedulePlan plan = plan_skeleton(g, "load_free_list", budget);
  if (plan.iterations.empty()) return plan;
  std::vector<BlockRow>& rows = plan.iterations[0].rows;

  const int n = g.size();
  std::vector<int> pending(n);
  for (int u = 0; u < n; ++u) pending[u] = g.degree(u);

  std::map<int, std::uint64_t> resident;  // position -> last touch
  std::uint64_t clock = 0;

  for (int p = 0; p < n; ++p) {
    std::vector<int> partners;
    for (int q : g.neighbors(p))
      if (q < p) partners.push_back(q);
    std::sort(partners.begin(), partners.end());

    for (std::size_t ofs = 0; ofs < partners.size();
         ofs += static_cast<std::size_t>(cap - 1)) {
      std::vector<int> chunk(
          partners.begin() + static_cast<std::ptrdiff_t>(ofs),
          partners.begin() +
              static_cast<std::ptrdiff_t>(
                  std::min(partners.size(), ofs + static_cast<std::size_t>(cap - 1))));

      std::set<int> needed(chunk.begin(), chunk.end());
      needed.insert(p);
      std::size_t missing = 0;
      for (int x : needed) missing += resident.count(x) ? 0 : 1;
      while (resident.size() + missing > static_cast<std::size_t>(cap)) {
        int victim = -1;
        bool victim_exhausted = false;
        std::uint64_t victim_touch = 0;
        for (const auto& [x, touch] : resident) {
          if (needed.count(x)) continue;
          const bool exhausted = pending[x] == 0;
          const bool better =
              victim < 0 || (exhausted && !victim_exhausted) ||
              (exhausted == victim_exhausted && touch < victim_touch);
          if (better) {
            victim = x;
            victim_exhausted = exhausted;
            victim_touch = touch;
          }
        }
        rows.back().evict_after.push_back(g.id_at(victim));
        resident.erase(victim);
      }

      BlockRow row;
      row.row_chunk = static_cast<int>(rows.size());
      row.row_images = {g.id_at(p)};
      ScheduleBlock blk;
      blk.row_chunk = row.row_chunk;
      blk.col_chunk = row.row_chunk;
      blk.row_images = row.row_images;
      blk.col_images = ids_of(g, chunk);
      for (int q : chunk) blk.pairs.emplace_back(g.id_at(p), g.id_at(q));
      std::sort(blk.pairs.begin(), blk.pairs.end());
      row.blocks.push_back(std::move(blk));
      rows.push_back(std::move(row));

      ++clock;
      for (int x : needed) resident[x] = clock;
      pending[p] -= static_cast<int>(chunk.size());
      for (int q : chunk) --pending[q];
      for (int x : needed)
        if (pending[x] == 0 && resident.count(x)) {
          rows.back().evict_after.push_back(g.id_at(x));
          resident.erase(x);
        }
    }
  }
  return plan;
}

// Connection-oblivious grouping: fixed half-capacity groups in input order;
// every group pair with matches becomes one row, and the column group is
// dropped right after it (no caching across rows).
SchedulePlan plan_group_block(const ViewGraph& g, const ScheduleBudget& budget) {
  const int gs = budget.size_gpu / 2;
  if (gs < 1) fail("BudgetTooSmall", "group strategy needs room for two groups");
  SchedulePlan plan = plan_skeleton(g, "group_block", budget);
  if (plan.iterations.empty()) return plan;
  std::vector<BlockRow>& rows = plan.iterations[0].rows;

  const int n = g.size();
  const int n_groups = (n + gs - 1) / gs;
  const auto group_members = [&](int gi) {
    std::vector<int> m;
    for (int p = gi * gs; p < std::min(n, (gi + 1) * gs); ++p) m.push_back(p);
    return m;
  };

  for (int gi = 0; gi < n_groups; ++gi) {
    const std::vector<int> left = group_members(gi);
    std::size_t first_row_of_group = rows.size();
    for (int gj = gi; gj < n_groups; ++gj) {
      std::vector<IdPair> pairs;
      for (int p : left)
        for (int q : g.neighbors(p))
          if (q > p && q / gs == gj) pairs.emplace_back(g.id_at(p), g.id_at(q));
      if (pairs.empty()) continue;
      std::sort(pairs.begin(), pairs.end());

      BlockRow row;
      row.row_chunk = gi;
      row.row_images = ids_of(g, left);
      ScheduleBlock blk;
      blk.row_chunk = gi;
      blk.col_chunk = gj;
      blk.row_images = row.row_images;
      blk.col_images = gj == gi ? row.row_images : ids_of(g, group_members(gj));
      blk.pairs = std::move(pairs);
      if (gj != gi)
        row.evict_after = blk.col_images;  // column group gone after its block
      row.blocks.push_back(std::move(blk));
      rows.push_back(std::move(row));
    }
    if (rows.size() > first_row_of_group) {
      for (ImageId id : ids_of(g, left)) rows.back().evict_after.push_back(id);
    }
  }
  return plan;
}

}  // namespace

SchedulePlan plan_baseline(const ViewGraph& g, StrategyKind kind,
                           const ScheduleBudget& budget) {
  if (g.empty()) fail("EmptyGraph", "cannot plan a schedule for an empty graph");
  switch (kind) {
    case StrategyKind::kSequential: return plan_sequential(g, budget);
    case StrategyKind::kLoadFreeList: return plan_load_free_list(g, budget);
    case StrategyKind::kGroupBlock: return plan_group_block(g, budget);
    case StrategyKind::kMbr: return iterate_schedule(g, budget.size_blk, budget.size_gpu);
  }
  fail("InvalidArgument", "unknown strategy kind");
}

namespace {

struct VerifyJob {
  IdPair pair{0, 0};
  PairMatches initial;
  const FeatureSet* query = nullptr;
  const FeatureSet* train = nullptr;
};

struct PairRecord {
  PairMatches matches;
  PairOutcome outcome;
};

// Bounded producer/consumer hand-off between the matching thread and the
// verification workers, with an any-time drain barrier.
class VerifyPool {
 public:
  VerifyPool(int workers, std::size_t capacity, const VerifyOptions& opts,
             std::uint64_t seed_root, std::map<IdPair, PairRecord>* results)
      : capacity_(capacity), opts_(opts), seed_root_(seed_root), results_(results) {
    for (int w = 0; w < workers; ++w)
      threads_.emplace_back([this] { run(); });
  }

  ~VerifyPool() {
    {
      std::unique_lock<std::mutex> lock(mu_);
      done_ = true;
    }
    pop_cv_.notify_all();
    for (std::thread& t : threads_) t.join();
  }

  void push(VerifyJob job) {
    std::unique_lock<std::mutex> lock(mu_);
    push_cv_.wait(lock, [this] { return queue_.size() < capacity_; });
    queue_.push_back(std::move(job));
    ++outstanding_;
    pop_cv_.notify_one();
  }

  // Blocks until every pushed job has been fully processed, then surfaces the
  // first worker error if one occurred.
  void drain() {
    std::unique_lock<std::mutex> lock(mu_);
    push_cv_.wait(lock, [this] { return outstanding_ == 0; });
    if (error_) {
      std::exception_ptr e = error_;
      error_ = nullptr;
      std::rethrow_exception(e);
    }
  }

 private:
  void run() {
    for (;;) {
      VerifyJob job;
      {
        std::unique_lock<std::mutex> lock(mu_);
        pop_cv_.wait(lock, [this] { return done_ || !queue_.empty(); });
        if (queue_.empty()) return;
        job = std::move(queue_.front());
        queue_.pop_front();
      }
      PairRecord rec = process(job);
      {
        std::unique_lock<std::mutex> lock(mu_);
        (*results_)[job.pair] = std::move(rec);
        --outstanding_;
      }
      push_cv_.notify_all();
    }
  }

  PairRecord process(const VerifyJob& job) {
    PairRecord rec;
    rec.matches.query_image = job.pair.a;
    rec.matches.train_image = job.pair.b;
    rec.matches.stage = PairMatches::Stage::kVerified;
    rec.outcome.pair = job.pair;
    rec.outcome.initial = job.initial.matches.size();
    try {
      const SaoOutcome sao =
          sao_filter(job.initial, job.query->keypoints, job.train->keypoints, opts_.sao);
      rec.outcome.after_sao = sao.kept.matches.size();
      rec.outcome.sao_passthrough = sao.passthrough;
      rec.outcome.delaunay_fallback = sao.delaunay_fallback;

      const std::uint64_t seed =
          seed_for(seed_root_, "verify." + std::to_string(job.pair.a) + "." +
                                   std::to_string(job.pair.b));
      const InlierSet inliers = ransac_fundamental(
          sao.kept, job.query->keypoints, job.train->keypoints, opts_.ransac, seed);
      rec.matches.matches.reserve(inliers.kept.size());
      for (int idx : inliers.kept) rec.matches.matches.push_back(sao.kept.matches[idx]);
      rec.outcome.inliers = rec.matches.matches.size();
      rec.outcome.ransac_iterations = inliers.iterations;
    } catch (const Error& e) {
      if (e.code() == "TooFewMatches" || e.code() == "NoModel") {
        rec.outcome.no_model = true;
        rec.matches.matches.clear();
      } else {
        std::unique_lock<std::mutex> lock(mu_);
        if (!error_) error_ = std::current_exception();
        rec.outcome.no_model = true;
      }
    } catch (...) {
      std::unique_lock<std::mutex> lock(mu_);
      if (!error_) error_ = std::current_exception();
      rec.outcome.no_model = true;
      rec.matches.matches.clear();
    }
    rec.outcome.inlier_ratio =
        rec.outcome.initial == 0
            ? 0.0
            : static_cast<double>(rec.outcome.inliers) / rec.outcome.initial;
    return rec;
  }

  std::mutex mu_;
  std::condition_variable push_cv_, pop_cv_;
  std::deque<VerifyJob> queue_;
  std::size_t outstanding_ = 0;
  bool done_ = false;
  std::exception_ptr error_;
  const std::size_t capacity_;
  const VerifyOptions opts_;
  const std::uint64_t seed_root_;
  std::map<IdPair, PairRecord>* results_;
  std::vector<std::thread> threads_;
};

const FeatureSet& features_of(const std::map<ImageId, FeatureSet>& features,
                              ImageId id) {
  const auto it = features.find(id);
  if (it == features.end())
    fail("InvalidArgument",
         "plan references image " + std::to_string(id) + " with no features");
  return it->second;
}

}  // namespace

std::uint64_t arena_units_for(const std::map<ImageId, FeatureSet>& features,
                              int gpu_images) {
  std::uint64_t largest = 0;
  for (const auto& [id, fs] : features)
    largest = std::max<std::uint64_t>(largest, fs.size());
  return largest * static_cast<std::uint64_t>(std::max(0, gpu_images));
}

ExecutionResult execute_plan(const SchedulePlan& plan,
                             const std::map<ImageId, FeatureSet>& features,
                             const HashFunctions& hash_functions, DeviceArena& arena,
                             const ExecuteOptions& opts, ViewGraph* graph) {
  const auto t0 = std::chrono::steady_clock::now();
  ExecutionResult res;
  res.metrics.strategy = plan.strategy;

  std::map<IdPair, PairRecord> records;
  std::mutex direct_mu;  // unused contention-wise when verification is off
  std::unique_ptr<VerifyPool> pool;
  if (opts.verify.enabled)
    pool = std::make_unique<VerifyPool>(std::max(1, opts.threads),
                                        std::max<std::size_t>(1, opts.queue_capacity),
                                        opts.verify, opts.seed, &records);

  for (const ScheduleIteration& iteration : plan.iterations) {
    IterationMetrics im;
    im.dimension = iteration.dimension;
    const std::uint64_t uploads0 = arena.uploads();
    const std::uint64_t units0 = arena.units_uploaded();

    for (const BlockRow& row : iteration.rows) {
      std::set<ImageId> needed(row.row_images.begin(), row.row_images.end());
      for (const ScheduleBlock& blk : row.blocks)
        needed.insert(blk.col_images.begin(), blk.col_images.end());

      for (ImageId id : needed) {
        const FeatureSet& fs = features_of(features, id);
        if (!arena.resident(id)) {
          arena.upload(id, fs.size());
          if (opts.backend.on_upload) opts.backend.on_upload(id, fs.size());
        }
      }

      // Centering mean over every descriptor resident for this row; the
      // binary codes are relative to it, so they are recomputed per row and
      // never within one.
      std::array<double, kDescriptorDim> acc{};
      std::size_t total = 0;
      for (ImageId id : needed) {
        const FeatureSet& fs = features_of(features, id);
        for (const Descriptor& d : fs.descriptors) {
          for (int c = 0; c < kDescriptorDim; ++c) acc[c] += d.v[c];
        }
        total += fs.size();
      }
      std::array<float, kDescriptorDim> mean{};
      if (total > 0)
        for (int c = 0; c < kDescriptorDim; ++c)
          mean[c] = static_cast<float>(acc[c] / static_cast<double>(total));

      std::map<ImageId, HashCodeSet> codes;
      for (ImageId id : needed)
        codes.emplace(id, compute_codes(features_of(features, id), hash_functions, mean));

      for (const ScheduleBlock& blk : row.blocks) {
        for (const IdPair& pair : blk.pairs) {
          const FeatureSet& qf = features_of(features, pair.a);
          const FeatureSet& tf = features_of(features, pair.b);
          PairMatches pm =
              match_pair(qf, codes.at(pair.a), tf, codes.at(pair.b), opts.match);
          ++res.metrics.pairs_matched;
          ++im.pairs;
          res.metrics.initial_matches += pm.matches.size();
          if (graph) graph->set_pair_state(pair, PairState::kProcessed);

          if (pool) {
            pool->push({pair, std::move(pm), &qf, &tf});
          } else {
            PairRecord rec;
            rec.outcome.pair = pair;
            rec.outcome.initial = pm.matches.size();
            rec.matches = std::move(pm);
            std::lock_guard<std::mutex> lock(direct_mu);
            records[pair] = std::move(rec);
          }
        }
      }

      for (ImageId id : row.evict_after) {
        arena.evict(id);
        if (opts.backend.on_evict) opts.backend.on_evict(id);
      }
    }

    // Iteration barrier: verification of this iteration finishes before the
    // next reordering's blocks start.
    if (pool) pool->drain();
    im.uploads = arena.uploads() - uploads0;
    im.units_uploaded = arena.units_uploaded() - units0;
    res.metrics.per_iteration.push_back(im);
  }
  if (pool) pool->drain();

  res.matches.reserve(records.size());
  for (auto& [pair, rec] : records) {
    if (opts.verify.enabled) res.outcomes.push_back(rec.outcome);
    res.matches.push_back(std::move(rec.matches));
    res.metrics.verified_matches +=
        opts.verify.enabled ? res.matches.back().matches.size() : 0;
  }

  res.metrics.uploads = arena.uploads();
  res.metrics.evictions = arena.evictions();
  res.metrics.units_uploaded = arena.units_uploaded();
  res.metrics.peak_occupancy = arena.peak_occupancy();
  res.metrics.utilization_proxy =
      res.metrics.uploads == 0
          ? 0.0
          : static_cast<double>(res.metrics.pairs_matched) / res.metrics.uploads;
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
  res.metrics.wall_time_s = dt.count();
  res.metrics.pairs_per_second =
      dt.count() > 0.0 ? res.metrics.pairs_matched / dt.count() : 0.0;
  return res;
}

void write_metrics(const std::filesystem::path& path, const PipelineMetrics& metrics,
                   const std::string* config_echo) {
  nlohmann::json j;
  if (config_echo) {
    try {
      j["config"] = nlohmann::json::parse(*config_echo);
    } catch (const nlohmann::json::exception&) {
      fail("FormatError", "config echo is not valid JSON");
    }
  }
  j["strategy"] = metrics.strategy;
  j["pairs_matched"] = metrics.pairs_matched;
  j["initial_matches"] = metrics.initial_matches;
  j["verified_matches"] = metrics.verified_matches;
  j["uploads"] = metrics.uploads;
  j["evictions"] = metrics.evictions;
  j["units_uploaded"] = metrics.units_uploaded;
  j["peak_occupancy"] = metrics.peak_occupancy;
  j["utilization_proxy"] = metrics.utilization_proxy;
  j["per_iteration"] = nlohmann::json::array();
  for (const IterationMetrics& im : metrics.per_iteration) {
    j["per_iteration"].push_back({{"dimension", im.dimension},
                                  {"pairs", im.pairs},
                                  {"uploads", im.uploads},
                                  {"units_uploaded", im.units_uploaded}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("FormatError", "cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
  os.flush();
  if (!os) fail("FormatError", "write failed for " + path.string());
}

void write_pair_outcomes(const std::filesystem::path& path,
                         const std::vector<PairOutcome>& outcomes) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("FormatError", "cannot open " + path.string() + " for writing");
  for (const PairOutcome& oc : outcomes) {
    const nlohmann::json j = {{"query", oc.pair.a},
                              {"train", oc.pair.b},
                              {"initial", oc.initial},
                              {"after_sao", oc.after_sao},
                              {"inliers", oc.inliers},
                              {"inlier_ratio", oc.inlier_ratio},
                              {"ransac_iterations", oc.ransac_iterations},
                              {"sao_passthrough", oc.sao_passthrough},
                              {"delaunay_fallback", oc.delaunay_fallback},
                              {"no_model", oc.no_model}};
    os << j.dump() << '\n';
  }
  os.flush();
  if (!os) fail("FormatError", "write failed for " + path.string());
}

}  // namespace bandmatch
