#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bandmatch/hashmatch.hpp"
#include "bandmatch/mbr.hpp"
#include "bandmatch/verify.hpp"
#include "bandmatch/view_graph.hpp"

namespace bandmatch {

// Device-memory bookkeeping in descriptor units. Uploading a resident image
// is a no-op; exceeding capacity throws CapacityExceeded; evicting an absent
// image throws NotResident.
class DeviceArena {
 public:
  explicit DeviceArena(std::uint64_t capacity_units) : capacity_(capacity_units) {}

  std::uint64_t capacity() const { return capacity_; }
  std::uint64_t occupancy() const { return occupancy_; }
  std::uint64_t peak_occupancy() const { return peak_; }
  std::uint64_t uploads() const { return uploads_; }
  std::uint64_t evictions() const { return evictions_; }
  std::uint64_t units_uploaded() const { return units_uploaded_; }
  bool resident(ImageId id) const { return resident_.count(id) != 0; }
  std::size_t resident_count() const { return resident_.size(); }

  void upload(ImageId id, std::uint64_t units);
  void evict(ImageId id);

 private:
  std::uint64_t capacity_;
  std::uint64_t occupancy_ = 0;
  std::uint64_t peak_ = 0;
  std::uint64_t uploads_ = 0;
  std::uint64_t evictions_ = 0;
  std::uint64_t units_uploaded_ = 0;
  std::map<ImageId, std::uint64_t> resident_;
};

enum class StrategyKind { kSequential, kLoadFreeList, kGroupBlock, kMbr };

std::string to_string(StrategyKind kind);
StrategyKind strategy_from_string(const std::string& name);

// Reference schedules for the same budget: per-pair load/free, an in-order
// load/free list with capacity-driven reloads, fixed half-capacity groups fed
// block by block, and the bandwidth-reduced iterative schedule.
SchedulePlan plan_baseline(const ViewGraph& g, StrategyKind kind,
                           const ScheduleBudget& budget);

struct IterationMetrics {
  int dimension = 0;
  std::size_t pairs = 0;
  std::uint64_t uploads = 0;
  std::uint64_t units_uploaded = 0;
};

struct PipelineMetrics {
  std::string strategy;
  std::size_t pairs_matched = 0;
  std::size_t initial_matches = 0;
  std::size_t verified_matches = 0;
  std::uint64_t uploads = 0;
  std::uint64_t evictions = 0;
  std::uint64_t units_uploaded = 0;
  std::uint64_t peak_occupancy = 0;
  double utilization_proxy = 0.0;  // pairs matched per upload
  std::vector<IterationMetrics> per_iteration;
  // Hardware-dependent; reported on stderr but never serialized.
  double wall_time_s = 0.0;
  double pairs_per_second = 0.0;
};

struct PairOutcome {
  IdPair pair{0, 0};
  std::size_t initial = 0;    // cascade matches before filtering
  std::size_t after_sao = 0;  // survivors of the angular-order filter
  std::size_t inliers = 0;    // final epipolar-consistent matches
  double inlier_ratio = 0.0;  // inliers / initial (0 when initial is 0)
  int ransac_iterations = 0;
  bool sao_passthrough = false;
  bool delaunay_fallback = false;
  bool no_model = false;  // too few matches or RANSAC found no consensus
};

struct VerifyOptions {
  bool enabled = true;
  SaoParams sao;
  RansacParams ransac;
};

// Hook for a real accelerator backend: the executor calls these at every
// arena transition (after the bookkeeping succeeds). Host-only runs leave
// them empty.
struct DeviceBackend {
  std::function<void(ImageId, std::uint64_t)> on_upload;
  std::function<void(ImageId)> on_evict;
};

struct ExecuteOptions {
  MatchParams match;
  VerifyOptions verify;
  int threads = 1;  // verification workers; matching stays on the caller thread
  std::size_t queue_capacity = 64;  // bounded hand-off between the two stages
  std::uint64_t seed = 0;           // root for per-pair verification seeds
  DeviceBackend backend;
};

struct ExecutionResult {
  std::vector<PairMatches> matches;  // one entry per planned pair, (query,train) order
  std::vector<PairOutcome> outcomes;  // per-pair verification stats (empty when off)
  PipelineMetrics metrics;
};

// Walks the plan: per block row, uploads the images the row still misses,
// recomputes centered binary codes for the resident set, matches every block
// pair on the calling thread while verification drains through a bounded
// queue, then applies the row's eviction directives. Iterations are barriers:
// all verification finishes before the next one starts. Results are keyed and
// sorted by image pair, so the output is independent of worker count.
// `graph`, when given, gets each matched pair's payload marked processed.
ExecutionResult execute_plan(const SchedulePlan& plan,
                             const std::map<ImageId, FeatureSet>& features,
                             const HashFunctions& hash_functions, DeviceArena& arena,
                             const ExecuteOptions& opts, ViewGraph* graph = nullptr);

// Arena capacity, in descriptor units, that fits `gpu_images` of the largest
// feature sets simultaneously.
std::uint64_t arena_units_for(const std::map<ImageId, FeatureSet>& features,
                              int gpu_images);

// Deterministic fields only (counters and schedule shape; no timings). The
// optional echo lands under a "config" key so a run can be reproduced from
// its own output.
void write_metrics(const std::filesystem::path& path, const PipelineMetrics& metrics,
                   const std::string* config_echo = nullptr);

// One JSON object per line, one line per pair, sorted by pair.
void write_pair_outcomes(const std::filesystem::path& path,
                         const std::vector<PairOutcome>& outcomes);

}  // namespace bandmatch
