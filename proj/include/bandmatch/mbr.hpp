#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bandmatch/view_graph.hpp"

namespace bandmatch {

// Bijection over vertex positions: perm[old_pos] = new_pos.
struct PermutationOrder {
  std::vector<int> perm;
};

// BFS layering rooted at a node; spans exactly that node's connected
// component, and every edge stays within a level or between adjacent levels.
struct LevelStructure {
  int root = 0;
  std::vector<std::vector<int>> levels;  // positions, each level sorted

  int depth() const { return static_cast<int>(levels.size()); }
};

// One contiguous-chunk × contiguous-chunk cell of the permuted adjacency,
// carrying the match pairs serviced while both chunks are device-resident.
struct ScheduleBlock {
  int row_chunk = 0;
  int col_chunk = 0;
  std::vector<ImageId> row_images;
  std::vector<ImageId> col_images;
  std::vector<IdPair> pairs;
};

// All blocks sharing one row chunk, plus the images the executor must evict
// once the row completes (those not needed by any later row this iteration).
struct BlockRow {
  int row_chunk = 0;
  std::vector<ImageId> row_images;
  std::vector<ScheduleBlock> blocks;     // ascending col_chunk
  std::vector<ImageId> evict_after;
};

struct ScheduleIteration {
  int dimension = 0;         // images remaining when this iteration was planned
  int bandwidth_before = 0;  // bandwidth of the remaining graph as ordered
  int bandwidth_after = 0;   // bandwidth after reordering
  std::vector<BlockRow> rows;

  std::size_t pair_count() const;
};

struct ScheduleBudget {
  int size_blk = 0;  // images per block chunk
  int size_gpu = 0;  // max simultaneously resident images
};

struct SchedulePlan {
  std::string strategy;
  ScheduleBudget budget;
  int final_dimension = 0;  // images still carrying pairs after the last iteration
  std::vector<ScheduleIteration> iterations;

  std::size_t pair_count() const;
  std::vector<IdPair> pairs() const;  // sorted, as covered by the whole plan
};

// Max |i-j| over adjacency entries in the current order; 0 when edgeless.
int bandwidth(const ViewGraph& g);
int permuted_bandwidth(const ViewGraph& g, const std::vector<int>& perm);

LevelStructure level_structure(const ViewGraph& g, int root);

// Bandwidth-reducing reordering: per connected component, a pseudo-peripheral
// root pair is found by iterated level structures, the two rootings are
// combined into one level structure, levels are sorted by connection to the
// previous level then degree, and nodes are numbered level by level.
// Components are concatenated largest first. Falls back to the identity
// permutation whenever the reordering would increase bandwidth, so the result
// never exceeds the input bandwidth. Throws EmptyGraph on an empty graph.
PermutationOrder gps_order(const ViewGraph& g);

// Partitions the (already reordered) vertex order into chunks of size_blk and
// emits one iteration of block rows covering every pair whose chunk distance
// fits the resident window of floor(size_gpu/size_blk) chunks; pairs beyond
// the window are left for a later iteration. Throws BudgetTooSmall unless
// size_blk >= 1 and size_gpu >= 2*size_blk.
std::vector<BlockRow> generate_blocks(const ViewGraph& g, int size_blk, int size_gpu);

// Full schedule: loop of reorder -> block generation -> drop images with no
// remaining pairs, until every pair is covered exactly once. Iterations that
// cover no pair (or exceed the pair-count cap) raise NonTermination.
SchedulePlan iterate_schedule(const ViewGraph& g, int size_blk, int size_gpu);

// The optional echo lands under a "config" key (ignored by read_plan) so a
// plan file records the configuration that produced it.
void write_plan(const std::filesystem::path& path, const SchedulePlan& plan,
                const std::string* config_echo = nullptr);
SchedulePlan read_plan(const std::filesystem::path& path);

}  // namespace bandmatch
