#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <unordered_map>
#include <vector>

#include "bandmatch/features.hpp"
#include "bandmatch/view_graph.hpp"

namespace bandmatch {

struct Codebook {
  int k_words = 0;
  std::vector<float> centroids;  // k_words x 128, row-major

  const float* centroid(int k) const {
    return centroids.data() + static_cast<std::size_t>(k) * kDescriptorDim;
  }
};

// Training pool: a uniform sample of ceil(p% of n) images contributes its
// `h` largest-scale features each (all of them when fewer). Throws EmptyInput
// when there are no feature sets.
std::vector<Descriptor> select_training_descriptors(
    const std::vector<FeatureSet>& features, double p_percent, int h_top_scale,
    std::uint64_t seed);

// Lloyd iterations to an assignment fixpoint or max_iters. Initial centroids
// are k distinct descriptor values; clusters that empty out are reseeded from
// the farthest point. `sse_history`, when given, receives the within-cluster
// SSE at each assignment step (non-increasing). Throws TooFewDescriptors.
Codebook train_codebook(const std::vector<Descriptor>& descriptors, int k_words,
                        int max_iters, std::uint64_t seed,
                        std::vector<double>* sse_history = nullptr);

struct VladVector {
  std::vector<float> values;  // k_words x 128
  bool degenerate = false;    // empty image or all-zero accumulation
};

// Residual aggregation per nearest centroid, signed-square-root
// power-normalized, then L2-normalized (unit norm unless degenerate).
VladVector encode_vlad(const FeatureSet& fs, const Codebook& cb);

struct HnswParams {
  int max_neighbors = 16;       // M
  int ef_construction = 200;
  int ef_search = 64;
};

// Navigable small-world index over fixed-dimension float vectors. Insertion
// draws node levels from a seeded generator, so the graph is a pure function
// of (seed, insertion order). Searches with ef_search >= size are exact.
class HnswIndex {
 public:
  HnswIndex(int dim, const HnswParams& params, std::uint64_t seed);

  void insert(int id, const std::vector<float>& v);
  std::vector<std::pair<int, double>> search(const std::vector<float>& query,
                                             int top_n) const;

  int dim() const { return dim_; }
  int size() const { return static_cast<int>(ids_.size()); }
  const HnswParams& params() const { return params_; }
  int entry_point() const;  // external id; fails on an empty index
  int max_level() const { return max_level_; }
  int level_of(int id) const;
  std::vector<int> neighbors_of(int id, int level) const;  // external ids

 private:
  struct Node {
    int external_id = 0;
    std::vector<float> vec;
    std::vector<std::vector<int>> links;  // per level, slot indices
  };

  double distance(const std::vector<float>& a, const std::vector<float>& b) const;
  int slot_of(int id) const;
  int greedy_descent(const std::vector<float>& q, int ep, int level) const;
  std::vector<std::pair<double, int>> search_layer(const std::vector<float>& q, int ep,
                                                   int ef, int level) const;
  void shrink_links(int slot, int level);

  int dim_;
  HnswParams params_;
  double level_mult_;
  std::mt19937_64 level_rng_;
  std::vector<Node> nodes_;
  std::vector<int> ids_;  // external ids in insertion order
  std::unordered_map<int, int> slot_by_id_;
  int entry_ = -1;
  int max_level_ = -1;
};

// VLAD-encodes every image, indexes the vectors, and connects each image to
// its retrieval_top_n nearest neighbors (self excluded); the pair set is the
// union over both query directions, so the adjacency comes out symmetric.
ViewGraph select_pairs(const std::vector<FeatureSet>& features, const Codebook& cb,
                       int retrieval_top_n, const HnswParams& params,
                       std::uint64_t seed);

// Binary codebook format: magic "BMCB", word count u32, dim u32, f32 centroids.
void write_codebook(const std::filesystem::path& path, const Codebook& cb);
Codebook read_codebook(const std::filesystem::path& path);

}  // namespace bandmatch
