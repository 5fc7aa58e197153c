#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bandmatch/features.hpp"

namespace bandmatch {

struct HashParams {
  int tables = 6;       // coarse lookup tables
  int coarse_bits = 8;  // bucket-id bits per table
  int fine_bits = 128;  // long-code bits for Hamming ranking
};

// Random-hyperplane LSH functions: `tables` sets of `coarse_bits` hyperplanes
// for bucket lookup plus one set of `fine_bits` hyperplanes for ranking.
struct HashFunctions {
  HashParams params;
  std::uint64_t seed = 0;
  std::vector<float> coarse;  // [table][bit][dim] flattened
  std::vector<float> fine;    // [bit][dim] flattened

  const float* coarse_plane(int table, int bit) const {
    return coarse.data() + (static_cast<std::size_t>(table) * params.coarse_bits + bit) *
                               kDescriptorDim;
  }
  const float* fine_plane(int bit) const {
    return fine.data() + static_cast<std::size_t>(bit) * kDescriptorDim;
  }
};

HashFunctions make_hash_functions(std::uint64_t seed, const HashParams& params = {});

// Per-image binary codes: one bucket id per (feature, table) and a packed
// fine code per feature. Tagged with the function seed so mismatched code
// sets are rejected at match time.
struct HashCodeSet {
  ImageId image_id = 0;
  std::uint64_t function_seed = 0;
  HashParams params;
  std::size_t count = 0;
  int fine_words = 0;
  std::vector<std::uint32_t> coarse;  // [feature][table]
  std::vector<std::uint64_t> fine;    // [feature][word]

  std::uint32_t bucket(std::size_t feature, int table) const {
    return coarse[feature * params.tables + table];
  }
  const std::uint64_t* fine_code(std::size_t feature) const {
    return fine.data() + feature * fine_words;
  }
  std::size_t size_bytes() const {
    return coarse.size() * sizeof(std::uint32_t) + fine.size() * sizeof(std::uint64_t);
  }
};

// Bit b is set iff (descriptor - centering_mean) . hyperplane_b > 0 (strictly).
HashCodeSet compute_codes(const FeatureSet& fs, const HashFunctions& hf,
                          const std::array<float, kDescriptorDim>& centering_mean);

struct MatchCandidate {
  int query_idx = 0;
  int train_idx = 0;
  int hamming = 0;
  double euclidean = 0.0;
};

struct PairMatches {
  ImageId query_image = 0;
  ImageId train_image = 0;
  std::vector<std::pair<int, int>> matches;  // (query_idx, train_idx), unique query_idx
  enum class Stage { kInitial, kVerified } stage = Stage::kInitial;
};

struct MatchParams {
  int k_nearest = 8;  // candidates surviving Hamming ranking
  double ratio = 0.5;
};

// Cascade lookup per query feature: union of same-bucket candidates over all
// tables, ranked by fine-code Hamming distance (distance-keyed buckets, ties
// by ascending train index), top-K re-ranked by Euclidean distance, then the
// nearest kept iff dis(q1) < dis(q2) * ratio. A lone candidate is kept
// unconditionally. Throws HashMismatch when the code sets disagree on hash
// functions.
PairMatches match_pair(const FeatureSet& qf, const HashCodeSet& qc,
                       const FeatureSet& tf, const HashCodeSet& tc,
                       const MatchParams& mp);

// Exact nearest/second-nearest Euclidean scan with the same ratio rule; the
// correctness oracle for match_pair.
PairMatches brute_force_match(const FeatureSet& qf, const FeatureSet& tf, double ratio);

// Text format: header "pairs <count>", then one "query_image train_image
// query_idx train_idx" line per match. Pairs with no matches are omitted.
void write_matches_text(const std::filesystem::path& path,
                        const std::vector<PairMatches>& all);
std::vector<PairMatches> read_matches_text(const std::filesystem::path& path);

// Binary variant (magic "BMMT") that also preserves empty pairs and stages.
void write_matches_binary(const std::filesystem::path& path,
                          const std::vector<PairMatches>& all);
std::vector<PairMatches> read_matches_binary(const std::filesystem::path& path);

}  // namespace bandmatch
