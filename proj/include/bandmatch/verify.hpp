#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "bandmatch/features.hpp"
#include "bandmatch/hashmatch.hpp"

namespace bandmatch {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Per-point neighbor lists gathered by breadth-first expansion over Delaunay
// triangulation edges: nearer rings first, within a ring by Euclidean
// distance then index. Falls back to a plain Euclidean k-nearest scan (and
// says so) when the point set cannot be triangulated.
struct DelaunayKnn {
  std::vector<std::vector<int>> neighbors;
  bool used_fallback = false;
};

DelaunayKnn knn_from_delaunay(const std::vector<Point2>& pts, int n_neighbors);

// Sorts `neighbors` (indices into pts) counter-clockwise around `center` by
// atan2 angle in [0, 2*pi); equal angles break by distance then index.
// Throws CoincidentPoint when a neighbor coincides with the center.
std::vector<int> angular_order(const Point2& center, const std::vector<int>& neighbors,
                               const std::vector<Point2>& pts);

// Cyclic edit distance: minimum Levenshtein distance between `a` and any
// rotation of `b`.
int cyclic_edit_distance(const std::vector<int>& a, const std::vector<int>& b);

struct SaoParams {
  int n_neighbors = 6;
  double score_threshold = 0.5;
};

// Spatial-angular-order filter outcome. Matches whose neighborhood ring keeps
// its cyclic order across the two images (score <= threshold) are kept; short
// inputs pass through untouched.
struct SaoOutcome {
  PairMatches kept;
  std::vector<double> scores;  // one per input match, in input order
  bool passthrough = false;    // fewer than n_neighbors+1 matches: no filtering
  bool delaunay_fallback = false;
};

SaoOutcome sao_filter(const PairMatches& matches, const std::vector<Keypoint>& query_kps,
                      const std::vector<Keypoint>& train_kps, const SaoParams& params);

struct FundamentalMatrix {
  std::array<std::array<double, 3>, 3> m{};
};

struct RansacParams {
  int max_iters = 2048;
  double epipolar_threshold = 2.0;  // max point-to-epipolar-line distance, px
  double confidence = 0.999;
};

struct InlierSet {
  IdPair pair{0, 0};
  std::vector<int> kept;  // indices into the input match list
  FundamentalMatrix model;
  double inlier_ratio = 0.0;  // kept / input matches
  int iterations = 0;
};

// Normalized 8-point RANSAC for the fundamental matrix; a match is an inlier
// when both symmetric point-to-epipolar-line distances are under the
// threshold. The model is refit on the best consensus set, is rank 2, and has
// unit Frobenius norm. Throws TooFewMatches (< 8 inputs) and NoModel (no
// sample reached 8 inliers).
InlierSet ransac_fundamental(const PairMatches& matches,
                             const std::vector<Keypoint>& query_kps,
                             const std::vector<Keypoint>& train_kps,
                             const RansacParams& params, std::uint64_t seed);

}  // namespace bandmatch
