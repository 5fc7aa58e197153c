#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "bandmatch/common.hpp"

namespace bandmatch {

inline constexpr int kDescriptorDim = 128;

struct Keypoint {
  float x = 0.0f;
  float y = 0.0f;
  float scale = 1.0f;        // strictly positive
  float orientation = 0.0f;  // radians, wrapped into [0, 2*pi)
};

// 128-d real descriptor, unit L2 norm after normalize().
struct Descriptor {
  std::array<float, kDescriptorDim> v{};

  float dot(const Descriptor& o) const {
    float s = 0.0f;
    for (int i = 0; i < kDescriptorDim; ++i) s += v[i] * o.v[i];
    return s;
  }

  float squared_distance(const Descriptor& o) const {
    float s = 0.0f;
    for (int i = 0; i < kDescriptorDim; ++i) {
      const float d = v[i] - o.v[i];
      s += d * d;
    }
    return s;
  }

  float norm() const;

  friend bool operator==(const Descriptor&, const Descriptor&) = default;
};

// One image's features. Keypoints and descriptors are index-aligned.
struct FeatureSet {
  ImageId image_id = 0;
  std::vector<Keypoint> keypoints;
  std::vector<Descriptor> descriptors;

  std::size_t size() const { return descriptors.size(); }
};

// Parameters for the synthetic band-overlap scene generator.
struct SyntheticScene {
  int n_images = 0;
  int points_per_image = 0;
  int overlap_band = 0;         // images i, j share content iff 0 < |i-j| <= overlap_band
  double noise_sigma = 0.0;     // descriptor-space noise std
  double outlier_fraction = 0;  // fraction of clutter features per image, in [0,1]
  std::uint64_t seed = 0;
};

struct Correspondence {
  int query_idx = 0;  // feature index in the lower-id image
  int train_idx = 0;  // feature index in the higher-id image
};

struct SyntheticDataset {
  std::vector<FeatureSet> images;
  std::vector<IdPair> true_pairs;  // exactly {(i,j): 0 < |i-j| <= overlap_band}
  std::map<IdPair, std::vector<Correspondence>> true_correspondences;
};

// Scales a raw vector to unit L2 norm. Throws ZeroVector on an all-zero input.
Descriptor normalize(const std::array<float, kDescriptorDim>& raw);

// Generates a band-overlap scene: shared world points appear in runs of
// overlap_band+1 consecutive images as noisy descriptor copies, keypoint
// positions related by a per-image similarity transform. Deterministic under
// scene.seed. Throws InvalidScene when the scene invariants are violated.
SyntheticDataset generate_synthetic(const SyntheticScene& scene);

// Binary feature file, little-endian. Header: magic "BMF1", version u32,
// image_id u64, feature count u32, descriptor dim u32. Body: per feature
// x, y, scale, orientation (f32) followed by 128 f32 descriptor components.
void write_features(const std::filesystem::path& path, const FeatureSet& fs);
FeatureSet read_features(const std::filesystem::path& path);

// Ground-truth text files: one "i j" line per pair; one
// "pair_i pair_j query_idx train_idx" line per correspondence.
void write_pairs(const std::filesystem::path& path, const std::vector<IdPair>& pairs);
std::vector<IdPair> read_pairs(const std::filesystem::path& path);
void write_correspondences(const std::filesystem::path& path,
                           const std::map<IdPair, std::vector<Correspondence>>& corrs);
std::map<IdPair, std::vector<Correspondence>> read_correspondences(
    const std::filesystem::path& path);

}  // namespace bandmatch
