#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "bandmatch/features.hpp"
#include "test_util.hpp"

using namespace bandmatch;
using testutil::error_code_of;
using testutil::TempDir;

namespace {

std::array<float, kDescriptorDim> filled(float value) {
  std::array<float, kDescriptorDim> v{};
  v.fill(value);
  return v;
}

bool same_bytes(const FeatureSet& a, const FeatureSet& b) {
  if (a.image_id != b.image_id || a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a.keypoints[i], &b.keypoints[i], sizeof(Keypoint)) != 0)
      return false;
    if (std::memcmp(a.descriptors[i].v.data(), b.descriptors[i].v.data(),
                    sizeof(float) * kDescriptorDim) != 0)
      return false;
  }
  return true;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("normalize maps an all-ones vector to uniform components") {
  const Descriptor d = normalize(filled(1.0f));
  const float expect = 1.0f / std::sqrt(128.0f);
  for (float c : d.v) CHECK(c == doctest::Approx(expect).epsilon(1e-6));
  CHECK(d.norm() == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("normalize leaves a unit vector unchanged") {
  std::array<float, kDescriptorDim> raw{};
  raw[3] = 0.6f;
  raw[10] = 0.8f;
  const Descriptor d = normalize(raw);
  CHECK(std::abs(d.v[3] - 0.6f) < 1e-7f);
  CHECK(std::abs(d.v[10] - 0.8f) < 1e-7f);
}

TEST_CASE("normalize scales a single-axis vector to the unit axis") {
  std::array<float, kDescriptorDim> raw{};
  raw[0] = 2.0f;
  const Descriptor d = normalize(raw);
  CHECK(d.v[0] == 1.0f);
  for (int i = 1; i < kDescriptorDim; ++i) CHECK(d.v[i] == 0.0f);
}

TEST_CASE("normalize rejects the zero vector") {
  CHECK(error_code_of([] { normalize(filled(0.0f)); }) == "ZeroVector");
}

TEST_CASE("normalize is idempotent") {
  std::mt19937_64 rng(11);
  std::normal_distribution<float> gauss(0.0f, 2.0f);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<float, kDescriptorDim> raw{};
    for (float& c : raw) c = gauss(rng);
    const Descriptor once = normalize(raw);
    const Descriptor twice = normalize(once.v);
    for (int i = 0; i < kDescriptorDim; ++i)
      CHECK(std::abs(once.v[i] - twice.v[i]) < 1e-7f);
  }
}

TEST_CASE("band-1 scene yields exactly the adjacent pairs") {
  SyntheticScene scene;
  scene.n_images = 4;
  scene.points_per_image = 10;
  scene.overlap_band = 1;
  scene.seed = 1;
  const SyntheticDataset data = generate_synthetic(scene);
  const std::vector<IdPair> expect = {{0, 1}, {1, 2}, {2, 3}};
  CHECK(data.true_pairs == expect);
}

TEST_CASE("zero overlap band yields no pairs") {
  SyntheticScene scene;
  scene.n_images = 5;
  scene.points_per_image = 8;
  scene.overlap_band = 0;
  scene.seed = 2;
  const SyntheticDataset data = generate_synthetic(scene);
  CHECK(data.true_pairs.empty());
  CHECK(data.images.size() == 5);
  for (const FeatureSet& fs : data.images) CHECK(fs.size() > 0);
}

TEST_CASE("generation is deterministic under a fixed seed") {
  SyntheticScene scene;
  scene.n_images = 10;
  scene.points_per_image = 20;
  scene.overlap_band = 3;
  scene.noise_sigma = 0.05;
  scene.outlier_fraction = 0.25;
  scene.seed = 99;
  const SyntheticDataset a = generate_synthetic(scene);
  const SyntheticDataset b = generate_synthetic(scene);
  REQUIRE(a.images.size() == b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i)
    CHECK(same_bytes(a.images[i], b.images[i]));
  CHECK(a.true_pairs == b.true_pairs);
  CHECK(a.true_correspondences.size() == b.true_correspondences.size());
}

TEST_CASE("ground-truth pair set matches the band rule for a larger scene") {
  SyntheticScene scene;
  scene.n_images = 17;
  scene.points_per_image = 6;
  scene.overlap_band = 4;
  scene.seed = 5;
  const SyntheticDataset data = generate_synthetic(scene);
  std::vector<IdPair> expect;
  for (int i = 0; i < 17; ++i)
    for (int j = i + 1; j < 17 && j - i <= 4; ++j)
      expect.emplace_back(static_cast<ImageId>(i), static_cast<ImageId>(j));
  CHECK(data.true_pairs == expect);
  // Every listed pair carries a correspondence list, and no other pair does.
  CHECK(data.true_correspondences.size() == expect.size());
}

TEST_CASE("noise-free correspondences point at identical descriptors") {
  SyntheticScene scene;
  scene.n_images = 8;
  scene.points_per_image = 12;
  scene.overlap_band = 2;
  scene.noise_sigma = 0.0;
  scene.outlier_fraction = 0.0;
  scene.seed = 7;
  const SyntheticDataset data = generate_synthetic(scene);
  REQUIRE(!data.true_correspondences.empty());
  for (const auto& [pair, corrs] : data.true_correspondences) {
    const FeatureSet& qf = data.images[pair.a];
    const FeatureSet& tf = data.images[pair.b];
    CHECK(!corrs.empty());
    for (const Correspondence& c : corrs) {
      REQUIRE(c.query_idx >= 0);
      REQUIRE(c.query_idx < static_cast<int>(qf.size()));
      REQUIRE(c.train_idx >= 0);
      REQUIRE(c.train_idx < static_cast<int>(tf.size()));
      CHECK(qf.descriptors[c.query_idx] == tf.descriptors[c.train_idx]);
    }
  }
}

TEST_CASE("corresponding keypoints are related by one similarity per pair") {
  SyntheticScene scene;
  scene.n_images = 6;
  scene.points_per_image = 15;
  scene.overlap_band = 2;
  scene.noise_sigma = 0.0;
  scene.outlier_fraction = 0.0;
  scene.seed = 21;
  const SyntheticDataset data = generate_synthetic(scene);
  for (const auto& [pair, corrs] : data.true_correspondences) {
    REQUIRE(corrs.size() >= 3);
    const FeatureSet& qf = data.images[pair.a];
    const FeatureSet& tf = data.images[pair.b];
    // A similarity transform preserves distance ratios between point pairs.
    const auto& k0q = qf.keypoints[corrs[0].query_idx];
    const auto& k1q = qf.keypoints[corrs[1].query_idx];
    const auto& k0t = tf.keypoints[corrs[0].train_idx];
    const auto& k1t = tf.keypoints[corrs[1].train_idx];
    const double dq = std::hypot(k1q.x - k0q.x, k1q.y - k0q.y);
    const double dt = std::hypot(k1t.x - k0t.x, k1t.y - k0t.y);
    REQUIRE(dq > 1e-6);
    const double ratio = dt / dq;
    for (std::size_t i = 2; i < corrs.size(); ++i) {
      const auto& kq = qf.keypoints[corrs[i].query_idx];
      const auto& kt = tf.keypoints[corrs[i].train_idx];
      const double dq_i = std::hypot(kq.x - k0q.x, kq.y - k0q.y);
      const double dt_i = std::hypot(kt.x - k0t.x, kt.y - k0t.y);
      if (dq_i < 1e-6) continue;
      CHECK(dt_i / dq_i == doctest::Approx(ratio).epsilon(1e-3));
    }
  }
}

TEST_CASE("scene invariant violations raise InvalidScene") {
  SyntheticScene scene;
  scene.n_images = 4;
  scene.points_per_image = 5;
  scene.overlap_band = 4;  // must stay below n_images
  scene.seed = 1;
  CHECK(error_code_of([&] { generate_synthetic(scene); }) == "InvalidScene");

  scene.overlap_band = 1;
  scene.outlier_fraction = 1.5;
  CHECK(error_code_of([&] { generate_synthetic(scene); }) == "InvalidScene");

  scene.outlier_fraction = 0.0;
  scene.points_per_image = -3;
  CHECK(error_code_of([&] { generate_synthetic(scene); }) == "InvalidScene");

  scene.points_per_image = 5;
  scene.n_images = 0;
  CHECK(error_code_of([&] { generate_synthetic(scene); }) == "InvalidScene");
}

TEST_CASE("feature files round-trip bit-exactly") {
  SyntheticScene scene;
  scene.n_images = 3;
  scene.points_per_image = 25;
  scene.overlap_band = 1;
  scene.noise_sigma = 0.1;
  scene.outlier_fraction = 0.3;
  scene.seed = 31;
  const SyntheticDataset data = generate_synthetic(scene);

  TempDir dir;
  for (const FeatureSet& fs : data.images) {
    const auto path = dir.file("img.feat");
    write_features(path, fs);
    const FeatureSet back = read_features(path);
    CHECK(same_bytes(fs, back));
  }
}

TEST_CASE("an empty feature set round-trips") {
  FeatureSet fs;
  fs.image_id = 77;
  TempDir dir;
  const auto path = dir.file("empty.feat");
  write_features(path, fs);
  const FeatureSet back = read_features(path);
  CHECK(back.image_id == 77);
  CHECK(back.size() == 0);
}

TEST_CASE("corrupted magic raises FormatError") {
  FeatureSet fs;
  fs.image_id = 1;
  TempDir dir;
  const auto path = dir.file("bad.feat");
  write_features(path, fs);
  std::string bytes = slurp(path);
  bytes[0] = 'X';
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  CHECK(error_code_of([&] { read_features(path); }) == "FormatError");
}

TEST_CASE("a short file raises TruncatedFile") {
  SyntheticScene scene;
  scene.n_images = 1;
  scene.points_per_image = 10;
  scene.overlap_band = 0;
  scene.seed = 3;
  const SyntheticDataset data = generate_synthetic(scene);
  TempDir dir;
  const auto path = dir.file("cut.feat");
  write_features(path, data.images[0]);
  const std::string bytes = slurp(path);
  std::ofstream(path, std::ios::binary | std::ios::trunc)
      << bytes.substr(0, bytes.size() / 2);
  CHECK(error_code_of([&] { read_features(path); }) == "TruncatedFile");
}

TEST_CASE("an unsupported version raises FormatError") {
  FeatureSet fs;
  fs.image_id = 9;
  TempDir dir;
  const auto path = dir.file("ver.feat");
  write_features(path, fs);
  std::string bytes = slurp(path);
  bytes[4] = 9;  // version field follows the 4-byte magic
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  CHECK(error_code_of([&] { read_features(path); }) == "FormatError");
}

TEST_CASE("ground-truth text files round-trip") {
  SyntheticScene scene;
  scene.n_images = 7;
  scene.points_per_image = 9;
  scene.overlap_band = 2;
  scene.seed = 13;
  const SyntheticDataset data = generate_synthetic(scene);

  TempDir dir;
  write_pairs(dir.file("pairs.txt"), data.true_pairs);
  CHECK(read_pairs(dir.file("pairs.txt")) == data.true_pairs);

  write_correspondences(dir.file("corr.txt"), data.true_correspondences);
  const auto back = read_correspondences(dir.file("corr.txt"));
  REQUIRE(back.size() == data.true_correspondences.size());
  for (const auto& [pair, corrs] : data.true_correspondences) {
    const auto it = back.find(pair);
    REQUIRE(it != back.end());
    REQUIRE(it->second.size() == corrs.size());
    for (std::size_t i = 0; i < corrs.size(); ++i) {
      CHECK(it->second[i].query_idx == corrs[i].query_idx);
      CHECK(it->second[i].train_idx == corrs[i].train_idx);
    }
  }
}

TEST_CASE("generated keypoints keep scale positive and orientation in range") {
  SyntheticScene scene;
  scene.n_images = 5;
  scene.points_per_image = 30;
  scene.overlap_band = 2;
  scene.noise_sigma = 0.05;
  scene.outlier_fraction = 0.4;
  scene.seed = 17;
  const SyntheticDataset data = generate_synthetic(scene);
  for (const FeatureSet& fs : data.images) {
    CHECK(fs.keypoints.size() == fs.descriptors.size());
    for (const Keypoint& kp : fs.keypoints) {
      CHECK(kp.scale > 0.0f);
      CHECK(kp.orientation >= 0.0f);
      CHECK(kp.orientation < 6.2831856f);
    }
    for (const Descriptor& d : fs.descriptors)
      CHECK(d.norm() == doctest::Approx(1.0).epsilon(1e-5));
  }
}
