#include "bandmatch/features.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "binary_io.hpp"

namespace bandmatch {

using detail::get_f32;
using detail::get_u32;
using detail::get_u64;
using detail::put_f32;
using detail::put_u32;
using detail::put_u64;

namespace {

constexpr char kMagic[4] = {'B', 'M', 'F', '1'};
constexpr std::uint32_t kFormatVersion = 1;

float wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a < 0.0) a += two_pi;
  if (a >= two_pi) a = 0.0;  // fmod can land exactly on 2*pi in float math
  return static_cast<float>(a);
}

std::array<float, kDescriptorDim> gaussian_vector(std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> gauss(0.0, sigma);
  std::array<float, kDescriptorDim> v{};
  for (float& c : v) c = static_cast<float>(gauss(rng));
  return v;
}

Descriptor random_unit_descriptor(std::mt19937_64& rng) {
  for (;;) {
    auto raw = gaussian_vector(rng, 1.0);
    double s = 0.0;
    for (float c : raw) s += static_cast<double>(c) * c;
    if (s > 1e-12) return normalize(raw);
  }
}

}  // namespace

float Descriptor::norm() const {
  double s = 0.0;
  for (float c : v) s += static_cast<double>(c) * c;
  return static_cast<float>(std::sqrt(s));
}

Descriptor normalize(const std::array<float, kDescriptorDim>& raw) {
  double s = 0.0;
  for (float c : raw) s += static_cast<double>(c) * c;
  if (s == 0.0) fail("ZeroVector", "cannot normalize an all-zero descriptor");
  const double inv = 1.0 / std::sqrt(s);
  Descriptor d;
  for (int i = 0; i < kDescriptorDim; ++i)
    d.v[i] = static_cast<float>(raw[i] * inv);
  return d;
}

SyntheticDataset generate_synthetic(const SyntheticScene& scene) {
  if (scene.n_images < 1)
    fail("InvalidScene", "n_images must be at least 1");
  if (scene.overlap_band < 0 || scene.overlap_band >= scene.n_images)
    fail("InvalidScene", "overlap_band must satisfy 0 <= overlap_band < n_images");
  if (scene.points_per_image < 0)
    fail("InvalidScene", "points_per_image must be non-negative");
  if (!(scene.outlier_fraction >= 0.0 && scene.outlier_fraction <= 1.0))
    fail("InvalidScene", "outlier_fraction must lie in [0,1]");
  if (!(scene.noise_sigma >= 0.0))
    fail("InvalidScene", "noise_sigma must be non-negative");

  const int n = scene.n_images;
  const int band = scene.overlap_band;

  // World points are anchored to an image index; a point anchored at a is
  // observed by images a .. min(a+band, n-1), so two images share content
  // exactly when their index distance is within the band.
  const double inlier_budget = scene.points_per_image * (1.0 - scene.outlier_fraction);
  const int pts_per_anchor =
      scene.points_per_image > 0
          ? std::max(1, static_cast<int>(std::llround(inlier_budget / (band + 1))))
          : 0;
  const int outliers_per_image =
      static_cast<int>(std::llround(scene.points_per_image * scene.outlier_fraction));

  struct WorldPoint {
    double x, y, scale, orientation;
    Descriptor center;
  };

  std::mt19937_64 rng_world(seed_for(scene.seed, "scene.world"));
  std::uniform_real_distribution<double> upos(0.0, 1000.0);
  std::uniform_real_distribution<double> uscale(1.0, 4.0);
  std::uniform_real_distribution<double> uangle(0.0, 2.0 * std::numbers::pi);

  std::vector<WorldPoint> world(static_cast<std::size_t>(n) * pts_per_anchor);
  for (auto& wp : world) {
    wp.x = upos(rng_world);
    wp.y = upos(rng_world);
    wp.scale = uscale(rng_world);
    wp.orientation = uangle(rng_world);
    wp.center = random_unit_descriptor(rng_world);
  }

  // Per-image similarity transform: keeps within-image angular structure of
  // corresponding point sets intact while still exercising verification.
  struct Pose {
    double theta, s, tx, ty;
    double cos_t, sin_t;
  };
  std::mt19937_64 rng_pose(seed_for(scene.seed, "scene.poses"));
  std::uniform_real_distribution<double> uscale_img(0.8, 1.25);
  std::uniform_real_distribution<double> ushift(-100.0, 100.0);
  std::vector<Pose> poses(n);
  for (auto& p : poses) {
    p.theta = uangle(rng_pose);
    p.s = uscale_img(rng_pose);
    p.tx = ushift(rng_pose);
    p.ty = ushift(rng_pose);
    p.cos_t = std::cos(p.theta);
    p.sin_t = std::sin(p.theta);
  }

  SyntheticDataset out;
  out.images.resize(n);

  std::mt19937_64 rng_obs(seed_for(scene.seed, "scene.observations"));
  for (int i = 0; i < n; ++i) {
    FeatureSet& fs = out.images[i];
    fs.image_id = static_cast<ImageId>(i);

    const int a_lo = std::max(0, i - band);
    const Pose& pose = poses[i];
    for (int a = a_lo; a <= i; ++a) {
      for (int p = 0; p < pts_per_anchor; ++p) {
        const WorldPoint& wp = world[static_cast<std::size_t>(a) * pts_per_anchor + p];
        Keypoint kp;
        kp.x = static_cast<float>(pose.s * (pose.cos_t * wp.x - pose.sin_t * wp.y) +
                                  pose.tx);
        kp.y = static_cast<float>(pose.s * (pose.sin_t * wp.x + pose.cos_t * wp.y) +
                                  pose.ty);
        kp.scale = static_cast<float>(wp.scale * pose.s);
        kp.orientation = wrap_angle(wp.orientation + pose.theta);
        fs.keypoints.push_back(kp);

        auto raw = wp.center.v;
        if (scene.noise_sigma > 0.0) {
          const auto noise = gaussian_vector(rng_obs, scene.noise_sigma);
          for (int c = 0; c < kDescriptorDim; ++c) raw[c] += noise[c];
        }
        fs.descriptors.push_back(normalize(raw));
      }
    }

    for (int o = 0; o < outliers_per_image; ++o) {
      Keypoint kp;
      kp.x = static_cast<float>(upos(rng_obs));
      kp.y = static_cast<float>(upos(rng_obs));
      kp.scale = static_cast<float>(uscale(rng_obs));
      kp.orientation = wrap_angle(uangle(rng_obs));
      fs.keypoints.push_back(kp);
      fs.descriptors.push_back(random_unit_descriptor(rng_obs));
    }
  }

  // Ground truth. Observation index of anchor point (a,p) inside image i is
  // (a - max(0, i-band)) * pts_per_anchor + p because every visible anchor
  // contributes the same number of points.
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n && j - i <= band; ++j) {
      const IdPair pair(static_cast<ImageId>(i), static_cast<ImageId>(j));
      out.true_pairs.push_back(pair);
      if (pts_per_anchor == 0) {
        out.true_correspondences[pair];
        continue;
      }
      std::vector<Correspondence>& corr = out.true_correspondences[pair];
      const int ai_lo = std::max(0, i - band);
      const int aj_lo = std::max(0, j - band);
      for (int a = aj_lo; a <= i; ++a) {
        for (int p = 0; p < pts_per_anchor; ++p) {
          corr.push_back({(a - ai_lo) * pts_per_anchor + p,
                          (a - aj_lo) * pts_per_anchor + p});
        }
      }
    }
  }
  return out;
}

void write_features(const std::filesystem::path& path, const FeatureSet& fs) {
  if (fs.keypoints.size() != fs.descriptors.size())
    fail("FormatError", "keypoint/descriptor count mismatch in feature set");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("FormatError", "cannot open " + path.string() + " for writing");

  detail::put_magic(os, kMagic);
  put_u32(os, kFormatVersion);
  put_u64(os, fs.image_id);
  put_u32(os, static_cast<std::uint32_t>(fs.size()));
  put_u32(os, kDescriptorDim);
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const Keypoint& kp = fs.keypoints[i];
    put_f32(os, kp.x);
    put_f32(os, kp.y);
    put_f32(os, kp.scale);
    put_f32(os, kp.orientation);
    for (float c : fs.descriptors[i].v) put_f32(os, c);
  }
  os.flush();
  if (!os) fail("FormatError", "write failed for " + path.string());
}

FeatureSet read_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("FormatError", "cannot open " + path.string() + " for reading");

  detail::expect_magic(is, kMagic, "feature file");
  const std::uint32_t version = get_u32(is, "version");
  if (version != kFormatVersion)
    fail("FormatError", "unsupported feature file version " + std::to_string(version));

  FeatureSet fs;
  fs.image_id = get_u64(is, "image id");
  const std::uint32_t count = get_u32(is, "feature count");
  const std::uint32_t dim = get_u32(is, "descriptor dim");
  if (dim != kDescriptorDim)
    fail("FormatError", "descriptor dim " + std::to_string(dim) + " != 128");

  fs.keypoints.resize(count);
  fs.descriptors.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Keypoint& kp = fs.keypoints[i];
    kp.x = get_f32(is, "keypoint");
    kp.y = get_f32(is, "keypoint");
    kp.scale = get_f32(is, "keypoint");
    kp.orientation = get_f32(is, "keypoint");
    for (float& c : fs.descriptors[i].v) c = get_f32(is, "descriptor");
  }
  return fs;
}

void write_pairs(const std::filesystem::path& path, const std::vector<IdPair>& pairs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("FormatError", "cannot open " + path.string() + " for writing");
  for (const IdPair& p : pairs) os << p.a << ' ' << p.b << '\n';
  os.flush();
  if (!os) fail("FormatError", "write failed for " + path.string());
}

std::vector<IdPair> read_pairs(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail("FormatError", "cannot open " + path.string() + " for reading");
  std::vector<IdPair> pairs;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ImageId a, b;
    if (!(ls >> a >> b))
      fail("FormatError", "malformed pair line '" + line + "' in " + path.string());
    pairs.emplace_back(a, b);
  }
  return pairs;
}

void write_correspondences(const std::filesystem::path& path,
                           const std::map<IdPair, std::vector<Correspondence>>& corrs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("FormatError", "cannot open " + path.string() + " for writing");
  for (const auto& [pair, list] : corrs)
    for (const Correspondence& c : list)
      os << pair.a << ' ' << pair.b << ' ' << c.query_idx << ' ' << c.train_idx << '\n';
  os.flush();
  if (!os) fail("FormatError", "write failed for " + path.string());
}

std::map<IdPair, std::vector<Correspondence>> read_correspondences(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail("FormatError", "cannot open " + path.string() + " for reading");
  std::map<IdPair, std::vector<Correspondence>> corrs;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ImageId a, b;
    Correspondence c;
    if (!(ls >> a >> b >> c.query_idx >> c.train_idx))
      fail("FormatError",
           "malformed correspondence line '" + line + "' in " + path.string());
    corrs[IdPair(a, b)].push_back(c);
  }
  return corrs;
}

}  // namespace bandmatch
