#include "bandmatch/hashmatch.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "binary_io.hpp"

namespace bandmatch {

namespace {

constexpr char kMatchMagic[4] = {'B', 'M', 'M', 'T'};
constexpr std::uint32_t kMatchVersion = 1;

void check_params(const HashParams& p) {
  if (p.tables < 1) fail("InvalidArgument", "hash tables must be >= 1");
  if (p.coarse_bits < 1 || p.coarse_bits > 32)
    fail("InvalidArgument", "coarse_bits must lie in [1,32]");
  if (p.fine_bits < 1) fail("InvalidArgument", "fine_bits must be >= 1");
}

double centered_dot(const Descriptor& d, const std::array<float, kDescriptorDim>& mean,
                    const float* plane) {
  double s = 0.0;
  for (int c = 0; c < kDescriptorDim; ++c)
    s += (static_cast<double>(d.v[c]) - mean[c]) * plane[c];
  return s;
}

double euclidean(const Descriptor& a, const Descriptor& b) {
  double s = 0.0;
  for (int c = 0; c < kDescriptorDim; ++c) {
    const double d = static_cast<double>(a.v[c]) - b.v[c];
    s += d * d;
  }
  return std::sqrt(s);
}

// Shared acceptance rule: the nearest candidate survives iff it is the only
// one or clearly ahead of the runner-up. Candidates arrive as (distance,
// train_idx) with the lexicographic minimum first.
bool ratio_accept(double d1, double d2, bool lone, double ratio) {
  return lone || d1 < d2 * ratio;
}

}  // namespace

HashFunctions make_hash_functions(std::uint64_t seed, const HashParams& params) {
  check_params(params);
  HashFunctions hf;
  hf.params = params;
  hf.seed = seed;

  std::normal_distribution<float> gauss(0.0f, 1.0f);
  std::mt19937_64 rng_coarse(seed_for(seed, "hash.coarse"));
  hf.coarse.resize(static_cast<std::size_t>(params.tables) * params.coarse_bits *
                   kDescriptorDim);
  for (float& c : hf.coarse) c = gauss(rng_coarse);

  std::mt19937_64 rng_fine(seed_for(seed, "hash.fine"));
  hf.fine.resize(static_cast<std::size_t>(params.fine_bits) * kDescriptorDim);
  for (float& c : hf.fine) c = gauss(rng_fine);
  return hf;
}

HashCodeSet compute_codes(const FeatureSet& fs, const HashFunctions& hf,
                          const std::array<float, kDescriptorDim>& centering_mean) {
  check_params(hf.params);
  HashCodeSet cs;
  cs.image_id = fs.image_id;
  cs.function_seed = hf.seed;
  cs.params = hf.params;
  cs.count = fs.size();
  cs.fine_words = (hf.params.fine_bits + 63) / 64;
  cs.coarse.assign(cs.count * hf.params.tables, 0);
  cs.fine.assign(cs.count * cs.fine_words, 0);

  for (std::size_t i = 0; i < cs.count; ++i) {
    const Descriptor& d = fs.descriptors[i];
    for (int t = 0; t < hf.params.tables; ++t) {
      std::uint32_t bucket = 0;
      for (int b = 0; b < hf.params.coarse_bits; ++b) {
        if (centered_dot(d, centering_mean, hf.coarse_plane(t, b)) > 0.0)
          bucket |= 1u << b;
      }
      cs.coarse[i * hf.params.tables + t] = bucket;
    }
    std::uint64_t* fine = cs.fine.data() + i * cs.fine_words;
    for (int b = 0; b < hf.params.fine_bits; ++b) {
      if (centered_dot(d, centering_mean, hf.fine_plane(b)) > 0.0)
        fine[b / 64] |= 1ull << (b % 64);
    }
  }
  return cs;
}

PairMatches match_pair(const FeatureSet& qf, const HashCodeSet& qc,
                       const FeatureSet& tf, const HashCodeSet& tc,
                       const MatchParams& mp) {
  if (qc.function_seed != tc.function_seed)
    fail("HashMismatch", "code sets built from different hash function seeds");
  if (qc.params.tables != tc.params.tables ||
      qc.params.coarse_bits != tc.params.coarse_bits ||
      qc.params.fine_bits != tc.params.fine_bits)
    fail("HashMismatch", "code sets built with different hash parameters");
  if (qc.count != qf.size() || tc.count != tf.size())
    fail("HashMismatch", "code set does not cover its feature set");
  if (mp.k_nearest < 1) fail("InvalidArgument", "k_nearest must be >= 1");

  PairMatches pm;
  pm.query_image = qf.image_id;
  pm.train_image = tf.image_id;
  if (qc.count == 0 || tc.count == 0) return pm;

  const int tables = tc.params.tables;
  const std::size_t n_buckets = std::size_t{1} << tc.params.coarse_bits;
  const int fine_words = tc.fine_words;
  const int max_ham = tc.params.fine_bits;

  // Per-table bucket index over train features: bucket -> contiguous slice of
  // ascending train indices.
  std::vector<std::uint32_t> offsets(static_cast<std::size_t>(tables) * (n_buckets + 1),
                                     0);
  for (std::size_t j = 0; j < tc.count; ++j)
    for (int t = 0; t < tables; ++t)
      ++offsets[t * (n_buckets + 1) + tc.bucket(j, t) + 1];
  for (int t = 0; t < tables; ++t) {
    std::uint32_t* row = offsets.data() + static_cast<std::size_t>(t) * (n_buckets + 1);
    for (std::size_t b = 0; b < n_buckets; ++b) row[b + 1] += row[b];
  }
  std::vector<std::uint32_t> slots(static_cast<std::size_t>(tables) * tc.count);
  {
    std::vector<std::uint32_t> cursor(offsets);
    for (std::size_t j = 0; j < tc.count; ++j)
      for (int t = 0; t < tables; ++t) {
        std::uint32_t& c = cursor[t * (n_buckets + 1) + tc.bucket(j, t)];
        slots[static_cast<std::size_t>(t) * tc.count + c++] =
            static_cast<std::uint32_t>(j);
      }
  }

  std::vector<int> last_seen(tc.count, -1);
  std::vector<std::uint32_t> candidates;
  std::vector<int> by_distance;
  std::vector<std::uint32_t> dist_start(max_ham + 2);
  std::vector<MatchCandidate> top;

  for (std::size_t qi = 0; qi < qc.count; ++qi) {
    candidates.clear();
    for (int t = 0; t < tables; ++t) {
      const std::uint32_t* row =
          offsets.data() + static_cast<std::size_t>(t) * (n_buckets + 1);
      const std::uint32_t bucket = qc.bucket(qi, t);
      const std::uint32_t* slot_row = slots.data() + static_cast<std::size_t>(t) * tc.count;
      for (std::uint32_t s = row[bucket]; s < row[bucket + 1]; ++s) {
        const std::uint32_t j = slot_row[s];
        if (last_seen[j] != static_cast<int>(qi)) {
          last_seen[j] = static_cast<int>(qi);
          candidates.push_back(j);
        }
      }
    }
    if (candidates.empty()) continue;
    std::sort(candidates.begin(), candidates.end());

    // Distance-keyed counting sort of the bucket union by fine-code Hamming
    // distance; candidates were sorted first, so equal distances keep the
    // ascending train-index order.
    std::fill(dist_start.begin(), dist_start.end(), 0);
    const std::uint64_t* qcode = qc.fine_code(qi);
    std::vector<int> ham(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const std::uint64_t* tcode = tc.fine_code(candidates[c]);
      int h = 0;
      for (int w = 0; w < fine_words; ++w) h += std::popcount(qcode[w] ^ tcode[w]);
      ham[c] = h;
      ++dist_start[h + 1];
    }
    for (int h = 0; h <= max_ham; ++h) dist_start[h + 1] += dist_start[h];
    by_distance.assign(candidates.size(), 0);
    {
      std::vector<std::uint32_t> cursor(dist_start);
      for (std::size_t c = 0; c < candidates.size(); ++c)
        by_distance[cursor[ham[c]]++] = static_cast<int>(c);
    }

    const std::size_t keep =
        std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(mp.k_nearest));
    top.clear();
    for (std::size_t r = 0; r < keep; ++r) {
      const int c = by_distance[r];
      const int tj = static_cast<int>(candidates[c]);
      top.push_back({static_cast<int>(qi), tj, ham[c],
                     euclidean(qf.descriptors[qi], tf.descriptors[tj])});
    }
    std::sort(top.begin(), top.end(), [](const MatchCandidate& a, const MatchCandidate& b) {
      if (a.euclidean != b.euclidean) return a.euclidean < b.euclidean;
      return a.train_idx < b.train_idx;
    });

    const bool lone = top.size() == 1;
    if (ratio_accept(top[0].euclidean, lone ? 0.0 : top[1].euclidean, lone, mp.ratio))
      pm.matches.emplace_back(static_cast<int>(qi), top[0].train_idx);
  }
  return pm;
}

PairMatches brute_force_match(const FeatureSet& qf, const FeatureSet& tf, double ratio) {
  PairMatches pm;
  pm.query_image = qf.image_id;
  pm.train_image = tf.image_id;
  if (qf.size() == 0 || tf.size() == 0) return pm;

  for (std::size_t qi = 0; qi < qf.size(); ++qi) {
    int best = -1, second = -1;
    double best_d = 0.0, second_d = 0.0;
    for (std::size_t tj = 0; tj < tf.size(); ++tj) {
      const double d = euclidean(qf.descriptors[qi], tf.descriptors[tj]);
      if (best < 0 || d < best_d) {
        second = best;
        second_d = best_d;
        best = static_cast<int>(tj);
        best_d = d;
      } else if (second < 0 || d < second_d) {
        second = static_cast<int>(tj);
        second_d = d;
      }
    }
    const bool lone = second < 0;
    if (ratio_accept(best_d, second_d, lone, ratio))
      pm.matches.emplace_back(static_cast<int>(qi), best);
  }
  return pm;
}

namespace {

std::vector<PairMatches> sorted_by_pair(std::vector<PairMatches> all) {
  std::sort(all.begin(), all.end(), [](const PairMatches& x, const PairMatches& y) {
    if (x.query_image != y.query_image) return x.query_image < y.query_image;
    return x.train_image < y.train_image;
  });
  for (PairMatches& pm : all) std::sort(pm.matches.begin(), pm.matches.end());
  return all;
}

}  // namespace

void write_matches_text(const std::filesystem::path& path,
                        const std::vector<PairMatches>& all) {
  const std::vector<PairMatches> ordered = sorted_by_pair(all);
  std::size_t nonempty = 0;
  for (const PairMatches& pm : ordered) nonempty += pm.matches.empty() ? 0 : 1;

  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("FormatError", "cannot open " + path.string() + " for writing");
  os << "pairs " << nonempty << '\n';
  for (const PairMatches& pm : ordered)
    for (const auto& [qi, ti] : pm.matches)
      os << pm.query_image << ' ' << pm.train_image << ' ' << qi << ' ' << ti << '\n';
  os.flush();
  if (!os) fail("FormatError", "write failed for " + path.string());
}

std::vector<PairMatches> read_matches_text(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail("FormatError", "cannot open " + path.string() + " for reading");

  std::string line;
  if (!std::getline(is, line)) fail("TruncatedFile", "missing match header");
  std::istringstream hs(line);
  std::string tag;
  std::size_t declared = 0;
  if (!(hs >> tag >> declared) || tag != "pairs")
    fail("FormatError", "malformed match header '" + line + "'");

  std::map<std::pair<ImageId, ImageId>, std::vector<std::pair<int, int>>> grouped;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ImageId q, t;
    int qi, ti;
    if (!(ls >> q >> t >> qi >> ti))
      fail("FormatError", "malformed match line '" + line + "'");
    grouped[{q, t}].emplace_back(qi, ti);
  }
  if (grouped.size() < declared)
    fail("TruncatedFile", "match file lists " + std::to_string(grouped.size()) +
                              " pairs, header declares " + std::to_string(declared));
  if (grouped.size() > declared)
    fail("FormatError", "match file lists " + std::to_string(grouped.size()) +
                            " pairs, header declares " + std::to_string(declared));

  std::vector<PairMatches> all;
  for (auto& [key, list] : grouped) {
    PairMatches pm;
    pm.query_image = key.first;
    pm.train_image = key.second;
    pm.matches = std::move(list);
    std::sort(pm.matches.begin(), pm.matches.end());
    all.push_back(std::move(pm));
  }
  return all;
}

void write_matches_binary(const std::filesystem::path& path,
                          const std::vector<PairMatches>& all) {
  const std::vector<PairMatches> ordered = sorted_by_pair(all);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("FormatError", "cannot open " + path.string() + " for writing");
  detail::put_magic(os, kMatchMagic);
  detail::put_u32(os, kMatchVersion);
  detail::put_u64(os, ordered.size());
  for (const PairMatches& pm : ordered) {
    detail::put_u64(os, pm.query_image);
    detail::put_u64(os, pm.train_image);
    const unsigned char stage = pm.stage == PairMatches::Stage::kVerified ? 1 : 0;
    os.put(static_cast<char>(stage));
    detail::put_u32(os, static_cast<std::uint32_t>(pm.matches.size()));
    for (const auto& [qi, ti] : pm.matches) {
      detail::put_u32(os, static_cast<std::uint32_t>(qi));
      detail::put_u32(os, static_cast<std::uint32_t>(ti));
    }
  }
  os.flush();
  if (!os) fail("FormatError", "write failed for " + path.string());
}

std::vector<PairMatches> read_matches_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("FormatError", "cannot open " + path.string() + " for reading");
  detail::expect_magic(is, kMatchMagic, "match file");
  const std::uint32_t version = detail::get_u32(is, "match file version");
  if (version != kMatchVersion)
    fail("FormatError", "unsupported match file version " + std::to_string(version));
  const std::uint64_t n_pairs = detail::get_u64(is, "pair count");

  std::vector<PairMatches> all;
  all.reserve(n_pairs);
  for (std::uint64_t p = 0; p < n_pairs; ++p) {
    PairMatches pm;
    pm.query_image = detail::get_u64(is, "query image id");
    pm.train_image = detail::get_u64(is, "train image id");
    unsigned char stage;
    detail::get_bytes(is, &stage, 1, "match stage");
    if (stage > 1) fail("FormatError", "unknown match stage " + std::to_string(stage));
    pm.stage = stage == 1 ? PairMatches::Stage::kVerified : PairMatches::Stage::kInitial;
    const std::uint32_t count = detail::get_u32(is, "match count");
    pm.matches.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      const int qi = static_cast<int>(detail::get_u32(is, "match"));
      const int ti = static_cast<int>(detail::get_u32(is, "match"));
      pm.matches.emplace_back(qi, ti);
    }
    all.push_back(std::move(pm));
  }
  return all;
}

}  // namespace bandmatch
