#include "bandmatch/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "binary_io.hpp"

namespace bandmatch {

std::vector<Descriptor> select_training_descriptors(
    const std::vector<FeatureSet>& features, double p_percent, int h_top_scale,
    std::uint64_t seed) {
  if (features.empty()) fail("EmptyInput", "no feature sets to sample from");
  if (!(p_percent > 0.0 && p_percent <= 100.0))
    fail("InvalidArgument", "p_percent must lie in (0,100]");
  if (h_top_scale < 1) fail("InvalidArgument", "h_top_scale must be >= 1");

  const std::size_t n = features.size();
  const std::size_t n_sampled = static_cast<std::size_t>(
      std::ceil(p_percent / 100.0 * static_cast<double>(n)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(n, n_sampled));
  std::sort(order.begin(), order.end());

  std::vector<Descriptor> out;
  for (std::size_t img : order) {
    const FeatureSet& fs = features[img];
    std::vector<std::size_t> by_scale(fs.size());
    std::iota(by_scale.begin(), by_scale.end(), 0);
    std::stable_sort(by_scale.begin(), by_scale.end(), [&](std::size_t u, std::size_t v) {
      return fs.keypoints[u].scale > fs.keypoints[v].scale;
    });
    const std::size_t take = std::min<std::size_t>(fs.size(), h_top_scale);
    for (std::size_t r = 0; r < take; ++r) out.push_back(fs.descriptors[by_scale[r]]);
  }
  return out;
}

namespace {

double sq_dist(const Descriptor& d, const double* centroid) {
  double s = 0.0;
  for (int c = 0; c < kDescriptorDim; ++c) {
    const double diff = static_cast<double>(d.v[c]) - centroid[c];
    s += diff * diff;
  }
  return s;
}

}  // namespace

Codebook train_codebook(const std::vector<Descriptor>& descriptors, int k_words,
                        int max_iters, std::uint64_t seed,
                        std::vector<double>* sse_history) {
  if (k_words < 1) fail("InvalidArgument", "k_words must be >= 1");
  if (max_iters < 1) fail("InvalidArgument", "max_iters must be >= 1");
  const std::size_t n = descriptors.size();
  if (n < static_cast<std::size_t>(k_words))
    fail("TooFewDescriptors", "need at least " + std::to_string(k_words) +
                                  " descriptors, got " + std::to_string(n));
  if (sse_history) sse_history->clear();

  // Initial centroids: k distinct descriptor values in shuffled order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<double> centroids(static_cast<std::size_t>(k_words) * kDescriptorDim);
  int picked = 0;
  for (std::size_t idx : order) {
    if (picked == k_words) break;
    const Descriptor& d = descriptors[idx];
    bool duplicate = false;
    for (int k = 0; k < picked && !duplicate; ++k) {
      const double* c = centroids.data() + static_cast<std::size_t>(k) * kDescriptorDim;
      duplicate = true;
      for (int j = 0; j < kDescriptorDim; ++j)
        if (static_cast<double>(d.v[j]) != c[j]) {
          duplicate = false;
          break;
        }
    }
    if (duplicate) continue;
    double* c = centroids.data() + static_cast<std::size_t>(picked) * kDescriptorDim;
    for (int j = 0; j < kDescriptorDim; ++j) c[j] = d.v[j];
    ++picked;
  }
  if (picked < k_words)
    fail("TooFewDescriptors", "fewer than " + std::to_string(k_words) +
                                  " distinct descriptor values");

  std::vector<int> assign(n, -1), prev_assign(n, -1);
  std::vector<double> point_d2(n, 0.0);

  for (int iter = 0; iter < max_iters; ++iter) {
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d2 = sq_dist(descriptors[i], centroids.data());
      for (int k = 1; k < k_words; ++k) {
        const double d2 = sq_dist(
            descriptors[i], centroids.data() + static_cast<std::size_t>(k) * kDescriptorDim);
        if (d2 < best_d2) {
          best_d2 = d2;
          best = k;
        }
      }
      assign[i] = best;
      point_d2[i] = best_d2;
      sse += best_d2;
    }
    if (sse_history) sse_history->push_back(sse);
    if (assign == prev_assign) break;
    prev_assign = assign;

    std::vector<double> sums(centroids.size(), 0.0);
    std::vector<std::size_t> counts(k_words, 0);
    for (std::size_t i = 0; i < n; ++i) {
      double* s = sums.data() + static_cast<std::size_t>(assign[i]) * kDescriptorDim;
      for (int j = 0; j < kDescriptorDim; ++j) s[j] += descriptors[i].v[j];
      ++counts[assign[i]];
    }
    for (int k = 0; k < k_words; ++k) {
      if (counts[k] == 0) continue;
      double* c = centroids.data() + static_cast<std::size_t>(k) * kDescriptorDim;
      const double* s = sums.data() + static_cast<std::size_t>(k) * kDescriptorDim;
      const double inv = 1.0 / static_cast<double>(counts[k]);
      for (int j = 0; j < kDescriptorDim; ++j) c[j] = s[j] * inv;
    }
    // Empty clusters grab the point currently worst-served by its centroid;
    // moving an unused centroid never raises the SSE.
    for (int k = 0; k < k_words; ++k) {
      if (counts[k] != 0) continue;
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (point_d2[i] > point_d2[far]) far = i;
      double* c = centroids.data() + static_cast<std::size_t>(k) * kDescriptorDim;
      for (int j = 0; j < kDescriptorDim; ++j) c[j] = descriptors[far].v[j];
      point_d2[far] = 0.0;  // not a candidate for the next empty cluster
    }
  }

  Codebook cb;
  cb.k_words = k_words;
  cb.centroids.resize(centroids.size());
  for (std::size_t i = 0; i < centroids.size(); ++i)
    cb.centroids[i] = static_cast<float>(centroids[i]);
  return cb;
}

VladVector encode_vlad(const FeatureSet& fs, const Codebook& cb) {
  if (cb.k_words < 1) fail("InvalidArgument", "codebook has no words");
  const std::size_t dim = static_cast<std::size_t>(cb.k_words) * kDescriptorDim;
  VladVector out;
  out.values.assign(dim, 0.0f);
  if (fs.size() == 0) {
    out.degenerate = true;
    return out;
  }

  std::vector<double> acc(dim, 0.0);
  for (const Descriptor& d : fs.descriptors) {
    int best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int k = 0; k < cb.k_words; ++k) {
      const float* c = cb.centroid(k);
      double s = 0.0;
      for (int j = 0; j < kDescriptorDim; ++j) {
        const double diff = static_cast<double>(d.v[j]) - c[j];
        s += diff * diff;
      }
      if (s < best_d2) {
        best_d2 = s;
        best = k;
      }
    }
    double* slot = acc.data() + static_cast<std::size_t>(best) * kDescriptorDim;
    const float* c = cb.centroid(best);
    for (int j = 0; j < kDescriptorDim; ++j)
      slot[j] += static_cast<double>(d.v[j]) - c[j];
  }

  double norm2 = 0.0;
  for (double& v : acc) {
    v = v >= 0.0 ? std::sqrt(v) : -std::sqrt(-v);  // signed square root
    norm2 += v * v;
  }
  if (norm2 <= 0.0) {
    out.degenerate = true;
    return out;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (std::size_t i = 0; i < dim; ++i)
    out.values[i] = static_cast<float>(acc[i] * inv);
  return out;
}

// --- HNSW -----------------------------------------------------------------

HnswIndex::HnswIndex(int dim, const HnswParams& params, std::uint64_t seed)
    : dim_(dim), params_(params), level_rng_(seed) {
  if (dim < 1) fail("InvalidArgument", "index dimension must be >= 1");
  if (params.max_neighbors < 2)
    fail("InvalidArgument", "max_neighbors must be >= 2");
  if (params.ef_construction < 1 || params.ef_search < 1)
    fail("InvalidArgument", "ef parameters must be >= 1");
  level_mult_ = 1.0 / std::log(static_cast<double>(params.max_neighbors));
}

double HnswIndex::distance(const std::vector<float>& a,
                           const std::vector<float>& b) const {
  double s = 0.0;
  for (int i = 0; i < dim_; ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

int HnswIndex::slot_of(int id) const {
  const auto it = slot_by_id_.find(id);
  if (it == slot_by_id_.end())
    fail("InvalidArgument", "unknown index node " + std::to_string(id));
  return it->second;
}

int HnswIndex::entry_point() const {
  if (entry_ < 0) fail("EmptyInput", "index holds no vectors");
  return nodes_[entry_].external_id;
}

int HnswIndex::level_of(int id) const {
  return static_cast<int>(nodes_[slot_of(id)].links.size()) - 1;
}

std::vector<int> HnswIndex::neighbors_of(int id, int level) const {
  const Node& node = nodes_[slot_of(id)];
  if (level < 0 || level >= static_cast<int>(node.links.size()))
    fail("InvalidArgument", "node has no such level");
  std::vector<int> out;
  out.reserve(node.links[level].size());
  for (int s : node.links[level]) out.push_back(nodes_[s].external_id);
  return out;
}

int HnswIndex::greedy_descent(const std::vector<float>& q, int ep, int level) const {
  double best = distance(q, nodes_[ep].vec);
  bool improved = true;
  while (improved) {
    improved = false;
    for (int nb : nodes_[ep].links[level]) {
      const double d = distance(q, nodes_[nb].vec);
      if (d < best) {
        best = d;
        ep = nb;
        improved = true;
      }
    }
  }
  return ep;
}

std::vector<std::pair<double, int>> HnswIndex::search_layer(const std::vector<float>& q,
                                                            int ep, int ef,
                                                            int level) const {
  std::vector<char> visited(nodes_.size(), 0);
  std::set<std::pair<double, int>> candidates, results;
  const double d0 = distance(q, nodes_[ep].vec);
  visited[ep] = 1;
  candidates.emplace(d0, ep);
  results.emplace(d0, ep);

  while (!candidates.empty()) {
    const auto [cd, cs] = *candidates.begin();
    if (cd > results.rbegin()->first &&
        results.size() >= static_cast<std::size_t>(ef))
      break;
    candidates.erase(candidates.begin());
    for (int nb : nodes_[cs].links[level]) {
      if (visited[nb]) continue;
      visited[nb] = 1;
      const double d = distance(q, nodes_[nb].vec);
      if (results.size() < static_cast<std::size_t>(ef) ||
          d < results.rbegin()->first) {
        candidates.emplace(d, nb);
        results.emplace(d, nb);
        if (results.size() > static_cast<std::size_t>(ef))
          results.erase(std::prev(results.end()));
      }
    }
  }
  return {results.begin(), results.end()};
}

void HnswIndex::shrink_links(int slot, int level) {
  const int cap = level == 0 ? 2 * params_.max_neighbors : params_.max_neighbors;
  std::vector<int>& links = nodes_[slot].links[level];
  if (static_cast<int>(links.size()) <= cap) return;
  std::vector<std::pair<double, int>> ranked;
  ranked.reserve(links.size());
  for (int nb : links) ranked.emplace_back(distance(nodes_[slot].vec, nodes_[nb].vec), nb);
  std::sort(ranked.begin(), ranked.end());
  links.clear();
  for (int i = 0; i < cap; ++i) links.push_back(ranked[i].second);
}

void HnswIndex::insert(int id, const std::vector<float>& v) {
  if (static_cast<int>(v.size()) != dim_)
    fail("DimensionMismatch", "vector has dimension " + std::to_string(v.size()) +
                                  ", index expects " + std::to_string(dim_));
  if (slot_by_id_.count(id))
    fail("InvalidArgument", "node " + std::to_string(id) + " already inserted");

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(level_rng_);
  if (u <= 0.0) u = std::numeric_limits<double>::min();
  const int level = std::min(30, static_cast<int>(std::floor(-std::log(u) * level_mult_)));

  const int slot = static_cast<int>(nodes_.size());
  Node node;
  node.external_id = id;
  node.vec = v;
  node.links.resize(level + 1);
  nodes_.push_back(std::move(node));
  ids_.push_back(id);
  slot_by_id_.emplace(id, slot);

  if (entry_ < 0) {
    entry_ = slot;
    max_level_ = level;
    return;
  }

  int ep = entry_;
  for (int lc = max_level_; lc > level; --lc)
    ep = greedy_descent(v, ep, lc);

  for (int lc = std::min(level, max_level_); lc >= 0; --lc) {
    const auto found = search_layer(v, ep, params_.ef_construction, lc);
    const int cap = params_.max_neighbors;
    std::vector<int>& own = nodes_[slot].links[lc];
    for (const auto& [d, s] : found) {
      if (static_cast<int>(own.size()) >= cap) break;
      own.push_back(s);
      nodes_[s].links[lc].push_back(slot);
      shrink_links(s, lc);
    }
    ep = found.front().second;
  }

  if (level > max_level_) {
    entry_ = slot;
    max_level_ = level;
  }
}

std::vector<std::pair<int, double>> HnswIndex::search(const std::vector<float>& query,
                                                      int top_n) const {
  if (static_cast<int>(query.size()) != dim_)
    fail("DimensionMismatch", "query has dimension " + std::to_string(query.size()) +
                                  ", index expects " + std::to_string(dim_));
  std::vector<std::pair<int, double>> out;
  if (top_n <= 0 || nodes_.empty()) return out;

  int ep = entry_;
  for (int lc = max_level_; lc > 0; --lc) ep = greedy_descent(query, ep, lc);
  const int ef = std::max(params_.ef_search, top_n);
  const auto found = search_layer(query, ep, ef, 0);
  out.reserve(std::min<std::size_t>(found.size(), top_n));
  for (const auto& [d, s] : found) {
    if (static_cast<int>(out.size()) >= top_n) break;
    out.emplace_back(nodes_[s].external_id, std::sqrt(d));
  }
  return out;
}

ViewGraph select_pairs(const std::vector<FeatureSet>& features, const Codebook& cb,
                       int retrieval_top_n, const HnswParams& params,
                       std::uint64_t seed) {
  if (retrieval_top_n < 1) fail("InvalidArgument", "retrieval_top_n must be >= 1");
  std::vector<ImageId> ids;
  ids.reserve(features.size());
  for (const FeatureSet& fs : features) ids.push_back(fs.image_id);
  ViewGraph g{std::move(ids)};
  const int n = static_cast<int>(features.size());
  if (n <= 1) return g;

  std::vector<VladVector> vlads(n);
  for (int i = 0; i < n; ++i) vlads[i] = encode_vlad(features[i], cb);

  HnswIndex index(cb.k_words * kDescriptorDim, params,
                  seed_for(seed, "retrieval.hnsw"));
  for (int i = 0; i < n; ++i) index.insert(i, vlads[i].values);

  for (int i = 0; i < n; ++i) {
    const auto found = index.search(vlads[i].values, retrieval_top_n + 1);
    int added = 0;
    for (const auto& [j, d] : found) {
      if (j == i) continue;
      if (added == retrieval_top_n) break;
      g.add_edge(i, j);  // union over directions keeps the adjacency symmetric
      ++added;
    }
  }
  return g;
}

namespace {
constexpr char kCodebookMagic[4] = {'B', 'M', 'C', 'B'};
}

void write_codebook(const std::filesystem::path& path, const Codebook& cb) {
  if (cb.k_words < 1 ||
      cb.centroids.size() != static_cast<std::size_t>(cb.k_words) * kDescriptorDim)
    fail("FormatError", "codebook shape is inconsistent");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("FormatError", "cannot open " + path.string() + " for writing");
  detail::put_magic(os, kCodebookMagic);
  detail::put_u32(os, static_cast<std::uint32_t>(cb.k_words));
  detail::put_u32(os, kDescriptorDim);
  for (float c : cb.centroids) detail::put_f32(os, c);
  os.flush();
  if (!os) fail("FormatError", "write failed for " + path.string());
}

Codebook read_codebook(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("FormatError", "cannot open " + path.string() + " for reading");
  detail::expect_magic(is, kCodebookMagic, "codebook");
  Codebook cb;
  cb.k_words = static_cast<int>(detail::get_u32(is, "word count"));
  if (cb.k_words < 1) fail("FormatError", "codebook word count must be >= 1");
  const std::uint32_t dim = detail::get_u32(is, "descriptor dim");
  if (dim != kDescriptorDim)
    fail("FormatError", "codebook dim " + std::to_string(dim) + " != 128");
  cb.centroids.resize(static_cast<std::size_t>(cb.k_words) * kDescriptorDim);
  for (float& c : cb.centroids) c = detail::get_f32(is, "centroid");
  return cb;
}

}  // namespace bandmatch
