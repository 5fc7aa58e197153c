#include "bandmatch/verify.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>

namespace bandmatch {

namespace {

// --- Delaunay triangulation (Bowyer-Watson) -------------------------------

struct Tri {
  int a, b, c;
};

double orient2d(const Point2& a, const Point2& b, const Point2& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

Tri make_ccw(int a, int b, int c, const std::vector<Point2>& pts) {
  if (orient2d(pts[a], pts[b], pts[c]) < 0.0) std::swap(b, c);
  return {a, b, c};
}

// Strictly inside the circumcircle of CCW triangle (a,b,c); cocircular points
// count as outside, which keeps the cavity search deterministic.
bool in_circumcircle(const Point2& a, const Point2& b, const Point2& c,
                     const Point2& d) {
  const double adx = a.x - d.x, ady = a.y - d.y;
  const double bdx = b.x - d.x, bdy = b.y - d.y;
  const double cdx = c.x - d.x, cdy = c.y - d.y;
  const double ad = adx * adx + ady * ady;
  const double bd = bdx * bdx + bdy * bdy;
  const double cd = cdx * cdx + cdy * cdy;
  const double det = adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) +
                     ad * (bdx * cdy - bdy * cdx);
  return det > 0.0;
}

// Adjacency over the input points from a Bowyer-Watson triangulation; empty
// when no triangle of real points survives (collinear input and the like).
std::vector<std::vector<int>> triangulate(const std::vector<Point2>& pts_in) {
  const int n = static_cast<int>(pts_in.size());
  if (n < 3) return {};

  double lo_x = pts_in[0].x, hi_x = pts_in[0].x;
  double lo_y = pts_in[0].y, hi_y = pts_in[0].y;
  for (const Point2& p : pts_in) {
    lo_x = std::min(lo_x, p.x);
    hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y);
    hi_y = std::max(hi_y, p.y);
  }
  const double cx = 0.5 * (lo_x + hi_x);
  const double cy = 0.5 * (lo_y + hi_y);
  const double extent = std::max({hi_x - lo_x, hi_y - lo_y, 1.0});
  const double r = 1e4 * extent;

  std::vector<Point2> pts(pts_in);
  pts.push_back({cx - 2.0 * r, cy - r});
  pts.push_back({cx + 2.0 * r, cy - r});
  pts.push_back({cx, cy + 2.0 * r});

  std::vector<Tri> tris = {make_ccw(n, n + 1, n + 2, pts)};
  for (int i = 0; i < n; ++i) {
    std::vector<Tri> keep;
    keep.reserve(tris.size());
    std::map<std::pair<int, int>, int> edge_count;
    for (const Tri& t : tris) {
      if (in_circumcircle(pts[t.a], pts[t.b], pts[t.c], pts[i])) {
        const std::pair<int, int> edges[3] = {
            std::minmax(t.a, t.b), std::minmax(t.b, t.c), std::minmax(t.c, t.a)};
        for (const auto& e : edges) ++edge_count[e];
      } else {
        keep.push_back(t);
      }
    }
    if (edge_count.empty()) continue;  // coincides with an existing vertex
    tris = std::move(keep);
    for (const auto& [e, cnt] : edge_count)
      if (cnt == 1) tris.push_back(make_ccw(e.first, e.second, i, pts));
  }

  std::vector<std::vector<int>> adj(n);
  bool any_real = false;
  for (const Tri& t : tris) {
    if (t.a >= n || t.b >= n || t.c >= n) continue;
    any_real = true;
    adj[t.a].push_back(t.b);
    adj[t.a].push_back(t.c);
    adj[t.b].push_back(t.a);
    adj[t.b].push_back(t.c);
    adj[t.c].push_back(t.a);
    adj[t.c].push_back(t.b);
  }
  if (!any_real) return {};
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return adj;
}

double dist2(const Point2& a, const Point2& b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

void append_by_distance(const Point2& center, const std::vector<Point2>& pts,
                        std::vector<int>& ring) {
  std::sort(ring.begin(), ring.end(), [&](int u, int v) {
    const double du = dist2(center, pts[u]), dv = dist2(center, pts[v]);
    if (du != dv) return du < dv;
    return u < v;
  });
}

std::vector<int> plain_knn(const std::vector<Point2>& pts, int i, int k) {
  std::vector<int> others;
  others.reserve(pts.size() - 1);
  for (int j = 0; j < static_cast<int>(pts.size()); ++j)
    if (j != i) others.push_back(j);
  append_by_distance(pts[i], pts, others);
  if (static_cast<int>(others.size()) > k) others.resize(k);
  return others;
}

}  // namespace

DelaunayKnn knn_from_delaunay(const std::vector<Point2>& pts, int n_neighbors) {
  if (n_neighbors < 0) fail("InvalidArgument", "n_neighbors must be non-negative");
  const int n = static_cast<int>(pts.size());
  DelaunayKnn out;
  out.neighbors.resize(n);
  if (n_neighbors == 0 || n <= 1) return out;

  bool has_duplicates = false;
  {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int u, int v) {
      if (pts[u].x != pts[v].x) return pts[u].x < pts[v].x;
      return pts[u].y < pts[v].y;
    });
    for (int i = 0; i + 1 < n; ++i)
      if (pts[order[i]].x == pts[order[i + 1]].x &&
          pts[order[i]].y == pts[order[i + 1]].y)
        has_duplicates = true;
  }

  std::vector<std::vector<int>> adj;
  if (!has_duplicates) adj = triangulate(pts);
  if (adj.empty()) {
    out.used_fallback = true;
    for (int i = 0; i < n; ++i) out.neighbors[i] = plain_knn(pts, i, n_neighbors);
    return out;
  }

  std::vector<int> visited(n, -1);
  for (int i = 0; i < n; ++i) {
    std::vector<int>& result = out.neighbors[i];
    visited[i] = i;
    std::vector<int> frontier = {i};
    while (static_cast<int>(result.size()) < n_neighbors && !frontier.empty()) {
      std::vector<int> ring;
      for (int u : frontier)
        for (int v : adj[u])
          if (visited[v] != i) {
            visited[v] = i;
            ring.push_back(v);
          }
      append_by_distance(pts[i], pts, ring);
      result.insert(result.end(), ring.begin(), ring.end());
      frontier = std::move(ring);
    }
    if (static_cast<int>(result.size()) > n_neighbors) result.resize(n_neighbors);
    if (static_cast<int>(result.size()) < n_neighbors) {
      // Points the edge walk cannot reach (skipped during a degenerate
      // insertion) still participate, ordered by plain distance.
      std::vector<int> rest;
      for (int j = 0; j < n; ++j)
        if (visited[j] != i) rest.push_back(j);
      append_by_distance(pts[i], pts, rest);
      for (int j : rest) {
        if (static_cast<int>(result.size()) >= n_neighbors) break;
        result.push_back(j);
      }
    }
  }
  return out;
}

std::vector<int> angular_order(const Point2& center, const std::vector<int>& neighbors,
                               const std::vector<Point2>& pts) {
  struct Key {
    double angle, d2;
    int idx;
  };
  std::vector<Key> keys;
  keys.reserve(neighbors.size());
  for (int idx : neighbors) {
    const double dx = pts[idx].x - center.x;
    const double dy = pts[idx].y - center.y;
    if (dx == 0.0 && dy == 0.0)
      fail("CoincidentPoint", "neighbor " + std::to_string(idx) +
                                  " coincides with the ring center");
    double a = std::atan2(dy, dx);
    if (a < 0.0) a += 2.0 * std::numbers::pi;
    keys.push_back({a, dx * dx + dy * dy, idx});
  }
  std::sort(keys.begin(), keys.end(), [](const Key& u, const Key& v) {
    if (u.angle != v.angle) return u.angle < v.angle;
    if (u.d2 != v.d2) return u.d2 < v.d2;
    return u.idx < v.idx;
  });
  std::vector<int> out;
  out.reserve(keys.size());
  for (const Key& k : keys) out.push_back(k.idx);
  return out;
}

namespace {

// Levenshtein distance between a and the rotation of b starting at b[rot].
int levenshtein_rotated(const std::vector<int>& a, const std::vector<int>& b,
                        std::size_t rot) {
  const std::size_t na = a.size(), nb = b.size();
  std::vector<int> prev(nb + 1), cur(nb + 1);
  for (std::size_t j = 0; j <= nb; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= na; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= nb; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[(rot + j - 1) % nb] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[nb];
}

}  // namespace

int cyclic_edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  if (b.empty()) return static_cast<int>(a.size());
  if (a.empty()) return static_cast<int>(b.size());
  int best = std::numeric_limits<int>::max();
  for (std::size_t rot = 0; rot < b.size(); ++rot)
    best = std::min(best, levenshtein_rotated(a, b, rot));
  return best;
}

namespace {

// One image side of the filter: matched-point positions deduplicated by exact
// coordinates so the triangulation never sees coincident vertices. Each ring
// is reported as canonical match labels (smallest match index per position).
struct SaoSide {
  std::vector<Point2> unique_pos;
  std::vector<int> pos_of_match;   // match -> unique position id
  std::vector<int> label_of_pos;   // unique position id -> canonical match label
  std::vector<std::vector<int>> rings;  // match -> ordered neighbor labels
  bool fallback = false;
};

SaoSide build_side(const std::vector<std::pair<int, int>>& matches, bool query_side,
                   const std::vector<Keypoint>& kps, int n_neighbors) {
  SaoSide side;
  const std::size_t m = matches.size();
  side.pos_of_match.resize(m);
  std::map<std::pair<double, double>, int> seen;
  for (std::size_t i = 0; i < m; ++i) {
    const int idx = query_side ? matches[i].first : matches[i].second;
    const Keypoint& kp = kps[idx];
    const std::pair<double, double> key(kp.x, kp.y);
    auto [it, inserted] = seen.emplace(key, static_cast<int>(side.unique_pos.size()));
    if (inserted) {
      side.unique_pos.push_back({key.first, key.second});
      side.label_of_pos.push_back(static_cast<int>(i));
    }
    side.pos_of_match[i] = it->second;
  }

  const DelaunayKnn knn = knn_from_delaunay(side.unique_pos, n_neighbors);
  side.fallback = knn.used_fallback;
  side.rings.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const int pos = side.pos_of_match[i];
    const std::vector<int> ordered =
        angular_order(side.unique_pos[pos], knn.neighbors[pos], side.unique_pos);
    side.rings[i].reserve(ordered.size());
    for (int p : ordered) side.rings[i].push_back(side.label_of_pos[p]);
  }
  return side;
}

}  // namespace

SaoOutcome sao_filter(const PairMatches& matches, const std::vector<Keypoint>& query_kps,
                      const std::vector<Keypoint>& train_kps, const SaoParams& params) {
  if (params.n_neighbors < 1) fail("InvalidArgument", "n_neighbors must be >= 1");
  if (!(params.score_threshold >= 0.0))
    fail("InvalidArgument", "score_threshold must be non-negative");
  for (const auto& [qi, ti] : matches.matches) {
    if (qi < 0 || static_cast<std::size_t>(qi) >= query_kps.size() || ti < 0 ||
        static_cast<std::size_t>(ti) >= train_kps.size())
      fail("InvalidArgument", "match index outside its keypoint list");
  }

  SaoOutcome out;
  out.kept.query_image = matches.query_image;
  out.kept.train_image = matches.train_image;
  out.kept.stage = matches.stage;
  const std::size_t m = matches.matches.size();
  out.scores.assign(m, 0.0);

  if (m < static_cast<std::size_t>(params.n_neighbors) + 1) {
    out.passthrough = true;
    out.kept.matches = matches.matches;
    return out;
  }

  const SaoSide q = build_side(matches.matches, true, query_kps, params.n_neighbors);
  const SaoSide t = build_side(matches.matches, false, train_kps, params.n_neighbors);
  out.delaunay_fallback = q.fallback || t.fallback;

  for (std::size_t i = 0; i < m; ++i) {
    const std::vector<int>& rq = q.rings[i];
    const std::vector<int>& rt = t.rings[i];
    const std::size_t len = std::max(rq.size(), rt.size());
    out.scores[i] =
        len == 0 ? 0.0 : cyclic_edit_distance(rq, rt) / static_cast<double>(len);
    if (out.scores[i] <= params.score_threshold)
      out.kept.matches.push_back(matches.matches[i]);
  }
  return out;
}

namespace {

// --- fundamental-matrix estimation ----------------------------------------

struct NormalizedPoints {
  std::vector<Eigen::Vector2d> p;
  Eigen::Matrix3d T;
  bool ok = false;
};

NormalizedPoints normalize_points(const std::vector<Point2>& pts,
                                  const std::vector<int>& idx) {
  NormalizedPoints out;
  const std::size_t k = idx.size();
  double mx = 0.0, my = 0.0;
  for (int i : idx) {
    mx += pts[i].x;
    my += pts[i].y;
  }
  mx /= static_cast<double>(k);
  my /= static_cast<double>(k);
  double mean_dist = 0.0;
  for (int i : idx)
    mean_dist += std::hypot(pts[i].x - mx, pts[i].y - my);
  mean_dist /= static_cast<double>(k);
  if (mean_dist <= 1e-12) return out;  // all sample points coincide

  const double s = std::numbers::sqrt2 / mean_dist;
  out.p.reserve(k);
  for (int i : idx) out.p.push_back({s * (pts[i].x - mx), s * (pts[i].y - my)});
  out.T << s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0;
  out.ok = true;
  return out;
}

// Normalized 8-point (or overdetermined least-squares) estimate satisfying
// train^T F query = 0, rank 2, unit Frobenius norm, largest entry positive.
bool estimate_fundamental(const std::vector<Point2>& query_pts,
                          const std::vector<Point2>& train_pts,
                          const std::vector<int>& idx, Eigen::Matrix3d* out) {
  const NormalizedPoints q = normalize_points(query_pts, idx);
  const NormalizedPoints t = normalize_points(train_pts, idx);
  if (!q.ok || !t.ok) return false;

  Eigen::MatrixXd a(idx.size(), 9);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const double x1 = q.p[r].x(), y1 = q.p[r].y();
    const double x2 = t.p[r].x(), y2 = t.p[r].y();
    a.row(static_cast<Eigen::Index>(r)) << x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2,
        x1, y1, 1.0;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd f = svd.matrixV().col(8);
  Eigen::Matrix3d fn;
  fn << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);

  Eigen::JacobiSVD<Eigen::Matrix3d> svd3(fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sv = svd3.singularValues();
  sv(2) = 0.0;
  fn = svd3.matrixU() * sv.asDiagonal() * svd3.matrixV().transpose();

  Eigen::Matrix3d full = t.T.transpose() * fn * q.T;
  const double norm = full.norm();
  if (!(norm > 0.0) || !full.allFinite()) return false;
  full /= norm;

  Eigen::Index mr = 0, mc = 0;
  full.cwiseAbs().maxCoeff(&mr, &mc);
  if (full(mr, mc) < 0.0) full = -full;
  *out = full;
  return true;
}

double epipolar_distance(const Eigen::Matrix3d& f, const Point2& q, const Point2& t) {
  const Eigen::Vector3d p1(q.x, q.y, 1.0);
  const Eigen::Vector3d p2(t.x, t.y, 1.0);
  const Eigen::Vector3d l2 = f * p1;
  const Eigen::Vector3d l1 = f.transpose() * p2;
  const double n2 = std::hypot(l2(0), l2(1));
  const double n1 = std::hypot(l1(0), l1(1));
  if (n1 <= 0.0 || n2 <= 0.0) return std::numeric_limits<double>::infinity();
  const double d2 = std::abs(p2.dot(l2)) / n2;
  const double d1 = std::abs(p1.dot(l1)) / n1;
  return std::max(d1, d2);
}

std::vector<int> inliers_of(const Eigen::Matrix3d& f,
                            const std::vector<Point2>& query_pts,
                            const std::vector<Point2>& train_pts, double threshold) {
  std::vector<int> in;
  for (std::size_t i = 0; i < query_pts.size(); ++i)
    if (epipolar_distance(f, query_pts[i], train_pts[i]) < threshold)
      in.push_back(static_cast<int>(i));
  return in;
}

}  // namespace

InlierSet ransac_fundamental(const PairMatches& matches,
                             const std::vector<Keypoint>& query_kps,
                             const std::vector<Keypoint>& train_kps,
                             const RansacParams& params, std::uint64_t seed) {
  if (params.max_iters < 1) fail("InvalidArgument", "max_iters must be >= 1");
  if (!(params.epipolar_threshold > 0.0))
    fail("InvalidArgument", "epipolar_threshold must be positive");
  if (!(params.confidence > 0.0 && params.confidence < 1.0))
    fail("InvalidArgument", "confidence must lie in (0,1)");

  const std::size_t m = matches.matches.size();
  if (m < 8)
    fail("TooFewMatches", "fundamental-matrix estimation needs >= 8 matches, got " +
                              std::to_string(m));

  std::vector<Point2> qp(m), tp(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& [qi, ti] = matches.matches[i];
    if (qi < 0 || static_cast<std::size_t>(qi) >= query_kps.size() || ti < 0 ||
        static_cast<std::size_t>(ti) >= train_kps.size())
      fail("InvalidArgument", "match index outside its keypoint list");
    qp[i] = {query_kps[qi].x, query_kps[qi].y};
    tp[i] = {train_kps[ti].x, train_kps[ti].y};
  }

  std::mt19937_64 rng(seed);
  std::vector<int> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = static_cast<int>(i);

  Eigen::Matrix3d best_f = Eigen::Matrix3d::Zero();
  std::size_t best_count = 0;
  int iterations = 0;
  int needed = params.max_iters;

  for (int it = 0; it < params.max_iters && it < needed; ++it) {
    ++iterations;
    for (int j = 0; j < 8; ++j) {
      std::uniform_int_distribution<int> pick(j, static_cast<int>(m) - 1);
      std::swap(order[j], order[pick(rng)]);
    }
    const std::vector<int> sample(order.begin(), order.begin() + 8);

    Eigen::Matrix3d f;
    if (!estimate_fundamental(qp, tp, sample, &f)) continue;
    const std::vector<int> in = inliers_of(f, qp, tp, params.epipolar_threshold);
    if (in.size() > best_count) {
      best_count = in.size();
      best_f = f;
      const double w = static_cast<double>(best_count) / static_cast<double>(m);
      if (w >= 1.0) {
        needed = iterations;
      } else {
        const double denom = std::log1p(-std::pow(w, 8));
        needed = denom < 0.0
                     ? static_cast<int>(std::min<double>(
                           params.max_iters,
                           std::ceil(std::log(1.0 - params.confidence) / denom)))
                     : params.max_iters;
      }
    }
  }

  if (best_count < 8)
    fail("NoModel", "no fundamental-matrix sample reached 8 inliers in " +
                        std::to_string(iterations) + " iterations");

  // Refit on the best consensus set, then recount against the refit model.
  std::vector<int> kept = inliers_of(best_f, qp, tp, params.epipolar_threshold);
  Eigen::Matrix3d refit;
  if (estimate_fundamental(qp, tp, kept, &refit)) {
    const std::vector<int> refit_in =
        inliers_of(refit, qp, tp, params.epipolar_threshold);
    if (refit_in.size() >= 8) {
      best_f = refit;
      kept = refit_in;
    }
  }

  InlierSet out;
  out.pair = IdPair(matches.query_image, matches.train_image);
  out.kept = std::move(kept);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.model.m[r][c] = best_f(r, c);
  out.inlier_ratio = static_cast<double>(out.kept.size()) / static_cast<double>(m);
  out.iterations = iterations;
  return out;
}

}  // namespace bandmatch
