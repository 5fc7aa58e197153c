#include "bandmatch/mbr.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "json.hpp"

namespace bandmatch {

namespace {

// Minimum-degree node of a component, ties by ascending image id.
int min_degree_node(const ViewGraph& g, const std::vector<int>& nodes) {
  int best = nodes.front();
  for (int x : nodes) {
    if (g.degree(x) < g.degree(best) ||
        (g.degree(x) == g.degree(best) && g.id_at(x) < g.id_at(best)))
      best = x;
  }
  return best;
}

std::vector<int> level_of_map(const ViewGraph& g, const LevelStructure& ls) {
  std::vector<int> level(g.size(), -1);
  for (int l = 0; l < ls.depth(); ++l)
    for (int x : ls.levels[l]) level[x] = l;
  return level;
}

// GPS ordering of one connected component; returns positions in new order.
std::vector<int> gps_component(const ViewGraph& g, const std::vector<int>& nodes) {
  if (nodes.size() == 1) return nodes;

  // Pseudo-peripheral pair by iterated level structures: root at a node of
  // minimum degree, re-root at the deepest structure found from the last
  // level until the depth stops growing.
  int u = min_degree_node(g, nodes);
  LevelStructure lu = level_structure(g, u);
  int v = -1;
  LevelStructure lv;
  for (;;) {
    v = min_degree_node(g, lu.levels.back());
    lv = level_structure(g, v);
    if (lv.depth() > lu.depth()) {
      u = v;
      lu = std::move(lv);
    } else {
      break;
    }
  }

  const int k = lu.depth();
  const std::vector<int> level_u = level_of_map(g, lu);
  const std::vector<int> level_v = level_of_map(g, lv);

  // Combined structure: keep the level where both rootings agree (forward
  // level from u equals reversed level from v); nodes that disagree are
  // grouped into connected chunks and each chunk is placed wholly on the
  // side that keeps the widest level smallest.
  std::vector<int> combined(g.size(), -1);
  std::vector<int> widths(k, 0);
  std::vector<int> undecided;
  for (int x : nodes) {
    const int fu = level_u[x];
    const int fv = k - 1 - level_v[x];
    if (fu == fv) {
      combined[x] = fu;
      ++widths[fu];
    } else {
      undecided.push_back(x);
    }
  }

  if (!undecided.empty()) {
    std::vector<char> pending(g.size(), 0);
    for (int x : undecided) pending[x] = 1;
    std::vector<std::vector<int>> chunks;
    std::vector<char> seen(g.size(), 0);
    for (int s : undecided) {
      if (seen[s]) continue;
      std::vector<int> chunk, stack{s};
      seen[s] = 1;
      while (!stack.empty()) {
        const int x = stack.back();
        stack.pop_back();
        chunk.push_back(x);
        for (int y : g.neighbors(x))
          if (pending[y] && !seen[y]) {
            seen[y] = 1;
            stack.push_back(y);
          }
      }
      std::sort(chunk.begin(), chunk.end(),
                [&](int a, int b) { return g.id_at(a) < g.id_at(b); });
      chunks.push_back(std::move(chunk));
    }
    std::stable_sort(chunks.begin(), chunks.end(),
                     [&](const std::vector<int>& a, const std::vector<int>& b) {
                       if (a.size() != b.size()) return a.size() > b.size();
                       return g.id_at(a.front()) < g.id_at(b.front());
                     });
    for (const auto& chunk : chunks) {
      std::vector<int> add_u(k, 0), add_v(k, 0);
      for (int x : chunk) {
        ++add_u[level_u[x]];
        ++add_v[k - 1 - level_v[x]];
      }
      int max_u = 0, max_v = 0;
      for (int l = 0; l < k; ++l) {
        max_u = std::max(max_u, widths[l] + add_u[l]);
        max_v = std::max(max_v, widths[l] + add_v[l]);
      }
      const bool use_u = max_u <= max_v;
      for (int x : chunk) {
        combined[x] = use_u ? level_u[x] : k - 1 - level_v[x];
        ++widths[combined[x]];
      }
    }
  }

  // Number level by level. Within a level, nodes connecting to the earliest
  // already-placed node of the previous level go first, then lower degree,
  // then lower image id.
  std::vector<std::vector<int>> levels(k);
  for (int x : nodes) levels[combined[x]].push_back(x);

  std::vector<int> order;
  order.reserve(nodes.size());
  std::vector<int> placed_at(g.size(), -1);
  for (int l = 0; l < k; ++l) {
    auto& lev = levels[l];
    constexpr int kNoLink = std::numeric_limits<int>::max();
    std::vector<std::pair<long long, int>> keyed;  // (prev-link position, node)
    keyed.reserve(lev.size());
    for (int x : lev) {
      int link = kNoLink;
      if (l > 0)
        for (int y : g.neighbors(x))
          if (combined[y] == l - 1 && placed_at[y] != -1)
            link = std::min(link, placed_at[y]);
      keyed.emplace_back(link, x);
    }
    std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      const int x = a.second, y = b.second;
      if (g.degree(x) != g.degree(y)) return g.degree(x) < g.degree(y);
      return g.id_at(x) < g.id_at(y);
    });
    for (const auto& [link, x] : keyed) {
      placed_at[x] = static_cast<int>(order.size());
      order.push_back(x);
    }
  }
  return order;
}

nlohmann::json pairs_to_json(const std::vector<IdPair>& pairs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const IdPair& p : pairs) arr.push_back({p.a, p.b});
  return arr;
}

std::vector<IdPair> pairs_from_json(const nlohmann::json& arr) {
  std::vector<IdPair> out;
  for (const auto& e : arr) out.emplace_back(e.at(0).get<ImageId>(), e.at(1).get<ImageId>());
  return out;
}

}  // namespace

std::size_t ScheduleIteration::pair_count() const {
  std::size_t n = 0;
  for (const BlockRow& row : rows)
    for (const ScheduleBlock& blk : row.blocks) n += blk.pairs.size();
  return n;
}

std::size_t SchedulePlan::pair_count() const {
  std::size_t n = 0;
  for (const ScheduleIteration& it : iterations) n += it.pair_count();
  return n;
}

std::vector<IdPair> SchedulePlan::pairs() const {
  std::vector<IdPair> out;
  out.reserve(pair_count());
  for (const ScheduleIteration& it : iterations)
    for (const BlockRow& row : it.rows)
      for (const ScheduleBlock& blk : row.blocks)
        out.insert(out.end(), blk.pairs.begin(), blk.pairs.end());
  std::sort(out.begin(), out.end());
  return out;
}

int bandwidth(const ViewGraph& g) {
  int bw = 0;
  for (int u = 0; u < g.size(); ++u)
    for (int v : g.neighbors(u))
      if (v > u) bw = std::max(bw, v - u);
  return bw;
}

int permuted_bandwidth(const ViewGraph& g, const std::vector<int>& perm) {
  int bw = 0;
  for (int u = 0; u < g.size(); ++u)
    for (int v : g.neighbors(u))
      if (v > u) bw = std::max(bw, std::abs(perm[u] - perm[v]));
  return bw;
}

LevelStructure level_structure(const ViewGraph& g, int root) {
  if (root < 0 || root >= g.size())
    fail("InvalidArgument", "level structure root out of range");
  LevelStructure ls;
  ls.root = root;
  std::vector<int> level(g.size(), -1);
  std::vector<int> frontier{root};
  level[root] = 0;
  while (!frontier.empty()) {
    ls.levels.push_back(frontier);
    std::vector<int> next;
    for (int x : frontier)
      for (int y : g.neighbors(x))
        if (level[y] == -1) {
          level[y] = static_cast<int>(ls.levels.size());
          next.push_back(y);
        }
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    frontier = std::move(next);
  }
  return ls;
}

PermutationOrder gps_order(const ViewGraph& g) {
  if (g.empty()) fail("EmptyGraph", "cannot order an empty graph");

  std::vector<int> perm(g.size());
  int next_pos = 0;
  for (const auto& comp : g.connected_components())
    for (int x : gps_component(g, comp)) perm[x] = next_pos++;

  // The heuristic must never lose to the order it was given.
  if (permuted_bandwidth(g, perm) > bandwidth(g)) {
    std::iota(perm.begin(), perm.end(), 0);
  }
  return {std::move(perm)};
}

std::vector<BlockRow> generate_blocks(const ViewGraph& g, int size_blk, int size_gpu) {
  if (size_blk < 1) fail("BudgetTooSmall", "size_blk must be at least 1");
  if (size_gpu < 2 * size_blk)
    fail("BudgetTooSmall", "size_gpu must be at least 2*size_blk (diagonal block "
                           "plus one column block)");
  const int chunk_window = size_gpu / size_blk;  // chunks resident per row

  std::map<std::pair<int, int>, std::vector<IdPair>> cells;
  for (int u = 0; u < g.size(); ++u) {
    for (int v : g.neighbors(u)) {
      if (v < u) continue;
      const int ci = u / size_blk;
      const int cj = v / size_blk;
      if (cj - ci <= chunk_window - 1)
        cells[{ci, cj}].emplace_back(g.id_at(u), g.id_at(v));
    }
  }

  auto chunk_images = [&](int c) {
    std::vector<ImageId> ids;
    const int lo = c * size_blk;
    const int hi = std::min(g.size(), lo + size_blk);
    for (int p = lo; p < hi; ++p) ids.push_back(g.id_at(p));
    return ids;
  };

  std::vector<BlockRow> rows;
  for (auto it = cells.begin(); it != cells.end();) {
    const int ci = it->first.first;
    BlockRow row;
    row.row_chunk = ci;
    row.row_images = chunk_images(ci);
    for (; it != cells.end() && it->first.first == ci; ++it) {
      ScheduleBlock blk;
      blk.row_chunk = ci;
      blk.col_chunk = it->first.second;
      blk.row_images = row.row_images;
      blk.col_images = chunk_images(blk.col_chunk);
      blk.pairs = std::move(it->second);
      std::sort(blk.pairs.begin(), blk.pairs.end());
      row.blocks.push_back(std::move(blk));
    }
    rows.push_back(std::move(row));
  }

  // Eviction directives: after a row, drop whatever no later row of this
  // iteration touches; the final row returns the arena to empty.
  std::vector<std::set<ImageId>> needed(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (const ScheduleBlock& blk : rows[t].blocks) {
      needed[t].insert(blk.row_images.begin(), blk.row_images.end());
      needed[t].insert(blk.col_images.begin(), blk.col_images.end());
    }
  }
  std::set<ImageId> resident;
  for (std::size_t t = 0; t < rows.size(); ++t) {
    resident.insert(needed[t].begin(), needed[t].end());
    std::set<ImageId> later;
    for (std::size_t s = t + 1; s < rows.size(); ++s)
      later.insert(needed[s].begin(), needed[s].end());
    for (ImageId id : resident)
      if (!later.count(id)) rows[t].evict_after.push_back(id);
    for (ImageId id : rows[t].evict_after) resident.erase(id);
  }
  return rows;
}

SchedulePlan iterate_schedule(const ViewGraph& g, int size_blk, int size_gpu) {
  SchedulePlan plan;
  plan.strategy = "mbr";
  plan.budget = {size_blk, size_gpu};
  if (size_blk < 1) fail("BudgetTooSmall", "size_blk must be at least 1");
  if (size_gpu < 2 * size_blk)
    fail("BudgetTooSmall", "size_gpu must be at least 2*size_blk");

  const std::size_t total_pairs = g.edge_count();
  ViewGraph work = g;
  while (work.edge_count() > 0) {
    if (plan.iterations.size() >= total_pairs)
      fail("NonTermination", "schedule exceeded the iteration cap");

    ScheduleIteration iter;
    iter.dimension = work.size();
    iter.bandwidth_before = bandwidth(work);
    const PermutationOrder order = gps_order(work);
    ViewGraph permuted = work.permuted(order.perm);
    iter.bandwidth_after = bandwidth(permuted);
    iter.rows = generate_blocks(permuted, size_blk, size_gpu);
    if (iter.pair_count() == 0)
      fail("NonTermination", "schedule iteration covered no pair");

    std::set<IdPair> covered;
    for (const BlockRow& row : iter.rows)
      for (const ScheduleBlock& blk : row.blocks)
        covered.insert(blk.pairs.begin(), blk.pairs.end());

    // Remaining graph: uncovered pairs only, images with none drop out, and
    // the reduced order carries over as the next iteration's starting order.
    std::vector<int> keep;
    std::vector<IdPair> remaining;
    for (int u = 0; u < permuted.size(); ++u) {
      bool has_pair = false;
      for (int v : permuted.neighbors(u)) {
        const IdPair p(permuted.id_at(u), permuted.id_at(v));
        if (!covered.count(p)) {
          has_pair = true;
          if (v > u) remaining.push_back(p);
        }
      }
      if (has_pair) keep.push_back(u);
    }
    std::vector<ImageId> next_ids;
    next_ids.reserve(keep.size());
    for (int u : keep) next_ids.push_back(permuted.id_at(u));
    work = make_view_graph(std::move(next_ids), remaining);

    plan.iterations.push_back(std::move(iter));
  }
  // The loop's rebuild keeps only images with uncovered pairs, so reaching
  // zero edges means zero remaining dimension (also for edgeless input).
  plan.final_dimension = 0;
  return plan;
}

void write_plan(const std::filesystem::path& path, const SchedulePlan& plan,
                const std::string* config_echo) {
  nlohmann::json j;
  if (config_echo) {
    try {
      j["config"] = nlohmann::json::parse(*config_echo);
    } catch (const nlohmann::json::exception&) {
      fail("FormatError", "config echo is not valid JSON");
    }
  }
  j["strategy"] = plan.strategy;
  j["budget"] = {{"size_blk", plan.budget.size_blk}, {"size_gpu", plan.budget.size_gpu}};
  j["final_dimension"] = plan.final_dimension;
  j["iterations"] = nlohmann::json::array();
  for (const ScheduleIteration& it : plan.iterations) {
    nlohmann::json ji;
    ji["dimension"] = it.dimension;
    ji["bandwidth_before"] = it.bandwidth_before;
    ji["bandwidth_after"] = it.bandwidth_after;
    ji["rows"] = nlohmann::json::array();
    for (const BlockRow& row : it.rows) {
      nlohmann::json jr;
      jr["row_chunk"] = row.row_chunk;
      jr["row_images"] = row.row_images;
      jr["evict_after"] = row.evict_after;
      jr["blocks"] = nlohmann::json::array();
      for (const ScheduleBlock& blk : row.blocks) {
        jr["blocks"].push_back({{"row_chunk", blk.row_chunk},
                                {"col_chunk", blk.col_chunk},
                                {"row_images", blk.row_images},
                                {"col_images", blk.col_images},
                                {"pairs", pairs_to_json(blk.pairs)}});
      }
      ji["rows"].push_back(std::move(jr));
    }
    j["iterations"].push_back(std::move(ji));
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("FormatError", "cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
  if (!os) fail("FormatError", "write failed for " + path.string());
}

SchedulePlan read_plan(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail("FormatError", "cannot open " + path.string() + " for reading");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    fail("FormatError", "invalid plan JSON in " + path.string() + ": " + e.what());
  }
  SchedulePlan plan;
  try {
    plan.strategy = j.at("strategy").get<std::string>();
    plan.budget.size_blk = j.at("budget").at("size_blk").get<int>();
    plan.budget.size_gpu = j.at("budget").at("size_gpu").get<int>();
    plan.final_dimension = j.at("final_dimension").get<int>();
    for (const auto& ji : j.at("iterations")) {
      ScheduleIteration it;
      it.dimension = ji.at("dimension").get<int>();
      it.bandwidth_before = ji.at("bandwidth_before").get<int>();
      it.bandwidth_after = ji.at("bandwidth_after").get<int>();
      for (const auto& jr : ji.at("rows")) {
        BlockRow row;
        row.row_chunk = jr.at("row_chunk").get<int>();
        row.row_images = jr.at("row_images").get<std::vector<ImageId>>();
        row.evict_after = jr.at("evict_after").get<std::vector<ImageId>>();
        for (const auto& jb : jr.at("blocks")) {
          ScheduleBlock blk;
          blk.row_chunk = jb.at("row_chunk").get<int>();
          blk.col_chunk = jb.at("col_chunk").get<int>();
          blk.row_images = jb.at("row_images").get<std::vector<ImageId>>();
          blk.col_images = jb.at("col_images").get<std::vector<ImageId>>();
          blk.pairs = pairs_from_json(jb.at("pairs"));
          row.blocks.push_back(std::move(blk));
        }
        it.rows.push_back(std::move(row));
      }
      plan.iterations.push_back(std::move(it));
    }
  } catch (const nlohmann::json::exception& e) {
    fail("FormatError", "plan JSON missing fields in " + path.string() + ": " + e.what());
  }
  return plan;
}

}  // namespace bandmatch
