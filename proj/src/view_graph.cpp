#include "bandmatch/view_graph.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace bandmatch {

ViewGraph::ViewGraph(std::vector<ImageId> ids) : ids_(std::move(ids)) {
  adj_.resize(ids_.size());
  pos_.reserve(ids_.size());
  for (int i = 0; i < size(); ++i) {
    auto [it, inserted] = pos_.emplace(ids_[i], i);
    if (!inserted)
      fail("InvalidArgument", "duplicate image id " + std::to_string(ids_[i]));
  }
}

int ViewGraph::position_of(ImageId id) const {
  auto it = pos_.find(id);
  if (it == pos_.end())
    fail("InvalidArgument", "unknown image id " + std::to_string(id));
  return it->second;
}

bool ViewGraph::has_edge(int u, int v) const {
  const auto& nu = adj_.at(u);
  return std::binary_search(nu.begin(), nu.end(), v);
}

void ViewGraph::add_edge(int u, int v) {
  if (u == v) fail("InvalidArgument", "self edge rejected (zero-diagonal adjacency)");
  if (u < 0 || v < 0 || u >= size() || v >= size())
    fail("InvalidArgument", "edge endpoint out of range");
  if (has_edge(u, v)) return;
  auto& nu = adj_[u];
  nu.insert(std::lower_bound(nu.begin(), nu.end(), v), v);
  auto& nv = adj_[v];
  nv.insert(std::lower_bound(nv.begin(), nv.end(), u), u);
  payload_.emplace(IdPair(ids_[u], ids_[v]), PairState::kUnprocessed);
  ++edge_count_;
}

void ViewGraph::add_edge_by_id(ImageId a, ImageId b) {
  add_edge(position_of(a), position_of(b));
}

std::vector<IdPair> ViewGraph::pairs() const {
  std::vector<IdPair> out;
  out.reserve(edge_count_);
  for (const auto& [pair, state] : payload_) out.push_back(pair);
  return out;
}

PairState ViewGraph::pair_state(const IdPair& p) const {
  auto it = payload_.find(p);
  if (it == payload_.end())
    fail("InvalidArgument", "pair (" + std::to_string(p.a) + "," + std::to_string(p.b) +
                            ") not in graph");
  return it->second;
}

void ViewGraph::set_pair_state(const IdPair& p, PairState s) {
  auto it = payload_.find(p);
  if (it == payload_.end())
    fail("InvalidArgument", "pair (" + std::to_string(p.a) + "," + std::to_string(p.b) +
                            ") not in graph");
  it->second = s;
}

ViewGraph ViewGraph::permuted(const std::vector<int>& perm) const {
  if (static_cast<int>(perm.size()) != size())
    fail("InvalidArgument", "permutation length mismatch");
  std::vector<char> seen(perm.size(), 0);
  for (int p : perm) {
    if (p < 0 || p >= size() || seen[p])
      fail("InvalidArgument", "permutation is not a bijection");
    seen[p] = 1;
  }
  std::vector<ImageId> new_ids(ids_.size());
  for (int old = 0; old < size(); ++old) new_ids[perm[old]] = ids_[old];
  ViewGraph out(std::move(new_ids));
  for (int old = 0; old < size(); ++old)
    for (int v : adj_[old])
      if (old < v) out.add_edge(perm[old], perm[v]);
  for (const auto& [pair, state] : payload_) out.payload_[pair] = state;
  return out;
}

ViewGraph ViewGraph::induced(const std::vector<int>& keep) const {
  std::vector<ImageId> new_ids;
  new_ids.reserve(keep.size());
  std::vector<int> old_to_new(ids_.size(), -1);
  for (int new_pos = 0; new_pos < static_cast<int>(keep.size()); ++new_pos) {
    const int old = keep[new_pos];
    if (old < 0 || old >= size() || old_to_new[old] != -1)
      fail("InvalidArgument", "invalid induced-subgraph position list");
    old_to_new[old] = new_pos;
    new_ids.push_back(ids_[old]);
  }
  ViewGraph out(std::move(new_ids));
  for (int old : keep)
    for (int v : adj_[old])
      if (old < v && old_to_new[v] != -1)
        out.add_edge(old_to_new[old], old_to_new[v]);
  for (auto& [pair, state] : out.payload_) state = payload_.at(pair);
  return out;
}

std::vector<std::vector<int>> ViewGraph::connected_components() const {
  std::vector<int> comp(ids_.size(), -1);
  std::vector<std::vector<int>> comps;
  for (int start = 0; start < size(); ++start) {
    if (comp[start] != -1) continue;
    const int c = static_cast<int>(comps.size());
    comps.emplace_back();
    std::vector<int> stack{start};
    comp[start] = c;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      comps[c].push_back(u);
      for (int v : adj_[u]) {
        if (comp[v] == -1) {
          comp[v] = c;
          stack.push_back(v);
        }
      }
    }
    std::sort(comps[c].begin(), comps[c].end());
  }
  std::stable_sort(comps.begin(), comps.end(),
                   [](const std::vector<int>& x, const std::vector<int>& y) {
                     if (x.size() != y.size()) return x.size() > y.size();
                     return x.front() < y.front();
                   });
  return comps;
}

ViewGraph make_view_graph(std::vector<ImageId> ids, const std::vector<IdPair>& pairs) {
  ViewGraph g(std::move(ids));
  for (const IdPair& p : pairs) g.add_edge_by_id(p.a, p.b);
  return g;
}

void write_view_graph(const std::filesystem::path& path, const ViewGraph& g) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("FormatError", "cannot open " + path.string() + " for writing");
  os << "%%MatrixMarket matrix coordinate pattern symmetric\n";
  const auto& ids = g.image_ids();
  for (std::size_t i = 0; i < ids.size(); i += 16) {
    os << "% ids:";
    for (std::size_t j = i; j < std::min(ids.size(), i + 16); ++j) os << ' ' << ids[j];
    os << '\n';
  }
  os << g.size() << ' ' << g.size() << ' ' << g.edge_count() << '\n';
  for (int u = 0; u < g.size(); ++u)
    for (int v : g.neighbors(u))
      if (v < u) os << (u + 1) << ' ' << (v + 1) << '\n';
  os.flush();
  if (!os) fail("FormatError", "write failed for " + path.string());
}

ViewGraph read_view_graph(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail("FormatError", "cannot open " + path.string() + " for reading");

  std::string line;
  if (!std::getline(is, line)) fail("TruncatedFile", "empty graph file " + path.string());
  {
    std::istringstream hs(line);
    std::string banner, object, format, field, symmetry;
    hs >> banner >> object >> format >> field >> symmetry;
    if (banner != "%%MatrixMarket" || object != "matrix" || format != "coordinate" ||
        field != "pattern" || symmetry != "symmetric")
      fail("FormatError", "unsupported Matrix Market header: " + line);
  }

  std::vector<ImageId> ids;
  long long rows = -1, cols = -1, nnz = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '%') {
      std::istringstream cs(line);
      std::string tag, kind;
      cs >> tag >> kind;
      if (tag == "%" && kind == "ids:") {
        ImageId id;
        while (cs >> id) ids.push_back(id);
      }
      continue;
    }
    std::istringstream ds(line);
    if (!(ds >> rows >> cols >> nnz))
      fail("FormatError", "malformed size line '" + line + "'");
    break;
  }
  if (rows < 0) fail("TruncatedFile", "missing size line in " + path.string());
  if (rows != cols) fail("FormatError", "adjacency matrix must be square");
  if (!ids.empty() && static_cast<long long>(ids.size()) != rows)
    fail("FormatError", "id list length does not match matrix dimension");
  if (ids.empty())
    for (long long i = 0; i < rows; ++i) ids.push_back(static_cast<ImageId>(i));

  ViewGraph g(std::move(ids));
  long long seen = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '%') continue;
    std::istringstream es(line);
    long long i, j;
    if (!(es >> i >> j)) fail("FormatError", "malformed edge line '" + line + "'");
    if (i < 1 || j < 1 || i > rows || j > rows)
      fail("FormatError", "edge endpoint out of range in " + path.string());
    if (i == j) fail("FormatError", "diagonal entry not allowed in view graph");
    g.add_edge(static_cast<int>(i - 1), static_cast<int>(j - 1));
    ++seen;
  }
  if (seen != nnz)
    fail("TruncatedFile", "expected " + std::to_string(nnz) + " edges, found " +
                              std::to_string(seen));
  return g;
}

}  // namespace bandmatch
