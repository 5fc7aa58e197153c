#pragma once

#include <filesystem>
#include <map>
#include <unordered_map>
#include <vector>

#include "bandmatch/common.hpp"

namespace bandmatch {

enum class PairState { kUnprocessed, kProcessed };

// Symmetric sparse boolean adjacency over an ordered image-id list. Vertices
// are addressed by position in the current order; edges never touch the
// diagonal. Each edge carries a processed/unprocessed payload so schedulers
// can mark pairs as they are consumed.
class ViewGraph {
 public:
  ViewGraph() = default;
  explicit ViewGraph(std::vector<ImageId> ids);

  int size() const { return static_cast<int>(ids_.size()); }
  bool empty() const { return ids_.empty(); }
  const std::vector<ImageId>& image_ids() const { return ids_; }
  ImageId id_at(int pos) const { return ids_.at(pos); }
  int position_of(ImageId id) const;

  // Neighbor positions, sorted ascending.
  const std::vector<int>& neighbors(int pos) const { return adj_.at(pos); }
  int degree(int pos) const { return static_cast<int>(adj_.at(pos).size()); }
  bool has_edge(int u, int v) const;

  void add_edge(int u, int v);
  void add_edge_by_id(ImageId a, ImageId b);

  std::size_t edge_count() const { return edge_count_; }
  std::vector<IdPair> pairs() const;  // sorted by (a, b)

  PairState pair_state(const IdPair& p) const;
  void set_pair_state(const IdPair& p, PairState s);
  const std::map<IdPair, PairState>& pair_payload() const { return payload_; }

  // Reorders vertices: perm[old_pos] = new_pos. Pair payload follows the ids.
  ViewGraph permuted(const std::vector<int>& perm) const;

  // Subgraph induced by the given positions (ascending), order preserved.
  ViewGraph induced(const std::vector<int>& keep) const;

  // Connected components as sorted position lists, ordered by descending
  // size, ties by smallest contained position.
  std::vector<std::vector<int>> connected_components() const;

 private:
  std::vector<ImageId> ids_;
  std::unordered_map<ImageId, int> pos_;
  std::vector<std::vector<int>> adj_;
  std::map<IdPair, PairState> payload_;
  std::size_t edge_count_ = 0;
};

ViewGraph make_view_graph(std::vector<ImageId> ids, const std::vector<IdPair>& pairs);

// Matrix Market coordinate pattern symmetric, with the image-id list carried
// in "% ids:" comment lines. Edges stored lower-triangular, 1-based.
void write_view_graph(const std::filesystem::path& path, const ViewGraph& g);
ViewGraph read_view_graph(const std::filesystem::path& path);

}  // namespace bandmatch
