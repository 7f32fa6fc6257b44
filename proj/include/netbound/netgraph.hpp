#pragma once

#include "netbound/core.hpp"

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

/// \file netgraph.hpp
/// Undirected networks: construction, random generation, k-hop queries,
/// and edge-list serialization. Graphs are immutable after construction
/// and safe for concurrent reads.

namespace netbound {

/// Undirected simple graph on dense node indices 0..N-1, stored in
/// compressed sparse row form (offsets + sorted neighbor lists) for
/// fast neighborhood scans.
class Graph {
 public:
  /// Builds from an unordered edge list. Duplicate edges collapse to
  /// one; self loops are rejected.
  Graph(int node_count, const std::vector<std::pair<int, int>>& edges);

  int node_count() const { return node_count_; }
  std::size_t edge_count() const { return neighbors_.size() / 2; }

  int degree(int i) const {
    check_node(i);
    return static_cast<int>(offsets_[static_cast<std::size_t>(i) + 1] -
                            offsets_[static_cast<std::size_t>(i)]);
  }

  /// Sorted neighbor list of node i as a contiguous span.
  std::pair<const int*, const int*> neighbors(int i) const {
    check_node(i);
    const auto lo = offsets_[static_cast<std::size_t>(i)];
    const auto hi = offsets_[static_cast<std::size_t>(i) + 1];
    return {neighbors_.data() + lo, neighbors_.data() + hi};
  }

  bool has_edge(int i, int j) const;

  int max_degree() const;

  /// All edges as (i, j) with i < j, sorted; the canonical form used by
  /// serialization and by the reproducibility tests.
  std::vector<std::pair<int, int>> edge_list() const;

  /// Writes "N=<count>" then one "i j" line per edge (i < j, sorted).
  void save(std::ostream& out) const;
  void save_file(const std::string& path) const;

  /// Parses the format written by save(); round-trips bit-exactly.
  static Graph load(std::istream& in);
  static Graph load_file(const std::string& path);

 private:
  void check_node(int i) const {
    if (i < 0 || i >= node_count_)
      throw std::out_of_range("Graph: node index " + std::to_string(i) +
                              " outside [0, " + std::to_string(node_count_) + ")");
  }

  int node_count_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<int> neighbors_;
};

/// Erdos-Renyi G(n, p): each unordered pair is an edge independently
/// with probability p. Deterministic given seed.
Graph gen_erdos_renyi(int n, double p, std::uint64_t seed);

/// Barabasi-Albert preferential attachment: starts from a complete
/// graph on m+1 nodes, then each new node attaches to m distinct
/// existing nodes chosen proportionally to degree.
Graph gen_barabasi_albert(int n, int m, std::uint64_t seed);

/// Stochastic block model: intra-block pairs connect with p_in,
/// inter-block pairs with p_out.
Graph gen_sbm(int n, const std::vector<int>& block_sizes, double p_in, double p_out,
              std::uint64_t seed);

/// Nodes at shortest-path distance in [1, r] from i (excludes i),
/// sorted ascending.
std::vector<int> khop_neighbors(const Graph& g, int i, int r);

}  // namespace netbound
