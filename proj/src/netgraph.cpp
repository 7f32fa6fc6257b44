#include "netbound/netgraph.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace netbound {

Graph::Graph(int node_count, const std::vector<std::pair<int, int>>& edges)
    : node_count_(node_count) {
  if (node_count < 1) throw std::invalid_argument("Graph: node_count must be >= 1");
  std::vector<std::pair<int, int>> canon;
  canon.reserve(edges.size());
  for (const auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= node_count || b >= node_count)
      throw std::out_of_range("Graph: edge endpoint outside [0, N)");
    if (a == b) throw std::invalid_argument("Graph: self-loops are not allowed");
    canon.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(canon.begin(), canon.end());
  canon.erase(std::unique(canon.begin(), canon.end()), canon.end());

  std::vector<std::size_t> deg(static_cast<std::size_t>(node_count), 0);
  for (const auto& [a, b] : canon) {
    ++deg[static_cast<std::size_t>(a)];
    ++deg[static_cast<std::size_t>(b)];
  }
  offsets_.assign(static_cast<std::size_t>(node_count) + 1, 0);
  for (int i = 0; i < node_count; ++i)
    offsets_[static_cast<std::size_t>(i) + 1] =
        offsets_[static_cast<std::size_t>(i)] + deg[static_cast<std::size_t>(i)];
  neighbors_.resize(offsets_.back());
  std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
  for (const auto& [a, b] : canon) {
    neighbors_[cursor[static_cast<std::size_t>(a)]++] = b;
    neighbors_[cursor[static_cast<std::size_t>(b)]++] = a;
  }
  for (int i = 0; i < node_count; ++i) {
    auto* lo = neighbors_.data() + offsets_[static_cast<std::size_t>(i)];
    auto* hi = neighbors_.data() + offsets_[static_cast<std::size_t>(i) + 1];
    std::sort(lo, hi);
  }
}

bool Graph::has_edge(int i, int j) const {
  check_node(j);
  auto [lo, hi] = neighbors(i);
  return std::binary_search(lo, hi, j);
}

int Graph::max_degree() const {
  int m = 0;
  for (int i = 0; i < node_count_; ++i) m = std::max(m, degree(i));
  return m;
}

std::vector<std::pair<int, int>> Graph::edge_list() const {
  std::vector<std::pair<int, int>> out;
  out.reserve(edge_count());
  for (int i = 0; i < node_count_; ++i) {
    auto [lo, hi] = neighbors(i);
    for (const int* p = lo; p != hi; ++p)
      if (*p > i) out.emplace_back(i, *p);
  }
  return out;
}

void Graph::save(std::ostream& out) const {
  out << "N=" << node_count_ << "\n";
  for (const auto& [a, b] : edge_list()) out << a << " " << b << "\n";
}

void Graph::save_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("Graph::save_file: cannot open " + path);
  save(out);
}

Graph Graph::load(std::istream& in) {
  std::string header;
  if (!std::getline(in, header) || header.rfind("N=", 0) != 0)
    throw std::runtime_error("Graph::load: missing N=<count> header");
  const int n = std::stoi(header.substr(2));
  std::vector<std::pair<int, int>> edges;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    int a, b;
    if (!(ls >> a >> b))
      throw std::runtime_error("Graph::load: malformed edge line '" + line + "'");
    edges.emplace_back(a, b);
  }
  return Graph(n, edges);
}

Graph Graph::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("Graph::load_file: cannot open " + path);
  return load(in);
}

Graph gen_erdos_renyi(int n, double p, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("gen_erdos_renyi: n must be >= 2");
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument("gen_erdos_renyi: p must lie in [0,1]");
  Rng rng(seed);
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.bernoulli(p)) edges.emplace_back(i, j);
  return Graph(n, edges);
}

Graph gen_barabasi_albert(int n, int m, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("gen_barabasi_albert: m must be >= 1");
  if (m >= n)
    throw std::invalid_argument("gen_barabasi_albert: m must be < n");
  Rng rng(seed);
  std::vector<std::pair<int, int>> edges;
  // Seed configuration: complete graph on m+1 nodes.
  const int seed_size = m + 1;
  for (int i = 0; i < seed_size; ++i)
    for (int j = i + 1; j < seed_size; ++j) edges.emplace_back(i, j);
  // Repeated-endpoint list: each edge contributes both endpoints, so
  // sampling uniformly from it is sampling proportional to degree.
  std::vector<int> endpoints;
  endpoints.reserve(static_cast<std::size_t>(2 * m) * static_cast<std::size_t>(n));
  for (const auto& [a, b] : edges) {
    endpoints.push_back(a);
    endpoints.push_back(b);
  }
  std::vector<int> targets;
  for (int v = seed_size; v < n; ++v) {
    targets.clear();
    while (static_cast<int>(targets.size()) < m) {
      const int cand = endpoints[static_cast<std::size_t>(rng.below(endpoints.size()))];
      if (std::find(targets.begin(), targets.end(), cand) == targets.end())
        targets.push_back(cand);
    }
    for (const int t : targets) {
      edges.emplace_back(v, t);
      endpoints.push_back(v);
      endpoints.push_back(t);
    }
  }
  return Graph(n, edges);
}

Graph gen_sbm(int n, const std::vector<int>& block_sizes, double p_in, double p_out,
              std::uint64_t seed) {
  const long long total = std::accumulate(block_sizes.begin(), block_sizes.end(), 0LL);
  if (total != n)
    throw std::invalid_argument("gen_sbm: block sizes must sum to n");
  if (!(p_in >= 0.0 && p_in <= 1.0 && p_out >= 0.0 && p_out <= 1.0))
    throw std::invalid_argument("gen_sbm: probabilities must lie in [0,1]");
  std::vector<int> block_of(static_cast<std::size_t>(n));
  int node = 0;
  for (std::size_t b = 0; b < block_sizes.size(); ++b) {
    if (block_sizes[b] < 0) throw std::invalid_argument("gen_sbm: negative block size");
    for (int k = 0; k < block_sizes[b]; ++k) block_of[static_cast<std::size_t>(node++)] = static_cast<int>(b);
  }
  Rng rng(seed);
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double p = block_of[static_cast<std::size_t>(i)] == block_of[static_cast<std::size_t>(j)] ? p_in : p_out;
      if (rng.bernoulli(p)) edges.emplace_back(i, j);
    }
  return Graph(n, edges);
}

std::vector<int> khop_neighbors(const Graph& g, int i, int r) {
  if (r < 1) throw std::invalid_argument("khop_neighbors: radius must be >= 1");
  std::vector<int> dist(static_cast<std::size_t>(g.node_count()), -1);
  std::vector<int> frontier{i}, next, out;
  dist[static_cast<std::size_t>(i)] = 0;
  for (int depth = 1; depth <= r && !frontier.empty(); ++depth) {
    next.clear();
    for (const int u : frontier) {
      auto [lo, hi] = g.neighbors(u);
      for (const int* p = lo; p != hi; ++p) {
        if (dist[static_cast<std::size_t>(*p)] < 0) {
          dist[static_cast<std::size_t>(*p)] = depth;
          next.push_back(*p);
          out.push_back(*p);
        }
      }
    }
    frontier.swap(next);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace netbound
