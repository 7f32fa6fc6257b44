#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <netbound/netgraph.hpp>

#include <algorithm>
#include <queue>
#include <set>
#include <sstream>

using namespace netbound;

namespace {

bool connected(const Graph& g) {
  const int n = g.node_count();
  if (n == 0) return true;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = 1;
  int count = 1;
  while (!frontier.empty()) {
    const int i = frontier.front();
    frontier.pop();
    auto [lo, hi] = g.neighbors(i);
    for (const int* p = lo; p != hi; ++p) {
      if (!seen[static_cast<std::size_t>(*p)]) {
        seen[static_cast<std::size_t>(*p)] = 1;
        ++count;
        frontier.push(*p);
      }
    }
  }
  return count == n;
}

void check_simple_symmetric(const Graph& g) {
  for (int i = 0; i < g.node_count(); ++i) {
    auto [lo, hi] = g.neighbors(i);
    for (const int* p = lo; p != hi; ++p) {
      CHECK(*p != i);
      CHECK(g.has_edge(*p, i));
    }
    CHECK(g.degree(i) == static_cast<int>(hi - lo));
  }
}

std::vector<int> bfs_within(const Graph& g, int start, int r) {
  std::vector<int> dist(static_cast<std::size_t>(g.node_count()), -1);
  std::queue<int> frontier;
  frontier.push(start);
  dist[static_cast<std::size_t>(start)] = 0;
  std::vector<int> out;
  while (!frontier.empty()) {
    const int i = frontier.front();
    frontier.pop();
    if (dist[static_cast<std::size_t>(i)] == r) continue;
    auto [lo, hi] = g.neighbors(i);
    for (const int* p = lo; p != hi; ++p) {
      if (dist[static_cast<std::size_t>(*p)] < 0) {
        dist[static_cast<std::size_t>(*p)] = dist[static_cast<std::size_t>(i)] + 1;
        out.push_back(*p);
        frontier.push(*p);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("graph constructor normalizes edges and rejects self loops") {
  Graph g(4, {{0, 1}, {1, 0}, {2, 3}, {2, 3}});
  CHECK(g.edge_count() == 2);
  CHECK(g.has_edge(0, 1));
  CHECK(g.has_edge(3, 2));
  CHECK_FALSE(g.has_edge(0, 2));
  CHECK_THROWS(Graph(3, {{1, 1}}));
  CHECK_THROWS(Graph(3, {{0, 5}}));
}

TEST_CASE("erdos renyi degenerate probabilities") {
  const Graph empty = gen_erdos_renyi(3, 0.0, 42);
  CHECK(empty.edge_count() == 0);

  const Graph full = gen_erdos_renyi(3, 1.0, 42);
  CHECK(full.edge_count() == 3);
  for (int i = 0; i < 3; ++i) CHECK(full.degree(i) == 2);
}

TEST_CASE("erdos renyi mean degree near n p") {
  const Graph g = gen_erdos_renyi(1000, 0.01, 7);
  double mean_degree = 0.0;
  for (int i = 0; i < g.node_count(); ++i) mean_degree += g.degree(i);
  mean_degree /= g.node_count();
  CHECK(mean_degree >= 7.0);
  CHECK(mean_degree <= 13.0);
}

TEST_CASE("erdos renyi parameter validation") {
  CHECK_THROWS(gen_erdos_renyi(1, 0.5, 1));
  CHECK_THROWS(gen_erdos_renyi(10, -0.1, 1));
  CHECK_THROWS(gen_erdos_renyi(10, 1.1, 1));
}

TEST_CASE("barabasi albert m=1 gives a tree") {
  const Graph g = gen_barabasi_albert(5, 1, 11);
  CHECK(g.edge_count() == 4);
  CHECK(connected(g));
}

TEST_CASE("barabasi albert edge bookkeeping") {
  // Seed clique on m+1 = 3 nodes, then m = 2 attachments per new node.
  const Graph g = gen_barabasi_albert(100, 2, 3);
  CHECK(g.edge_count() == 3 + 2 * (100 - 3));
  CHECK(connected(g));
  int min_degree = g.node_count();
  for (int i = 0; i < g.node_count(); ++i) min_degree = std::min(min_degree, g.degree(i));
  CHECK(min_degree >= 2);
}

TEST_CASE("barabasi albert smallest instance and validation") {
  const Graph g = gen_barabasi_albert(2, 1, 9);
  CHECK(g.edge_count() == 1);
  CHECK(g.has_edge(0, 1));
  CHECK_THROWS(gen_barabasi_albert(3, 3, 1));
  CHECK_THROWS(gen_barabasi_albert(3, 0, 1));
}

TEST_CASE("sbm degenerate probabilities") {
  const Graph cliques = gen_sbm(4, {2, 2}, 1.0, 0.0, 5);
  CHECK(cliques.edge_count() == 2);
  CHECK(cliques.has_edge(0, 1));
  CHECK(cliques.has_edge(2, 3));
  CHECK_FALSE(cliques.has_edge(0, 2));

  const Graph empty = gen_sbm(4, {2, 2}, 0.0, 0.0, 5);
  CHECK(empty.edge_count() == 0);
}

TEST_CASE("sbm intra and inter block degrees near expectation") {
  const Graph g = gen_sbm(200, {100, 100}, 0.1, 0.01, 1);
  double intra = 0.0, inter = 0.0;
  for (int i = 0; i < 200; ++i) {
    auto [lo, hi] = g.neighbors(i);
    for (const int* p = lo; p != hi; ++p) {
      const bool same_block = (i < 100) == (*p < 100);
      (same_block ? intra : inter) += 1.0;
    }
  }
  intra /= 200.0;
  inter /= 200.0;
  CHECK(intra >= 9.9 * 0.7);
  CHECK(intra <= 9.9 * 1.3);
  CHECK(inter >= 1.0 * 0.7);
  CHECK(inter <= 1.0 * 1.3);
}

TEST_CASE("sbm partition validation") {
  CHECK_THROWS(gen_sbm(5, {2, 2}, 0.5, 0.1, 1));
  CHECK_THROWS(gen_sbm(4, {2, 2}, 1.5, 0.1, 1));
}

TEST_CASE("khop on a path graph") {
  const Graph path(3, {{0, 1}, {1, 2}});
  CHECK(khop_neighbors(path, 0, 1) == std::vector<int>{1});
  CHECK(khop_neighbors(path, 0, 2) == std::vector<int>{1, 2});
  CHECK(khop_neighbors(path, 1, 1) == std::vector<int>{0, 2});
  CHECK_THROWS(khop_neighbors(path, 0, 0));
}

TEST_CASE("khop radius one equals direct neighbors") {
  const Graph g = gen_erdos_renyi(80, 0.06, 13);
  for (int i = 0; i < g.node_count(); ++i) {
    auto [lo, hi] = g.neighbors(i);
    CHECK(khop_neighbors(g, i, 1) == std::vector<int>(lo, hi));
  }
}

TEST_CASE("khop matches breadth first search at larger radii") {
  const Graph g = gen_erdos_renyi(60, 0.05, 21);
  for (int i = 0; i < g.node_count(); i += 7) {
    for (int r = 1; r <= 3; ++r) {
      CHECK(khop_neighbors(g, i, r) == bfs_within(g, i, r));
    }
  }
}

TEST_CASE("generated graphs are simple and symmetric") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    switch (seed % 3) {
      case 0:
        check_simple_symmetric(gen_erdos_renyi(40, 0.1, seed));
        break;
      case 1:
        check_simple_symmetric(gen_barabasi_albert(40, 2, seed));
        break;
      default:
        check_simple_symmetric(gen_sbm(40, {20, 20}, 0.15, 0.02, seed));
        break;
    }
  }
}

TEST_CASE("generators are reproducible given the seed") {
  CHECK(gen_erdos_renyi(100, 0.05, 17).edge_list() ==
        gen_erdos_renyi(100, 0.05, 17).edge_list());
  CHECK(gen_barabasi_albert(100, 3, 17).edge_list() ==
        gen_barabasi_albert(100, 3, 17).edge_list());
  CHECK(gen_sbm(100, {50, 50}, 0.1, 0.01, 17).edge_list() ==
        gen_sbm(100, {50, 50}, 0.1, 0.01, 17).edge_list());
}

TEST_CASE("edge list serialization round-trips exactly") {
  const Graph g = gen_barabasi_albert(60, 2, 29);
  std::stringstream buffer;
  g.save(buffer);

  const std::string text = buffer.str();
  CHECK(text.rfind("N=60", 0) == 0);

  std::stringstream reread(text);
  const Graph back = Graph::load(reread);
  CHECK(back.node_count() == g.node_count());
  CHECK(back.edge_list() == g.edge_list());
}
