#pragma once

// Small synthetic graphs and datasets shared by the test binaries.

#include <random>
#include <vector>

#include "gdr/gdr.hpp"

namespace synth {

using gdr::Edge;
using gdr::Index;
using gdr::SparseGraph;

// Undirected graph with a spanning path (so it is connected) plus random
// extra edges of random positive weight.
inline SparseGraph connected_graph(Index n, double extra_p, std::uint64_t seed, bool weighted = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Edge> edges;
  auto add = [&](Index a, Index b) {
    const double w = weighted ? 0.5 + u(rng) : 1.0;
    edges.push_back({a, b, w});
    edges.push_back({b, a, w});
  };
  for (Index i = 0; i + 1 < n; ++i) add(i, i + 1);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 2; j < n; ++j) {
      if (u(rng) < extra_p) add(i, j);
    }
  }
  return SparseGraph::from_edges(n, edges, false);
}

inline SparseGraph random_digraph(Index n, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Edge> edges;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i != j && u(rng) < p) edges.push_back({i, j, 1.0});
    }
  }
  return SparseGraph::from_edges(n, edges, true);
}

// Two K5 cliques (0..4, 5..9) joined by the edge 4-5.
inline SparseGraph barbell() {
  std::vector<Edge> edges;
  for (Index base : {Index{0}, Index{5}}) {
    for (Index i = 0; i < 5; ++i) {
      for (Index j = 0; j < 5; ++j) {
        if (i != j) edges.push_back({base + i, base + j, 1.0});
      }
    }
  }
  edges.push_back({4, 5, 1.0});
  edges.push_back({5, 4, 1.0});
  return SparseGraph::from_edges(10, edges, false);
}

inline gdr::Matrix random_stochastic(Index n, Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  gdr::Matrix h(n, c);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < c; ++j) h(i, j) = u(rng);
    h.row(i) /= h.row(i).sum();
  }
  return h;
}

// Planted-partition dataset: `per_class` nodes per class, homophilous edges,
// noisy bag-of-words features with class-specific vocabularies.
inline gdr::Dataset planted_dataset(int classes, Index per_class, std::uint64_t seed, double p_in = 0.08,
                                    double p_out = 0.004, int train_per_class = 5, bool directed = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Index n = classes * per_class;
  gdr::Dataset d;
  d.name = "planted";
  d.n_classes = classes;
  d.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) d.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % classes);

  std::vector<Edge> edges;
  for (Index i = 0; i < n; ++i) {
    for (Index j = directed ? 0 : i + 1; j < n; ++j) {
      if (i == j) continue;
      const bool same = d.labels[static_cast<std::size_t>(i)] == d.labels[static_cast<std::size_t>(j)];
      if (u(rng) < (same ? p_in : p_out)) {
        edges.push_back({i, j, 1.0});
        if (!directed) edges.push_back({j, i, 1.0});
      }
    }
  }
  d.graph = SparseGraph::from_edges(n, edges, directed);

  const Index vocab_per_class = 6;
  const Index f = vocab_per_class * classes + 10;
  std::vector<Eigen::Triplet<double>> trips;
  for (Index i = 0; i < n; ++i) {
    const int k = d.labels[static_cast<std::size_t>(i)];
    for (Index w = 0; w < f; ++w) {
      const bool own = w / vocab_per_class == k && w < vocab_per_class * classes;
      if (u(rng) < (own ? 0.35 : 0.08)) trips.emplace_back(i, w, 1.0);
    }
  }
  d.features.resize(n, f);
  d.features.setFromTriplets(trips.begin(), trips.end());

  d.split.tags.assign(static_cast<std::size_t>(n), gdr::SplitTag::test);
  std::vector<int> seen(static_cast<std::size_t>(classes), 0);
  Index val = 0;
  for (Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(d.labels[static_cast<std::size_t>(i)]);
    if (seen[k] < train_per_class) {
      ++seen[k];
      d.split.tags[static_cast<std::size_t>(i)] = gdr::SplitTag::train;
    } else if (val < n / 5) {
      ++val;
      d.split.tags[static_cast<std::size_t>(i)] = gdr::SplitTag::val;
    }
  }
  return d;
}

}  // namespace synth
