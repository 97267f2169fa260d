#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gdr/error.hpp"

namespace gdr {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

inline constexpr double kDefaultAlpha = 0.85;
// Operators on at most this many nodes may be materialized dense.
inline constexpr Index kDenseThreshold = 1500;

struct Edge {
  Index src = 0;
  Index dst = 0;
  double weight = 1.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

// Weighted adjacency matrix A. Duplicate (src, dst) pairs are summed and
// zero weights dropped; raw self-loops are kept.
class SparseGraph {
 public:
  SparseGraph() = default;

  static SparseGraph from_edges(Index n_nodes, const std::vector<Edge>& edges, bool directed) {
    if (n_nodes < 0) {
      throw Error(ErrorKind::input, "negative-node-count", "n_nodes must be nonnegative");
    }
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(edges.size());
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const Edge& e = edges[k];
      if (e.src < 0 || e.src >= n_nodes || e.dst < 0 || e.dst >= n_nodes) {
        throw Error(ErrorKind::input, "node-out-of-range",
                    "edge " + std::to_string(k) + " (" + std::to_string(e.src) + "," +
                        std::to_string(e.dst) + ") outside [0," + std::to_string(n_nodes) + ")");
      }
      if (!std::isfinite(e.weight) || e.weight < 0.0) {
        throw Error(ErrorKind::input, "invalid-weight",
                    "edge " + std::to_string(k) + " has weight " + std::to_string(e.weight));
      }
      triplets.emplace_back(e.src, e.dst, e.weight);
    }
    SparseGraph g;
    g.directed_ = directed;
    g.adjacency_.resize(n_nodes, n_nodes);
    g.adjacency_.setFromTriplets(triplets.begin(), triplets.end());
    g.adjacency_.prune(0.0);
    g.adjacency_.makeCompressed();
    if (!directed) {
      SparseMatrix transposed = g.adjacency_.transpose();
      SparseMatrix diff = g.adjacency_ - transposed;
      diff.prune(0.0);
      if (diff.nonZeros() != 0) {
        throw Error(ErrorKind::input, "asymmetric-undirected-graph",
                    "undirected graph requires A = A^T exactly");
      }
    }
    g.hash_ = g.compute_hash();
    return g;
  }

  Index n_nodes() const { return adjacency_.rows(); }
  bool directed() const { return directed_; }
  const SparseMatrix& adjacency() const { return adjacency_; }
  std::uint64_t hash() const { return hash_; }

  // Canonical edge list, sorted by (src, dst).
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(static_cast<std::size_t>(adjacency_.nonZeros()));
    for (Index i = 0; i < adjacency_.outerSize(); ++i) {
      for (SparseMatrix::InnerIterator it(adjacency_, i); it; ++it) {
        out.push_back({it.row(), it.col(), it.value()});
      }
    }
    return out;
  }

  Vector out_degrees() const { return adjacency_ * Vector::Ones(n_nodes()); }
  Vector in_degrees() const { return adjacency_.transpose() * Vector::Ones(n_nodes()); }
  double total_weight() const { return adjacency_.sum(); }

  SparseGraph transposed() const {
    SparseGraph g;
    g.directed_ = directed_;
    g.adjacency_ = SparseMatrix(adjacency_.transpose());
    g.adjacency_.makeCompressed();
    g.hash_ = g.compute_hash();
    return g;
  }

  // Undirected graph with weights max(A_ij, A_ji).
  SparseGraph symmetrized() const {
    SparseMatrix t = adjacency_.transpose();
    SparseMatrix sym = adjacency_.cwiseMax(t);
    SparseGraph g;
    g.directed_ = false;
    g.adjacency_ = std::move(sym);
    g.adjacency_.prune(0.0);
    g.adjacency_.makeCompressed();
    g.hash_ = g.compute_hash();
    return g;
  }

 private:
  std::uint64_t compute_hash() const {
    // FNV-1a over (n, directed, canonical triplets).
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t len) {
      const auto* p = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
      }
    };
    const Index n = n_nodes();
    mix(&n, sizeof n);
    const unsigned char d = directed_ ? 1 : 0;
    mix(&d, 1);
    for (const Edge& e : edges()) {
      mix(&e.src, sizeof e.src);
      mix(&e.dst, sizeof e.dst);
      mix(&e.weight, sizeof e.weight);
    }
    return h;
  }

  SparseMatrix adjacency_;
  bool directed_ = false;
  std::uint64_t hash_ = 0;
};

enum class OperatorKind { laplacian, gcn_hat, pdir, ldir, ldir_transpose };

inline const char* to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::laplacian: return "laplacian";
    case OperatorKind::gcn_hat: return "gcn-hat";
    case OperatorKind::pdir: return "pdir";
    case OperatorKind::ldir: return "ldir";
    case OperatorKind::ldir_transpose: return "ldir-transpose";
  }
  return "unknown";
}

// Rank-one correction u v^T.
struct RankOne {
  Vector u;
  Vector v;
};

// N x N operator stored as a sparse matrix plus a short list of rank-one
// terms, so that teleportation terms never densify large graphs.
class LinearNodeOperator {
 public:
  LinearNodeOperator() = default;
  LinearNodeOperator(OperatorKind kind, SparseMatrix sparse, std::vector<RankOne> low_rank,
                     double alpha, std::uint64_t source_hash)
      : kind_(kind),
        sparse_(std::move(sparse)),
        low_rank_(std::move(low_rank)),
        alpha_(alpha),
        source_hash_(source_hash) {
    sparse_.makeCompressed();
  }

  OperatorKind kind() const { return kind_; }
  Index size() const { return sparse_.rows(); }
  double alpha() const { return alpha_; }
  std::uint64_t source_hash() const { return source_hash_; }
  const SparseMatrix& sparse_part() const { return sparse_; }
  const std::vector<RankOne>& low_rank_part() const { return low_rank_; }

  // Symmetric by construction (or by graph symmetry for laplacian/gcn-hat).
  bool symmetric() const {
    return kind_ == OperatorKind::laplacian || kind_ == OperatorKind::ldir ||
           kind_ == OperatorKind::ldir_transpose || symmetric_hint_;
  }
  void set_symmetric_hint(bool s) { symmetric_hint_ = s; }

  Matrix apply(const Matrix& b) const {
    Matrix out = sparse_ * b;
    for (const RankOne& r : low_rank_) {
      out.noalias() += r.u * (r.v.transpose() * b);
    }
    return out;
  }

  Matrix apply_transpose(const Matrix& b) const {
    Matrix out = sparse_.transpose() * b;
    for (const RankOne& r : low_rank_) {
      out.noalias() += r.v * (r.u.transpose() * b);
    }
    return out;
  }

  Matrix dense() const {
    Matrix out = Matrix(sparse_);
    for (const RankOne& r : low_rank_) {
      out.noalias() += r.u * r.v.transpose();
    }
    return out;
  }

  Vector diagonal() const {
    Vector d = sparse_.diagonal();
    for (const RankOne& r : low_rank_) {
      d += r.u.cwiseProduct(r.v);
    }
    return d;
  }

  Vector row_sums() const { return apply(Vector::Ones(size())); }

  // Gershgorin-style upper bound on the spectral radius.
  double norm_bound() const {
    Vector rows = Vector::Zero(size());
    for (Index i = 0; i < sparse_.outerSize(); ++i) {
      for (SparseMatrix::InnerIterator it(sparse_, i); it; ++it) {
        rows[i] += std::abs(it.value());
      }
    }
    for (const RankOne& r : low_rank_) {
      rows += r.u.cwiseAbs() * r.v.lpNorm<1>();
    }
    return size() == 0 ? 0.0 : rows.maxCoeff();
  }

  // Connected components of the off-diagonal coupling pattern. For a
  // symmetric operator with zero row sums these index the kernel.
  std::vector<Index> coupling_components() const {
    const Index n = size();
    std::vector<Index> parent(static_cast<std::size_t>(n));
    std::iota(parent.begin(), parent.end(), Index{0});
    auto find = [&parent](Index x) {
      while (parent[x] != x) {
        parent[x] = parent[parent[x]];
        x = parent[x];
      }
      return x;
    };
    auto unite = [&](Index a, Index b) {
      a = find(a);
      b = find(b);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    };
    for (Index i = 0; i < sparse_.outerSize(); ++i) {
      for (SparseMatrix::InnerIterator it(sparse_, i); it; ++it) {
        if (it.row() != it.col() && it.value() != 0.0) unite(it.row(), it.col());
      }
    }
    for (const RankOne& r : low_rank_) {
      Index first_u = -1;
      Index first_v = -1;
      for (Index i = 0; i < n; ++i) {
        if (r.u[i] != 0.0 && first_u < 0) first_u = i;
        if (r.v[i] != 0.0 && first_v < 0) first_v = i;
      }
      if (first_u < 0 || first_v < 0) continue;
      for (Index i = 0; i < n; ++i) {
        if (r.u[i] != 0.0) unite(i, first_v);
        if (r.v[i] != 0.0) unite(first_u, i);
      }
    }
    std::vector<Index> label(static_cast<std::size_t>(n), -1);
    std::vector<Index> out(static_cast<std::size_t>(n));
    Index next = 0;
    for (Index i = 0; i < n; ++i) {
      const Index root = find(i);
      if (label[root] < 0) label[root] = next++;
      out[i] = label[root];
    }
    return out;
  }

 private:
  OperatorKind kind_ = OperatorKind::laplacian;
  SparseMatrix sparse_;
  std::vector<RankOne> low_rank_;
  double alpha_ = 1.0;
  std::uint64_t source_hash_ = 0;
  bool symmetric_hint_ = false;
};

struct PagerankVector {
  Vector values;
  double alpha = kDefaultAlpha;
  double residual = 0.0;
  long iterations = 0;
};

namespace detail {

inline SparseMatrix diagonal_matrix(const Vector& d) {
  SparseMatrix m(d.size(), d.size());
  m.reserve(Eigen::VectorXi::Constant(d.size(), 1));
  for (Index i = 0; i < d.size(); ++i) {
    m.insert(i, i) = d[i];
  }
  m.makeCompressed();
  return m;
}

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw Error(ErrorKind::parameter, "alpha-out-of-range",
                "alpha must lie in (0,1], got " + std::to_string(alpha));
  }
}

}  // namespace detail

// L = D - A with D the weighted degrees.
inline LinearNodeOperator build_laplacian(const SparseGraph& g) {
  if (g.directed()) {
    throw Error(ErrorKind::input, "laplacian-requires-undirected",
                "the combinatorial Laplacian is defined for undirected graphs only");
  }
  SparseMatrix lap = detail::diagonal_matrix(g.out_degrees()) - g.adjacency();
  lap.prune(0.0);
  return {OperatorKind::laplacian, std::move(lap), {}, 1.0, g.hash()};
}

// D̄^{-1/2} (I + A) D̄^{-1/2} with D̄ = diag((I + A) 1).
inline LinearNodeOperator build_gcn_operator(const SparseGraph& g) {
  const Index n = g.n_nodes();
  SparseMatrix identity(n, n);
  identity.setIdentity();
  SparseMatrix with_loops = g.adjacency() + identity;
  const Vector degree = with_loops * Vector::Ones(n);
  const Vector inv_sqrt = degree.cwiseSqrt().cwiseInverse();
  const SparseMatrix scale = detail::diagonal_matrix(inv_sqrt);
  SparseMatrix hat = scale * with_loops * scale;
  LinearNodeOperator op(OperatorKind::gcn_hat, std::move(hat), {}, 1.0, g.hash());
  op.set_symmetric_hint(!g.directed());
  return op;
}

// Teleporting random walk: alpha D_out^+ A + ((1-alpha) I + alpha diag(dangling)) 11^T / N.
inline LinearNodeOperator build_pdir(const SparseGraph& g, double alpha = kDefaultAlpha) {
  detail::check_alpha(alpha);
  const Index n = g.n_nodes();
  const Vector out_degree = g.out_degrees();
  Vector inv_degree = Vector::Zero(n);
  Vector reinject = Vector::Constant(n, 1.0 - alpha);
  for (Index i = 0; i < n; ++i) {
    if (out_degree[i] == 0.0) {
      reinject[i] += alpha;
    } else {
      inv_degree[i] = 1.0 / out_degree[i];
    }
  }
  SparseMatrix walk = alpha * (detail::diagonal_matrix(inv_degree) * g.adjacency());
  walk.prune(0.0);
  std::vector<RankOne> low_rank;
  if (n > 0 && reinject.cwiseAbs().maxCoeff() > 0.0) {
    low_rank.push_back({reinject / static_cast<double>(n), Vector::Ones(n)});
  }
  return {OperatorKind::pdir, std::move(walk), std::move(low_rank), alpha, g.hash()};
}

// Left Perron vector of P_dir by lazy power iteration (x <- (x + x P) / 2),
// which shares the fixed point of x P = x and stays aperiodic on bipartite
// walks. Normalized to sum 1.
inline PagerankVector pagerank(const LinearNodeOperator& p, double tol = 1e-12,
                               long max_iterations = 100000) {
  if (p.kind() != OperatorKind::pdir) {
    throw Error(ErrorKind::parameter, "pagerank-requires-pdir", "operator must be of kind pdir");
  }
  const Index n = p.size();
  PagerankVector out;
  out.alpha = p.alpha();
  if (n == 0) return out;
  Vector phi = Vector::Constant(n, 1.0 / static_cast<double>(n));
  double residual = 0.0;
  for (long it = 0; it < max_iterations; ++it) {
    const Vector next = p.apply_transpose(phi);
    residual = (next - phi).lpNorm<1>();
    out.iterations = it;
    if (residual < tol) break;
    phi = 0.5 * (phi + next);
    phi /= phi.sum();
    if (it + 1 == max_iterations) {
      throw ConvergenceError("pagerank-not-converged",
                             "residual " + std::to_string(residual) + " after " +
                                 std::to_string(max_iterations) + " iterations",
                             residual);
    }
  }
  phi /= phi.sum();
  out.values = phi;
  out.residual = (p.apply_transpose(phi) - phi).lpNorm<1>();
  return out;
}

// Symmetric part of the directed Laplacian: Phi - (Phi P + P^T Phi) / 2.
inline LinearNodeOperator build_ldir(const SparseGraph& g, double alpha = kDefaultAlpha,
                                     bool transpose_graph = false) {
  const SparseGraph& source = g;
  SparseGraph flipped;
  if (transpose_graph) flipped = g.transposed();
  const SparseGraph& graph = transpose_graph ? flipped : source;

  const LinearNodeOperator p = build_pdir(graph, alpha);
  const PagerankVector pr = pagerank(p);
  const Vector& phi = pr.values;

  const SparseMatrix phi_diag = detail::diagonal_matrix(phi);
  const SparseMatrix phi_walk = phi_diag * p.sparse_part();
  SparseMatrix walk_t = phi_walk.transpose();
  SparseMatrix sparse = phi_diag - 0.5 * (phi_walk + walk_t);
  sparse.prune(0.0);

  std::vector<RankOne> low_rank;
  for (const RankOne& r : p.low_rank_part()) {
    // Phi (u v^T) and (v u^T) Phi, each halved and negated.
    const Vector phi_u = phi.cwiseProduct(r.u);
    low_rank.push_back({-0.5 * phi_u, r.v});
    low_rank.push_back({-0.5 * r.v, phi_u});
  }
  return {transpose_graph ? OperatorKind::ldir_transpose : OperatorKind::ldir, std::move(sparse),
          std::move(low_rank), alpha, g.hash()};
}

}  // namespace gdr
