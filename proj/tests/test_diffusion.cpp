#include <catch_amalgamated.hpp>

#include <cmath>

#include <unsupported/Eigen/MatrixFunctions>

#include "synthetic.hpp"

using namespace gdr;
using Catch::Matchers::WithinAbs;

namespace {

// Independent oracle: Eigen's dense matrix exponential.
Matrix expm_oracle(const LinearNodeOperator& op, double t) {
  const Matrix m = -t * op.dense();
  return m.exp();
}

double rel_error(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

DiffusionEngine engine_for(const LinearNodeOperator& op, DiffusionMethod m) {
  return DiffusionEngine(op, {m, 1e-10, kDenseThreshold});
}

const DiffusionMethod kMethods[] = {DiffusionMethod::dense_eig, DiffusionMethod::taylor,
                                    DiffusionMethod::chebyshev};

}  // namespace

TEST_CASE("scaled bessel coefficients", "[diffusion]") {
  for (double a : {0.3, 2.0, 17.5, 120.0}) {
    const auto c = detail::scaled_bessel_i(a, 1e-18);
    for (std::size_t k = 0; k < std::min<std::size_t>(c.size(), 30); ++k) {
      const double expected = std::cyl_bessel_i(static_cast<double>(k), a) * std::exp(-a);
      CHECK_THAT(c[k], WithinAbs(expected, 1e-14 * std::max(1.0, expected)));
    }
  }
}

TEST_CASE("t = 0 and the two-node closed form", "[diffusion]") {
  const auto g = SparseGraph::from_edges(2, {{0, 1, 1.0}, {1, 0, 1.0}}, false);
  const auto lap = build_laplacian(g);
  for (auto m : kMethods) {
    const auto e = engine_for(lap, m);
    const Matrix b = Matrix::Random(2, 3);
    CHECK(e.expm_action(b, 0.0) == b);
    for (double t : {0.01, 0.5, 3.0, 40.0}) {
      const Matrix r = e.expm_action((Matrix(2, 1) << 1, 0).finished(), t);
      CHECK_THAT(r(0, 0), WithinAbs((1 + std::exp(-2 * t)) / 2, 1e-12));
      CHECK_THAT(r(1, 0), WithinAbs((1 - std::exp(-2 * t)) / 2, 1e-12));
    }
  }
}

TEST_CASE("expm action matches the dense exponential", "[diffusion]") {
  for (Index n : {Index{50}, Index{120}, Index{200}}) {
    const auto g = synth::connected_graph(n, 6.0 / static_cast<double>(n), static_cast<std::uint64_t>(n), n == 120);
    const auto lap = build_laplacian(g);
    const Matrix b = Matrix::Random(n, 4);
    for (double t : {0.1, 1.0, 10.0}) {
      const Matrix oracle = expm_oracle(lap, t) * b;
      for (auto m : kMethods) {
        INFO("n=" << n << " t=" << t << " method=" << to_string(m));
        CHECK(rel_error(engine_for(lap, m).expm_action(b, t), oracle) < 1e-8);
      }
    }
  }
}

TEST_CASE("expm action on the directed laplacian", "[diffusion]") {
  const auto g = synth::random_digraph(60, 0.05, 7);
  const auto ldir = build_ldir(g);
  const Matrix b = Matrix::Random(60, 2);
  for (double t : {1.0, 50.0, 500.0}) {
    const Matrix oracle = expm_oracle(ldir, t) * b;
    for (auto m : kMethods) {
      INFO("t=" << t << " method=" << to_string(m));
      CHECK(rel_error(engine_for(ldir, m).expm_action(b, t), oracle) < 1e-8);
    }
  }
}

TEST_CASE("mass conservation and positivity", "[diffusion]") {
  const auto g = synth::connected_graph(80, 0.05, 5, true);
  const auto lap = build_laplacian(g);
  const Matrix b = synth::random_stochastic(80, 3, 8);
  for (auto m : kMethods) {
    const auto e = engine_for(lap, m);
    for (double t : {0.05, 1.0, 7.0, 60.0}) {
      const Matrix r = e.expm_action(b, t);
      CHECK((r.colwise().sum() - b.colwise().sum()).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(r.minCoeff() >= -1e-12);
    }
  }
}

TEST_CASE("argument checks", "[diffusion]") {
  const auto lap = build_laplacian(synth::connected_graph(5, 0.3, 1));
  const DiffusionEngine e(lap);
  CHECK_THROWS_AS(e.expm_action(Matrix::Ones(5, 1), -1.0), Error);
  Matrix bad = Matrix::Ones(5, 1);
  bad(2, 0) = std::nan("");
  CHECK_THROWS_AS(e.expm_action(bad, 1.0), Error);
  CHECK_THROWS_AS(e.expm_action(Matrix::Ones(4, 1), 1.0), Error);
  CHECK_THROWS_AS(DiffusionEngine(build_pdir(synth::random_digraph(6, 0.3, 2))), Error);
}

TEST_CASE("stationary profile", "[diffusion]") {
  const Vector u = stationary_profile(Matrix::Constant(6, 3, 1.0 / 3));
  CHECK((u.array() - 1.0 / 3).abs().maxCoeff() < 1e-15);
  Matrix onehot = Matrix::Zero(5, 2);
  onehot(0, 0) = onehot(1, 0) = 1;
  onehot(2, 1) = onehot(3, 1) = onehot(4, 1) = 1;
  const Vector p = stationary_profile(onehot);
  CHECK(p[0] == 0.4);
  CHECK(p[1] == 0.6);
}

TEST_CASE("convergence to the stationary state", "[diffusion]") {
  const auto lap = build_laplacian(synth::connected_graph(40, 0.1, 4));
  const DiffusionEngine e(lap);
  const Matrix h = synth::random_stochastic(40, 3, 2);
  const Matrix limit = Matrix::Ones(40, 1) * stationary_profile(h).transpose();
  const auto grid = make_time_grid(0.0, 200.0, 60);
  double previous = 1e300;
  for (double t : grid.points) {
    const double dev = (e.expm_action(h, t) - limit).cwiseAbs().maxCoeff();
    CHECK(dev <= previous + 1e-12);
    previous = dev;
  }
  CHECK(previous < 1e-8);
}

TEST_CASE("smallest nonzero eigenvalue", "[diffusion]") {
  const auto lap = build_laplacian(synth::connected_graph(150, 0.03, 6));
  const DiffusionEngine dense(lap, {DiffusionMethod::dense_eig});
  const DiffusionEngine sparse(lap, {DiffusionMethod::chebyshev});
  Eigen::SelfAdjointEigenSolver<Matrix> es(lap.dense());
  CHECK_THAT(dense.smallest_nonzero_eigenvalue(), WithinAbs(es.eigenvalues()[1], 1e-10));
  CHECK_THAT(sparse.smallest_nonzero_eigenvalue(), WithinAbs(es.eigenvalues()[1], 1e-6));
}

TEST_CASE("stationary assignments have no overshoot", "[overshoot]") {
  const auto lap = build_laplacian(synth::connected_graph(30, 0.1, 3));
  const DiffusionEngine e(lap);
  Matrix h(30, 3);
  h.rowwise() = (Eigen::RowVector3d() << 0.2, 0.5, 0.3).finished();
  const auto r = overshoot_matrix(e, h, make_time_grid(0.0, 50.0));
  CHECK(r.omega.cwiseAbs().maxCoeff() == 0.0);
  for (int k : r.kappa_omega) CHECK(k == 0);

  const auto scan = overshoot_scan(e, h, {0.0, 1.0});
  for (const auto& s : scan) CHECK(s.omega.maxCoeff() == 0.0);
}

TEST_CASE("burn-in past stationarity leaves no overshoot", "[overshoot]") {
  const auto lap = build_laplacian(synth::connected_graph(30, 0.1, 3));
  const DiffusionEngine e(lap);
  const Matrix h = synth::random_stochastic(30, 4, 5);
  const auto r = overshoot_matrix(e, h, make_time_grid(1e6, 2e6, 10));
  CHECK(r.omega.maxCoeff() < 1e-8);
  const auto s = overshoot_scan(e, h, {1e6});
  CHECK(s[0].omega.maxCoeff() < 1e-8);
}

TEST_CASE("barbell overshoots match a fine-grid dense oracle", "[overshoot]") {
  const auto lap = build_laplacian(synth::barbell());
  const Index n = 10;
  Matrix h = Matrix::Zero(n, 2);
  h.col(1).setOnes();
  h(1, 0) = 1.0;  // interior node of the first clique
  h(1, 1) = 0.0;

  Eigen::SelfAdjointEigenSolver<Matrix> es(lap.dense());
  const Vector pi = stationary_profile(h);
  const double t0 = 1e-3, t_end = 100.0;
  const int count = 1000;
  for (double t_min : {0.0, 0.5, 2.0}) {
    // Oracle: explicit spectral evaluation on t_min plus a log grid.
    std::vector<double> times{t_min};
    const double lo = std::max(t_min, t0);
    for (int k = 0; k < count; ++k) {
      const double t = lo * std::pow(t_end / lo, static_cast<double>(k) / (count - 1));
      if (t > times.back()) times.push_back(t);
    }
    Matrix best = Matrix::Constant(n, 2, -1e300);
    for (double t : times) {
      const Vector decay = (-t * es.eigenvalues().array()).exp().matrix();
      best = best.cwiseMax(es.eigenvectors() * decay.asDiagonal() * es.eigenvectors().transpose() * h);
    }
    Matrix oracle = (best.rowwise() - pi.transpose()).cwiseMax(0.0);

    for (auto m : kMethods) {
      const auto e = engine_for(lap, m);
      const auto r = overshoot_matrix(e, h, make_time_grid(t_min, t_end, count, t0));
      INFO("t_min=" << t_min << " method=" << to_string(m));
      CHECK((r.omega - oracle).cwiseAbs().maxCoeff() < 1e-6);
      for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < 2; ++j) CHECK((r.omega(i, j) > 0) == (oracle(i, j) > 1e-10));
      }
    }
  }
}

TEST_CASE("scan agrees with per-t_min overshoot matrices", "[overshoot]") {
  const auto lap = build_laplacian(synth::connected_graph(60, 0.05, 12));
  const DiffusionEngine e(lap);
  const Matrix h = synth::random_stochastic(60, 3, 13);
  const std::vector<double> t_mins{0.0, 0.1, 0.5, 2.0, 8.0};
  ScanOptions opts;
  opts.t_max = 400.0;
  opts.grid_points = 300;
  const auto scan = overshoot_scan(e, h, t_mins, opts);
  REQUIRE(scan.size() == t_mins.size());
  for (std::size_t k = 0; k < t_mins.size(); ++k) {
    // Fine per-t_min reference; the shared grid is coarser so allow grid error.
    const auto ref = overshoot_matrix(e, h, make_time_grid(t_mins[k], 400.0, 3000));
    CHECK((scan[k].omega - ref.omega).cwiseAbs().maxCoeff() < 1e-3);
    if (k > 0) CHECK((scan[k].omega.array() <= scan[k - 1].omega.array() + 1e-15).all());
  }
}

TEST_CASE("grid refinement is stable", "[overshoot]") {
  const auto lap = build_laplacian(synth::connected_graph(40, 0.08, 14));
  const DiffusionEngine e(lap);
  const Matrix h = synth::random_stochastic(40, 3, 15);
  ScanOptions coarse, fine;
  coarse.t_max = fine.t_max = 300.0;
  coarse.grid_points = 200;
  fine.grid_points = 2000;
  const auto a = overshoot_scan(e, h, {0.5}, coarse)[0];
  const auto b = overshoot_scan(e, h, {0.5}, fine)[0];
  CHECK((a.omega - b.omega).cwiseAbs().maxCoeff() < 1e-3 * std::max(b.omega.maxCoeff(), 1e-12));
}
