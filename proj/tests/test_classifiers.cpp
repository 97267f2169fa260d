#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include <Eigen/QR>

#include "synthetic.hpp"

using namespace gdr;

namespace {

std::string temp_file(const std::string& name, const std::string& content) {
  const auto p = std::filesystem::temp_directory_path() / ("gdr_cls_" + name);
  std::ofstream(p) << content;
  return p.string();
}

OvershootResult over_from(const Matrix& omega) {
  OvershootResult r;
  r.omega = omega;
  r.kappa_omega.assign(static_cast<std::size_t>(omega.rows()), 0);
  for (Index i = 0; i < omega.rows(); ++i) {
    Index arg;
    if (omega.row(i).maxCoeff(&arg) > 0.0) r.kappa_omega[static_cast<std::size_t>(i)] = static_cast<int>(arg) + 1;
  }
  return r;
}

}  // namespace

TEST_CASE("uniform prior", "[classifiers]") {
  CHECK(uniform_prior(2, 2).values.isApprox(Matrix::Constant(2, 2, 0.5)));
  const auto one = uniform_prior(1, 7).values;
  CHECK(one.rows() == 1);
  CHECK((one.array() - 1.0 / 7).abs().maxCoeff() < 1e-16);
  CHECK_THROWS_AS(uniform_prior(0, 3), Error);
}

TEST_CASE("centroids", "[classifiers]") {
  Matrix x(3, 2);
  x << 1, 2, 3, 4, 5, 6;
  const auto perm = centroids(x, {2, 0, 1}, 3).values;
  CHECK(perm.row(0) == x.row(1));
  CHECK(perm.row(1) == x.row(2));
  CHECK(perm.row(2) == x.row(0));

  const auto mean = centroids(x.topRows(2), {0, 0}, 1).values;
  CHECK(mean.row(0).isApprox((Eigen::RowVector2d() << 2, 3).finished()));

  CHECK_THROWS_AS(centroids(x, {0, 0, 0}, 2), Error);
  CHECK_THROWS_AS(centroids(x, {0, 5, 0}, 2), Error);
}

TEST_CASE("centroids match the pseudo-inverse formula", "[classifiers]") {
  std::mt19937_64 rng(4);
  const Matrix x = Matrix::Random(20, 5);
  std::vector<int> cls(20);
  Matrix h = Matrix::Zero(20, 3);
  for (int i = 0; i < 20; ++i) {
    cls[static_cast<std::size_t>(i)] = i < 3 ? i : static_cast<int>(rng() % 3);
    h(i, cls[static_cast<std::size_t>(i)]) = 1.0;
  }
  const Matrix oracle = h.completeOrthogonalDecomposition().pseudoInverse() * x;
  CHECK((centroids(x, cls, 3).values - oracle).cwiseAbs().maxCoeff() < 1e-12);
  const SparseMatrix xs = x.sparseView();
  CHECK((centroids(xs, cls, 3).values - oracle).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("projection prior", "[classifiers]") {
  CentroidMatrix pi{Matrix::Identity(3, 4)};
  Matrix x(2, 4);
  x << 0, 1, 0, 0,  // equals centroid 2
      0, 0, 0, 5;   // orthogonal to every centroid
  const Matrix p = project(x, pi).values;
  CHECK(p.row(0) == (Eigen::RowVector3d() << 0, 1, 0).finished());
  CHECK((p.row(1).array() - 1.0 / 3).abs().maxCoeff() < 1e-16);
  CHECK_THROWS_AS(project(Matrix::Ones(2, 3), pi), Error);

  // Negative scores are clipped before normalizing.
  Matrix y(1, 4);
  y << -1, 2, 0, 0;
  CHECK(project(y, pi).values.row(0) == (Eigen::RowVector3d() << 0, 1, 0).finished());
}

TEST_CASE("projection recovers orthogonal one-hot classes", "[classifiers]") {
  Matrix x = Matrix::Zero(9, 3);
  std::vector<int> cls;
  for (int i = 0; i < 9; ++i) {
    x(i, i % 3) = 1.0 + i;
    cls.push_back(i % 3);
  }
  const auto labels = hard_assign(project(x, centroids(x, cls, 3))).labels;
  for (int i = 0; i < 9; ++i) CHECK(labels[static_cast<std::size_t>(i)] == cls[static_cast<std::size_t>(i)] + 1);
}

TEST_CASE("hard assignment", "[classifiers]") {
  CHECK(hard_assign((Matrix(1, 2) << .2, .8).finished()).labels[0] == 2);
  CHECK(hard_assign((Matrix(1, 2) << .5, .5).finished()).labels[0] == 1);
  const Matrix h = synth::random_stochastic(100, 6, 77);
  const auto labels = hard_assign(h).labels;
  for (Index i = 0; i < 100; ++i) {
    int best = 0;
    for (int j = 0; j < 6; ++j) {
      if (h(i, j) > h(i, best)) best = j;
    }
    CHECK(labels[static_cast<std::size_t>(i)] == best + 1);
  }
}

TEST_CASE("gdr update", "[classifiers]") {
  HardAssignment prior{{1, 2, 3, 1}, {true, false, false, false}};
  CHECK(gdr_update(prior, over_from(Matrix::Zero(4, 3))).labels == prior.labels);

  HardAssignment single{{1}, {false}};
  CHECK(gdr_update(single, over_from((Matrix(1, 3) << 0, 0.3, 0.1).finished())).labels[0] == 2);

  const Matrix omega = synth::random_stochastic(4, 3, 2);
  const auto updated = gdr_update(prior, over_from(omega));
  CHECK(updated.labels[0] == 1);  // training row unchanged

  // Labels change only where omega has a positive entry.
  Matrix sparse_omega = Matrix::Zero(4, 3);
  sparse_omega(2, 0) = 0.4;
  const auto partial = gdr_update(prior, over_from(sparse_omega));
  CHECK(partial.labels == std::vector<int>{1, 2, 1, 1});

  CHECK_THROWS_AS(gdr_update(prior, over_from(Matrix::Zero(3, 3))), Error);
}

TEST_CASE("stacked assignment and accuracy", "[classifiers]") {
  const Matrix prior = synth::random_stochastic(5, 3, 9);
  const std::vector<int> truth{2, 0, 1, 1, 0};
  const std::vector<bool> train{true, false, true, false, false};
  const auto s = stack_assignment(prior, truth, train);
  CHECK(s.values.row(0) == (Eigen::RowVector3d() << 0, 0, 1).finished());
  CHECK(s.values.row(1) == prior.row(1));
  validate_stochastic(s.values);
  const auto hard = prior_assignment(s, train);
  CHECK(hard.labels[0] == 3);
  CHECK(hard.masked_training == train);

  const auto acc = accuracy({3, 1, 1, 2, 2}, truth, {true, true, true, true, true});
  CHECK(acc.correct == 3);
  CHECK(acc.total == 5);

  CHECK_THROWS_AS(stack_assignment(prior, {-1, 0, 1, 1, 0}, train), Error);
}

TEST_CASE("external prior import", "[classifiers]") {
  const auto ok = temp_file("ok.tsv", "# node\tp1\tp2\n0\t1\t0\n1\t0\t1\n");
  CHECK(import_external_prior(ok, 2, 2).values == Matrix::Identity(2, 2));

  const auto near = temp_file("near.tsv", "0\t0.30000005\t0.7\n1\t0.5\t0.5\n");
  const Matrix n = import_external_prior(near, 2, 2).values;
  CHECK(std::abs(n.row(0).sum() - 1.0) < 1e-15);

  const auto bad = temp_file("bad.tsv", "0\t0.5\t0.5\n1\t0.4\t0.4\n");
  try {
    import_external_prior(bad, 2, 2);
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(e.code() == "prior-row-sum");
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    CHECK(std::string(e.what()).find("node 1") != std::string::npos);
  }

  const auto partial = temp_file("partial.tsv", "1\t0\t1\n");
  CHECK_THROWS_AS(import_external_prior(partial, 2, 2, {true, false}), Error);
  CHECK(import_external_prior(partial, 2, 2, {false, true}).values(0, 0) == 0.5);

  for (const char* text : {"0\t0.5\n", "0\tnan\t1\n", "0\t-0.5\t1.5\n", "0\t1\t0\n0\t1\t0\n", "7\t1\t0\n"}) {
    CHECK_THROWS_AS(import_external_prior(temp_file("reject.tsv", text), 2, 2), Error);
  }
  CHECK_THROWS_AS(import_external_prior("/nonexistent/prior.tsv", 2, 2), Error);
}

TEST_CASE("external prior round trip", "[classifiers]") {
  const Matrix h = synth::random_stochastic(7, 4, 31);
  const auto p = (std::filesystem::temp_directory_path() / "gdr_cls_rt.tsv").string();
  write_external_prior(p, h, {});
  CHECK(import_external_prior(p, 7, 4).values.isApprox(h, 1e-15));
}
