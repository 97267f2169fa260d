#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#ifdef GDR_HAVE_LAPACKE
#include <lapacke.h>
#endif

#include "gdr/error.hpp"
#include "gdr/graph.hpp"

namespace gdr {

enum class DiffusionMethod { automatic, dense_eig, taylor, chebyshev };

inline const char* to_string(DiffusionMethod m) {
  switch (m) {
    case DiffusionMethod::automatic: return "auto";
    case DiffusionMethod::dense_eig: return "dense-eig";
    case DiffusionMethod::taylor: return "taylor";
    case DiffusionMethod::chebyshev: return "chebyshev";
  }
  return "unknown";
}

struct DiffusionOptions {
  DiffusionMethod method = DiffusionMethod::automatic;
  double tol = 1e-8;
  Index dense_threshold = kDenseThreshold;
};

namespace detail {

inline void check_finite(const Matrix& b) {
  if (!b.allFinite()) {
    throw Error(ErrorKind::input, "non-finite-input", "matrix contains NaN or infinite entries");
  }
}

inline void check_time(double t) {
  if (!(t >= 0.0) || !std::isfinite(t)) {
    throw Error(ErrorKind::parameter, "negative-time",
                "diffusion time must be finite and >= 0, got " + std::to_string(t));
  }
}

// exp(-a) I_k(a) for k = 0..K, truncated where the terms fall below eps.
// Miller backward recurrence normalized by exp(-a) (I_0 + 2 sum I_k) = 1.
inline std::vector<double> scaled_bessel_i(double a, double eps) {
  if (a == 0.0) return {1.0};
  const double spread = std::sqrt(2.0 * a * (-std::log(eps) + 5.0));
  const auto start = static_cast<long>(std::ceil(spread + 2.0 * std::sqrt(a) + 40.0 + std::min(a, 40.0)));
  std::vector<double> v(static_cast<std::size_t>(start) + 2, 0.0);
  v[start + 1] = 0.0;
  v[start] = 1e-280;
  for (long k = start; k >= 1; --k) {
    v[k - 1] = v[k + 1] + (2.0 * static_cast<double>(k) / a) * v[k];
    if (v[k - 1] > 1e250) {
      for (long j = k - 1; j <= start; ++j) v[j] *= 1e-250;
    }
  }
  double norm = v[0];
  for (long k = 1; k <= start; ++k) norm += 2.0 * v[k];
  for (double& x : v) x /= norm;
  std::size_t keep = 1;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (v[k] > eps) keep = k + 1;
  }
  v.resize(keep);
  return v;
}

}  // namespace detail

// Action of exp(-t L) for a symmetric operator L (combinatorial or directed
// Laplacian). Dense eigendecomposition below the size threshold, polynomial
// stepping above it.
class DiffusionEngine {
 public:
  explicit DiffusionEngine(LinearNodeOperator op, DiffusionOptions options = {})
      : op_(std::move(op)), options_(options) {
    if (!op_.symmetric()) {
      throw Error(ErrorKind::parameter, "diffusion-requires-symmetric",
                  std::string("operator kind ") + to_string(op_.kind()) + " is not symmetric");
    }
    method_ = options_.method;
    if (method_ == DiffusionMethod::automatic) {
      method_ = op_.size() <= options_.dense_threshold ? DiffusionMethod::dense_eig
                                                       : DiffusionMethod::chebyshev;
    }
    spectral_bound_ = op_.norm_bound();
    components_ = op_.coupling_components();
    n_components_ = components_.empty()
                        ? 0
                        : *std::max_element(components_.begin(), components_.end()) + 1;
    if (method_ == DiffusionMethod::dense_eig) decompose();
  }

  const LinearNodeOperator& op() const { return op_; }
  DiffusionMethod method() const { return method_; }
  double tol() const { return options_.tol; }
  Index size() const { return op_.size(); }
  double spectral_bound() const { return spectral_bound_; }
  const Vector& eigenvalues() const { return eigenvalues_; }
  const Matrix& eigenvectors() const { return eigenvectors_; }

  // exp(-t L) B.
  Matrix expm_action(const Matrix& b, double t) const {
    detail::check_time(t);
    detail::check_finite(b);
    if (b.rows() != size()) {
      throw Error(ErrorKind::input, "shape-mismatch",
                  "expected " + std::to_string(size()) + " rows, got " + std::to_string(b.rows()));
    }
    if (t == 0.0) return b;
    return advance(b, t);
  }

  // exp(-dt L) applied to a state that is already finite and well-shaped.
  Matrix advance(const Matrix& state, double dt) const {
    if (dt == 0.0) return state;
    switch (method_) {
      case DiffusionMethod::dense_eig: {
        const Vector decay = (-dt * eigenvalues_).array().exp().matrix();
        return eigenvectors_ * (decay.asDiagonal() * (eigenvectors_.transpose() * state));
      }
      case DiffusionMethod::taylor: return taylor_step(state, dt);
      case DiffusionMethod::chebyshev: return chebyshev_step(state, dt);
      case DiffusionMethod::automatic: break;
    }
    throw Error(ErrorKind::parameter, "unresolved-method", "diffusion method not resolved");
  }

  // L B.
  Matrix apply_operator(const Matrix& b) const { return op_.apply(b); }

  // Projection onto the kernel: per-component column means (the t -> inf limit).
  Matrix stationary_limit(const Matrix& b) const {
    const Index k = n_components_;
    Matrix sums = Matrix::Zero(k, b.cols());
    Vector counts = Vector::Zero(k);
    for (Index i = 0; i < b.rows(); ++i) {
      sums.row(components_[i]) += b.row(i);
      counts[components_[i]] += 1.0;
    }
    Matrix out(b.rows(), b.cols());
    for (Index i = 0; i < b.rows(); ++i) {
      out.row(i) = sums.row(components_[i]) / counts[components_[i]];
    }
    return out;
  }

  Index n_components() const { return n_components_; }
  const std::vector<Index>& components() const { return components_; }

  // Smallest nonzero eigenvalue: exact on the dense path, otherwise the
  // smallest Ritz value of a Lanczos run on the kernel complement.
  double smallest_nonzero_eigenvalue() const {
    if (method_ == DiffusionMethod::dense_eig) {
      const double cut = 1e-10 * std::max(1.0, eigenvalues_.maxCoeff());
      for (Index i = 0; i < eigenvalues_.size(); ++i) {
        if (eigenvalues_[i] > cut) return eigenvalues_[i];
      }
      return std::numeric_limits<double>::infinity();
    }
    return lanczos_smallest();
  }

 private:
  // Full symmetric eigendecomposition; LAPACK's divide and conquer when linked.
  void decompose() {
#ifdef GDR_HAVE_LAPACKE
    const Index n = size();
    eigenvectors_ = op_.dense();
    eigenvalues_.resize(n);
    const lapack_int info = n == 0 ? 0
                                   : LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', static_cast<lapack_int>(n),
                                                    eigenvectors_.data(), static_cast<lapack_int>(n),
                                                    eigenvalues_.data());
    if (info != 0) {
      throw Error(ErrorKind::numerical, "eigendecomposition-failed",
                  "dsyevd returned " + std::to_string(info));
    }
#else
    Eigen::SelfAdjointEigenSolver<Matrix> solver(op_.dense());
    if (solver.info() != Eigen::Success) {
      throw Error(ErrorKind::numerical, "eigendecomposition-failed",
                  "symmetric eigensolver did not converge");
    }
    eigenvalues_ = solver.eigenvalues();
    eigenvectors_ = solver.eigenvectors();
#endif
    eigenvalues_ = eigenvalues_.cwiseMax(0.0);
  }

  Matrix project_out_kernel(const Matrix& b) const { return b - stationary_limit(b); }

  double lanczos_smallest() const {
    const Index n = size();
    if (n_components_ >= n) return std::numeric_limits<double>::infinity();
    const Index m = std::min<Index>(n - n_components_, 200);
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> normal;
    Vector q(n);
    for (Index i = 0; i < n; ++i) q[i] = normal(rng);
    q = project_out_kernel(q);
    q.normalize();
    Matrix basis(n, m);
    Vector alpha(m);
    Vector beta(m);
    Index steps = 0;
    for (Index j = 0; j < m; ++j) {
      basis.col(j) = q;
      Vector w = project_out_kernel(op_.apply(q));
      alpha[j] = q.dot(w);
      w -= basis.leftCols(j + 1) * (basis.leftCols(j + 1).transpose() * w);
      w -= basis.leftCols(j + 1) * (basis.leftCols(j + 1).transpose() * w);
      w = project_out_kernel(w);
      steps = j + 1;
      beta[j] = w.norm();
      // An exhausted Krylov space leaves only rounding noise.
      if (beta[j] < 1e-10 * std::max(1.0, spectral_bound_)) break;
      q = w / beta[j];
    }
    Matrix tri = Matrix::Zero(steps, steps);
    for (Index j = 0; j < steps; ++j) {
      tri(j, j) = alpha[j];
      if (j + 1 < steps) tri(j, j + 1) = tri(j + 1, j) = beta[j];
    }
    Eigen::SelfAdjointEigenSolver<Matrix> solver(tri, Eigen::EigenvaluesOnly);
    return std::max(solver.eigenvalues().minCoeff(), 1e-300);
  }

  double truncation_eps() const { return std::max(options_.tol * 1e-8, 1e-17); }

  // Unshifted truncated Taylor series in substeps of norm at most 2, so that
  // 1^T p(L) = 1^T holds to rounding for zero-column-sum operators.
  Matrix taylor_step(const Matrix& state, double dt) const {
    const double theta = 2.0;
    const auto substeps = std::max<long>(1, static_cast<long>(std::ceil(dt * spectral_bound_ / theta)));
    const double tau = dt / static_cast<double>(substeps);
    Matrix current = state;
    for (long s = 0; s < substeps; ++s) {
      Matrix term = current;
      Matrix sum = current;
      for (int k = 1; k <= 80; ++k) {
        term = op_.apply(term) * (-tau / static_cast<double>(k));
        sum += term;
        const double scale = std::max(sum.cwiseAbs().maxCoeff(), 1e-300);
        if (term.cwiseAbs().maxCoeff() <= truncation_eps() * scale) break;
      }
      current = std::move(sum);
    }
    return current;
  }

  // Chebyshev expansion on [0, b]: exp(-dt L) = exp(-a) [I_0(a) + 2 sum (-1)^k I_k(a) T_k(Y)]
  // with a = dt b / 2 and Y = 2L/b - I.
  Matrix chebyshev_step(const Matrix& state, double dt) const {
    const double b = spectral_bound_;
    if (b == 0.0) return state;
    const double a = 0.5 * dt * b;
    const std::vector<double> coef = detail::scaled_bessel_i(a, truncation_eps());
    auto apply_y = [&](const Matrix& v) -> Matrix { return op_.apply(v) * (2.0 / b) - v; };
    Matrix t_prev = state;
    Matrix result = coef[0] * state;
    if (coef.size() == 1) return result;
    Matrix t_curr = apply_y(state);
    result -= 2.0 * coef[1] * t_curr;
    for (std::size_t k = 2; k < coef.size(); ++k) {
      Matrix t_next = 2.0 * apply_y(t_curr) - t_prev;
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      result += (2.0 * sign * coef[k]) * t_next;
      t_prev = std::move(t_curr);
      t_curr = std::move(t_next);
    }
    return result;
  }

  LinearNodeOperator op_;
  DiffusionOptions options_;
  DiffusionMethod method_ = DiffusionMethod::automatic;
  double spectral_bound_ = 0.0;
  Vector eigenvalues_;
  Matrix eigenvectors_;
  std::vector<Index> components_;
  Index n_components_ = 0;
};

inline Matrix expm_action(const DiffusionEngine& engine, const Matrix& b, double t) {
  return engine.expm_action(b, t);
}

// Column means 1^T H / N: the stationary value of each class under diffusion.
inline Vector stationary_profile(const Matrix& h) {
  if (h.rows() == 0) return Vector::Zero(h.cols());
  return h.colwise().sum().transpose() / static_cast<double>(h.rows());
}

struct TimeGrid {
  double t_min = 0.0;
  std::vector<double> points;
  double t_max = 0.0;
  double stationarity_eps = 1e-8;
};

// t_min followed by `count` log-spaced points from max(t_min, t0) to t_max.
inline TimeGrid make_time_grid(double t_min, double t_max, int count = 200, double t0 = 1e-3,
                               double stationarity_eps = 1e-8) {
  if (!(t_min >= 0.0) || !std::isfinite(t_min)) {
    throw Error(ErrorKind::parameter, "invalid-t-min", "t_min must be finite and >= 0");
  }
  if (count < 1) throw Error(ErrorKind::parameter, "invalid-grid-size", "grid needs >= 1 point");
  TimeGrid grid;
  grid.t_min = t_min;
  grid.stationarity_eps = stationarity_eps;
  grid.points.push_back(t_min);
  const double start = std::max(t_min, t0);
  const double stop = std::max(t_max, start);
  if (stop > start && count > 1) {
    const double ratio = std::log(stop / start) / static_cast<double>(count - 1);
    for (int k = 0; k < count; ++k) {
      const double t = k + 1 == count ? stop : start * std::exp(ratio * k);
      if (t > grid.points.back()) grid.points.push_back(t);
    }
  } else if (start > grid.points.back()) {
    grid.points.push_back(start);
  }
  grid.t_max = grid.points.back();
  return grid;
}

struct OvershootResult {
  Matrix omega;
  // 1-based class of the largest overshoot, 0 where the row has none.
  std::vector<int> kappa_omega;
};

// Reference level subtracted before the ReLU.
enum class StationaryBaseline {
  global_mean,    // 11^T H / N, the constant stationary state of a connected graph
  component_mean  // per connected component (the actual t -> inf limit)
};

struct OvershootOptions {
  double overshoot_eps = 1e-10;
  double stationarity_eps = 1e-8;
  StationaryBaseline baseline = StationaryBaseline::global_mean;
};

namespace detail {

inline OvershootResult finalize_overshoot(Matrix running_max, const Matrix& reference,
                                          double overshoot_eps) {
  OvershootResult out;
  out.omega = (running_max - reference).cwiseMax(0.0);
  out.kappa_omega.assign(static_cast<std::size_t>(out.omega.rows()), 0);
  for (Index i = 0; i < out.omega.rows(); ++i) {
    double best = 0.0;
    int arg = 0;
    for (Index j = 0; j < out.omega.cols(); ++j) {
      double& v = out.omega(i, j);
      if (!(v > overshoot_eps)) v = 0.0;
      if (v > best) {
        best = v;
        arg = static_cast<int>(j) + 1;
      }
    }
    out.kappa_omega[static_cast<std::size_t>(i)] = arg;
  }
  return out;
}

inline Matrix baseline_matrix(const DiffusionEngine& engine, const Matrix& h,
                              StationaryBaseline baseline) {
  if (baseline == StationaryBaseline::component_mean) return engine.stationary_limit(h);
  const Vector pi = stationary_profile(h);
  return Matrix::Ones(h.rows(), 1) * pi.transpose();
}

inline void check_assignment_rows(const DiffusionEngine& engine, const Matrix& h) {
  if (h.rows() != engine.size()) {
    throw Error(ErrorKind::input, "shape-mismatch",
                "assignment has " + std::to_string(h.rows()) + " rows, operator has " +
                    std::to_string(engine.size()));
  }
  check_finite(h);
}

}  // namespace detail

// Omega = ReLU(max over grid points of exp(-tL) H - baseline), scanning
// stops early once the state is within stationarity_eps of its limit.
inline OvershootResult overshoot_matrix(const DiffusionEngine& engine, const Matrix& h,
                                        const TimeGrid& grid, const OvershootOptions& opts = {}) {
  detail::check_assignment_rows(engine, h);
  if (grid.points.empty()) {
    throw Error(ErrorKind::parameter, "empty-grid", "time grid has no points");
  }
  const Matrix reference = detail::baseline_matrix(engine, h, opts.baseline);
  const Matrix limit = engine.stationary_limit(h);
  Matrix running = Matrix::Constant(h.rows(), h.cols(), -std::numeric_limits<double>::infinity());
  Matrix state = engine.expm_action(h, grid.points.front());
  double now = grid.points.front();
  running = running.cwiseMax(state);
  for (std::size_t k = 1; k < grid.points.size(); ++k) {
    if ((state - limit).cwiseAbs().maxCoeff() < opts.stationarity_eps) break;
    state = engine.advance(state, grid.points[k] - now);
    now = grid.points[k];
    running = running.cwiseMax(state);
  }
  return detail::finalize_overshoot(std::move(running), reference, opts.overshoot_eps);
}

struct ScanOptions {
  int grid_points = 200;
  double t0 = 1e-3;
  // Horizon; <= 0 selects 100 / (smallest nonzero eigenvalue).
  double t_max = 0.0;
  OvershootOptions overshoot;
};

// Horizon used when none is configured.
inline double default_horizon(const DiffusionEngine& engine, double t0) {
  const double lambda = engine.smallest_nonzero_eigenvalue();
  if (!std::isfinite(lambda)) return std::max(t0, 1.0);
  return std::max(100.0 / lambda, t0);
}

// Overshoot matrices for several burn-in times from one shared trajectory:
// a log grid from t0 to the horizon with every t_min inserted. The result for
// t_min uses the shared grid points at or after t_min.
inline std::vector<OvershootResult> overshoot_scan(const DiffusionEngine& engine, const Matrix& h,
                                                   std::vector<double> t_mins,
                                                   const ScanOptions& opts = {}) {
  detail::check_assignment_rows(engine, h);
  if (t_mins.empty()) throw Error(ErrorKind::parameter, "empty-grid", "no t_min values");
  for (double t : t_mins) {
    if (!(t >= 0.0) || !std::isfinite(t)) {
      throw Error(ErrorKind::parameter, "invalid-t-min", "t_min must be finite and >= 0");
    }
  }
  const double horizon = opts.t_max > 0.0 ? opts.t_max : default_horizon(engine, opts.t0);

  std::vector<double> sorted = t_mins;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  const TimeGrid base = make_time_grid(0.0, std::max(horizon, sorted.back()), opts.grid_points,
                                       opts.t0, opts.overshoot.stationarity_eps);
  std::vector<double> points = base.points;
  points.insert(points.end(), sorted.begin(), sorted.end());
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  // Segment s collects grid points in [sorted[s], sorted[s+1]).
  const std::size_t n_seg = sorted.size();
  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<Matrix> seg_max(n_seg, Matrix::Constant(h.rows(), h.cols(), neg_inf));
  const Matrix limit = engine.stationary_limit(h);

  Matrix state = h;
  double now = 0.0;
  std::size_t seg = 0;
  bool settled = false;
  for (double t : points) {
    if (t < sorted.front()) {
      if (!settled) {
        state = engine.advance(state, t - now);
        now = t;
      }
      continue;
    }
    while (seg + 1 < n_seg && t >= sorted[seg + 1]) ++seg;
    if (!settled) {
      state = engine.advance(state, t - now);
      now = t;
      if ((state - limit).cwiseAbs().maxCoeff() < opts.overshoot.stationarity_eps) settled = true;
    }
    seg_max[seg] = seg_max[seg].cwiseMax(state);
  }

  const Matrix reference = detail::baseline_matrix(engine, h, opts.overshoot.baseline);
  std::vector<Matrix> suffix(n_seg);
  for (std::size_t s = n_seg; s-- > 0;) {
    suffix[s] = s + 1 < n_seg ? seg_max[s].cwiseMax(suffix[s + 1]) : seg_max[s];
  }
  std::vector<OvershootResult> out;
  out.reserve(t_mins.size());
  for (double t : t_mins) {
    const auto pos = static_cast<std::size_t>(
        std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
    out.push_back(detail::finalize_overshoot(suffix[pos], reference, opts.overshoot.overshoot_eps));
  }
  return out;
}

}  // namespace gdr
