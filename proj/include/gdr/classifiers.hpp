#pragma once

#include <cmath>
#include <fstream>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gdr/diffusion.hpp"
#include "gdr/error.hpp"
#include "gdr/graph.hpp"

namespace gdr {

enum class AssignmentKind { prior_uniform, prior_projection, prior_external, full_stacked };

// Row-stochastic class-probability matrix.
struct AssignmentMatrix {
  Matrix values;
  AssignmentKind kind = AssignmentKind::prior_external;

  Index rows() const { return values.rows(); }
  Index classes() const { return values.cols(); }
};

inline constexpr double kStochasticTol = 1e-9;

// Throws unless every row sums to 1 within tol with entries in [0, 1].
inline void validate_stochastic(const Matrix& h, double tol = kStochasticTol) {
  for (Index i = 0; i < h.rows(); ++i) {
    const double s = h.row(i).sum();
    if (!std::isfinite(s) || std::abs(s - 1.0) > tol) {
      throw Error(ErrorKind::input, "not-row-stochastic",
                  "row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
    if (h.row(i).minCoeff() < 0.0 || h.row(i).maxCoeff() > 1.0 + tol) {
      throw Error(ErrorKind::input, "entry-out-of-range",
                  "row " + std::to_string(i) + " has an entry outside [0,1]");
    }
  }
}

// Hard labels in 1..c.
struct HardAssignment {
  std::vector<int> labels;
  std::vector<bool> masked_training;
};

struct CentroidMatrix {
  Matrix values;  // c x F
};

inline AssignmentMatrix uniform_prior(Index n, Index c) {
  if (n < 1 || c < 1) {
    throw Error(ErrorKind::parameter, "empty-prior", "uniform prior needs n, c >= 1");
  }
  return {Matrix::Constant(n, c, 1.0 / static_cast<double>(c)), AssignmentKind::prior_uniform};
}

// Class means of the training rows, i.e. (H^T H)^{-1} H^T X for one-hot H.
// `classes` holds 0-based class indices of the rows of `features`.
template <typename Features>
CentroidMatrix centroids(const Features& features, const std::vector<int>& classes, int n_classes) {
  if (static_cast<Index>(classes.size()) != features.rows()) {
    throw Error(ErrorKind::input, "shape-mismatch", "one class label per training row required");
  }
  Matrix sums = Matrix::Zero(n_classes, features.cols());
  std::vector<double> counts(static_cast<std::size_t>(n_classes), 0.0);
  for (std::size_t r = 0; r < classes.size(); ++r) {
    const int k = classes[r];
    if (k < 0 || k >= n_classes) {
      throw Error(ErrorKind::input, "class-out-of-range",
                  "training row " + std::to_string(r) + " has class " + std::to_string(k));
    }
    counts[static_cast<std::size_t>(k)] += 1.0;
  }
  if constexpr (std::is_base_of_v<Eigen::SparseMatrixBase<Features>, Features>) {
    for (Index r = 0; r < features.outerSize(); ++r) {
      for (typename Features::InnerIterator it(features, r); it; ++it) {
        sums(classes[static_cast<std::size_t>(it.row())], it.col()) += it.value();
      }
    }
  } else {
    for (Index r = 0; r < features.rows(); ++r) {
      sums.row(classes[static_cast<std::size_t>(r)]) += features.row(r);
    }
  }
  for (int k = 0; k < n_classes; ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0.0) {
      throw Error(ErrorKind::input, "singular-class-counts",
                  "class " + std::to_string(k) + " has no training samples");
    }
    sums.row(k) /= counts[static_cast<std::size_t>(k)];
  }
  return {std::move(sums)};
}

// Row-normalize nonnegative scores; rows with zero mass become uniform.
inline Matrix l1_normalize_rows(Matrix scores) {
  const double uniform = 1.0 / static_cast<double>(scores.cols());
  for (Index i = 0; i < scores.rows(); ++i) {
    const double s = scores.row(i).sum();
    if (s > 0.0 && std::isfinite(s)) {
      scores.row(i) /= s;
    } else {
      scores.row(i).setConstant(uniform);
    }
  }
  return scores;
}

// L1norm(max(X Pi^T, 0)).
template <typename Features>
AssignmentMatrix project(const Features& features, const CentroidMatrix& pi) {
  if (features.cols() != pi.values.cols()) {
    throw Error(ErrorKind::input, "dimension-mismatch",
                "features have " + std::to_string(features.cols()) + " columns, centroids " +
                    std::to_string(pi.values.cols()));
  }
  Matrix scores = features * pi.values.transpose();
  return {l1_normalize_rows(scores.cwiseMax(0.0)), AssignmentKind::prior_projection};
}

// Row-wise argmax as 1-based classes; ties go to the lowest index.
inline HardAssignment hard_assign(const Matrix& h) {
  HardAssignment out;
  out.labels.resize(static_cast<std::size_t>(h.rows()));
  out.masked_training.assign(static_cast<std::size_t>(h.rows()), false);
  for (Index i = 0; i < h.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < h.cols(); ++j) {
      if (h(i, j) > h(i, best)) best = j;
    }
    out.labels[static_cast<std::size_t>(i)] = static_cast<int>(best) + 1;
  }
  return out;
}

inline HardAssignment hard_assign(const AssignmentMatrix& h) { return hard_assign(h.values); }

// Full assignment over all nodes: one-hot truth on training rows, prior elsewhere.
// `truth` holds 0-based classes.
inline AssignmentMatrix stack_assignment(const Matrix& prior, const std::vector<int>& truth,
                                         const std::vector<bool>& training) {
  if (static_cast<std::size_t>(prior.rows()) != truth.size() || truth.size() != training.size()) {
    throw Error(ErrorKind::input, "shape-mismatch", "prior, labels and mask disagree in length");
  }
  AssignmentMatrix out{prior, AssignmentKind::full_stacked};
  for (std::size_t i = 0; i < training.size(); ++i) {
    if (!training[i]) continue;
    if (truth[i] < 0 || truth[i] >= prior.cols()) {
      throw Error(ErrorKind::input, "missing-training-label",
                  "training node " + std::to_string(i) + " has no valid label");
    }
    out.values.row(static_cast<Index>(i)).setZero();
    out.values(static_cast<Index>(i), truth[i]) = 1.0;
  }
  return out;
}

// Hard labels of a stacked assignment with training rows flagged.
inline HardAssignment prior_assignment(const AssignmentMatrix& stacked,
                                       const std::vector<bool>& training) {
  HardAssignment out = hard_assign(stacked);
  out.masked_training = training;
  return out;
}

// Adopt the class of the largest overshoot where one exists, except on
// training rows, which are never reclassified.
inline HardAssignment gdr_update(const HardAssignment& prior, const OvershootResult& over) {
  if (prior.labels.size() != over.kappa_omega.size()) {
    throw Error(ErrorKind::input, "shape-mismatch", "prior and overshoot sizes differ");
  }
  HardAssignment out = prior;
  if (out.masked_training.size() != out.labels.size()) {
    out.masked_training.resize(out.labels.size(), false);
  }
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    if (out.masked_training[i]) continue;
    if (over.kappa_omega[i] != 0) out.labels[i] = over.kappa_omega[i];
  }
  return out;
}

struct Accuracy {
  long correct = 0;
  long total = 0;

  double fraction() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
  double percent() const { return 100.0 * fraction(); }
};

// Fraction of selected nodes whose 1-based label equals the 0-based truth + 1.
inline Accuracy accuracy(const std::vector<int>& labels, const std::vector<int>& truth,
                         const std::vector<bool>& selected) {
  Accuracy acc;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!selected[i]) continue;
    ++acc.total;
    if (labels[i] == truth[i] + 1) ++acc.correct;
  }
  return acc;
}

// External prior file: "node<TAB>p_1<TAB>...<TAB>p_c" per line, '#' comments.
// Rows within 1e-6 of stochastic are renormalized; `required` nodes must be
// present. Nodes absent from the file get uniform rows.
inline AssignmentMatrix import_external_prior(const std::string& path, Index n, Index c,
                                              const std::vector<bool>& required = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "unreadable-prior", "cannot open " + path);
  Matrix values = Matrix::Constant(n, c, 1.0 / static_cast<double>(c));
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::string line;
  long line_no = 0;
  auto fail = [&](const std::string& code, const std::string& what) {
    throw Error(ErrorKind::data, code, path + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string token;
    std::vector<std::string> tokens;
    while (std::getline(fields, token, '\t')) tokens.push_back(token);
    if (static_cast<Index>(tokens.size()) != c + 1) {
      fail("prior-column-count", "expected " + std::to_string(c + 1) + " fields, got " +
                                     std::to_string(tokens.size()));
    }
    long node = -1;
    try {
      std::size_t used = 0;
      node = std::stol(tokens[0], &used);
      if (used != tokens[0].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail("prior-bad-node", "node id '" + tokens[0] + "' is not an integer");
    }
    if (node < 0 || node >= n) fail("prior-node-out-of-range", "node " + std::to_string(node));
    if (seen[static_cast<std::size_t>(node)]) fail("prior-duplicate-node", "node " + std::to_string(node));
    seen[static_cast<std::size_t>(node)] = true;
    Vector row(c);
    for (Index j = 0; j < c; ++j) {
      try {
        std::size_t used = 0;
        row[j] = std::stod(tokens[static_cast<std::size_t>(j) + 1], &used);
        if (used != tokens[static_cast<std::size_t>(j) + 1].size()) throw std::invalid_argument("x");
      } catch (const std::exception&) {
        row[j] = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(row[j])) fail("prior-non-finite", "node " + std::to_string(node));
      if (row[j] < 0.0) fail("prior-negative", "node " + std::to_string(node));
    }
    const double s = row.sum();
    if (std::abs(s - 1.0) > 1e-6) {
      fail("prior-row-sum", "row for node " + std::to_string(node) + " sums to " + std::to_string(s));
    }
    values.row(node) = row.transpose() / s;
  }
  for (std::size_t i = 0; i < required.size(); ++i) {
    if (required[i] && !seen[i]) {
      throw Error(ErrorKind::data, "prior-missing-node",
                  path + ": no row for node " + std::to_string(i));
    }
  }
  return {std::move(values), AssignmentKind::prior_external};
}

// Writes selected rows in the external prior format with %.17g values.
inline void write_external_prior(const std::string& path, const Matrix& h,
                                 const std::vector<bool>& selected) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "unwritable-prior", "cannot open " + path);
  out << "# node";
  for (Index j = 0; j < h.cols(); ++j) out << "\tp" << (j + 1);
  out << '\n';
  char buf[64];
  for (Index i = 0; i < h.rows(); ++i) {
    if (!selected.empty() && !selected[static_cast<std::size_t>(i)]) continue;
    out << i;
    for (Index j = 0; j < h.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", h(i, j));
      out << '\t' << buf;
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::io, "unwritable-prior", "write failed for " + path);
}

}  // namespace gdr
