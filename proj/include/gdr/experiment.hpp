#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "gdr/classifiers.hpp"
#include "gdr/dataset.hpp"
#include "gdr/diffusion.hpp"
#include "gdr/error.hpp"
#include "gdr/graph.hpp"
#include "gdr/neural.hpp"

namespace gdr {

inline constexpr const char* kVersion = "0.1.0";

enum class PriorKind { uniform, projection, external, mlp, gcn, diff_gcn, aug_gcn, aug_diff_gcn };
enum class Direction { undirected, forward, backward, augmented };

inline const char* to_string(PriorKind k) {
  switch (k) {
    case PriorKind::uniform: return "uniform";
    case PriorKind::projection: return "projection";
    case PriorKind::external: return "external";
    case PriorKind::mlp: return "mlp";
    case PriorKind::gcn: return "gcn";
    case PriorKind::diff_gcn: return "diff-gcn";
    case PriorKind::aug_gcn: return "aug-gcn";
    case PriorKind::aug_diff_gcn: return "aug-diff-gcn";
  }
  return "unknown";
}

inline const char* to_string(Direction d) {
  switch (d) {
    case Direction::undirected: return "undirected";
    case Direction::forward: return "forward";
    case Direction::backward: return "backward";
    case Direction::augmented: return "augmented";
  }
  return "unknown";
}

inline bool is_neural(PriorKind k) {
  return k == PriorKind::mlp || k == PriorKind::gcn || k == PriorKind::diff_gcn ||
         k == PriorKind::aug_gcn || k == PriorKind::aug_diff_gcn;
}

inline bool is_augmented(PriorKind k) {
  return k == PriorKind::aug_gcn || k == PriorKind::aug_diff_gcn;
}

struct ExperimentConfig {
  std::string dataset;
  PriorKind prior = PriorKind::projection;
  std::string external_path;
  Direction direction = Direction::undirected;
  double alpha = kDefaultAlpha;

  std::vector<double> t_min_grid{0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  int grid_points = 200;
  double t0 = 1e-3;
  double t_max = 0.0;  // 0 = automatic horizon
  double stationarity_eps = 1e-8;
  double overshoot_eps = 1e-10;
  DiffusionMethod method = DiffusionMethod::automatic;
  double tol = 1e-8;
  Index dense_threshold = kDenseThreshold;
  StationaryBaseline baseline = StationaryBaseline::global_mean;

  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  bool normalize_features = true;
  bool gdr_chain = false;

  std::uint64_t seed = 0;
  std::string output = "out";
};

namespace config_detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

[[noreturn]] inline void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw Error(ErrorKind::config, "bad-config-value", key + " = '" + value + "': " + why);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) bad(key, v, "not a finite number");
    return d;
  } catch (const std::logic_error&) {
    bad(key, v, "not a number");
  }
}

inline long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long d = std::stol(v, &used);
    if (used != v.size()) bad(key, v, "not an integer");
    return d;
  } catch (const std::logic_error&) {
    bad(key, v, "not an integer");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad(key, v, "expected true or false");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_number(v[i]);
  return out;
}

}  // namespace config_detail

// Every recognized "section.key"; the CLI exposes each as --section-key.
inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "run.dataset",          "run.output",            "run.seed",
      "prior.kind",           "graph.direction",       "graph.alpha",
      "gdr.t_min_grid",       "diffusion.grid_points", "diffusion.t0",
      "diffusion.t_max",      "diffusion.stationarity_eps", "diffusion.overshoot_eps",
      "diffusion.method",     "diffusion.tol",         "diffusion.dense_threshold",
      "diffusion.baseline",   "train.hidden",          "train.dropout",
      "train.epochs",         "train.learning_rate",   "train.weight_decay",
      "train.seeds",          "train.early_stopping_window", "train.t_init",
      "train.learn_t",        "train.normalize_features", "train.gdr_chain"};
  return keys;
}

inline void apply_config_value(ExperimentConfig& c, const std::string& key, const std::string& raw) {
  using namespace config_detail;
  const std::string v = trim(raw);
  if (key == "run.dataset") c.dataset = v;
  else if (key == "run.output") c.output = v;
  else if (key == "run.seed") c.seed = static_cast<std::uint64_t>(to_long(key, v));
  else if (key == "prior.kind") {
    static const std::map<std::string, PriorKind> kinds = {
        {"uniform", PriorKind::uniform}, {"projection", PriorKind::projection},
        {"mlp", PriorKind::mlp},         {"gcn", PriorKind::gcn},
        {"diff-gcn", PriorKind::diff_gcn}, {"aug-gcn", PriorKind::aug_gcn},
        {"aug-diff-gcn", PriorKind::aug_diff_gcn}};
    if (v.rfind("external:", 0) == 0) {
      c.prior = PriorKind::external;
      c.external_path = v.substr(9);
      if (c.external_path.empty()) bad(key, v, "external prior needs a path");
    } else if (auto it = kinds.find(v); it != kinds.end()) {
      c.prior = it->second;
    } else {
      bad(key, v, "unknown prior");
    }
  } else if (key == "graph.direction") {
    static const std::map<std::string, Direction> dirs = {{"undirected", Direction::undirected},
                                                          {"forward", Direction::forward},
                                                          {"backward", Direction::backward},
                                                          {"augmented", Direction::augmented}};
    auto it = dirs.find(v);
    if (it == dirs.end()) bad(key, v, "unknown direction");
    c.direction = it->second;
  } else if (key == "graph.alpha") c.alpha = to_double(key, v);
  else if (key == "gdr.t_min_grid") {
    c.t_min_grid.clear();
    for (const auto& item : split_list(v)) c.t_min_grid.push_back(to_double(key, item));
  } else if (key == "diffusion.grid_points") c.grid_points = static_cast<int>(to_long(key, v));
  else if (key == "diffusion.t0") c.t0 = to_double(key, v);
  else if (key == "diffusion.t_max") c.t_max = to_double(key, v);
  else if (key == "diffusion.stationarity_eps") c.stationarity_eps = to_double(key, v);
  else if (key == "diffusion.overshoot_eps") c.overshoot_eps = to_double(key, v);
  else if (key == "diffusion.method") {
    static const std::map<std::string, DiffusionMethod> methods = {
        {"auto", DiffusionMethod::automatic}, {"dense-eig", DiffusionMethod::dense_eig},
        {"taylor", DiffusionMethod::taylor}, {"chebyshev", DiffusionMethod::chebyshev}};
    auto it = methods.find(v);
    if (it == methods.end()) bad(key, v, "unknown method");
    c.method = it->second;
  } else if (key == "diffusion.tol") c.tol = to_double(key, v);
  else if (key == "diffusion.dense_threshold") c.dense_threshold = to_long(key, v);
  else if (key == "diffusion.baseline") {
    if (v == "global") c.baseline = StationaryBaseline::global_mean;
    else if (v == "component") c.baseline = StationaryBaseline::component_mean;
    else bad(key, v, "expected global or component");
  } else if (key == "train.hidden") c.train.hidden = static_cast<int>(to_long(key, v));
  else if (key == "train.dropout") c.train.dropout = to_double(key, v);
  else if (key == "train.epochs") c.train.epochs = static_cast<int>(to_long(key, v));
  else if (key == "train.learning_rate") c.train.learning_rate = to_double(key, v);
  else if (key == "train.weight_decay") c.train.weight_decay = to_double(key, v);
  else if (key == "train.seeds") {
    c.seeds.clear();
    for (const auto& item : split_list(v)) c.seeds.push_back(static_cast<std::uint64_t>(to_long(key, item)));
  } else if (key == "train.early_stopping_window") c.train.early_stopping_window = static_cast<int>(to_long(key, v));
  else if (key == "train.t_init") c.train.t_init = to_double(key, v);
  else if (key == "train.learn_t") c.train.learn_t = to_bool(key, v);
  else if (key == "train.normalize_features") c.normalize_features = to_bool(key, v);
  else if (key == "train.gdr_chain") c.gdr_chain = to_bool(key, v);
  else throw Error(ErrorKind::config, "unknown-config-key", "unknown key " + key);
}

inline void validate_config(const ExperimentConfig& c) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::config, "invalid-config", what); };
  if (c.dataset.empty()) fail("run.dataset is required");
  if (c.t_min_grid.empty()) fail("gdr.t_min_grid must not be empty");
  for (double t : c.t_min_grid) {
    if (t < 0.0) fail("gdr.t_min_grid entries must be >= 0");
  }
  if (c.grid_points < 1) fail("diffusion.grid_points must be >= 1");
  if (!(c.t0 > 0.0)) fail("diffusion.t0 must be > 0");
  if (c.t_max < 0.0) fail("diffusion.t_max must be >= 0");
  if (!(c.alpha > 0.0 && c.alpha <= 1.0)) fail("graph.alpha must lie in (0,1]");
  if (!(c.tol > 0.0)) fail("diffusion.tol must be > 0");
  if (c.seeds.empty()) fail("train.seeds must not be empty");
  if (c.direction == Direction::augmented && is_neural(c.prior) && !is_augmented(c.prior)) {
    fail("augmented direction requires an aug-* model");
  }
  if (is_augmented(c.prior) && c.direction != Direction::augmented) {
    fail("aug-* models require graph.direction = augmented");
  }
  validate_train_config(c.train);
}

// Reads a sectioned key=value file ([section] headers, '#' or ';' comments).
inline ExperimentConfig load_config(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorKind::io, "unreadable-config", "cannot open " + path.string());
    }
    throw Error(ErrorKind::config, "config-syntax", e.what());
  }
  ExperimentConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw Error(ErrorKind::config, "config-syntax", "key '" + section + "' outside a section");
    }
    for (const auto& [key, value] : body) apply_config_value(c, section + "." + key, value.data());
  }
  return c;
}

inline std::string render_config(const ExperimentConfig& c) {
  using config_detail::format_number;
  using config_detail::join_doubles;
  std::string seeds;
  for (std::size_t i = 0; i < c.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(c.seeds[i]);
  std::string prior = to_string(c.prior);
  if (c.prior == PriorKind::external) prior += ":" + c.external_path;
  std::ostringstream o;
  o << "[run]\n"
    << "dataset=" << c.dataset << "\n"
    << "output=" << c.output << "\n"
    << "seed=" << c.seed << "\n\n"
    << "[prior]\n"
    << "kind=" << prior << "\n\n"
    << "[graph]\n"
    << "direction=" << to_string(c.direction) << "\n"
    << "alpha=" << format_number(c.alpha) << "\n\n"
    << "[gdr]\n"
    << "t_min_grid=" << join_doubles(c.t_min_grid) << "\n\n"
    << "[diffusion]\n"
    << "grid_points=" << c.grid_points << "\n"
    << "t0=" << format_number(c.t0) << "\n"
    << "t_max=" << format_number(c.t_max) << "\n"
    << "stationarity_eps=" << format_number(c.stationarity_eps) << "\n"
    << "overshoot_eps=" << format_number(c.overshoot_eps) << "\n"
    << "method=" << to_string(c.method) << "\n"
    << "tol=" << format_number(c.tol) << "\n"
    << "dense_threshold=" << c.dense_threshold << "\n"
    << "baseline=" << (c.baseline == StationaryBaseline::global_mean ? "global" : "component") << "\n\n"
    << "[train]\n"
    << "hidden=" << c.train.hidden << "\n"
    << "dropout=" << format_number(c.train.dropout) << "\n"
    << "epochs=" << c.train.epochs << "\n"
    << "learning_rate=" << format_number(c.train.learning_rate) << "\n"
    << "weight_decay=" << format_number(c.train.weight_decay) << "\n"
    << "seeds=" << seeds << "\n"
    << "early_stopping_window=" << c.train.early_stopping_window << "\n"
    << "t_init=" << format_number(c.train.t_init) << "\n"
    << "learn_t=" << (c.train.learn_t ? "true" : "false") << "\n"
    << "normalize_features=" << (c.normalize_features ? "true" : "false") << "\n"
    << "gdr_chain=" << (c.gdr_chain ? "true" : "false") << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Reports

// Accuracy in tenths of a percent, so that printed values and deltas are exact.
inline long accuracy_tenths(const Accuracy& a) {
  if (a.total == 0) return 0;
  return std::lround(1000.0 * static_cast<double>(a.correct) / static_cast<double>(a.total));
}

inline std::string format_tenths(long tenths) {
  const bool negative = tenths < 0;
  const long mag = negative ? -tenths : tenths;
  return (negative ? "-" : "") + std::to_string(mag / 10) + "." + std::to_string(mag % 10);
}

struct ReportRow {
  std::string dataset;
  std::string digest;
  std::string method;
  std::string direction;
  std::uint64_t seed = 0;
  Accuracy prior;
  std::optional<Accuracy> gdr;
  std::optional<double> t_min;
  double runtime_seconds = 0.0;

  long prior_tenths() const { return accuracy_tenths(prior); }
  std::optional<long> gdr_tenths() const {
    if (!gdr) return std::nullopt;
    return accuracy_tenths(*gdr);
  }
  std::optional<long> delta_tenths() const {
    if (!gdr) return std::nullopt;
    return accuracy_tenths(*gdr) - accuracy_tenths(prior);
  }
};

struct ResultReport {
  std::vector<ReportRow> rows;
};

inline const char* kReportHeader =
    "dataset,digest,method,direction,seed,n_test,prior_correct,prior_acc,gdr_correct,gdr_acc,delta,t_min";

inline std::vector<std::string> report_fields(const ReportRow& r) {
  return {r.dataset,
          r.digest,
          r.method,
          r.direction,
          std::to_string(r.seed),
          std::to_string(r.prior.total),
          std::to_string(r.prior.correct),
          format_tenths(r.prior_tenths()),
          r.gdr ? std::to_string(r.gdr->correct) : "",
          r.gdr ? format_tenths(*r.gdr_tenths()) : "",
          r.gdr ? format_tenths(*r.delta_tenths()) : "",
          r.t_min ? config_detail::format_number(*r.t_min) : ""};
}

namespace report_detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string join_csv(const std::vector<std::string>& f) {
  std::string out;
  for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + f[i];
  return out;
}

// dataset, method, direction, numeric seed, then the remaining fields.
inline bool row_less(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (a[i] != b[i]) return a[i] < b[i];
  }
  const auto sa = std::stoull(a[4]);
  const auto sb = std::stoull(b[4]);
  if (sa != sb) return sa < sb;
  return a < b;
}

}  // namespace report_detail

inline std::string render_report(const ResultReport& report) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : report.rows) rows.push_back(report_fields(r));
  std::sort(rows.begin(), rows.end(), report_detail::row_less);
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& f : rows) out += report_detail::join_csv(f) + "\n";
  return out;
}

// Concatenates report CSVs into one sorted table. All inputs must share one
// dataset digest.
inline std::string report_merge(const std::vector<std::string>& csv_texts) {
  using namespace report_detail;
  std::vector<std::vector<std::string>> rows;
  std::optional<std::string> digest;
  for (std::size_t k = 0; k < csv_texts.size(); ++k) {
    std::istringstream in(csv_texts[k]);
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader) {
      throw Error(ErrorKind::data, "bad-report-header", "report " + std::to_string(k) + " has an unexpected header");
    }
    long line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto f = split_csv(line);
      if (f.size() != 12) {
        throw Error(ErrorKind::data, "bad-report-row",
                    "report " + std::to_string(k) + " line " + std::to_string(line_no) + " has " +
                        std::to_string(f.size()) + " fields");
      }
      if (digest && *digest != f[1]) {
        throw Error(ErrorKind::data, "mixed-dataset-digests",
                    "report " + std::to_string(k) + " uses dataset digest " + f[1] + ", expected " + *digest);
      }
      digest = f[1];
      rows.push_back(std::move(f));
    }
  }
  std::sort(rows.begin(), rows.end(), row_less);
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& f : rows) out += join_csv(f) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

// Re-throws module errors with the failing stage named.
template <typename F>
auto run_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), e.code(), "stage " + stage + ": " + e.what());
  }
}

struct GraphOperators {
  SparseGraph graph;       // as stored
  SparseGraph undirected;  // symmetrized view
};

// Symmetric diffusion generator for a direction, plus the factor that maps
// times measured in combinatorial-Laplacian units onto it.
struct DiffusionGenerator {
  LinearNodeOperator op;
  double time_scale = 1.0;
};

inline LinearNodeOperator sum_operators(const LinearNodeOperator& a, const LinearNodeOperator& b) {
  std::vector<RankOne> low_rank = a.low_rank_part();
  low_rank.insert(low_rank.end(), b.low_rank_part().begin(), b.low_rank_part().end());
  SparseMatrix sparse = a.sparse_part() + b.sparse_part();
  return {OperatorKind::ldir, std::move(sparse), std::move(low_rank), a.alpha(), a.source_hash()};
}

inline DiffusionGenerator diffusion_generator(const SparseGraph& g, Direction d, double alpha) {
  const SparseGraph undirected = g.directed() ? g.symmetrized() : g;
  if (d == Direction::undirected) return {build_laplacian(undirected), 1.0};
  LinearNodeOperator op;
  if (d == Direction::forward) {
    op = build_ldir(g, alpha);
  } else if (d == Direction::backward) {
    op = build_ldir(g, alpha, true);
  } else {
    op = sum_operators(build_ldir(g, alpha), build_ldir(g, alpha, true));
  }
  const double lap_trace = build_laplacian(undirected).diagonal().sum();
  const double op_trace = op.diagonal().sum();
  const double scale = op_trace > 0.0 && lap_trace > 0.0 ? lap_trace / op_trace : 1.0;
  return {std::move(op), scale};
}

inline DiffusionOptions diffusion_options(const ExperimentConfig& c) {
  return {c.method, c.tol, c.dense_threshold};
}

inline PropagationSpec build_propagation(const Dataset& d, const ExperimentConfig& c, double* time_scale) {
  const SparseGraph& g = d.graph;
  const SparseGraph undirected = g.directed() ? g.symmetrized() : g;
  auto engine = [&](Direction dir) {
    DiffusionGenerator gen = diffusion_generator(g, dir, c.alpha);
    *time_scale = gen.time_scale;
    return std::make_shared<const DiffusionEngine>(std::move(gen.op), diffusion_options(c));
  };
  *time_scale = 1.0;
  switch (c.prior) {
    case PriorKind::mlp: return PropagationSpec::identity();
    case PriorKind::gcn: {
      const SparseGraph source = c.direction == Direction::undirected ? undirected
                                 : c.direction == Direction::backward ? g.transposed()
                                                                      : g;
      return PropagationSpec::gcn(std::make_shared<const LinearNodeOperator>(build_gcn_operator(source)));
    }
    case PriorKind::diff_gcn: return PropagationSpec::diffusion(engine(c.direction));
    case PriorKind::aug_gcn:
      return PropagationSpec::aug_gcn(std::make_shared<const LinearNodeOperator>(build_gcn_operator(g)),
                                      std::make_shared<const LinearNodeOperator>(build_gcn_operator(g.transposed())));
    case PriorKind::aug_diff_gcn:
      return PropagationSpec::aug_diffusion(engine(Direction::forward), engine(Direction::backward));
    default: break;
  }
  throw Error(ErrorKind::config, "not-a-neural-prior", std::string(to_string(c.prior)) + " is not trainable");
}

struct GdrOutcome {
  Accuracy prior_test;
  Accuracy gdr_test;
  double t_min = 0.0;
  std::vector<double> val_accuracy;  // per t_min_grid entry
  std::vector<double> test_accuracy;
  HardAssignment labels;
};

// Runs GDR on a full-node prior (N x c): stacks training truth, scans the
// t_min grid and keeps the burn-in with the best validation accuracy
// (smallest t_min on ties).
inline GdrOutcome gdr_with_prior(const Dataset& d, const Matrix& prior, const ExperimentConfig& c,
                                 const DiffusionEngine& engine, double time_scale) {
  const std::vector<bool> train = d.split.mask(SplitTag::train);
  const std::vector<bool> val = d.split.mask(SplitTag::val);
  const std::vector<bool> test = d.split.mask(SplitTag::test);
  const AssignmentMatrix stacked = stack_assignment(prior, d.labels, train);
  const HardAssignment prior_labels = prior_assignment(stacked, train);

  ScanOptions scan;
  scan.grid_points = c.grid_points;
  scan.t0 = c.t0 * time_scale;
  scan.t_max = c.t_max * time_scale;
  scan.overshoot = {c.overshoot_eps, c.stationarity_eps, c.baseline};
  std::vector<double> scaled;
  for (double t : c.t_min_grid) scaled.push_back(t * time_scale);
  const auto results = overshoot_scan(engine, stacked.values, scaled, scan);

  GdrOutcome out;
  out.prior_test = accuracy(prior_labels.labels, d.labels, test);
  long best_val = -1;
  std::size_t best = 0;
  for (std::size_t k = 0; k < results.size(); ++k) {
    const HardAssignment updated = gdr_update(prior_labels, results[k]);
    const Accuracy v = accuracy(updated.labels, d.labels, val);
    const Accuracy t = accuracy(updated.labels, d.labels, test);
    out.val_accuracy.push_back(v.fraction());
    out.test_accuracy.push_back(t.fraction());
    const bool better = v.correct > best_val ||
                        (v.correct == best_val && c.t_min_grid[k] < c.t_min_grid[best]);
    if (better) {
      best_val = v.correct;
      best = k;
    }
  }
  out.labels = gdr_update(prior_labels, results[best]);
  out.gdr_test = accuracy(out.labels.labels, d.labels, test);
  out.t_min = c.t_min_grid[best];
  return out;
}

inline Matrix non_neural_prior(const Dataset& d, const ExperimentConfig& c) {
  const Index n = d.graph.n_nodes();
  const std::vector<bool> train = d.split.mask(SplitTag::train);
  switch (c.prior) {
    case PriorKind::uniform: return uniform_prior(n, d.n_classes).values;
    case PriorKind::projection: {
      std::vector<Index> rows;
      std::vector<int> classes;
      for (Index i = 0; i < n; ++i) {
        if (train[static_cast<std::size_t>(i)]) {
          rows.push_back(i);
          classes.push_back(d.labels[static_cast<std::size_t>(i)]);
        }
      }
      SparseMatrix selector(static_cast<Index>(rows.size()), n);
      for (std::size_t r = 0; r < rows.size(); ++r) selector.insert(static_cast<Index>(r), rows[r]) = 1.0;
      const SparseMatrix train_features = selector * d.features;
      const CentroidMatrix pi = centroids(train_features, classes, d.n_classes);
      return project(d.features, pi).values;
    }
    case PriorKind::external: {
      std::vector<bool> required(train.size());
      for (std::size_t i = 0; i < train.size(); ++i) required[i] = !train[i];
      return import_external_prior(c.external_path, n, d.n_classes, required).values;
    }
    default: break;
  }
  throw Error(ErrorKind::config, "neural-prior", "neural priors are produced by training");
}

struct TrainOutcome {
  TrainResult result;
  Accuracy test;
  double time_scale = 1.0;
};

inline TrainOutcome train_model(const Dataset& d, const ExperimentConfig& c, std::uint64_t seed) {
  double time_scale = 1.0;
  const PropagationSpec spec = build_propagation(d, c, &time_scale);
  TrainConfig tc = c.train;
  tc.seed = seed;
  tc.t_init = c.train.t_init * time_scale;
  const SparseMatrix x = c.normalize_features ? row_normalize(d.features) : d.features;
  TrainOutcome out;
  out.time_scale = time_scale;
  out.result = train(spec, tc, x, d.labels, d.split.mask(SplitTag::train), d.split.mask(SplitTag::val),
                     d.n_classes);
  out.test = accuracy(hard_assign(out.result.predictions).labels, d.labels, d.split.mask(SplitTag::test));
  return out;
}

struct RunArtifacts {
  ResultReport report;
  std::filesystem::path report_path;
  std::vector<std::filesystem::path> prior_files;
};

namespace run_detail {

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "unwritable-output", "cannot write " + p.string());
  out << s;
}

inline std::filesystem::path prepare_output(const ExperimentConfig& c) {
  std::filesystem::path dir(c.output);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "unwritable-output", "cannot create " + dir.string());
  write_text(dir / "resolved_config.ini", render_config(c));
  return dir;
}

inline void write_run_manifest(const std::filesystem::path& dir, const ExperimentConfig& c,
                               const DatasetManifest& m, const ResultReport& report) {
  std::ostringstream o;
  o << "gdr_version=" << kVersion << "\n"
    << "eigen_version=" << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION << "\n"
    << "threads=" << Eigen::nbThreads() << "\n"
    << "dataset=" << m.name << "\n"
    << "dataset_digest=" << m.dataset_digest() << "\n";
  for (const auto& [file, hex] : m.digests) o << "digest." << file << "=" << hex << "\n";
  o << "\n" << render_config(c);
  write_text(dir / "run_manifest.txt", o.str());
  std::string timing = "method,direction,seed,runtime_seconds\n";
  for (const auto& r : report.rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", r.runtime_seconds);
    timing += r.method + "," + r.direction + "," + std::to_string(r.seed) + "," + buf + "\n";
  }
  write_text(dir / "timing.csv", timing);
}

inline std::string method_name(const ExperimentConfig& c) { return to_string(c.prior); }

inline std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "epoch,loss,val_acc,t_param\n";
  char buf[128];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", r.epoch, r.loss, r.val_acc, r.t_param);
    out += buf;
  }
  return out;
}

inline std::string scan_csv(const ExperimentConfig& c, const GdrOutcome& o) {
  std::string out = "t_min,val_acc,test_acc\n";
  char buf[128];
  for (std::size_t k = 0; k < c.t_min_grid.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", c.t_min_grid[k], o.val_accuracy[k], o.test_accuracy[k]);
    out += buf;
  }
  return out;
}

}  // namespace run_detail

// Prior -> GDR over the t_min grid; neural priors are trained once per seed.
inline RunArtifacts run_gdr(const ExperimentConfig& c) {
  using Clock = std::chrono::steady_clock;
  run_stage("config", [&] { validate_config(c); return 0; });
  const LoadedDataset loaded = run_stage("load", [&] { return load_dataset(c.dataset); });
  const Dataset& d = loaded.data;
  const std::filesystem::path dir = run_stage("output", [&] { return run_detail::prepare_output(c); });

  const DiffusionGenerator gen = run_stage("operator", [&] {
    return diffusion_generator(d.graph, c.direction, c.alpha);
  });
  const DiffusionEngine engine = run_stage("diffusion", [&] {
    return DiffusionEngine(gen.op, diffusion_options(c));
  });

  RunArtifacts art;
  const std::vector<std::uint64_t> seeds = is_neural(c.prior) ? c.seeds : std::vector<std::uint64_t>{c.seed};
  for (std::uint64_t seed : seeds) {
    const auto start = Clock::now();
    Matrix prior;
    if (is_neural(c.prior)) {
      const TrainOutcome t = run_stage("train", [&] { return train_model(d, c, seed); });
      prior = t.result.predictions;
    } else {
      prior = run_stage("prior", [&] { return non_neural_prior(d, c); });
    }
    const GdrOutcome o = run_stage("gdr", [&] { return gdr_with_prior(d, prior, c, engine, gen.time_scale); });
    ReportRow row;
    row.dataset = d.name;
    row.digest = loaded.manifest.dataset_digest();
    row.method = run_detail::method_name(c);
    row.direction = to_string(c.direction);
    row.seed = seed;
    row.prior = o.prior_test;
    row.gdr = o.gdr_test;
    row.t_min = o.t_min;
    row.runtime_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    art.report.rows.push_back(row);
    run_detail::write_text(dir / ("tmin_scan_seed" + std::to_string(seed) + ".csv"), run_detail::scan_csv(c, o));
  }
  art.report_path = dir / "report.csv";
  run_detail::write_text(art.report_path, render_report(art.report));
  run_detail::write_run_manifest(dir, c, loaded.manifest, art.report);
  return art;
}

// Trains the configured neural model for each seed, exports its eval-mode
// predictions as external prior files, and optionally chains GDR.
inline RunArtifacts run_train(const ExperimentConfig& c) {
  using Clock = std::chrono::steady_clock;
  run_stage("config", [&] {
    validate_config(c);
    if (!is_neural(c.prior)) {
      throw Error(ErrorKind::config, "not-a-neural-prior", "run-train needs prior.kind in {mlp, gcn, diff-gcn, aug-gcn, aug-diff-gcn}");
    }
    return 0;
  });
  const LoadedDataset loaded = run_stage("load", [&] { return load_dataset(c.dataset); });
  const Dataset& d = loaded.data;
  const std::filesystem::path dir = run_stage("output", [&] { return run_detail::prepare_output(c); });

  std::unique_ptr<DiffusionEngine> engine;
  DiffusionGenerator gen;
  if (c.gdr_chain) {
    gen = run_stage("operator", [&] { return diffusion_generator(d.graph, c.direction, c.alpha); });
    engine = run_stage("diffusion", [&] { return std::make_unique<DiffusionEngine>(gen.op, diffusion_options(c)); });
  }

  RunArtifacts art;
  for (std::uint64_t seed : c.seeds) {
    const auto start = Clock::now();
    const std::string trace_path = (dir / ("trace_seed" + std::to_string(seed) + ".csv")).string();
    TrainOutcome t;
    try {
      t = run_stage("train", [&] { return train_model(d, c, seed); });
    } catch (const Error& e) {
      throw Error(e.kind(), e.code(), std::string(e.what()) + " (trace: " + trace_path + ")");
    }
    run_detail::write_text(trace_path, run_detail::trace_csv(t.result.trace));
    const auto prior_path = dir / ("prior_seed" + std::to_string(seed) + ".tsv");
    run_stage("export", [&] { write_external_prior(prior_path.string(), t.result.predictions, {}); return 0; });
    art.prior_files.push_back(prior_path);

    ReportRow row;
    row.dataset = d.name;
    row.digest = loaded.manifest.dataset_digest();
    row.method = run_detail::method_name(c);
    row.direction = to_string(c.direction);
    row.seed = seed;
    row.prior = t.test;
    if (c.gdr_chain) {
      const GdrOutcome o = run_stage("gdr", [&] {
        return gdr_with_prior(d, t.result.predictions, c, *engine, gen.time_scale);
      });
      row.gdr = o.gdr_test;
      row.t_min = o.t_min;
    }
    row.runtime_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    art.report.rows.push_back(row);
  }
  art.report_path = dir / "report.csv";
  run_detail::write_text(art.report_path, render_report(art.report));
  run_detail::write_run_manifest(dir, c, loaded.manifest, art.report);
  return art;
}

// Exit codes of the command-line tool.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::parameter: return 2;
    case ErrorKind::data:
    case ErrorKind::input: return 3;
    case ErrorKind::numerical: return 4;
    case ErrorKind::io: return 5;
  }
  return 1;
}

}  // namespace gdr
