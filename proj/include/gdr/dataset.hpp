#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <cmath>
#include <map>
#include <optional>
#include <tuple>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "gdr/error.hpp"
#include "gdr/graph.hpp"

namespace gdr {

enum class SplitTag { train, val, test, unlabeled };

inline const char* to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
    case SplitTag::unlabeled: return "unlabeled";
  }
  return "unknown";
}

struct Split {
  std::vector<SplitTag> tags;

  std::vector<bool> mask(SplitTag tag) const {
    std::vector<bool> m(tags.size());
    for (std::size_t i = 0; i < tags.size(); ++i) m[i] = tags[i] == tag;
    return m;
  }
  long count(SplitTag tag) const {
    return static_cast<long>(std::count(tags.begin(), tags.end(), tag));
  }
};

struct DatasetManifest {
  std::string name;
  Index n_nodes = 0;
  Index n_edges = 0;
  int n_classes = 0;
  Index n_features = 0;
  bool directed = false;
  // file name -> lowercase hex SHA-256
  std::map<std::string, std::string> digests;

  // Digest over the per-file digests; identifies the dataset as a whole.
  std::string dataset_digest() const;
};

struct Dataset {
  std::string name;
  SparseGraph graph;
  SparseMatrix features;    // N x F
  std::vector<int> labels;  // 0-based class per node, -1 when unknown
  int n_classes = 0;
  Split split;
};

struct LoadedDataset {
  Dataset data;
  DatasetManifest manifest;
};

inline constexpr const char* kManifestFile = "manifest.txt";
inline constexpr const char* kGraphFile = "graph.tsv";
inline constexpr const char* kFeaturesFile = "features.tsv";
inline constexpr const char* kLabelsFile = "labels.tsv";
inline constexpr const char* kSplitFile = "split.tsv";
inline constexpr const char* kDataRootEnv = "GDR_DATA_ROOT";

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

inline std::string DatasetManifest::dataset_digest() const {
  std::string joined;
  for (const auto& [file, hex] : digests) joined += file + "=" + hex + "\n";
  return sha256_hex(joined);
}

// Relative paths that do not exist locally are looked up under $GDR_DATA_ROOT.
inline std::filesystem::path resolve_dataset_path(const std::filesystem::path& p) {
  if (p.is_absolute() || std::filesystem::exists(p)) return p;
  if (const char* root = std::getenv(kDataRootEnv); root != nullptr && *root != '\0') {
    return std::filesystem::path(root) / p;
  }
  return p;
}

namespace io_detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "unreadable-file", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "unwritable-file", "cannot open " + path.string());
  out << content;
  if (!out) throw Error(ErrorKind::io, "unwritable-file", "write failed for " + path.string());
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Tab-separated data lines with their 1-based line numbers.
struct Row {
  long line = 0;
  std::vector<std::string_view> fields;
};

inline std::vector<Row> split_rows(std::string_view text) {
  std::vector<Row> rows;
  long line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    Row row{line_no, {}};
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      row.fields.push_back(line.substr(start, tab == std::string_view::npos ? line.size() - start
                                                                             : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

class Located {
 public:
  Located(std::string file, long line) : file_(std::move(file)), line_(line) {}

  [[noreturn]] void fail(const std::string& code, const std::string& what) const {
    throw Error(ErrorKind::data, code, file_ + ":" + std::to_string(line_) + ": " + what);
  }

  long parse_int(std::string_view s, const char* what) const {
    long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      fail("bad-integer", std::string(what) + " '" + std::string(s) + "' is not an integer");
    }
    return v;
  }

  double parse_double(std::string_view s, const char* what) const {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
      fail("bad-number", std::string(what) + " '" + std::string(s) + "' is not a finite number");
    }
    return v;
  }

  void expect_fields(const Row& row, std::size_t n) const {
    if (row.fields.size() != n) {
      fail("field-count", "expected " + std::to_string(n) + " fields, got " +
                              std::to_string(row.fields.size()));
    }
  }

  void check_node(long node, Index n) const {
    if (node < 0 || node >= n) {
      fail("node-out-of-range", "node " + std::to_string(node) + " outside [0," + std::to_string(n) + ")");
    }
  }

 private:
  std::string file_;
  long line_;
};

inline std::optional<SplitTag> parse_tag(std::string_view s) {
  if (s == "train") return SplitTag::train;
  if (s == "val") return SplitTag::val;
  if (s == "test") return SplitTag::test;
  if (s == "unlabeled") return SplitTag::unlabeled;
  return std::nullopt;
}

inline DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest m;
  std::map<std::string, std::pair<std::string, long>> kv;
  long line_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    Located at(kManifestFile, line_no);
    if (eq == std::string::npos) at.fail("manifest-syntax", "expected key=value");
    kv[line.substr(0, eq)] = {line.substr(eq + 1), line_no};
  }
  auto get = [&](const std::string& key) -> std::pair<std::string, long> {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw Error(ErrorKind::data, "manifest-missing-key", std::string(kManifestFile) + ": no key " + key);
    }
    return it->second;
  };
  auto get_int = [&](const std::string& key) {
    const auto [value, line] = get(key);
    const long v = Located(kManifestFile, line).parse_int(value, key.c_str());
    if (v < 0) Located(kManifestFile, line).fail("manifest-negative", key + " must be >= 0");
    return v;
  };
  m.name = get("name").first;
  m.n_nodes = get_int("n_nodes");
  m.n_edges = get_int("n_edges");
  m.n_classes = static_cast<int>(get_int("n_classes"));
  m.n_features = get_int("n_features");
  const auto [dir, dir_line] = get("directed");
  if (dir != "true" && dir != "false") {
    Located(kManifestFile, dir_line).fail("manifest-bad-flag", "directed must be true or false");
  }
  m.directed = dir == "true";
  for (const char* file : {kGraphFile, kFeaturesFile, kLabelsFile, kSplitFile}) {
    m.digests[file] = get(std::string("digest.") + file).first;
  }
  return m;
}

// 1-based line of `key=` in the manifest text, 0 if absent.
inline long manifest_line(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind(key + "=", 0) == 0) return line_no;
  }
  return 0;
}

inline std::string render_manifest(const DatasetManifest& m) {
  std::string out = "# dataset manifest\n";
  out += "name=" + m.name + "\n";
  out += "n_nodes=" + std::to_string(m.n_nodes) + "\n";
  out += "n_edges=" + std::to_string(m.n_edges) + "\n";
  out += "n_classes=" + std::to_string(m.n_classes) + "\n";
  out += "n_features=" + std::to_string(m.n_features) + "\n";
  out += std::string("directed=") + (m.directed ? "true" : "false") + "\n";
  for (const auto& [file, hex] : m.digests) out += "digest." + file + "=" + hex + "\n";
  return out;
}

// Undirected graphs store both orientations; a self-loop counts once.
inline Index count_edges(const SparseGraph& g) {
  if (g.directed()) return g.adjacency().nonZeros();
  Index loops = 0;
  for (const Edge& e : g.edges()) loops += e.src == e.dst ? 1 : 0;
  return (g.adjacency().nonZeros() + loops) / 2;
}

}  // namespace io_detail

// Loads and cross-validates a dataset directory. Every data error names the
// file and line it was found on.
inline LoadedDataset load_dataset(const std::filesystem::path& dir_in) {
  using namespace io_detail;
  const std::filesystem::path dir = resolve_dataset_path(dir_in);
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorKind::io, "missing-dataset", "not a directory: " + dir.string());
  }
  LoadedDataset out;
  DatasetManifest& m = out.manifest;
  const std::string manifest_text = read_file(dir / kManifestFile);
  m = parse_manifest(manifest_text);
  const Index n = m.n_nodes;

  std::map<std::string, std::string> contents;
  for (const char* file : {kGraphFile, kFeaturesFile, kLabelsFile, kSplitFile}) {
    contents[file] = read_file(dir / file);
    const std::string actual = sha256_hex(contents[file]);
    if (actual != m.digests[file]) {
      Located(kManifestFile, manifest_line(manifest_text, std::string("digest.") + file))
          .fail("digest-mismatch", std::string("digest of ") + file + " is " + actual);
    }
  }

  // graph.tsv
  std::vector<Edge> edges;
  std::map<std::pair<long, long>, std::pair<double, long>> seen_edges;
  for (const Row& row : split_rows(contents[kGraphFile])) {
    Located at(kGraphFile, row.line);
    at.expect_fields(row, 3);
    const long src = at.parse_int(row.fields[0], "src");
    const long dst = at.parse_int(row.fields[1], "dst");
    const double w = at.parse_double(row.fields[2], "weight");
    at.check_node(src, n);
    at.check_node(dst, n);
    if (w < 0.0) at.fail("negative-weight", "weight must be >= 0");
    if (!seen_edges.emplace(std::make_pair(src, dst), std::make_pair(w, row.line)).second) {
      at.fail("duplicate-edge", "edge (" + std::to_string(src) + "," + std::to_string(dst) + ") repeated");
    }
    edges.push_back({src, dst, w});
  }
  if (!m.directed) {
    for (const auto& [key, value] : seen_edges) {
      auto rev = seen_edges.find({key.second, key.first});
      if (rev == seen_edges.end() || rev->second.first != value.first) {
        Located(kGraphFile, value.second)
            .fail("asymmetric-edge", "undirected graph lacks matching reverse edge (" +
                                         std::to_string(key.second) + "," + std::to_string(key.first) + ")");
      }
    }
  }
  out.data.graph = SparseGraph::from_edges(n, edges, m.directed);
  const Index edge_count = count_edges(out.data.graph);
  if (edge_count != m.n_edges) {
    Located(kManifestFile, manifest_line(manifest_text, "n_edges"))
        .fail("edge-count-mismatch", "n_edges=" + std::to_string(m.n_edges) + " but " + kGraphFile + " holds " +
                                         std::to_string(edge_count) + " edges");
  }

  // features.tsv
  std::vector<Eigen::Triplet<double>> triplets;
  std::map<std::pair<long, long>, long> seen_features;
  for (const Row& row : split_rows(contents[kFeaturesFile])) {
    Located at(kFeaturesFile, row.line);
    at.expect_fields(row, 3);
    const long node = at.parse_int(row.fields[0], "node");
    const long feat = at.parse_int(row.fields[1], "feature_index");
    const double v = at.parse_double(row.fields[2], "value");
    at.check_node(node, n);
    if (feat < 0 || feat >= m.n_features) {
      at.fail("feature-out-of-range", "feature " + std::to_string(feat) + " outside [0," +
                                          std::to_string(m.n_features) + ")");
    }
    if (!seen_features.emplace(std::make_pair(node, feat), row.line).second) {
      at.fail("duplicate-feature", "entry (" + std::to_string(node) + "," + std::to_string(feat) + ") repeated");
    }
    triplets.emplace_back(node, feat, v);
  }
  out.data.features.resize(n, m.n_features);
  out.data.features.setFromTriplets(triplets.begin(), triplets.end());
  out.data.features.makeCompressed();

  // labels.tsv
  out.data.labels.assign(static_cast<std::size_t>(n), -1);
  for (const Row& row : split_rows(contents[kLabelsFile])) {
    Located at(kLabelsFile, row.line);
    at.expect_fields(row, 2);
    const long node = at.parse_int(row.fields[0], "node");
    const long cls = at.parse_int(row.fields[1], "class_index");
    at.check_node(node, n);
    if (cls < 0 || cls >= m.n_classes) {
      at.fail("class-out-of-range", "class " + std::to_string(cls) + " outside [0," +
                                        std::to_string(m.n_classes) + ")");
    }
    if (out.data.labels[static_cast<std::size_t>(node)] != -1) {
      at.fail("duplicate-label", "node " + std::to_string(node) + " labelled twice");
    }
    out.data.labels[static_cast<std::size_t>(node)] = static_cast<int>(cls);
  }

  // split.tsv
  std::vector<bool> tagged(static_cast<std::size_t>(n), false);
  out.data.split.tags.assign(static_cast<std::size_t>(n), SplitTag::unlabeled);
  for (const Row& row : split_rows(contents[kSplitFile])) {
    Located at(kSplitFile, row.line);
    at.expect_fields(row, 2);
    const long node = at.parse_int(row.fields[0], "node");
    at.check_node(node, n);
    const auto tag = parse_tag(row.fields[1]);
    if (!tag) at.fail("unknown-tag", "unknown split tag '" + std::string(row.fields[1]) + "'");
    if (tagged[static_cast<std::size_t>(node)]) {
      at.fail("duplicate-tag", "node " + std::to_string(node) + " tagged twice");
    }
    tagged[static_cast<std::size_t>(node)] = true;
    out.data.split.tags[static_cast<std::size_t>(node)] = *tag;
    if (*tag != SplitTag::unlabeled && out.data.labels[static_cast<std::size_t>(node)] < 0) {
      at.fail("unlabelled-evaluation-node", "node " + std::to_string(node) + " is tagged " +
                                                 to_string(*tag) + " but has no label");
    }
  }
  for (Index i = 0; i < n; ++i) {
    if (!tagged[static_cast<std::size_t>(i)]) {
      Located(kManifestFile, manifest_line(manifest_text, "n_nodes"))
          .fail("untagged-node", "node " + std::to_string(i) + " has no entry in " + kSplitFile);
    }
  }
  if (out.data.split.count(SplitTag::train) == 0) {
    Located(kSplitFile, 1).fail("empty-train-split", "no train nodes");
  }

  out.data.name = m.name;
  out.data.n_classes = m.n_classes;
  return out;
}

// Canonical serialization: sorted rows, LF endings, %.17g values.
inline DatasetManifest write_dataset(const std::filesystem::path& dir, const Dataset& d) {
  using namespace io_detail;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "unwritable-path", "cannot create " + dir.string());

  const Index n = d.graph.n_nodes();
  if (d.features.rows() != n || static_cast<Index>(d.labels.size()) != n ||
      static_cast<Index>(d.split.tags.size()) != n) {
    throw Error(ErrorKind::input, "shape-mismatch", "dataset parts disagree on node count");
  }

  std::string graph = "# src\tdst\tweight\n";
  for (const Edge& e : d.graph.edges()) {
    graph += std::to_string(e.src) + "\t" + std::to_string(e.dst) + "\t" + format_double(e.weight) + "\n";
  }

  std::vector<std::tuple<Index, Index, double>> entries;
  for (Index i = 0; i < d.features.outerSize(); ++i) {
    for (SparseMatrix::InnerIterator it(d.features, i); it; ++it) {
      if (it.value() != 0.0) entries.emplace_back(it.row(), it.col(), it.value());
    }
  }
  std::sort(entries.begin(), entries.end());
  std::string features = "# node\tfeature_index\tvalue\n";
  for (const auto& [row, col, v] : entries) {
    features += std::to_string(row) + "\t" + std::to_string(col) + "\t" + format_double(v) + "\n";
  }

  std::string labels = "# node\tclass_index\n";
  for (Index i = 0; i < n; ++i) {
    const int c = d.labels[static_cast<std::size_t>(i)];
    if (c >= 0) labels += std::to_string(i) + "\t" + std::to_string(c) + "\n";
  }

  std::string split = "# node\ttag\n";
  for (Index i = 0; i < n; ++i) {
    split += std::to_string(i) + "\t" + to_string(d.split.tags[static_cast<std::size_t>(i)]) + "\n";
  }

  DatasetManifest m;
  m.name = d.name;
  m.n_nodes = n;
  m.n_edges = count_edges(d.graph);
  m.n_classes = d.n_classes;
  m.n_features = d.features.cols();
  m.directed = d.graph.directed();
  const std::pair<const char*, std::string*> files[] = {
      {kGraphFile, &graph}, {kFeaturesFile, &features}, {kLabelsFile, &labels}, {kSplitFile, &split}};
  for (const auto& [file, text] : files) {
    write_file(dir / file, *text);
    m.digests[file] = sha256_hex(*text);
  }
  write_file(dir / kManifestFile, render_manifest(m));
  return m;
}

}  // namespace gdr
