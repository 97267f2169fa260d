#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <regex>

#include "synthetic.hpp"

using namespace gdr;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gdr_ds_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) { return io_detail::read_file(p); }

// Rewrites one file and patches its digest so validation reaches the content.
void mutate(const fs::path& dir, const std::string& file, const std::string& text) {
  io_detail::write_file(dir / file, text);
  std::string manifest = slurp(dir / kManifestFile);
  const std::regex digest_line("digest\\." + std::regex_replace(file, std::regex("\\."), "\\.") + "=[0-9a-f]+");
  manifest = std::regex_replace(manifest, digest_line, "digest." + file + "=" + sha256_hex(text));
  io_detail::write_file(dir / kManifestFile, manifest);
}

std::string replace_first(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

Dataset toy() {
  Dataset d;
  d.name = "toy";
  d.graph = SparseGraph::from_edges(3, {{0, 1, 1.0}, {1, 0, 1.0}, {1, 2, 0.5}, {2, 1, 0.5}}, false);
  d.features.resize(3, 2);
  d.features.insert(0, 0) = 1.0;
  d.features.insert(2, 1) = 0.25;
  d.labels = {0, 1, -1};
  d.n_classes = 2;
  d.split.tags = {SplitTag::train, SplitTag::test, SplitTag::unlabeled};
  return d;
}

bool same(const Dataset& a, const Dataset& b) {
  return a.name == b.name && a.graph.edges() == b.graph.edges() && a.graph.directed() == b.graph.directed() &&
         Matrix(a.features) == Matrix(b.features) && a.labels == b.labels && a.n_classes == b.n_classes &&
         a.split.tags == b.split.tags;
}

}  // namespace

TEST_CASE("toy dataset round-trips byte for byte", "[dataset]") {
  const auto a = fresh_dir("toy_a"), b = fresh_dir("toy_b");
  const auto m = write_dataset(a, toy());
  CHECK(m.n_nodes == 3);
  CHECK(m.n_edges == 2);
  const auto loaded = load_dataset(a);
  CHECK(same(loaded.data, toy()));
  write_dataset(b, loaded.data);
  for (const char* f : {kManifestFile, kGraphFile, kFeaturesFile, kLabelsFile, kSplitFile}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(loaded.manifest.dataset_digest() == load_dataset(b).manifest.dataset_digest());
}

TEST_CASE("random datasets round-trip", "[dataset]") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const Dataset d = synth::planted_dataset(3, 15, seed, 0.2, 0.02, 2, seed % 2 == 0);
    const auto dir = fresh_dir("rand" + std::to_string(seed));
    write_dataset(dir, d);
    CHECK(same(load_dataset(dir).data, d));
  }
}

TEST_CASE("empty graph", "[dataset]") {
  Dataset d = toy();
  d.graph = SparseGraph::from_edges(3, {}, false);
  const auto dir = fresh_dir("empty");
  CHECK(write_dataset(dir, d).n_edges == 0);
  const auto loaded = load_dataset(dir);
  CHECK(loaded.manifest.n_edges == 0);
  CHECK(loaded.data.graph.adjacency().nonZeros() == 0);
}

TEST_CASE("permuted edge lists canonicalize", "[dataset]") {
  const Dataset d = synth::planted_dataset(2, 10, 3, 0.3, 0.05, 2, true);
  std::vector<Edge> shuffled = d.graph.edges();
  std::mt19937_64 rng(5);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  Dataset p = d;
  p.graph = SparseGraph::from_edges(d.graph.n_nodes(), shuffled, true);
  const auto a = fresh_dir("perm_a"), b = fresh_dir("perm_b");
  write_dataset(a, d);
  write_dataset(b, p);
  CHECK(slurp(a / kGraphFile) == slurp(b / kGraphFile));

  // Sorted oracle: rows in (src, dst) order.
  std::vector<Edge> sorted = shuffled;
  std::sort(sorted.begin(), sorted.end(), [](const Edge& x, const Edge& y) {
    return std::tie(x.src, x.dst) < std::tie(y.src, y.dst);
  });
  CHECK(p.graph.edges() == sorted);

  // A hand-permuted graph.tsv loads to the same graph.
  std::string text = slurp(a / kGraphFile);
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string header, line;
  std::getline(in, header);
  while (std::getline(in, line)) lines.push_back(line);
  std::reverse(lines.begin(), lines.end());
  std::string permuted = header + "\n";
  for (const auto& l : lines) permuted += l + "\n";
  mutate(a, kGraphFile, permuted);
  CHECK(load_dataset(a).data.graph.edges() == d.graph.edges());
}

TEST_CASE("fuzzed datasets are rejected with a located error", "[dataset]") {
  const auto base = fresh_dir("fuzz_base");
  write_dataset(base, synth::planted_dataset(3, 12, 9, 0.25, 0.03, 2));
  const std::regex located("[a-z_]+\\.(tsv|txt):[0-9]+: ");

  struct Mutation {
    const char* name;
    const char* file;
    std::function<std::string(std::string)> apply;
    bool redigest = true;
  };
  auto first_data_line = [](const std::string& s) {
    const auto start = s.find('\n') + 1;
    return s.substr(start, s.find('\n', start) - start + 1);
  };
  const std::vector<Mutation> mutations = {
      {"flip a tag", kSplitFile, [](std::string s) { return replace_first(s, "\ttrain", "\ttrian"); }},
      {"duplicate a tag line", kSplitFile,
       [&](std::string s) { return s + first_data_line(s); }},
      {"duplicate an edge line", kGraphFile, [&](std::string s) { return s + first_data_line(s); }},
      {"drop one orientation", kGraphFile,
       [&](std::string s) { return replace_first(s, first_data_line(s), ""); }},
      {"perturb the edge count", kManifestFile,
       [](std::string s) {
         const std::regex r("n_edges=([0-9]+)");
         std::smatch m;
         std::regex_search(s, m, r);
         return std::regex_replace(s, r, "n_edges=" + std::to_string(std::stol(m[1]) + 1));
       },
       false},
      {"perturb the feature count", kManifestFile,
       [](std::string s) { return std::regex_replace(s, std::regex("n_features=[0-9]+"), "n_features=3"); }, false},
      {"label out of range", kLabelsFile, [](std::string s) { return replace_first(s, "\t2\n", "\t7\n"); }},
      {"non-numeric weight", kGraphFile, [](std::string s) { return replace_first(s, "\t1\n", "\tone\n"); }},
      {"missing field", kFeaturesFile, [](std::string s) { return replace_first(s, "\t1\n", "\n"); }},
      {"negative node", kLabelsFile, [](std::string s) { return replace_first(s, "\n0\t", "\n-1\t"); }},
      {"content change without digest update", kLabelsFile,
       [](std::string s) { return s + "# trailing comment\n"; }, false},
  };

  for (const auto& mu : mutations) {
    const auto dir = fresh_dir("fuzz_case");
    fs::copy(base, dir);
    const std::string mutated = mu.apply(slurp(dir / mu.file));
    if (mu.redigest && std::string(mu.file) != kManifestFile) {
      mutate(dir, mu.file, mutated);
    } else {
      io_detail::write_file(dir / mu.file, mutated);
    }
    INFO(mu.name);
    try {
      load_dataset(dir);
      FAIL("mutation accepted");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::data);
      CHECK(std::regex_search(std::string(e.what()), located));
    }
  }
}

TEST_CASE("dataset root lookup", "[dataset]") {
  const auto dir = fresh_dir("rooted");
  write_dataset(dir / "toy", toy());
  ::setenv(kDataRootEnv, dir.string().c_str(), 1);
  CHECK(load_dataset("toy").manifest.name == "toy");
  ::unsetenv(kDataRootEnv);
  CHECK_THROWS_AS(load_dataset("definitely-not-here"), Error);
}
