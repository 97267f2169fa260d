// gdr: command-line front end for graph diffusion reclassification runs.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gdr/gdr.hpp"

namespace {

// Short aliases for the most common keys.
const std::map<std::string, std::string> kAliases = {
    {"run.dataset", "--dataset"}, {"run.output", "--output"},        {"run.seed", "--seed"},
    {"prior.kind", "--prior"},    {"graph.direction", "--direction"}, {"gdr.t_min_grid", "--t-min-grid"}};

std::string flag_for(const std::string& key) {
  std::string flag = "--" + key;
  for (char& ch : flag) {
    if (ch == '.' || ch == '_') ch = '-';
  }
  return flag;
}

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "sectioned key=value config file");
    for (const auto& key : gdr::config_keys()) {
      std::string names = flag_for(key);
      if (auto it = kAliases.find(key); it != kAliases.end()) names += "," + it->second;
      app->add_option(names, values[key], "overrides " + key);
    }
  }

  gdr::ExperimentConfig resolve() const {
    gdr::ExperimentConfig c = config_path.empty() ? gdr::ExperimentConfig{} : gdr::load_config(config_path);
    for (const auto& [key, value] : values) {
      if (!value.empty()) gdr::apply_config_value(c, key, value);
    }
    return c;
  }
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw gdr::Error(gdr::ErrorKind::io, "unreadable-report", "cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void print_summary(const gdr::RunArtifacts& art) {
  for (const auto& r : art.report.rows) {
    std::printf("%s %s %s seed=%llu prior=%s", r.dataset.c_str(), r.method.c_str(), r.direction.c_str(),
                static_cast<unsigned long long>(r.seed), gdr::format_tenths(r.prior_tenths()).c_str());
    if (r.gdr) {
      std::printf(" gdr=%s delta=%s t_min=%g", gdr::format_tenths(*r.gdr_tenths()).c_str(),
                  gdr::format_tenths(*r.delta_tenths()).c_str(), *r.t_min);
    }
    std::printf("\n");
  }
  std::printf("report: %s\n", art.report_path.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph diffusion reclassification experiments"};
  app.require_subcommand(1);

  ConfigFlags gdr_flags;
  auto* run_gdr = app.add_subcommand("run-gdr", "prior -> GDR with validation-tuned t_min");
  gdr_flags.attach(run_gdr);

  ConfigFlags train_flags;
  auto* run_train = app.add_subcommand("run-train", "train a neural prior, export it, optionally chain GDR");
  train_flags.attach(run_train);

  std::vector<std::string> merge_inputs;
  std::string merge_output;
  auto* merge = app.add_subcommand("report-merge", "merge report CSVs into one sorted table");
  merge->add_option("reports", merge_inputs, "report CSV files")->required();
  merge->add_option("-o,--output", merge_output, "write here instead of stdout");

  std::string validate_dir;
  auto* validate = app.add_subcommand("validate-dataset", "load and fully validate a dataset directory");
  validate->add_option("dir", validate_dir, "dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run_gdr) {
      print_summary(gdr::run_gdr(gdr_flags.resolve()));
    } else if (*run_train) {
      print_summary(gdr::run_train(train_flags.resolve()));
    } else if (*merge) {
      std::vector<std::string> texts;
      for (const auto& p : merge_inputs) texts.push_back(read_text(p));
      const std::string merged = gdr::report_merge(texts);
      if (merge_output.empty()) {
        std::cout << merged;
      } else {
        std::ofstream out(merge_output, std::ios::binary);
        if (!(out << merged)) throw gdr::Error(gdr::ErrorKind::io, "unwritable-output", merge_output);
      }
    } else if (*validate) {
      const auto loaded = gdr::load_dataset(validate_dir);
      const auto& m = loaded.manifest;
      std::printf("%s: ok nodes=%lld edges=%lld classes=%d features=%lld directed=%s digest=%s\n",
                  m.name.c_str(), static_cast<long long>(m.n_nodes), static_cast<long long>(m.n_edges),
                  static_cast<int>(m.n_classes), static_cast<long long>(m.n_features),
                  m.directed ? "true" : "false", m.dataset_digest().c_str());
    }
  } catch (const gdr::Error& e) {
    std::fprintf(stderr, "error [%s/%s]: %s\n", gdr::to_string(e.kind()), e.code().c_str(), e.what());
    return gdr::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
