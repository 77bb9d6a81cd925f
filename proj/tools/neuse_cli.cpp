// Command-line entry point: prepare, train-base and run.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "neuse/experiment.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string methods;
  std::string task;
  std::string out;
  std::string dataset;
  std::string format;
  std::string base;
  std::string snapshots;
};

void add_common_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--seed", o.seed, "root random seed");
  cmd->add_option("--task", o.task, "rating or ranking");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--dataset", o.dataset, "ratings file");
  cmd->add_option("--format", o.format, "movielens-tab or generic-csv");
  cmd->add_option("--base", o.base, "rsvd, fm, userknn or itemknn");
}

neuse::RunConfig resolve_config(const Overrides& o) {
  neuse::RunConfig c = o.config.empty() ? neuse::RunConfig{} : neuse::load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.methods.empty()) c.methods = neuse::parse_methods(o.methods);
  if (!o.task.empty()) c.task = neuse::parse_task(o.task);
  if (!o.out.empty()) c.out = o.out;
  if (!o.dataset.empty()) c.dataset = o.dataset;
  if (!o.format.empty()) c.format = neuse::parse_rating_format(o.format);
  if (!o.base.empty()) c.base.algorithm = neuse::parse_base_algorithm(o.base);
  if (!o.snapshots.empty()) c.snapshots_dir = o.snapshots;
  c.validate();
  return c;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw neuse::Error("cannot write '" + path.string() + "'");
  out << text;
}

void cmd_prepare(const neuse::RunConfig& c) {
  const auto data = neuse::prepare_data(c);
  neuse::write_prepared(data, c.out / "prepared");
  std::printf("users %zu, items %zu, interactions %zu\n", data.ratings.num_users(), data.ratings.num_items(),
              data.ratings.size());
  std::printf("train %zu, validation %zu, test %zu\n", data.split.train.size(), data.split.validation.size(),
              data.split.test.size());
  std::printf("wrote %s\n", (c.out / "prepared").string().c_str());
}

void cmd_train_base(const neuse::RunConfig& c) {
  const auto data = neuse::prepare_data(c);
  const auto bundle = neuse::train_base(c, data);
  const auto dir = c.out / "snapshots";
  neuse::save_bundle(bundle, dir);
  if (!bundle.base_epoch_rmse.empty()) {
    std::string text = "epoch,train_rmse\n";
    char line[64];
    for (std::size_t e = 0; e < bundle.base_epoch_rmse.size(); ++e) {
      std::snprintf(line, sizeof line, "%zu,%.17g\n", e + 1, bundle.base_epoch_rmse[e]);
      text += line;
    }
    write_text(dir / "base_history.csv", text);
  }
  std::printf("%-6s %16s\n", "tag", bundle.validation.metric_name().c_str());
  for (const auto& m : bundle.validation.metas())
    std::printf("%-6lld %16.4f\n", static_cast<long long>(m.tag), m.validation_metric);
  std::printf("wrote %zu snapshots to %s\n", bundle.validation.num_snapshots(), dir.string().c_str());
}

void cmd_run(const neuse::RunConfig& c) {
  const auto result = neuse::run_experiment(c);
  neuse::write_outputs(c, result);
  std::fputs(neuse::format_reports_table(result.reports).c_str(), stdout);
  std::printf("wrote %s\n", (c.out / "reports.csv").string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural snapshot ensembles for collaborative filtering"};
  app.require_subcommand(1);
  Overrides o;

  auto* prepare = app.add_subcommand("prepare", "split the dataset and write split, negatives and neighbors");
  add_common_flags(prepare, o);
  auto* train_base = app.add_subcommand("train-base", "train the base model and write snapshot files");
  add_common_flags(train_base, o);
  train_base->add_option("--methods", o.methods, "comma-separated methods (se adds the cyclic run)");
  auto* run = app.add_subcommand("run", "train ensembles and write evaluation reports");
  add_common_flags(run, o);
  run->add_option("--methods", o.methods, "comma-separated: single,average,hse,se,neuse");
  run->add_option("--snapshots", o.snapshots, "directory of snapshot files to use instead of training");

  CLI11_PARSE(app, argc, argv);
  try {
    const neuse::RunConfig config = resolve_config(o);
    if (prepare->parsed()) cmd_prepare(config);
    if (train_base->parsed()) cmd_train_base(config);
    if (run->parsed()) cmd_run(config);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
