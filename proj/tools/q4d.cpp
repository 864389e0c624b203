// Single CLI binary with subcommands: gen, train, query, metrics, report.
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

#include "q4d/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

q4d::RunConfig load_config(const std::string& path) {
  if (path.empty()) return q4d::RunConfig{};
  return q4d::RunConfig::load(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"4D reconstruction toolkit: procedural scenes, training, "
               "querying and evaluation"};
  app.require_subcommand(1);

  std::string config_path, dataset, out_dir, checkpoint, sequence, resume;
  std::string pred_dir, gt_dir, align = "sim3_ransac", depth_align = "scale";
  int query = 0;
  std::vector<int> targets;
  std::vector<std::string> report_files;
  bool streaming = false, ply = false;

  auto* gen = app.add_subcommand("gen", "Generate a dataset of sequences");
  gen->add_option("--config", config_path, "Run config JSON");
  gen->add_option("--out", out_dir, "Output dataset directory")->required();

  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  train->add_option("--config", config_path, "Run config JSON");
  train->add_option("--dataset", dataset, "Dataset directory")->required();
  train->add_option("--out", out_dir, "Output run directory")->required();
  train->add_option("--resume", resume, "Checkpoint directory to resume from");

  auto* q = app.add_subcommand("query", "Query geometry and motion");
  q->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  q->add_option("--sequence", sequence, "GT sequence archive")->required();
  q->add_option("--source", query, "Source frame index")->required();
  q->add_option("--targets", targets, "Target frame indices (default: all)");
  q->add_option("--out", out_dir, "Output prediction archive")->required();
  q->add_flag("--streaming", streaming, "Use the streaming (causal) path");
  q->add_flag("--ply", ply, "Also export PLY point cloud and trajectories");

  auto* m = app.add_subcommand("metrics", "Evaluate a prediction archive");
  m->add_option("--pred", pred_dir, "Prediction archive")->required();
  m->add_option("--gt", gt_dir, "GT sequence archive")->required();
  m->add_option("--out", out_dir, "Report output directory")->required();
  m->add_option("--align", align, "sim3_ransac | median_scale | none");
  m->add_option("--depth-align", depth_align, "scale | scale_shift");
  m->add_option("--config", config_path, "Run config JSON (metric settings)");

  auto* rep = app.add_subcommand("report", "Aggregate metric reports");
  rep->add_option("--reports", report_files, "report.json files")->required();
  rep->add_option("--out", out_dir, "Output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // help text, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // bad usage is a configuration error
  }

  try {
    if (gen->parsed()) {
      q4d::cmd_gen(load_config(config_path), out_dir);
    } else if (train->parsed()) {
      std::optional<q4d::fs::path> res;
      if (!resume.empty()) res = resume;
      q4d::TrainRunResult r =
          q4d::cmd_train(load_config(config_path), dataset, out_dir, res);
      std::cout << "steps " << r.steps_run << " final total loss "
                << r.last.total << "\n";
    } else if (q->parsed()) {
      q4d::QueryOptions opts;
      opts.streaming = streaming;
      opts.ply = ply;
      q4d::cmd_query(checkpoint, sequence, query, targets, out_dir, opts);
    } else if (m->parsed()) {
      q4d::MetricOptions opts;
      opts.align = align;
      opts.depth_align = depth_align;
      if (!config_path.empty())
        opts.settings = load_config(config_path).metrics;
      q4d::MetricReport r = q4d::cmd_metrics(pred_dir, gt_dir, out_dir, opts);
      auto line = [](const char* k, const std::optional<double>& v) {
        if (v) std::cout << k << " " << *v << "\n";
      };
      line("apd", r.apd);
      line("epe", r.epe);
      line("ate", r.ate);
      line("rpe_t", r.rpe_t);
      line("rpe_r", r.rpe_r);
      line("acc", r.acc);
      line("comp", r.comp);
      line("nc", r.nc);
      line("depth_rel", r.depth_rel);
      line("depth_delta", r.depth_delta);
    } else if (rep->parsed()) {
      std::vector<q4d::fs::path> files(report_files.begin(),
                                       report_files.end());
      q4d::cmd_report(files, out_dir);
    }
  } catch (const q4d::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const q4d::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const q4d::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
