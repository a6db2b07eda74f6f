#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "commands.hpp"
#include "vfm/checkpoint.hpp"
#include "vfm/experiment.hpp"

namespace vfm::tools {

namespace fs = std::filesystem;
using nlohmann::json;

CLI::App* add_eval(CLI::App& app, EvalOptions& o) {
  auto* cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a test set");
  cmd->add_option("--run", o.run, "Training output directory (checkpoint.json and test.libsvm)");
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  cmd->add_option("--test", o.test, "Test set: .libsvm with a group map, or a ratings file");
  cmd->add_option("--data-dir", o.data_dir, "Directory holding the named datasets");
  cmd->add_option("--predictor", o.predictor, "Final iterate or iterate average")
      ->check(CLI::IsMember({"last", "mean"}))
      ->capture_default_str();
  cmd->add_option("--out", o.out, "Metrics report (default: metrics.json beside the checkpoint)");
  cmd->add_flag("--no-clamp", o.no_clamp, "Do not clip regression predictions to [1, 5] for RMSE");
  return cmd;
}

namespace {

json to_json(const TestMetrics& m, Task task) {
  if (task == Task::Regression) return json{{"rmse", m.rmse}};
  return json{{"rmse", m.rmse}, {"acc", m.acc}, {"auc", m.auc}, {"map", m.map}};
}

}  // namespace

int run_eval(const EvalOptions& o) {
  fs::path checkpoint_path = o.checkpoint, test_path = o.test;
  if (!o.run.empty()) {
    if (checkpoint_path.empty()) checkpoint_path = fs::path(o.run) / "checkpoint.json";
    if (test_path.empty()) test_path = fs::path(o.run) / "test.libsvm";
  }
  if (checkpoint_path.empty() || test_path.empty()) {
    throw UsageError("give --run, or both --checkpoint and --test");
  }
  if (!fs::is_regular_file(checkpoint_path)) throw MissingInput(checkpoint_path);
  const auto ckpt = load_checkpoint(checkpoint_path);
  const fs::path data_dir = o.data_dir.empty() ? default_data_dir() : o.data_dir;
  const auto test = load_dataset(test_path.string(), data_dir, ckpt.task);
  if (!(test.space() == ckpt.space)) {
    throw std::runtime_error("test set feature space (" + std::to_string(test.space().num_features()) +
                             " features) does not match the checkpoint (" +
                             std::to_string(ckpt.space.num_features()) + " features)");
  }
  if (test.size() == 0) throw MetricError("test set " + test_path.string() + " is empty");

  const auto predictor = parse_predictor(o.predictor);
  if (predictor == Predictor::Mean && !ckpt.averaged) {
    throw std::runtime_error("checkpoint has no averaged parameters; use --predictor last");
  }
  RmseOptions rmse_options;
  rmse_options.clamp = !o.no_clamp;
  const auto last = evaluate(ckpt.last, test, rmse_options);
  std::optional<TestMetrics> mean;
  if (ckpt.averaged) mean = evaluate(*ckpt.averaged, test, rmse_options);
  const auto& chosen = predictor == Predictor::Mean ? *mean : last;

  json report = {{"checkpoint", checkpoint_path.string()},
                 {"test", test_path.string()},
                 {"instances", test.size()},
                 {"task", to_string(ckpt.task)},
                 {"predictor", to_string(predictor)},
                 {"metrics", to_json(chosen, ckpt.task)},
                 {"last", to_json(last, ckpt.task)}};
  if (mean) report["mean"] = to_json(*mean, ckpt.task);

  const fs::path out = o.out.empty() ? checkpoint_path.parent_path() / "metrics.json" : fs::path(o.out);
  {
    std::ofstream file(out);
    file << report.dump(2) << '\n';
    if (!file) throw std::runtime_error("cannot write " + out.string());
  }

  std::cout << std::fixed << std::setprecision(4);
  std::cout << "predictor  " << (ckpt.task == Task::Regression ? "rmse" : "rmse    acc     auc     map") << '\n';
  auto row = [&](const char* name, const TestMetrics& m) {
    std::cout << std::left << std::setw(11) << name;
    if (ckpt.task == Task::Regression) {
      std::cout << m.rmse << '\n';
    } else {
      std::cout << m.rmse << "  " << m.acc << "  " << m.auc << "  " << m.map << '\n';
    }
  };
  row("last", last);
  if (mean) row("mean", *mean);
  std::cout << "selected: " << to_string(predictor) << ", report in " << out.string() << '\n';

  if (mean) {
    const bool regression = ckpt.task == Task::Regression;
    const double a = regression ? mean->rmse : mean->acc, b = regression ? last.rmse : last.acc;
    if (regression ? a > b : a < b) {
      std::cerr << "warning: the averaged predictor scores worse than the last iterate ("
                << (regression ? "rmse " : "acc ") << a << " vs " << b << ")\n";
    }
  }
  return 0;
}

}  // namespace vfm::tools
