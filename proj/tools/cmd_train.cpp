#include <cmath>
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

CLI::App* add_train(CLI::App& app, TrainOptions& o) {
  auto* cmd = app.add_subcommand("train", "Train a model and write checkpoint, history and splits");
  cmd->add_option("--data", o.data, "ml100k, ml1m, movie10k, a ratings file or a .libsvm file")->required();
  cmd->add_option("--data-dir", o.data_dir, "Directory holding the named datasets");
  cmd->add_option("--task", o.task, "Prediction task")
      ->check(CLI::IsMember({"regression", "classification"}))
      ->capture_default_str();
  cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
  cmd->add_option("--d", o.dim, "Embedding dimension")->capture_default_str();
  cmd->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--samples", o.samples, "Posterior samples per batch")->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--batch-size", o.batch_size, "Mini-batch size, 0 for full batch")->capture_default_str();
  cmd->add_option("--epochs", o.epochs, "Maximum number of epochs")->capture_default_str();
  cmd->add_option("--patience", o.patience, "Validation evaluations that may worsen in a row")
      ->capture_default_str();
  cmd->add_option("--elbo-patience", o.elbo_patience, "ELBO decreases in a row that stop a refit (0 disables)")
      ->capture_default_str();
  cmd->add_option("--kl-weighting", o.kl_weighting, "Debiasing of the KL term")
      ->check(CLI::IsMember({"per-group", "global"}))
      ->capture_default_str();
  cmd->add_option("--init-precision", o.init_precision, "Initial prior precision")->capture_default_str();
  cmd->add_option("--average-from", o.average_from, "First epoch entering the iterate average")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--checkpoint-every", o.checkpoint_every, "Also write the checkpoint every N epochs")
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "Root seed")->capture_default_str();
  cmd->add_flag("--no-validation", o.no_validation, "Refit on the whole training part (ELBO stopping)");
  cmd->add_flag("--no-clamp", o.no_clamp, "Do not clip regression predictions to [1, 5] for RMSE");
  cmd->add_flag("--quiet", o.quiet, "No progress output");
  return cmd;
}

namespace {

TrainConfig make_config(const TrainOptions& o) {
  TrainConfig c;
  c.task = parse_task(o.task);
  c.dim = o.dim;
  c.samples = o.samples;
  c.batch_size = o.batch_size;
  c.learning_rate = o.lr;
  c.max_epochs = o.epochs;
  c.patience_validation = o.patience;
  c.patience_elbo = o.elbo_patience;
  c.seed = o.seed;
  c.kl_weighting = o.kl_weighting == "global" ? KlWeighting::Global : KlWeighting::PerGroup;
  c.init_precision = o.init_precision;
  c.average_from_epoch = o.average_from;
  c.rmse.clamp = !o.no_clamp;
  if (!(c.learning_rate > 0)) throw UsageError("--lr must be positive");
  if (!(c.init_precision > 0)) throw UsageError("--init-precision must be positive");
  if (c.max_epochs == 0) throw UsageError("--epochs must be positive");
  return c;
}

void write_split(const fs::path& path, const Dataset& data) {
  std::ofstream out(path);
  write_libsvm(out, data);
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void save(const fs::path& path, const Dataset& data, const VariationalParams& last,
          const std::optional<VariationalParams>& averaged, const json& config) {
  Checkpoint ckpt;
  ckpt.space = data.space();
  ckpt.task = data.task();
  ckpt.last = last;
  ckpt.averaged = averaged;
  ckpt.config = config;
  // Write then rename so an interrupted run never leaves a torn checkpoint.
  const fs::path tmp = path.string() + ".tmp";
  save_checkpoint(tmp, ckpt);
  fs::rename(tmp, path);
}

}  // namespace

int run_train(const TrainOptions& o, const CLI::App& command) {
  const auto config = make_config(o);
  const fs::path data_dir = o.data_dir.empty() ? default_data_dir() : o.data_dir;
  const fs::path out_dir = o.out;

  const auto data = load_dataset(o.data, data_dir, config.task, o.seed);
  const auto splits = standard_splits(data, o.seed, !o.no_validation);

  fs::create_directories(out_dir);
  const auto snapshot = config_snapshot(command);
  {
    std::ofstream out(out_dir / "config.snapshot");
    out << snapshot;
  }
  json config_json = json::object();
  {
    std::istringstream in(snapshot);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) config_json[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  {
    std::ofstream groups(out_dir / "groups.map");
    write_group_map(groups, data.space());
  }
  write_split(out_dir / "train.libsvm", splits.train);
  if (!o.no_validation) write_split(out_dir / "validation.libsvm", splits.validation);
  write_split(out_dir / "test.libsvm", splits.test);

  if (!o.quiet) {
    std::cerr << "training on " << splits.train.size() << " instances, " << data.space().num_features()
              << " features";
    if (!o.no_validation) std::cerr << ", validating on " << splits.validation.size();
    std::cerr << '\n';
  }

  IterateAverage running;
  auto on_epoch = [&](const EpochRecord& r, const VariationalParams& vp) {
    if (r.epoch >= config.average_from_epoch) running.record(vp);
    if (o.checkpoint_every > 0 && r.epoch % o.checkpoint_every == 0) {
      std::optional<VariationalParams> avg;
      if (running.count() > 0) avg = running.averaged(vp);
      save(out_dir / "checkpoint.json", data, vp, avg, config_json);
    }
    if (!o.quiet && r.epoch % 100 == 0) {
      std::cerr << "epoch " << r.epoch << "  elbo " << r.elbo << "  train " << r.train_metric;
      if (!std::isnan(r.valid_metric)) std::cerr << "  valid " << r.valid_metric;
      std::cerr << '\n';
    }
    return true;
  };

  TrainResult result;
  try {
    result = train(splits.train, o.no_validation ? nullptr : &splits.validation, config, on_epoch);
  } catch (const TrainingDiverged& e) {
    save(out_dir / "checkpoint.diverged.json", data, e.params(), std::nullopt, config_json);
    throw;
  }

  save(out_dir / "checkpoint.json", data, result.last, result.averaged, config_json);
  {
    std::ofstream history(out_dir / "history.csv");
    write_history_csv(history, result.history);
  }

  const auto& final_record = result.history.back();
  const char* metric = config.task == Task::Regression ? "rmse" : "auc";
  std::cout << std::setprecision(6) << "stopped: " << to_string(result.stop) << " after "
            << result.history.size() << " epochs\n";
  if (o.no_validation) {
    std::cout << "final training " << metric << ": " << final_record.train_metric << '\n';
  } else {
    std::cout << "final validation " << metric << ": " << final_record.valid_metric << '\n';
  }
  std::cout << "wrote " << out_dir.string() << '\n';
  return 0;
}

}  // namespace vfm::tools
