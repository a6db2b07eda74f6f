#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <thread>

#include "commands.hpp"
#include "vfm/experiment.hpp"

namespace vfm::tools {

namespace fs = std::filesystem;

CLI::App* add_elicit(CLI::App& app, ElicitOptions& o) {
  auto* cmd = app.add_subcommand("elicit", "Simulated preference elicitation on Movie10k");
  cmd->add_option("--strategy", o.strategies, "One or more of random, mean, variance")
      ->check(CLI::IsMember({"random", "mean", "variance"}))
      ->capture_default_str();
  cmd->add_option("--rounds", o.rounds, "Query rounds per user")->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--batch", o.batch, "Items queried per round")->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--seeds", o.seeds, "Number of seeds to aggregate")->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "First seed")->capture_default_str();
  cmd->add_option("--samples", o.samples, "Posterior samples for predictions and user updates")
      ->capture_default_str();
  cmd->add_option("--d", o.dim, "Embedding dimension")->capture_default_str();
  cmd->add_option("--epochs", o.epochs, "Training epochs for the item model")->capture_default_str();
  cmd->add_option("--train-samples", o.train_samples, "Posterior samples per training batch")
      ->capture_default_str();
  cmd->add_option("--lr", o.lr, "Learning rate for the item model")->capture_default_str();
  cmd->add_option("--user-lr", o.user_lr, "Learning rate for user updates")->capture_default_str();
  cmd->add_option("--user-iterations", o.user_iterations, "Iteration cap for user updates")
      ->capture_default_str();
  cmd->add_option("--user-patience", o.user_patience, "ELBO decreases in a row that end a user update")
      ->capture_default_str();
  cmd->add_option("--observed-fraction", o.observed_fraction, "Users whose rows train the item model")
      ->capture_default_str();
  cmd->add_option("--data-dir", o.data_dir, "Directory holding movie10k.csv or ml-25m");
  cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
  cmd->add_option("--threads", o.threads, "Worker threads over seeds (0: one per core)")
      ->capture_default_str();
  return cmd;
}

namespace {

struct Summary {
  double mean = 0.0;
  double sd = 0.0;
};

Summary summarize(const std::vector<double>& xs) {
  Summary s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    for (double x : xs) s.sd += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(s.sd / static_cast<double>(xs.size() - 1));
  }
  return s;
}

}  // namespace

int run_elicit(const ElicitOptions& o, const CLI::App& command) {
  ElicitationProtocol protocol;
  protocol.observed_user_fraction = o.observed_fraction;
  protocol.query_batch_size = o.batch;
  protocol.rounds = o.rounds;
  protocol.samples = o.samples;

  TrainConfig train_config;
  train_config.task = Task::Classification;
  train_config.dim = o.dim;
  train_config.samples = o.train_samples;
  train_config.learning_rate = o.lr;
  train_config.max_epochs = o.epochs;
  train_config.patience_elbo = 0;  // fixed epoch budget

  UserUpdateConfig update;
  update.learning_rate = o.user_lr;
  update.max_iterations = o.user_iterations;
  update.patience_elbo = o.user_patience;

  std::vector<Strategy> strategies;
  for (const auto& name : o.strategies) {
    const auto s = parse_strategy(name);
    if (std::find(strategies.begin(), strategies.end(), s) == strategies.end()) strategies.push_back(s);
  }
  const fs::path data_dir = o.data_dir.empty() ? default_data_dir() : o.data_dir;
  // Validate the protocol against the matrix shape before the long run.
  bool synthetic = false;
  protocol.validate(load_movie10k(data_dir, o.seed, &synthetic).num_items);
  if (synthetic) {
    std::cerr << "note: no Movie10k ratings under " << data_dir.string()
              << "; using the planted low-rank synthetic matrix\n";
  }

  const fs::path out_dir = o.out;
  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "config.snapshot");
    out << config_snapshot(command);
  }

  std::vector<ElicitationSeedResult> results(o.seeds);
  std::atomic<std::size_t> next = 0;
  std::mutex error_mutex;
  std::exception_ptr error;
  std::size_t workers = o.threads > 0 ? o.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, o.seeds);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < o.seeds; i = next++) {
        try {
          results[i] = run_elicitation_seed(data_dir, o.seed + i, protocol, train_config, update, strategies);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  {
    std::ofstream pools(out_dir / "elicit_pools.csv");
    pools << "seed,strategy,pool_hash\n";
    for (const auto& r : results) {
      for (std::size_t s = 0; s < strategies.size(); ++s) {
        pools << r.seed << ',' << to_string(r.strategies[s]) << ',' << std::hex << r.pool_hashes[s]
              << std::dec << '\n';
      }
    }
  }

  const char* metric_names[] = {"acc", "auc", "map", "variance"};
  for (std::size_t s = 0; s < strategies.size(); ++s) {
    const std::string name(to_string(strategies[s]));
    std::ofstream csv(out_dir / ("elicit_" + name + ".csv"));
    csv << "items_revealed";
    for (auto m : metric_names) csv << ',' << m << "_mean," << m << "_sd";
    csv << ",seeds\n";
    csv << std::setprecision(10);

    std::cout << "strategy " << name << " (" << o.seeds << " seeds, mean +- sd)\n";
    std::cout << "items   acc              auc              map              variance\n";
    for (std::size_t round = 0; round < o.rounds; ++round) {
      std::vector<double> values[4];
      for (const auto& r : results) {
        const auto& row = r.rounds[s][round];
        values[0].push_back(row.acc);
        values[1].push_back(row.auc);
        values[2].push_back(row.map);
        values[3].push_back(row.mean_variance);
      }
      const auto items = results.front().rounds[s][round].items_revealed;
      csv << items;
      std::ostringstream line;
      line << std::fixed << std::setprecision(3) << std::left << std::setw(8) << items;
      for (auto& v : values) {
        const auto sum = summarize(v);
        csv << ',' << sum.mean << ',' << sum.sd;
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(3) << sum.mean << " +- " << sum.sd;
        line << std::setw(17) << cell.str();
      }
      csv << ',' << results.size() << '\n';
      std::cout << line.str() << '\n';
    }
    std::cout << '\n';
  }
  std::cout << "wrote " << out_dir.string() << '\n';
  return 0;
}

}  // namespace vfm::tools
