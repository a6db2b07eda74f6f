#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace vfm::tools {

/// Bad configuration or input that the user can fix; exits with status 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string default_data_dir();

struct TrainOptions {
  std::string data;
  std::string data_dir;
  std::string task = "regression";
  std::string out = "runs/train";
  std::string kl_weighting = "per-group";
  std::size_t dim = 5;
  std::size_t samples = 1;
  std::size_t batch_size = 0;
  std::size_t epochs = 3000;
  std::size_t patience = 10;
  std::size_t elbo_patience = 4;
  std::size_t average_from = 1;
  std::size_t checkpoint_every = 0;
  double lr = 0.1;
  double init_precision = 0.02;
  std::uint64_t seed = 0;
  bool no_validation = false;
  bool no_clamp = false;
  bool quiet = false;
};
CLI::App* add_train(CLI::App& app, TrainOptions& o);
int run_train(const TrainOptions& o, const CLI::App& command);

struct EvalOptions {
  std::string run;
  std::string checkpoint;
  std::string test;
  std::string data_dir;
  std::string predictor = "mean";
  std::string out;
  bool no_clamp = false;
};
CLI::App* add_eval(CLI::App& app, EvalOptions& o);
int run_eval(const EvalOptions& o);

struct ElicitOptions {
  std::vector<std::string> strategies{"random", "mean", "variance"};
  std::string data_dir;
  std::string out = "runs/elicit";
  std::size_t rounds = 5;
  std::size_t batch = 4;
  std::size_t seeds = 10;
  std::uint64_t seed = 0;
  std::size_t samples = 100;
  std::size_t dim = 5;
  std::size_t epochs = 1500;
  std::size_t train_samples = 1;
  double lr = 0.1;
  double user_lr = 0.1;
  std::size_t user_iterations = 500;
  std::size_t user_patience = 4;
  double observed_fraction = 0.8;
  std::size_t threads = 0;
};
CLI::App* add_elicit(CLI::App& app, ElicitOptions& o);
int run_elicit(const ElicitOptions& o, const CLI::App& command);

struct FetchOptions {
  std::vector<std::string> datasets{"ml100k"};
  std::string data_dir;
  std::string from_archive;
  std::string checksum;
  std::string base_url = "https://files.grouplens.org/datasets/movielens";
};
CLI::App* add_fetch(CLI::App& app, FetchOptions& o);
int run_fetch(const FetchOptions& o);

struct ServeOptions {
  std::string checkpoint;
  std::string items_file;
  std::string host = "127.0.0.1";
  int port = 8080;
  long ttl = 1800;
  std::uint64_t seed = 0;
  std::size_t samples = 100;
  std::size_t batch = 4;
  std::string log;
  std::string ui_dir;
  std::string predictor = "mean";
  std::string replay;
};
CLI::App* add_serve(CLI::App& app, ServeOptions& o);
int run_serve(const ServeOptions& o);

/// key=value lines of every option of `command`, readable with --config.
std::string config_snapshot(const CLI::App& command);

}  // namespace vfm::tools
