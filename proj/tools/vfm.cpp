#include <cstdlib>
#include <iostream>

#include "commands.hpp"
#include "vfm/experiment.hpp"
#include "vfm/metrics.hpp"

namespace vfm::tools {

std::string default_data_dir() {
  if (const char* env = std::getenv("VFM_DATA_DIR"); env && *env) return env;
  return VFM_DEFAULT_DATA_DIR;
}

std::string config_snapshot(const CLI::App& command) {
  // Keys carry the command name so the root --config routes them.
  std::string text = command.config_to_str(true, false);
  std::string out, line;
  std::istringstream in(text);
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '[' || line[0] == '#') continue;
    out += command.get_name() + "." + line + '\n';
  }
  return out;
}

}  // namespace vfm::tools

int main(int argc, char** argv) {
  using namespace vfm::tools;
  CLI::App app{"Variational factorization machines: training, evaluation and preference elicitation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Read options from a file such as a run's config.snapshot");

  TrainOptions train;
  EvalOptions eval;
  ElicitOptions elicit;
  FetchOptions fetch;
  ServeOptions serve;
  auto* train_cmd = add_train(app, train);
  auto* eval_cmd = add_eval(app, eval);
  auto* elicit_cmd = add_elicit(app, elicit);
  auto* fetch_cmd = add_fetch(app, fetch);
  auto* serve_cmd = add_serve(app, serve);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train_cmd->parsed()) return run_train(train, *train_cmd);
    if (eval_cmd->parsed()) return run_eval(eval);
    if (elicit_cmd->parsed()) return run_elicit(elicit, *elicit_cmd);
    if (fetch_cmd->parsed()) return run_fetch(fetch);
    if (serve_cmd->parsed()) return run_serve(serve);
  } catch (const vfm::MissingInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const vfm::MetricError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
