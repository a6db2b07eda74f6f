#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <httplib.h>

#include "commands.hpp"
#include "vfm/checkpoint.hpp"
#include "vfm/experiment.hpp"
#include "vfm/server.hpp"

namespace vfm::tools {

namespace fs = std::filesystem;

CLI::App* add_serve(CLI::App& app, ServeOptions& o) {
  auto* cmd = app.add_subcommand("serve", "HTTP service for live elicitation sessions");
  cmd->add_option("--checkpoint", o.checkpoint, "Trained classification checkpoint")->required();
  cmd->add_option("--items-file", o.items_file, "MovieLens item file with titles");
  cmd->add_option("--host", o.host, "Listen address")->capture_default_str();
  cmd->add_option("--port", o.port, "Listen port, 0 for any free port")->capture_default_str();
  cmd->add_option("--ttl", o.ttl, "Idle seconds before a session expires, 0 never")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Root seed for sessions")->capture_default_str();
  cmd->add_option("--samples", o.samples, "Posterior samples per prediction")->check(CLI::Range(2, 1000000))
      ->capture_default_str();
  cmd->add_option("--batch", o.batch, "Default query batch size")->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--log", o.log, "Append every request and response as JSON lines");
  cmd->add_option("--ui-dir", o.ui_dir, "Static files served under /ui");
  cmd->add_option("--predictor", o.predictor, "Parameters to freeze")
      ->check(CLI::IsMember({"last", "mean"}))
      ->capture_default_str();
  cmd->add_option("--replay", o.replay, "Replay a request log against a fresh service and exit");
  return cmd;
}

namespace {

httplib::Server* g_server = nullptr;

extern "C" void stop_server(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int run_serve(const ServeOptions& o) {
  if (!fs::is_regular_file(o.checkpoint)) throw MissingInput(o.checkpoint);
  auto ckpt = load_checkpoint(o.checkpoint);
  if (ckpt.task != Task::Classification) {
    throw UsageError("elicitation needs a classification checkpoint");
  }
  const auto predictor = parse_predictor(o.predictor);
  if (predictor == Predictor::Mean && !ckpt.averaged) {
    throw std::runtime_error("checkpoint has no averaged parameters; use --predictor last");
  }
  auto model = std::make_shared<const FrozenModel>(
      FrozenModel{ckpt.space, predictor == Predictor::Mean ? *ckpt.averaged : ckpt.last});
  auto catalog = ItemCatalog::from_space(model->space);
  if (!o.items_file.empty()) {
    if (!fs::is_regular_file(o.items_file)) throw MissingInput(o.items_file);
    std::ifstream in(o.items_file, std::ios::binary);
    catalog.load_titles(in);
  }

  ServiceOptions options;
  options.ttl = std::chrono::seconds(o.replay.empty() ? o.ttl : 0);
  options.seed = o.seed;
  options.samples = o.samples;
  options.default_batch = o.batch;
  ElicitService service(model, std::move(catalog), options);

  if (!o.replay.empty()) {
    if (!fs::is_regular_file(o.replay)) throw MissingInput(o.replay);
    std::ifstream in(o.replay);
    const auto mismatches = replay_log(service, in);
    for (const auto& m : mismatches) {
      std::cout << "line " << m.line << ": expected " << m.expected.dump() << "\n         got "
                << m.actual.dump() << '\n';
    }
    std::cout << (mismatches.empty() ? "replay matched every response\n" : "replay differs\n");
    return mismatches.empty() ? 0 : 1;
  }

  std::ofstream log;
  if (!o.log.empty()) {
    log.open(o.log, std::ios::app);
    if (!log) throw std::runtime_error("cannot open " + o.log);
    service.set_request_log(&log);
  }

  httplib::Server server;
  if (!o.ui_dir.empty()) {
    if (!fs::is_directory(o.ui_dir)) throw MissingInput(o.ui_dir);
    server.set_mount_point("/ui", o.ui_dir);
  }
  mount(server, service);
  const int port = o.port == 0 ? server.bind_to_any_port(o.host) : (server.bind_to_port(o.host, o.port) ? o.port : -1);
  if (port < 0) throw std::runtime_error("cannot listen on " + o.host + ":" + std::to_string(o.port));
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  std::cout << "listening on http://" << o.host << ':' << port << " (" << service.catalog().items().size()
            << " items)" << std::endl;
  server.listen_after_bind();
  g_server = nullptr;
  return 0;
}

}  // namespace vfm::tools
