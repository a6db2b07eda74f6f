#include <doctest.h>

#include <atomic>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "oracles.hpp"
#include "vfm/server.hpp"

using namespace vfm;
using nlohmann::json;

namespace {

constexpr std::uint32_t kUsers = 2;

// Users at [0, 2), items at [2, 2 + items) with public ids 0..items-1.
std::shared_ptr<FrozenModel> service_model(std::size_t items, std::size_t d, std::uint64_t seed) {
  FeatureSpace space({{"user", 0, kUsers}, {"item", kUsers, static_cast<std::uint32_t>(kUsers + items)}});
  VariationalParams vp({kUsers + items, d, 2});
  vp.global(VariationalParams::kRhoW0) = softplus_inverse(0.05);
  vp.global(VariationalParams::kLambdaW0) = softplus_inverse(1.0);
  vp.global(VariationalParams::kAlpha) = softplus_inverse(1.0);
  for (std::uint32_t g = 1; g <= 2; ++g) {
    vp.lambda_w_raw(g) = softplus_inverse(1.0);
    for (auto& l : vp.lambda_v_raw(g)) l = softplus_inverse(1.0);
  }
  Rng rng(seed);
  std::normal_distribution<double> n;
  for (std::size_t k = 0; k < kUsers + items; ++k) {
    vp.rho_w(k) = softplus_inverse(0.2);
    for (auto& r : vp.rho_v(k)) r = softplus_inverse(0.2);
  }
  for (std::size_t k = kUsers; k < kUsers + items; ++k) {
    vp.mu_w(k) = 0.3 * n(rng);
    for (auto& m : vp.mu_v(k)) m = 1.5 * n(rng);
  }
  return std::make_shared<FrozenModel>(FrozenModel{space, vp});
}

ServiceOptions small_options(std::uint64_t seed = 1) {
  ServiceOptions o;
  o.seed = seed;
  o.samples = 100;
  o.ttl = std::chrono::seconds(0);
  return o;
}

ElicitService make_service(std::size_t items = 30, std::size_t d = 2, ServiceOptions options = small_options(),
                           ElicitService::Clock clock = {}) {
  auto model = service_model(items, d, 17);
  auto catalog = ItemCatalog::from_space(model->space);
  return ElicitService(model, std::move(catalog), options, std::move(clock));
}

HttpResponse post(ElicitService& s, const std::string& path, const json& body) {
  return s.handle({"POST", path, {}, body.dump()});
}

HttpResponse get(ElicitService& s, const std::string& path, std::map<std::string, std::string> query = {}) {
  return s.handle({"GET", path, std::move(query), ""});
}

std::string create(ElicitService& s, const std::string& strategy = "variance") {
  auto r = post(s, "/sessions", {{"strategy", strategy}});
  REQUIRE(r.status == 201);
  return r.body["session_id"].get<std::string>();
}

std::vector<std::int64_t> ids_of(const json& items) {
  std::vector<std::int64_t> out;
  for (const auto& q : items) out.push_back(q["item_id"].get<std::int64_t>());
  return out;
}

// A simulated user with a hidden latent vector answering like the model would.
struct ScriptedUser {
  std::vector<double> z;
  const VariationalParams* vp;

  int label(std::int64_t id) const {
    const std::size_t k = kUsers + static_cast<std::size_t>(id);
    double y = vp->mu_w(k);
    for (std::size_t f = 0; f < z.size(); ++f) y += z[f] * vp->mu_v(k)[f];
    return y > 0 ? 1 : 0;
  }
  json answers(const json& queries) const {
    json body = json::object();
    for (auto id : ids_of(queries)) body[std::to_string(id)] = label(id);
    return body;
  }
};

ScriptedUser scripted_user(const FrozenModel& model, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n;
  ScriptedUser u{std::vector<double>(model.params.dim()), &model.params};
  for (auto& x : u.z) x = n(rng);
  return u;
}

}  // namespace

TEST_CASE("catalog from the item group") {
  auto model = service_model(5, 1, 1);
  auto catalog = ItemCatalog::from_space(model->space);
  REQUIRE(catalog.items().size() == 5);
  CHECK(catalog.feature_of(0) == kUsers);
  CHECK(catalog.feature_of(4) == kUsers + 4);
  CHECK(!catalog.feature_of(5).has_value());
  std::istringstream titles("1|Toy Story (1995)|x\n9|Unknown|x\n");
  catalog.load_titles(titles);
  CHECK(catalog.by_feature(kUsers + 1).title == "Toy Story (1995)");
  CHECK(catalog.by_feature(kUsers).title == "item 0");
}

TEST_CASE("creating sessions") {
  auto service = make_service();
  auto r = post(service, "/sessions", {{"strategy", "variance"}});
  REQUIRE(r.status == 201);
  CHECK(r.body["first_queries"].size() == 4);
  CHECK(r.body["batch_size"] == 4);
  for (const auto& q : r.body["first_queries"]) CHECK(q.contains("title"));

  auto bad = post(service, "/sessions", {{"strategy", "entropy"}});
  CHECK(bad.status == 400);
  CHECK(bad.body.contains("error"));
  CHECK(service.handle({"POST", "/sessions", {}, "{not json"}).status == 400);
  CHECK(post(service, "/sessions", {{"strategy", "random"}, {"batch_size", 0}}).status == 400);
  CHECK(post(service, "/sessions", {{"strategy", "random"}, {"batch_size", 31}}).status == 400);
  auto eight = post(service, "/sessions", {{"strategy", "mean"}, {"batch_size", 8}});
  CHECK(eight.body["first_queries"].size() == 8);

  std::set<std::string> ids;
  for (int i = 0; i < 20; ++i) ids.insert(create(service, "random"));
  CHECK(ids.size() == 20);
  CHECK(service.session_count() == 22);
}

TEST_CASE("routing errors") {
  auto service = make_service();
  auto id = create(service);
  CHECK(get(service, "/health").status == 200);
  CHECK(get(service, "/nothing").status == 404);
  CHECK(get(service, "/sessions").status == 405);
  CHECK(service.handle({"PUT", "/sessions/" + id, {}, ""}).status == 405);
  CHECK(get(service, "/sessions/" + id + "/answers").status == 405);
  CHECK(get(service, "/sessions/" + id + "/other").status == 404);
  CHECK(get(service, "/sessions/" + id + "/predictions", {{"sort", "alphabetic"}}).status == 400);
}

TEST_CASE("answering all pending items gives the next batch") {
  auto service = make_service();
  auto created = post(service, "/sessions", {{"strategy", "variance"}});
  const auto id = created.body["session_id"].get<std::string>();
  json body = json::object();
  for (auto item : ids_of(created.body["first_queries"])) body[std::to_string(item)] = 1;
  auto r = post(service, "/sessions/" + id + "/answers", body);
  REQUIRE(r.status == 200);
  CHECK(r.body["next_queries"].size() == 4);
  const auto& summary = r.body["user_state_summary"];
  CHECK(summary["answered"] == 4);
  CHECK(summary["pending"] == 4);
  CHECK(summary["remaining"] == 30 - 8);
  CHECK(summary["most_certain"].size() == 5);
  CHECK(summary["least_certain"].size() == 5);
  CHECK(summary["mean_variance"].get<double>() > 0.0);

  std::set<std::int64_t> first, next;
  for (auto i : ids_of(created.body["first_queries"])) first.insert(i);
  for (auto i : ids_of(r.body["next_queries"])) CHECK(!first.count(i));

  // Partial answers keep the rest of the batch pending.
  auto pending = ids_of(r.body["next_queries"]);
  auto partial = post(service, "/sessions/" + id + "/answers", {{std::to_string(pending[0]), false}});
  REQUIRE(partial.status == 200);
  CHECK(ids_of(partial.body["next_queries"]) == std::vector<std::int64_t>(pending.begin() + 1, pending.end()));
}

TEST_CASE("answer errors") {
  auto service = make_service();
  auto created = post(service, "/sessions", {{"strategy", "random"}});
  const auto id = created.body["session_id"].get<std::string>();
  const auto queried = ids_of(created.body["first_queries"]);
  std::int64_t other = 0;
  while (std::find(queried.begin(), queried.end(), other) != queried.end()) ++other;

  CHECK(post(service, "/sessions/" + id + "/answers", {{std::to_string(other), 1}}).status == 409);
  CHECK(post(service, "/sessions/" + id + "/answers", {{"999", 1}}).status == 409);
  CHECK(post(service, "/sessions/unknown/answers", {{std::to_string(queried[0]), 1}}).status == 404);
  CHECK(post(service, "/sessions/" + id + "/answers", {{std::to_string(queried[0]), 2}}).status == 400);
  CHECK(post(service, "/sessions/" + id + "/answers", {{std::to_string(queried[0]), "yes"}}).status == 400);
  CHECK(post(service, "/sessions/" + id + "/answers", {{"abc", 1}}).status == 400);
  CHECK(post(service, "/sessions/" + id + "/answers", json::object()).status == 400);
  CHECK(service.handle({"POST", "/sessions/" + id + "/answers", {}, "[1,"}).status == 400);

  // A rejected batch reveals nothing, even when part of it was valid.
  json mixed = {{std::to_string(queried[0]), 1}, {std::to_string(other), 0}};
  CHECK(post(service, "/sessions/" + id + "/answers", mixed).status == 409);
  auto state = get(service, "/sessions/" + id);
  CHECK(state.body["answered"].empty());
  CHECK(state.body["pending"].size() == 4);

  // Answering twice: the second is no longer pending.
  CHECK(post(service, "/sessions/" + id + "/answers", {{std::to_string(queried[0]), 1}}).status == 200);
  CHECK(post(service, "/sessions/" + id + "/answers", {{std::to_string(queried[0]), 1}}).status == 409);
}

TEST_CASE("predictions cover the unrevealed items in either order") {
  auto service = make_service();
  auto created = post(service, "/sessions", {{"strategy", "mean"}});
  const auto id = created.body["session_id"].get<std::string>();
  const auto q = ids_of(created.body["first_queries"]);
  REQUIRE(post(service, "/sessions/" + id + "/answers", {{std::to_string(q[0]), 1}, {std::to_string(q[1]), 0}})
              .status == 200);

  auto by_conf = get(service, "/sessions/" + id + "/predictions", {{"sort", "confidence"}});
  auto by_risk = get(service, "/sessions/" + id + "/predictions", {{"sort", "risk"}});
  REQUIRE(by_conf.status == 200);
  REQUIRE(by_risk.status == 200);
  auto a = ids_of(by_conf.body["items"]), b = ids_of(by_risk.body["items"]);
  CHECK(a.size() == 28);
  CHECK(std::multiset<std::int64_t>(a.begin(), a.end()) == std::multiset<std::int64_t>(b.begin(), b.end()));
  CHECK(a != b);
  for (std::size_t i = 1; i < a.size(); ++i) {
    CHECK(by_conf.body["items"][i - 1]["mean_prob"] >= by_conf.body["items"][i]["mean_prob"]);
    CHECK(by_risk.body["items"][i - 1]["variance"] >= by_risk.body["items"][i]["variance"]);
  }
  for (auto id_answered : {q[0], q[1]}) CHECK(std::find(a.begin(), a.end(), id_answered) == a.end());
  CHECK(get(service, "/sessions/nope/predictions").status == 404);
}

TEST_CASE("d = 0: predictive variance is uniform up to the item bias variance") {
  // y = w0 + w_u + w_i with independent Gaussians, so var_i = s0^2 + su^2 + si^2.
  const std::size_t items = 12;
  auto model = service_model(items, 0, 5);
  Rng rng(9);
  std::uniform_real_distribution<double> scale(0.1, 1.5);
  std::vector<double> item_sd(items);
  for (std::size_t i = 0; i < items; ++i) {
    item_sd[i] = scale(rng);
    model->params.rho_w(kUsers + i) = softplus_inverse(item_sd[i]);
  }
  const double s0 = model->params.sigma_w0();
  const double su = 1.0;  // user group prior precision 1
  auto options = small_options();
  options.samples = 20000;
  ElicitService service(model, ItemCatalog::from_space(model->space), options);
  auto id = create(service);
  auto r = get(service, "/sessions/" + id + "/predictions", {{"sort", "risk"}});
  REQUIRE(r.body["items"].size() == items);
  for (const auto& item : r.body["items"]) {
    const auto i = item["item_id"].get<std::size_t>();
    const double expected = s0 * s0 + su * su + item_sd[i] * item_sd[i];
    const double se = expected * std::sqrt(2.0 / (options.samples - 1));
    CAPTURE(i);
    CHECK(std::abs(item["variance"].get<double>() - expected) <= 4 * se);
  }
}

TEST_CASE("mean pool variance after answers does not exceed the fresh session's") {
  auto model = service_model(30, 2, 17);
  double before = 0.0, after = 0.0;
  for (std::uint64_t run = 0; run < 20; ++run) {
    ElicitService service(model, ItemCatalog::from_space(model->space), small_options(100 + run));
    auto user = scripted_user(*model, 1000 + run);
    auto created = post(service, "/sessions", {{"strategy", "variance"}});
    const auto id = created.body["session_id"].get<std::string>();
    before += get(service, "/sessions/" + id).body["user_state_summary"]["mean_variance"].get<double>();
    auto r = post(service, "/sessions/" + id + "/answers", user.answers(created.body["first_queries"]));
    REQUIRE(r.status == 200);
    after += r.body["user_state_summary"]["mean_variance"].get<double>();
  }
  CHECK(after / 20 <= before / 20);
}

TEST_CASE("scripted client: five rounds of four answers") {
  auto model = service_model(30, 2, 17);
  int improved = 0;
  for (std::uint64_t run = 0; run < 10; ++run) {
    ElicitService service(model, ItemCatalog::from_space(model->space), small_options(200 + run));
    auto user = scripted_user(*model, 2000 + run);
    auto created = post(service, "/sessions", {{"strategy", "variance"}});
    const auto id = created.body["session_id"].get<std::string>();
    json queries = created.body["first_queries"];
    std::vector<double> variance;
    for (int round = 0; round < 5; ++round) {
      REQUIRE(queries.size() == 4);
      auto r = post(service, "/sessions/" + id + "/answers", user.answers(queries));
      REQUIRE(r.status == 200);
      variance.push_back(r.body["user_state_summary"]["mean_variance"].get<double>());
      queries = r.body["next_queries"];
    }
    CHECK(get(service, "/sessions/" + id).body["answered"].size() == 20);
    improved += variance[4] < variance[0];
  }
  CHECK(improved >= 8);
}

TEST_CASE("sessions are isolated under random interleavings") {
  // Each session follows a fixed script. Running the scripts back to back and
  // interleaved at random must give every session the same responses.
  auto model = service_model(30, 2, 17);
  const std::size_t n_sessions = 3;
  auto run = [&](std::uint64_t interleave_seed) {
    ElicitService service(model, ItemCatalog::from_space(model->space), small_options(7));
    std::vector<std::string> ids;
    std::vector<json> queries;
    const char* strategies[] = {"variance", "mean", "random"};
    for (std::size_t s = 0; s < n_sessions; ++s) {
      auto r = post(service, "/sessions", {{"strategy", strategies[s]}});
      ids.push_back(r.body["session_id"]);
      queries.push_back(r.body["first_queries"]);
    }
    std::vector<std::vector<json>> responses(n_sessions);
    std::vector<int> steps(n_sessions, 0);
    std::vector<std::size_t> order;
    for (std::size_t s = 0; s < n_sessions; ++s) order.insert(order.end(), 6, s);
    if (interleave_seed != 0) {
      Rng rng(interleave_seed);
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (auto s : order) {
      auto user = scripted_user(*model, 50 + s);
      HttpResponse r;
      if (steps[s]++ % 2 == 0) {
        r = post(service, "/sessions/" + ids[s] + "/answers", user.answers(queries[s]));
        queries[s] = r.body["next_queries"];
      } else {
        r = get(service, "/sessions/" + ids[s] + "/predictions", {{"sort", "risk"}});
      }
      responses[s].push_back({{"status", r.status}, {"body", r.body}});
    }
    return responses;
  };
  const auto sequential = run(0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CAPTURE(seed);
    CHECK(run(seed) == sequential);
  }
}

TEST_CASE("concurrent answers to one session are serialized") {
  auto service = make_service();
  for (int trial = 0; trial < 5; ++trial) {
    auto created = post(service, "/sessions", {{"strategy", "random"}});
    const auto id = created.body["session_id"].get<std::string>();
    json body = json::object();
    for (auto item : ids_of(created.body["first_queries"])) body[std::to_string(item)] = 1;

    std::atomic<int> ok = 0, conflict = 0;
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&] {
        auto r = post(service, "/sessions/" + id + "/answers", body);
        if (r.status == 200) ++ok;
        if (r.status == 409) ++conflict;
      });
    }
    for (auto& t : threads) t.join();
    CHECK(ok == 1);
    CHECK(conflict == 3);
    auto state = get(service, "/sessions/" + id);
    CHECK(state.body["answered"].size() == 4);
    CHECK(state.body["pending"].size() == 4);
  }
}

TEST_CASE("idle sessions expire after the TTL") {
  auto now = std::make_shared<std::chrono::steady_clock::time_point>();
  auto options = small_options();
  options.ttl = std::chrono::seconds(60);
  auto service = make_service(30, 2, options, [now] { return *now; });
  std::ostringstream log;
  service.set_request_log(&log);

  auto idle = create(service);
  auto active = create(service);
  *now += std::chrono::seconds(40);
  CHECK(get(service, "/sessions/" + active).status == 200);
  *now += std::chrono::seconds(30);  // idle: 70 s, active: 30 s
  CHECK(get(service, "/sessions/" + idle).status == 404);
  CHECK(get(service, "/sessions/" + active).status == 200);
  CHECK(service.session_count() == 1);
  CHECK(log.str().find("{\"expire\":\"" + idle + "\"}") != std::string::npos);

  *now += std::chrono::seconds(61);
  CHECK(service.expire_idle() == 1);
  CHECK(service.session_count() == 0);
}

TEST_CASE("deleting a session") {
  auto service = make_service();
  auto id = create(service);
  CHECK(service.handle({"DELETE", "/sessions/" + id, {}, ""}).status == 200);
  CHECK(get(service, "/sessions/" + id).status == 404);
  CHECK(service.session_count() == 0);
}

TEST_CASE("replaying a request log reproduces every response") {
  auto now = std::make_shared<std::chrono::steady_clock::time_point>();
  auto options = small_options(33);
  options.ttl = std::chrono::seconds(100);
  auto model = service_model(30, 2, 17);
  std::ostringstream log;
  {
    ElicitService service(model, ItemCatalog::from_space(model->space), options, [now] { return *now; });
    service.set_request_log(&log);
    auto a = create(service, "variance");
    auto b = create(service, "mean");
    auto user = scripted_user(*model, 5);
    auto qa = get(service, "/sessions/" + a).body["pending"];
    auto ra = post(service, "/sessions/" + a + "/answers", user.answers(qa));
    get(service, "/sessions/" + a + "/predictions", {{"sort", "confidence"}});
    post(service, "/sessions/" + b + "/answers", {{"12345", 1}});
    post(service, "/sessions", {{"strategy", "bogus"}});
    *now += std::chrono::seconds(150);
    auto c = create(service, "random");  // a and b expire here
    get(service, "/sessions/" + a);
    auto qc = get(service, "/sessions/" + c).body["pending"];
    post(service, "/sessions/" + c + "/answers", user.answers(qc));
  }
  const auto text = log.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 13);

  options.ttl = std::chrono::seconds(0);
  ElicitService fresh(model, ItemCatalog::from_space(model->space), options);
  std::istringstream in(text);
  auto mismatches = replay_log(fresh, in);
  for (const auto& m : mismatches) {
    CAPTURE(m.line);
    CAPTURE(m.expected.dump());
    CAPTURE(m.actual.dump());
    CHECK(false);
  }
  CHECK(mismatches.empty());

  // A different seed gives a different service; replay notices.
  options.seed = 34;
  ElicitService other(model, ItemCatalog::from_space(model->space), options);
  std::istringstream again(text);
  CHECK(!replay_log(other, again).empty());
}

TEST_CASE("HTTP round trip") {
  auto service = make_service();
  httplib::Server server;
  mount(server, service);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

  auto created = client.Post("/sessions", R"({"strategy": "variance", "batch_size": 3})", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  auto body = json::parse(created->body);
  const auto id = body["session_id"].get<std::string>();
  CHECK(body["first_queries"].size() == 3);

  json answers = json::object();
  for (auto item : ids_of(body["first_queries"])) answers[std::to_string(item)] = true;
  auto answered = client.Post("/sessions/" + id + "/answers", answers.dump(), "application/json");
  REQUIRE(answered);
  CHECK(answered->status == 200);
  CHECK(json::parse(answered->body)["next_queries"].size() == 3);

  auto preds = client.Get("/sessions/" + id + "/predictions?sort=risk");
  REQUIRE(preds);
  CHECK(json::parse(preds->body)["items"].size() == 27);
  CHECK(client.Get("/sessions/zzz")->status == 404);
  auto options = client.Options("/sessions");
  REQUIRE(options);
  CHECK(options->status == 204);
  CHECK(client.Delete("/sessions/" + id)->status == 200);

  server.stop();
  thread.join();
}
