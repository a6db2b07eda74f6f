#include "vfm/server.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <set>
#include <sstream>

#include <httplib.h>

namespace vfm {

using nlohmann::json;

// Catalog -------------------------------------------------------------------------

ItemCatalog ItemCatalog::from_space(const FeatureSpace& space, std::string_view group) {
  std::uint32_t g = 0;
  for (std::uint32_t i = 1; i <= space.num_groups(); ++i) {
    if (space.group(i).name == group) g = i;
  }
  if (g == 0) {
    if (space.num_groups() < 2) throw std::invalid_argument("feature space has no item group");
    g = 2;
  }
  const auto& range = space.group(g);
  ItemCatalog catalog;
  for (std::uint32_t f = range.begin; f < range.end; ++f) {
    const std::int64_t id = f - range.begin;
    catalog.by_id_[id] = catalog.items_.size();
    catalog.by_feature_[f] = catalog.items_.size();
    catalog.items_.push_back({f, id, "item " + std::to_string(id)});
  }
  return catalog;
}

void ItemCatalog::load_titles(std::istream& in) {
  for (auto& [id, title] : read_movielens_items(in)) {
    auto it = by_id_.find(id);
    if (it != by_id_.end()) items_[it->second].title = std::move(title);
  }
}

std::vector<std::uint32_t> ItemCatalog::features() const {
  std::vector<std::uint32_t> out;
  out.reserve(items_.size());
  for (const auto& item : items_) out.push_back(item.feature);
  return out;
}

std::optional<std::uint32_t> ItemCatalog::feature_of(std::int64_t id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return items_[it->second].feature;
}

const CatalogItem& ItemCatalog::by_feature(std::uint32_t feature) const {
  return items_.at(by_feature_.at(feature));
}

// Service ---------------------------------------------------------------------------

namespace {

HttpResponse error(int status, std::string message) {
  return {status, json{{"error", std::move(message)}}};
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream in(path);
  std::string part;
  while (std::getline(in, part, '/')) {
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

std::string hex_id(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct ItemStats {
  std::uint32_t feature;
  PredictiveStats stats;
};

}  // namespace

ElicitService::ElicitService(std::shared_ptr<const FrozenModel> model, ItemCatalog catalog,
                             ServiceOptions options, Clock clock)
    : model_(std::move(model)),
      catalog_(std::move(catalog)),
      options_(options),
      clock_(clock ? std::move(clock) : Clock([] { return std::chrono::steady_clock::now(); })) {
  if (!model_) throw std::invalid_argument("service needs a model");
  if (catalog_.items().empty()) throw std::invalid_argument("item catalog is empty");
  if (options_.samples < 2) throw std::invalid_argument("need at least two samples");
  const auto& space = model_->space;
  std::uint32_t user_group = 1;
  for (std::uint32_t g = 1; g <= space.num_groups(); ++g) {
    if (space.group(g).name == "user") user_group = g;
  }
  // Live users are new: any feature of the user group gives the group prior.
  user_feature_ = space.group(user_group).begin;
}

void ElicitService::set_request_log(std::ostream* log) {
  std::lock_guard lock(log_mutex_);
  log_ = log;
}

std::size_t ElicitService::session_count() const {
  std::lock_guard lock(table_mutex_);
  return sessions_.size();
}

std::size_t ElicitService::expire_idle() {
  std::lock_guard lock(table_mutex_);
  return expire_idle_locked();
}

std::size_t ElicitService::expire_idle_locked() {
  if (options_.ttl.count() <= 0) return 0;
  const auto now = clock_();
  std::size_t dropped = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    auto& s = *it->second;
    std::unique_lock session_lock(s.mutex, std::try_to_lock);
    // A session busy with a request is in use, not idle.
    if (session_lock.owns_lock() && now - s.last_used > options_.ttl) {
      s.closed = true;
      log_expiry(it->first);
      it = sessions_.erase(it);
      ++dropped;
    } else {
      ++it;
    }
  }
  return dropped;
}

bool ElicitService::drop_session(const std::string& id) {
  std::shared_ptr<Session> s;
  {
    std::lock_guard lock(table_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return false;
    s = it->second;
    sessions_.erase(it);
  }
  std::lock_guard session_lock(s->mutex);
  s->closed = true;
  return true;
}

std::shared_ptr<ElicitService::Session> ElicitService::find(const std::string& id) {
  std::lock_guard lock(table_mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

HttpResponse ElicitService::handle(const HttpRequest& request) {
  {
    std::lock_guard lock(table_mutex_);
    expire_idle_locked();
  }
  const auto parts = split_path(request.path);
  if (parts.size() == 1 && parts[0] == "health") {
    if (request.method != "GET") return error(405, "method not allowed");
    return {200, json{{"status", "ok"}, {"sessions", session_count()},
                      {"items", catalog_.items().size()}, {"dim", model_->params.dim()}}};
  }
  if (parts.empty() || parts[0] != "sessions" || parts.size() > 3) {
    return error(404, "no route for " + request.path);
  }
  if (parts.size() == 1) {
    if (request.method != "POST") return error(405, "method not allowed");
    // Creation holds the table lock so ids follow log order.
    std::lock_guard lock(table_mutex_);
    auto response = create_session(request);
    log(request, response);
    return response;
  }

  auto session = find(parts[1]);
  if (!session) {
    auto response = error(404, "unknown session " + parts[1]);
    std::lock_guard lock(table_mutex_);
    log(request, response);
    return response;
  }
  std::lock_guard session_lock(session->mutex);
  HttpResponse response;
  if (session->closed) {
    response = error(404, "unknown session " + parts[1]);
  } else if (parts.size() == 2) {
    if (request.method == "GET") {
      response = describe(*session);
    } else if (request.method == "DELETE") {
      {
        std::lock_guard lock(table_mutex_);
        sessions_.erase(session->id);
      }
      session->closed = true;
      response = {200, json{{"deleted", session->id}}};
    } else {
      response = error(405, "method not allowed");
    }
  } else if (parts[2] == "answers") {
    response = request.method == "POST" ? answer(*session, request)
                                        : error(405, "method not allowed");
  } else if (parts[2] == "predictions") {
    response = request.method == "GET" ? predictions(*session, request)
                                       : error(405, "method not allowed");
  } else {
    response = error(404, "no route for " + request.path);
  }
  session->last_used = clock_();
  log(request, response);
  return response;
}

HttpResponse ElicitService::create_session(const HttpRequest& request) {
  json body;
  try {
    body = request.body.empty() ? json::object() : json::parse(request.body);
  } catch (const json::parse_error& e) {
    return error(400, std::string("malformed JSON: ") + e.what());
  }
  if (!body.is_object()) return error(400, "request body must be a JSON object");
  if (!body.contains("strategy") || !body["strategy"].is_string()) {
    return error(400, "missing \"strategy\" (random, mean or variance)");
  }
  Strategy strategy;
  try {
    strategy = parse_strategy(body["strategy"].get<std::string>());
  } catch (const std::invalid_argument& e) {
    return error(400, e.what());
  }
  std::size_t batch = options_.default_batch;
  if (body.contains("batch_size")) {
    if (!body["batch_size"].is_number_integer() || body["batch_size"].get<long long>() < 1) {
      return error(400, "batch_size must be a positive integer");
    }
    batch = body["batch_size"].get<std::size_t>();
  }
  if (batch > options_.max_batch || batch > catalog_.items().size()) {
    return error(400, "batch_size too large");
  }

  ++created_;
  auto s = std::make_shared<Session>();
  s->id = hex_id(mix64(derive_seed(options_.seed, "session-id") + created_));
  s->batch_size = batch;
  s->state = std::make_unique<ElicitationSession>(
      model_, user_feature_, catalog_.features(), strategy, options_.samples, options_.update,
      derive_seed(derive_seed(options_.seed, "session"), created_));
  s->last_used = clock_();
  json queries = json::array();
  for (auto f : s->state->select_queries(batch)) queries.push_back(item_json(f));
  sessions_[s->id] = s;
  return {201, json{{"session_id", s->id},
                    {"strategy", to_string(strategy)},
                    {"batch_size", batch},
                    {"first_queries", std::move(queries)}}};
}

json ElicitService::item_json(std::uint32_t feature) const {
  const auto& item = catalog_.by_feature(feature);
  return json{{"item_id", item.id}, {"title", item.title}};
}

json ElicitService::next_queries(Session& session) {
  auto& state = *session.state;
  json out = json::array();
  if (state.pending().empty()) {
    const std::size_t left = state.pool().size() - state.queried().size();
    const std::size_t count = std::min(session.batch_size, left);
    if (count > 0) state.select_queries(count);
  }
  for (auto f : state.pending()) out.push_back(item_json(f));
  return out;
}

json ElicitService::summary(Session& session) {
  auto& state = *session.state;
  std::set<std::uint32_t> revealed;
  for (const auto& a : state.revealed()) revealed.insert(a.item);
  std::vector<ItemStats> stats;
  double total_variance = 0.0;
  for (auto f : state.pool()) {
    if (revealed.count(f)) continue;
    stats.push_back({f, state.predictive_stats(f)});
    total_variance += stats.back().stats.variance;
  }
  std::sort(stats.begin(), stats.end(), [](const ItemStats& a, const ItemStats& b) {
    return a.stats.variance != b.stats.variance ? a.stats.variance < b.stats.variance
                                                : a.feature < b.feature;
  });
  auto entry = [&](const ItemStats& s) {
    json j = item_json(s.feature);
    j["mean_prob"] = s.stats.mean_prob;
    j["variance"] = s.stats.variance;
    return j;
  };
  json certain = json::array(), uncertain = json::array();
  const std::size_t k = std::min(options_.top_k, stats.size());
  for (std::size_t i = 0; i < k; ++i) {
    certain.push_back(entry(stats[i]));
    uncertain.push_back(entry(stats[stats.size() - 1 - i]));
  }

  const auto u = state.user_block();
  const std::size_t d = model_->params.dim();
  json mu_v = json::array(), sigma_v = json::array();
  for (std::size_t f = 0; f < d; ++f) {
    mu_v.push_back(u[2 + f]);
    sigma_v.push_back(softplus(u[2 + d + f]));
  }
  return json{
      {"answered", state.revealed().size()},
      {"pending", state.pending().size()},
      {"remaining", state.pool().size() - state.queried().size()},
      {"mean_variance", stats.empty() ? 0.0 : total_variance / static_cast<double>(stats.size())},
      {"most_certain", std::move(certain)},
      {"least_certain", std::move(uncertain)},
      {"user", {{"mu_w", u[0]}, {"sigma_w", softplus(u[1])}, {"mu_v", mu_v}, {"sigma_v", sigma_v}}}};
}

HttpResponse ElicitService::answer(Session& session, const HttpRequest& request) {
  json body;
  try {
    body = json::parse(request.body);
  } catch (const json::parse_error& e) {
    return error(400, std::string("malformed JSON: ") + e.what());
  }
  if (!body.is_object() || body.empty()) {
    return error(400, "body must be a non-empty object {item_id: label}");
  }
  std::vector<Answer> answers;
  for (const auto& [key, value] : body.items()) {
    std::int64_t id = 0;
    const auto [end, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
    if (ec != std::errc() || end != key.data() + key.size()) {
      return error(400, "item id '" + key + "' is not an integer");
    }
    double label;
    if (value.is_boolean()) {
      label = value.get<bool>() ? 1.0 : 0.0;
    } else if (value.is_number()) {
      label = value.get<double>();
    } else {
      return error(400, "label for item " + key + " must be 0 or 1");
    }
    if (label != 0.0 && label != 1.0) return error(400, "label for item " + key + " must be 0 or 1");
    auto feature = catalog_.feature_of(id);
    if (!feature) return error(409, "item " + key + " was not queried");
    answers.push_back({*feature, label});
  }
  try {
    session.state->reveal_and_update(answers);
  } catch (const std::invalid_argument& e) {
    return error(400, e.what());
  } catch (const std::logic_error& e) {
    return error(409, e.what());
  }
  json next = next_queries(session);
  return {200, json{{"session_id", session.id},
                    {"next_queries", std::move(next)},
                    {"user_state_summary", summary(session)}}};
}

HttpResponse ElicitService::predictions(Session& session, const HttpRequest& request) {
  std::string sort = "confidence";
  if (auto it = request.query.find("sort"); it != request.query.end()) sort = it->second;
  if (sort != "confidence" && sort != "risk") {
    return error(400, "sort must be confidence or risk");
  }
  auto& state = *session.state;
  std::set<std::uint32_t> revealed;
  for (const auto& a : state.revealed()) revealed.insert(a.item);
  std::vector<ItemStats> stats;
  for (auto f : state.pool()) {
    if (!revealed.count(f)) stats.push_back({f, state.predictive_stats(f)});
  }
  // confidence: most likely first; risk: most uncertain first.
  std::sort(stats.begin(), stats.end(), [&](const ItemStats& a, const ItemStats& b) {
    const double ka = sort == "confidence" ? a.stats.mean_prob : a.stats.variance;
    const double kb = sort == "confidence" ? b.stats.mean_prob : b.stats.variance;
    return ka != kb ? ka > kb : a.feature < b.feature;
  });
  json items = json::array();
  for (const auto& s : stats) {
    json j = item_json(s.feature);
    j["mean_prob"] = s.stats.mean_prob;
    j["variance"] = s.stats.variance;
    items.push_back(std::move(j));
  }
  return {200, json{{"session_id", session.id}, {"sort", sort}, {"items", std::move(items)}}};
}

HttpResponse ElicitService::describe(Session& session) {
  auto& state = *session.state;
  json pending = json::array(), answered = json::array();
  for (auto f : state.pending()) pending.push_back(item_json(f));
  for (const auto& a : state.revealed()) {
    json j = item_json(a.item);
    j["label"] = static_cast<int>(a.label);
    answered.push_back(std::move(j));
  }
  return {200, json{{"session_id", session.id},
                    {"strategy", to_string(state.strategy())},
                    {"batch_size", session.batch_size},
                    {"pending", std::move(pending)},
                    {"answered", std::move(answered)},
                    {"user_state_summary", summary(session)}}};
}

void ElicitService::log(const HttpRequest& request, const HttpResponse& response) {
  std::lock_guard lock(log_mutex_);
  if (!log_) return;
  json entry = {{"request",
                 {{"method", request.method},
                  {"path", request.path},
                  {"query", request.query},
                  {"body", request.body}}},
                {"response", {{"status", response.status}, {"body", response.body}}}};
  *log_ << entry.dump() << '\n';
  log_->flush();
}

void ElicitService::log_expiry(const std::string& id) {
  std::lock_guard lock(log_mutex_);
  if (!log_) return;
  *log_ << json{{"expire", id}}.dump() << '\n';
  log_->flush();
}

std::vector<ReplayMismatch> replay_log(ElicitService& service, std::istream& log) {
  std::vector<ReplayMismatch> mismatches;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(log, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json entry = json::parse(line);
    if (entry.contains("expire")) {
      service.drop_session(entry["expire"].get<std::string>());
      continue;
    }
    const auto& r = entry.at("request");
    HttpRequest request{r.at("method").get<std::string>(), r.at("path").get<std::string>(),
                        r.at("query").get<std::map<std::string, std::string>>(),
                        r.at("body").get<std::string>()};
    const auto response = service.handle(request);
    const json actual = {{"status", response.status}, {"body", response.body}};
    if (actual != entry.at("response")) mismatches.push_back({lineno, entry.at("response"), actual});
  }
  return mismatches;
}

void mount(httplib::Server& server, ElicitService& service) {
  auto handler = [&service](const httplib::Request& req, httplib::Response& res) {
    HttpRequest request;
    request.method = req.method;
    request.path = req.path;
    for (const auto& [k, v] : req.params) request.query[k] = v;
    request.body = req.body;
    HttpResponse response;
    try {
      response = service.handle(request);
    } catch (const std::exception& e) {
      response = error(500, e.what());
    }
    res.status = response.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(response.body.dump(), "application/json");
  };
  server.Get(".*", handler);
  server.Post(".*", handler);
  server.Delete(".*", handler);
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

}  // namespace vfm
