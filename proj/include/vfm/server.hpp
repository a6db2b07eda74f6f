#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vfm/elicitation.hpp"

namespace httplib {
class Server;
}

namespace vfm {

struct CatalogItem {
  std::uint32_t feature = 0;
  std::int64_t id = 0;
  std::string title;
};

/// Items the live service may ask about: every feature of the item group.
/// Public ids are offsets into the group, which for MovieLens raw-id
/// layouts coincide with the movie ids.
class ItemCatalog {
 public:
  ItemCatalog() = default;
  /// Uses the group named `group`, or group 2 when no such group exists.
  static ItemCatalog from_space(const FeatureSpace& space, std::string_view group = "item");

  /// Attaches titles from a MovieLens item file; unknown ids are ignored.
  void load_titles(std::istream& in);

  const std::vector<CatalogItem>& items() const noexcept { return items_; }
  std::vector<std::uint32_t> features() const;
  std::optional<std::uint32_t> feature_of(std::int64_t id) const;
  const CatalogItem& by_feature(std::uint32_t feature) const;

 private:
  std::vector<CatalogItem> items_;
  std::map<std::int64_t, std::size_t> by_id_;
  std::map<std::uint32_t, std::size_t> by_feature_;
};

struct ServiceOptions {
  std::chrono::seconds ttl{1800};  // idle time before a session expires; 0 disables
  std::uint64_t seed = 0;
  std::size_t samples = 100;
  std::size_t default_batch = 4;
  std::size_t max_batch = 50;
  std::size_t top_k = 5;
  UserUpdateConfig update;
};

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  nlohmann::json body;
};

/// Live elicitation sessions against one frozen model. handle() is safe to
/// call from several threads: the session table has its own lock and each
/// session serializes its own requests.
class ElicitService {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  ElicitService(std::shared_ptr<const FrozenModel> model, ItemCatalog catalog,
                ServiceOptions options, Clock clock = {});

  HttpResponse handle(const HttpRequest& request);

  /// Every request with its response, plus session expiries, as JSON lines.
  void set_request_log(std::ostream* log);

  /// Drops sessions idle for longer than the TTL; returns how many.
  std::size_t expire_idle();
  /// Removes a session as an expiry would; false when it does not exist.
  bool drop_session(const std::string& id);
  std::size_t session_count() const;

  const ItemCatalog& catalog() const noexcept { return catalog_; }
  const ServiceOptions& options() const noexcept { return options_; }

 private:
  struct Session {
    std::mutex mutex;
    std::string id;
    std::unique_ptr<ElicitationSession> state;
    std::size_t batch_size = 4;
    std::chrono::steady_clock::time_point last_used;
    bool closed = false;
  };

  HttpResponse create_session(const HttpRequest& request);
  HttpResponse answer(Session& session, const HttpRequest& request);
  HttpResponse predictions(Session& session, const HttpRequest& request);
  HttpResponse describe(Session& session);
  std::shared_ptr<Session> find(const std::string& id);
  nlohmann::json item_json(std::uint32_t feature) const;
  nlohmann::json next_queries(Session& session);
  nlohmann::json summary(Session& session);
  void log(const HttpRequest& request, const HttpResponse& response);
  void log_expiry(const std::string& id);
  std::size_t expire_idle_locked();

  std::shared_ptr<const FrozenModel> model_;
  ItemCatalog catalog_;
  ServiceOptions options_;
  Clock clock_;
  std::uint32_t user_feature_ = 0;

  mutable std::mutex table_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t created_ = 0;

  std::mutex log_mutex_;
  std::ostream* log_ = nullptr;
};

struct ReplayMismatch {
  std::size_t line = 0;
  nlohmann::json expected;
  nlohmann::json actual;
};

/// Feeds a recorded log through `service` in order and compares each
/// response with the recorded one. The service should have its TTL disabled;
/// recorded expiries are applied from the log.
std::vector<ReplayMismatch> replay_log(ElicitService& service, std::istream& log);

/// Routes the service's endpoints on an httplib server.
void mount(httplib::Server& server, ElicitService& service);

}  // namespace vfm
