#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>

#include "datr/data/corpus.hpp"
#include "datr/model/model.hpp"
#include "datr/retrieval/pipeline.hpp"

namespace datr::service {

struct ServiceConfig {
  std::uint16_t port = 8080;
  std::string host = "127.0.0.1";
  std::string index_path;
  std::string checkpoint_path;
  std::string corpus_dir;  // optional, for video metadata
  std::size_t k = 100;
  std::size_t m = 10;
  bool stage2 = true;
  model::FusionMode fusion = model::FusionMode::kFull;
  double session_ttl_seconds = 1800.0;

  void validate() const;
  retrieval::PipelineConfig pipeline() const;
  std::string to_json() const;
  // key=value lines; '#' starts a comment. Unknown keys are a ConfigError.
  static ServiceConfig from_text(const std::string& text);
  static ServiceConfig from_text(const std::string& text, ServiceConfig base);
};

struct VideoInfo {
  std::string video_id;
  std::string source_id;
  std::size_t n_frames = 0;
  std::size_t dim = 0;
  std::optional<std::string> d_v;
};

// Immutable model + index pair shared by every request.
struct Snapshot {
  model::Model model;
  retrieval::EmbeddingIndex index;
  std::map<std::string, VideoInfo> videos;

  // Throws ConfigError when the index was built from another checkpoint.
  static std::shared_ptr<const Snapshot> make(model::Model model, retrieval::EmbeddingIndex index,
                                              const data::Corpus* corpus = nullptr);
  static std::shared_ptr<const Snapshot> load(const ServiceConfig& config);
};

struct Request {
  std::string method;
  std::string path;
  std::string body;
};

struct Response {
  int status = 200;
  std::string body;
  bool operator==(const Response&) const = default;
};

class Service {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;
  using IdSource = std::function<std::string()>;

  // Ids default to 128 random bits in hex; the clock to steady_clock.
  explicit Service(ServiceConfig config, Clock clock = {}, IdSource ids = {});

  void load(std::shared_ptr<const Snapshot> snapshot);
  std::shared_ptr<const Snapshot> snapshot() const;
  const ServiceConfig& config() const { return config_; }

  // Routes one request. Safe to call from many threads.
  Response handle(const Request& request);

  std::size_t live_sessions() const;

 private:
  struct Session {
    std::mutex mutex;
    retrieval::SessionState state;
    std::vector<std::string> transcript;  // turn response bodies
    std::chrono::steady_clock::time_point last_used;
  };

  Response create_session();
  Response post_turn(const std::string& id, const std::string& body);
  Response get_session(const std::string& id);
  Response get_video(const std::string& id);
  Response get_config();

  // nullptr with *status set to 404 or 410.
  std::shared_ptr<Session> find_session(const std::string& id, int* status);
  void evict_expired(std::chrono::steady_clock::time_point now);

  ServiceConfig config_;
  Clock clock_;
  IdSource ids_;

  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const Snapshot> snapshot_;

  mutable std::shared_mutex sessions_mutex_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;
  std::unordered_map<std::string, std::chrono::steady_clock::time_point> tombstones_;
};

std::string random_session_id();

// Turn response body, as served by POST /v1/sessions/{id}/turns.
std::string turn_to_json(const retrieval::TurnResult& turn, const std::string& query,
                         const retrieval::RankedList& candidates);

// HTTP/1.1 front end over Service::handle.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace datr::service
