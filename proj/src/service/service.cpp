#include "datr/service/service.hpp"

#include <openssl/rand.h>

#include <httplib.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "datr/autodiff/checkpoint.hpp"
#include "datr/error.hpp"
#include "datr/io/binary.hpp"

namespace datr::service {

using nlohmann::ordered_json;
using Steady = std::chrono::steady_clock;

namespace {

Response json_response(int status, const ordered_json& body) { return {status, body.dump()}; }

Response error_response(int status, const std::string& message) {
  ordered_json j;
  j["error"] = {{"status", status}, {"message", message}};
  return json_response(status, j);
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

// "/v1/sessions/abc/turns" -> {"v1", "sessions", "abc", "turns"}
std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::string part;
  std::istringstream in(path);
  while (std::getline(in, part, '/'))
    if (!part.empty()) out.push_back(part);
  return out;
}

ordered_json pipeline_json(const retrieval::PipelineConfig& c) {
  return {{"K", c.k}, {"M", c.m}, {"stage2", c.stage2}, {"fusion_mode", model::to_string(c.fusion)}};
}

std::size_t as_count(const nlohmann::json& v, const char* key) {
  if (!v.is_number_integer() || v.get<long long>() < 1) throw ConfigError(std::string(key) + " must be a positive integer");
  return v.get<std::size_t>();
}

retrieval::PipelineConfig apply_overrides(retrieval::PipelineConfig c, const nlohmann::json& o) {
  if (!o.is_object()) throw ConfigError("overrides must be an object");
  for (const auto& [key, v] : o.items()) {
    if (key == "K") {
      c.k = as_count(v, "K");
    } else if (key == "M") {
      c.m = as_count(v, "M");
    } else if (key == "stage2") {
      if (!v.is_boolean()) throw ConfigError("stage2 must be a boolean");
      c.stage2 = v.get<bool>();
    } else if (key == "fusion_mode") {
      if (!v.is_string()) throw ConfigError("fusion_mode must be a string");
      c.fusion = model::parse_fusion_mode(v.get<std::string>());
    } else {
      throw ConfigError("unknown override '" + key + "'");
    }
  }
  c.validate();
  return c;
}

bool parse_bool(const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("expected on/off, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

// --- config ----------------------------------------------------------------

void ServiceConfig::validate() const {
  if (m < 1 || k < m) throw ConfigError("need K >= M >= 1, got K=" + std::to_string(k) + " M=" + std::to_string(m));
  if (!(session_ttl_seconds > 0.0)) throw ConfigError("session_ttl_seconds must be > 0");
}

retrieval::PipelineConfig ServiceConfig::pipeline() const {
  retrieval::PipelineConfig p;
  p.k = k;
  p.m = m;
  p.stage2 = stage2;
  p.fusion = fusion;
  return p;
}

std::string ServiceConfig::to_json() const {
  ordered_json j = pipeline_json(pipeline());
  j["session_ttl_seconds"] = session_ttl_seconds;
  j["port"] = port;
  j["index_path"] = index_path;
  j["checkpoint_path"] = checkpoint_path;
  j["corpus_dir"] = corpus_dir;
  return j.dump();
}

ServiceConfig ServiceConfig::from_text(const std::string& text) { return from_text(text, ServiceConfig{}); }

ServiceConfig ServiceConfig::from_text(const std::string& text, ServiceConfig c) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key=value");
    const auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    try {
      if (key == "port") c.port = static_cast<std::uint16_t>(std::stoul(value));
      else if (key == "host") c.host = value;
      else if (key == "index_path") c.index_path = value;
      else if (key == "checkpoint_path") c.checkpoint_path = value;
      else if (key == "corpus_dir") c.corpus_dir = value;
      else if (key == "K" || key == "k") c.k = std::stoul(value);
      else if (key == "M" || key == "m") c.m = std::stoul(value);
      else if (key == "stage2") c.stage2 = parse_bool(value);
      else if (key == "fusion_mode") c.fusion = model::parse_fusion_mode(value);
      else if (key == "session_ttl_seconds") c.session_ttl_seconds = std::stod(value);
      else throw ConfigError("config line " + std::to_string(n) + ": unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("config line " + std::to_string(n) + ": bad value for " + key);
    }
  }
  return c;
}

// --- snapshot --------------------------------------------------------------

std::shared_ptr<const Snapshot> Snapshot::make(model::Model model, retrieval::EmbeddingIndex index,
                                               const data::Corpus* corpus) {
  if (index.checkpoint_hash() != retrieval::model_hash(model)) {
    throw ConfigError("index was built from checkpoint " + io::to_hex(index.checkpoint_hash()) +
                      ", not the loaded one " + io::to_hex(retrieval::model_hash(model)));
  }
  if (index.dim() != model.config().d) throw DimensionError("index width does not match the model");
  auto s = std::make_shared<Snapshot>(Snapshot{std::move(model), std::move(index), {}});
  if (corpus) {
    for (const auto& e : corpus->manifest) {
      VideoInfo info{e.video_id, e.source_id, 0, 0, std::nullopt};
      if (const auto* f = corpus->frames(e.video_id)) {
        info.n_frames = f->n_frames;
        info.dim = f->dim;
      }
      s->videos[e.video_id] = info;
    }
    for (const auto& t : corpus->triplets) {
      auto it = s->videos.find(t.video_id);
      if (it != s->videos.end() && !t.d_v.empty() && !it->second.d_v) it->second.d_v = t.d_v;
    }
  }
  return s;
}

std::shared_ptr<const Snapshot> Snapshot::load(const ServiceConfig& config) {
  if (config.checkpoint_path.empty() || config.index_path.empty()) {
    throw ConfigError("checkpoint_path and index_path are required");
  }
  auto m = model::Model::from_checkpoint(ad::load_checkpoint(config.checkpoint_path));
  auto index = retrieval::load_index(config.index_path);
  if (config.corpus_dir.empty()) return make(std::move(m), std::move(index));
  const auto corpus = data::Corpus::load(config.corpus_dir);
  return make(std::move(m), std::move(index), &corpus);
}

// --- service ---------------------------------------------------------------

std::string random_session_id() {
  io::Digest raw{};
  if (RAND_bytes(raw.data(), 16) != 1) throw Error("no randomness available for session ids");
  return io::to_hex(raw).substr(0, 32);
}

std::string turn_to_json(const retrieval::TurnResult& turn, const std::string& query,
                         const retrieval::RankedList& candidates) {
  std::map<std::string, std::size_t> stage1_rank;
  for (std::size_t i = 0; i < candidates.entries.size(); ++i) stage1_rank.emplace(candidates.entries[i].video_id, i + 1);

  ordered_json j;
  j["turn"] = turn.turn;
  j["query"] = query;
  j["config"] = pipeline_json(turn.config);
  j["stage"] = turn.results.stage == retrieval::Stage::kStage2 ? "stage2" : "stage1";
  j["clamped"] = turn.results.clamped;
  auto& results = j["results"] = ordered_json::array();
  for (std::size_t i = 0; i < turn.results.entries.size(); ++i) {
    const auto& e = turn.results.entries[i];
    ordered_json r;
    r["video_id"] = e.video_id;
    r["final_rank"] = i + 1;
    r["stage1_rank"] = stage1_rank.at(e.video_id);
    r["stage1_score"] = e.stage1_score;
    if (e.stage2_score) r["stage2_score"] = *e.stage2_score;
    results.push_back(std::move(r));
  }
  if (turn.stage1_order) {
    auto& order = j["stage1_order"] = ordered_json::array();
    for (const auto& e : turn.stage1_order->entries) {
      order.push_back({{"video_id", e.video_id}, {"stage1_rank", stage1_rank.at(e.video_id)},
                       {"stage1_score", e.stage1_score}});
    }
  }
  return j.dump();
}

Service::Service(ServiceConfig config, Clock clock, IdSource ids)
    : config_(std::move(config)), clock_(std::move(clock)), ids_(std::move(ids)) {
  config_.validate();
  if (!clock_) clock_ = [] { return Steady::now(); };
  if (!ids_) ids_ = random_session_id;
}

void Service::load(std::shared_ptr<const Snapshot> snapshot) {
  std::lock_guard lock(snapshot_mutex_);
  snapshot_ = std::move(snapshot);
}

std::shared_ptr<const Snapshot> Service::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

std::size_t Service::live_sessions() const {
  std::shared_lock lock(sessions_mutex_);
  return sessions_.size();
}

Response Service::handle(const Request& r) {
  const auto parts = split_path(r.path);
  try {
    if (parts.size() < 2 || parts[0] != "v1") return error_response(404, "no route for " + r.path);
    const auto& what = parts[1];
    if (r.method == "GET" && parts.size() == 2 && what == "healthz") return json_response(200, {{"status", "ok"}});
    if (r.method == "GET" && parts.size() == 2 && what == "config") return get_config();
    if (what == "sessions") {
      if (r.method == "POST" && parts.size() == 2) return create_session();
      if (r.method == "GET" && parts.size() == 3) return get_session(parts[2]);
      if (r.method == "POST" && parts.size() == 4 && parts[3] == "turns") return post_turn(parts[2], r.body);
    }
    if (what == "videos" && r.method == "GET" && parts.size() == 3) return get_video(parts[2]);
    return error_response(404, "no route for " + r.method + " " + r.path);
  } catch (const ConfigError& e) {
    return error_response(400, e.what());
  } catch (const ContractError& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

void Service::evict_expired(Steady::time_point now) {
  const auto ttl = std::chrono::duration_cast<Steady::duration>(std::chrono::duration<double>(config_.session_ttl_seconds));
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    bool expired;
    {
      std::lock_guard lock(it->second->mutex);
      expired = now - it->second->last_used > ttl;
    }
    if (expired) {
      tombstones_[it->first] = now;
      it = sessions_.erase(it);
    } else {
      ++it;
    }
  }
  // Tombstones answer 410 for another TTL, then the id is forgotten.
  for (auto it = tombstones_.begin(); it != tombstones_.end();) {
    it = now - it->second > ttl ? tombstones_.erase(it) : std::next(it);
  }
}

Response Service::create_session() {
  if (!snapshot()) return error_response(503, "no model or index loaded");
  auto s = std::make_shared<Session>();
  const auto now = clock_();
  s->last_used = now;
  std::unique_lock lock(sessions_mutex_);
  evict_expired(now);
  std::string id;
  do id = ids_();
  while (sessions_.count(id) || tombstones_.count(id));
  s->state.session_id = id;
  sessions_.emplace(id, std::move(s));
  return json_response(201, {{"session_id", id}});
}

std::shared_ptr<Service::Session> Service::find_session(const std::string& id, int* status) {
  const auto now = clock_();
  {
    std::shared_lock lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    if (it != sessions_.end()) {
      std::lock_guard session_lock(it->second->mutex);
      const auto ttl = std::chrono::duration<double>(config_.session_ttl_seconds);
      if (now - it->second->last_used <= ttl) return it->second;
    } else {
      *status = tombstones_.count(id) ? 410 : 404;
      return nullptr;
    }
  }
  std::unique_lock lock(sessions_mutex_);
  evict_expired(now);
  *status = sessions_.count(id) ? 200 : tombstones_.count(id) ? 410 : 404;
  return *status == 200 ? sessions_.at(id) : nullptr;
}

Response Service::post_turn(const std::string& id, const std::string& body) {
  const auto snap = snapshot();
  if (!snap) return error_response(503, "no model or index loaded");
  int status = 0;
  auto session = find_session(id, &status);
  if (!session) return error_response(status, status == 410 ? "session expired" : "unknown session " + id);

  const auto req = nlohmann::json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object()) return error_response(400, "body must be a JSON object");
  if (!req.contains("query") || !req["query"].is_string()) return error_response(400, "query must be a string");
  const auto query = req["query"].get<std::string>();
  if (blank(query)) return error_response(400, "query is empty");
  auto cfg = config_.pipeline();
  if (req.contains("overrides")) cfg = apply_overrides(cfg, req["overrides"]);

  std::lock_guard lock(session->mutex);
  // A turn runs entirely against one snapshot; a failed turn leaves the session unchanged.
  auto state = session->state;
  const auto turn = retrieval::run_pipeline(state, query, snap->model, snap->index, cfg);
  auto out = turn_to_json(turn, query, state.candidates);
  session->state = std::move(state);
  session->transcript.push_back(out);
  session->last_used = clock_();
  return {200, std::move(out)};
}

Response Service::get_session(const std::string& id) {
  int status = 0;
  auto session = find_session(id, &status);
  if (!session) return error_response(status, status == 410 ? "session expired" : "unknown session " + id);
  std::lock_guard lock(session->mutex);
  ordered_json j;
  j["session_id"] = id;
  j["turn_count"] = session->transcript.size();
  auto& turns = j["turns"] = ordered_json::array();
  for (const auto& t : session->transcript) turns.push_back(ordered_json::parse(t));
  return json_response(200, j);
}

Response Service::get_video(const std::string& id) {
  const auto snap = snapshot();
  if (!snap) return error_response(503, "no model or index loaded");
  const auto it = snap->videos.find(id);
  const bool indexed = snap->index.position(id).has_value();
  if (it == snap->videos.end() && !indexed) return error_response(404, "unknown video " + id);
  ordered_json j;
  j["video_id"] = id;
  if (it != snap->videos.end()) {
    j["source_id"] = it->second.source_id;
    j["n_frames"] = it->second.n_frames;
    j["feature_dim"] = it->second.dim;
    if (it->second.d_v) j["d_v"] = *it->second.d_v;
  }
  j["indexed"] = indexed;
  return json_response(200, j);
}

Response Service::get_config() {
  auto j = ordered_json::parse(config_.to_json());
  const auto snap = snapshot();
  j["loaded"] = static_cast<bool>(snap);
  if (snap) {
    j["checkpoint_hash"] = io::to_hex(snap->index.checkpoint_hash());
    j["index_size"] = snap->index.size();
  }
  return json_response(200, j);
}

// --- http ------------------------------------------------------------------

struct HttpServer::Impl {
  explicit Impl(Service& s) : service(s) {}
  Service& service;
  httplib::Server server;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    const auto out = impl_->service.handle({req.method, req.path, req.body});
    res.status = out.status;
    res.set_content(out.body, "application/json");
  };
  impl_->server.Get(R"(/.*)", forward);
  impl_->server.Post(R"(/.*)", forward);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace datr::service
