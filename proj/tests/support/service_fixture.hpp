#pragma once

// Deterministic snapshot and golden transcript shared by the service tests
// and the acceptance binary.

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "datr/data/synthetic.hpp"
#include "datr/io/binary.hpp"
#include "datr/service/service.hpp"
#include "datr/training/trainer.hpp"
#include "support/temp_dir.hpp"

namespace datr::testing {

inline constexpr const char* kSessionPlaceholder = "{session}";

struct ServiceFixture {
  TempDir dir;
  data::Corpus corpus;
  std::shared_ptr<const service::Snapshot> snapshot;

  ServiceFixture() {
    data::SyntheticSpec spec;
    spec.n_topics = 4;
    spec.details_per_topic = 3;
    spec.videos_per_detail = 2;
    spec.n_frames = 8;
    spec.d_in = 6;
    data::write_synthetic_corpus(dir.str(), data::generate_synthetic_corpus(spec));
    corpus = data::Corpus::load(dir.str());
    model::ModelConfig base;
    base.d = 16;
    base.heads = 4;
    base.layers = 3;
    auto m = model::Model::initialize(train::model_config_for(corpus, base), 0);
    const auto items = train::make_items(corpus, corpus.video_ids());
    train::TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.hard_negatives = 3;
    cfg.pool_negatives = 3;
    cfg.pool_negatives_from = 8;
    train::train_stage1(m, items, cfg);
    auto index = retrieval::build_index(corpus, corpus.video_ids(), m);
    train::train_stage2(m, items, index, cfg);
    // Stage II leaves the encoders alone, but the checkpoint hash covers every weight.
    index = retrieval::build_index(corpus, corpus.video_ids(), m);
    snapshot = service::Snapshot::make(std::move(m), std::move(index), &corpus);
  }

  static service::ServiceConfig config() {
    service::ServiceConfig c;
    c.k = 12;
    c.m = 5;
    return c;
  }

  // The scripted requests; {session} stands for the id the service hands out.
  std::vector<service::Request> script() const {
    const auto& t = corpus.triplets;
    auto turn = [](const std::string& query, const nlohmann::json& overrides = nullptr) {
      nlohmann::ordered_json j;
      j["query"] = query;
      if (!overrides.is_null()) j["overrides"] = overrides;
      return j.dump();
    };
    const std::string s = std::string("/v1/sessions/") + kSessionPlaceholder;
    return {
        {"GET", "/v1/healthz", ""},
        {"GET", "/v1/config", ""},
        {"POST", "/v1/sessions", ""},
        {"POST", s + "/turns", turn(t[0].q1)},
        {"POST", s + "/turns", turn(t[0].q2)},
        {"POST", s + "/turns", turn(t[1].q2, {{"stage2", false}})},
        {"GET", s, ""},
        {"POST", s + "/turns", turn("   ")},
        {"POST", "/v1/sessions/no-such-session/turns", turn(t[0].q1)},
        {"GET", "/v1/videos/" + t[0].video_id, ""},
        {"GET", "/v1/videos/no-such-video", ""},
    };
  }
};

inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  if (from.empty()) return s;
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) s.replace(pos, from.size(), to);
  return s;
}

struct Exchange {
  service::Request request;
  service::Response response;
};

// Runs the script through `send`, substituting the live session id into
// requests and the placeholder back into responses.
template <typename Send>
std::vector<Exchange> run_script(const std::vector<service::Request>& script, Send&& send) {
  std::vector<Exchange> out;
  std::string session;
  for (const auto& r : script) {
    service::Request live = r;
    live.path = replace_all(live.path, kSessionPlaceholder, session);
    auto resp = send(live);
    if (r.method == "POST" && r.path == "/v1/sessions" && resp.status == 201) {
      session = nlohmann::json::parse(resp.body).at("session_id").template get<std::string>();
    }
    resp.body = replace_all(resp.body, session, kSessionPlaceholder);
    out.push_back({r, resp});
  }
  return out;
}

inline std::string transcript_to_json(const std::vector<Exchange>& ex) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& e : ex) {
    j.push_back({{"method", e.request.method},
                 {"path", e.request.path},
                 {"request_body", e.request.body},
                 {"status", e.response.status},
                 {"response_body", e.response.body}});
  }
  return j.dump(2) + "\n";
}

inline std::vector<Exchange> transcript_from_json(const std::string& text) {
  std::vector<Exchange> out;
  for (const auto& e : nlohmann::json::parse(text)) {
    out.push_back({{e.at("method"), e.at("path"), e.at("request_body")},
                   {e.at("status").get<int>(), e.at("response_body")}});
  }
  return out;
}

// Index of the first exchange whose status or body differs, or -1.
inline long first_mismatch(const std::vector<Exchange>& expected, const std::vector<Exchange>& actual) {
  if (expected.size() != actual.size()) return 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (!(expected[i].response == actual[i].response)) return static_cast<long>(i);
  }
  return -1;
}

}  // namespace datr::testing
