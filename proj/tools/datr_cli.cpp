#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "datr/autodiff/checkpoint.hpp"
#include "datr/data/synthetic.hpp"
#include "datr/error.hpp"
#include "datr/evaluation/ablation.hpp"
#include "datr/io/binary.hpp"
#include "datr/service/service.hpp"

using namespace datr;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::uint64_t seed = 0;
  bool json = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_flag("--json", c.json, "Machine-readable JSON on stdout");
  // Read before parsing, see expand_config.
  cmd->add_option("--config", "key=value file with option defaults");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Turns `<verb> ... --config FILE ...` into `<verb> --key value ... <rest>`.
// Lines are key=value with '#' comments; keys under a [section] header only
// apply to the verb of that name. Later command-line flags win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  if (args.size() < 2) return args;
  const auto& verb = args[1];
  std::vector<std::string> rest, injected;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      std::istringstream in(io::read_file(args[++i]));
      std::string line, section;
      while (std::getline(in, line)) {
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
          section = trim(line.substr(1, line.size() - 2));
          continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(args[i] + ": expected key=value, got '" + line + "'");
        if (!section.empty() && section != verb) continue;
        auto key = trim(line.substr(0, eq));
        std::replace(key.begin(), key.end(), '_', '-');
        injected.push_back("--" + key);
        injected.push_back(trim(line.substr(eq + 1)));
      }
    } else {
      rest.push_back(args[i]);
    }
  }
  std::vector<std::string> out{args[0], verb};
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

struct ModelOpts {
  std::size_t d = 64, layers = 6, heads = 8, text_layers = 2;

  void add(CLI::App* cmd) {
    cmd->add_option("--d", d, "Embedding width")->capture_default_str();
    cmd->add_option("--layers", layers, "Video transformer blocks")->capture_default_str();
    cmd->add_option("--heads", heads, "Attention heads")->capture_default_str();
    cmd->add_option("--text-layers", text_layers, "Text transformer blocks")->capture_default_str();
  }
  model::ModelConfig base() const {
    model::ModelConfig c;
    c.d = d;
    c.layers = layers;
    c.heads = heads;
    c.text_layers = text_layers;
    return c;
  }
};

struct TrainOpts {
  train::TrainConfig cfg;
  std::string loss = "bidirectional";
  std::string fusion = "full";

  void add(CLI::App* cmd, bool stage2) {
    cmd->add_option("--epochs", cfg.epochs)->capture_default_str();
    cmd->add_option("--batch-size", cfg.batch_size)->capture_default_str();
    cmd->add_option("--lr", cfg.learning_rate)->capture_default_str();
    if (stage2) {
      cmd->add_option("--hard-negatives", cfg.hard_negatives)->capture_default_str();
      cmd->add_option("--pool-negatives", cfg.pool_negatives)->capture_default_str();
      cmd->add_option("--pool-from", cfg.pool_negatives_from)->capture_default_str();
      cmd->add_option("--margin", cfg.margin)->capture_default_str();
      cmd->add_option("--fusion", fusion, "full, add or mul")->capture_default_str();
    } else {
      cmd->add_option("--loss", loss, "bidirectional or t2v")->capture_default_str();
    }
  }
  train::TrainConfig resolve(std::uint64_t seed) const {
    auto c = cfg;
    c.seed = seed;
    c.loss = train::parse_contrastive_mode(loss);
    c.fusion = model::parse_fusion_mode(fusion);
    c.validate();
    return c;
  }
};

eval::Split load_split(const std::string& path) { return eval::Split::from_json(io::read_file(path)); }

void write_text(const std::string& path, const std::string& text) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  io::write_file(path, text);
}

std::vector<std::string> videos_for(const data::Corpus& corpus, const std::string& split_path,
                                    const std::string& side) {
  if (side == "all") return corpus.video_ids();
  if (split_path.empty()) throw ConfigError("--split is required unless --videos all");
  const auto split = load_split(split_path);
  if (side == "train") return split.train_videos;
  if (side == "test") return split.test_videos;
  throw ConfigError("--videos must be train, test or all");
}

void print_report(const train::TrainReport& r, bool json) {
  if (json) {
    std::cout << r.to_json() << "\n";
    return;
  }
  std::cout << r.stage << ": " << r.loss_curve.size() << " epochs, loss " << r.initial_loss;
  if (!r.loss_curve.empty()) std::cout << " -> " << r.loss_curve.back();
  std::cout << ", tau " << r.final_tau;
  if (!r.score_gap_curve.empty()) std::cout << ", score gap " << r.score_gap_curve.front() << " -> " << r.score_gap_curve.back();
  std::cout << "\n";
}

std::atomic<service::HttpServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialogue-aware two-stage text-to-video retrieval", "datr"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  // gen-corpus
  Common gen_c;
  data::SyntheticSpec spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic corpus");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--topics", spec.n_topics)->capture_default_str();
  gen->add_option("--details", spec.details_per_topic)->capture_default_str();
  gen->add_option("--videos", spec.videos_per_detail)->capture_default_str();
  gen->add_option("--details-per-source", spec.details_per_source)->capture_default_str();
  gen->add_option("--frames", spec.n_frames)->capture_default_str();
  gen->add_option("--dim", spec.d_in)->capture_default_str();
  gen->add_option("--noise", spec.noise_sigma)->capture_default_str();

  // split
  Common split_c;
  std::string split_corpus, split_out;
  double test_fraction = 0.2;
  auto* split = app.add_subcommand("split", "Source-grouped train/test split");
  add_common(split, split_c);
  split->add_option("--corpus", split_corpus)->required();
  split->add_option("--out", split_out)->required();
  split->add_option("--test-fraction", test_fraction)->capture_default_str();

  // train-stage1
  Common t1_c;
  ModelOpts t1_model;
  TrainOpts t1_opts;
  std::string t1_corpus, t1_split, t1_out, t1_report;
  auto* t1 = app.add_subcommand("train-stage1", "Contrastive training of the encoders");
  add_common(t1, t1_c);
  t1->add_option("--corpus", t1_corpus)->required();
  t1->add_option("--split", t1_split)->required();
  t1->add_option("--out", t1_out, "Checkpoint path")->required();
  t1->add_option("--report", t1_report, "Also write the JSON report here");
  t1_model.add(t1);
  t1_opts.add(t1, false);

  // train-stage2
  Common t2_c;
  TrainOpts t2_opts;
  std::string t2_corpus, t2_split, t2_init, t2_out, t2_report;
  auto* t2 = app.add_subcommand("train-stage2", "Margin training of fusion and re-ranker");
  add_common(t2, t2_c);
  t2->add_option("--corpus", t2_corpus)->required();
  t2->add_option("--split", t2_split)->required();
  t2->add_option("--init", t2_init, "Stage-I checkpoint")->required();
  t2->add_option("--out", t2_out, "Checkpoint path")->required();
  t2->add_option("--report", t2_report, "Also write the JSON report here");
  t2_opts.add(t2, true);

  // build-index
  Common bi_c;
  std::string bi_corpus, bi_ckpt, bi_split, bi_out, bi_side = "test";
  auto* bi = app.add_subcommand("build-index", "Embed videos into an index file");
  add_common(bi, bi_c);
  bi->add_option("--corpus", bi_corpus)->required();
  bi->add_option("--checkpoint", bi_ckpt)->required();
  bi->add_option("--split", bi_split);
  bi->add_option("--videos", bi_side, "train, test or all")->capture_default_str();
  bi->add_option("--out", bi_out)->required();

  // evaluate
  Common ev_c;
  std::string ev_corpus, ev_split, ev_ckpt, ev_index, ev_stage2 = "on", ev_fusion = "full";
  std::size_t ev_k = 100;
  auto* ev = app.add_subcommand("evaluate", "R@K, MedR and MeanR on the test split");
  add_common(ev, ev_c);
  ev->add_option("--corpus", ev_corpus)->required();
  ev->add_option("--split", ev_split)->required();
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--index", ev_index, "Prebuilt index (default: build over the test videos)");
  ev->add_option("--stage2", ev_stage2, "on or off")->capture_default_str();
  ev->add_option("--k", ev_k, "Stage-I candidates re-ranked")->capture_default_str();
  ev->add_option("--fusion", ev_fusion)->capture_default_str();

  // ablate
  Common ab_c;
  ModelOpts ab_model;
  TrainOpts ab_t1, ab_t2;
  std::string ab_corpus, ab_split, ab_dir;
  bool ab_train = false;
  eval::AblationSpec ab_spec;
  std::size_t ab_e1 = 10, ab_e2 = 100;
  auto* ab = app.add_subcommand("ablate", "Ablation table over several seeds");
  add_common(ab, ab_c);
  ab->add_option("--corpus", ab_corpus)->required();
  ab->add_option("--split", ab_split)->required();
  ab->add_option("--checkpoints", ab_dir, "Checkpoint directory")->required();
  ab->add_flag("--train", ab_train, "Train missing checkpoints first");
  ab->add_option("--seeds", ab_spec.seeds, "Model seeds")->capture_default_str();
  ab->add_option("--k", ab_spec.k)->capture_default_str();
  ab->add_option("--scope-k", ab_spec.scope_k)->capture_default_str();
  ab->add_option("--stage1-epochs", ab_e1)->capture_default_str();
  ab->add_option("--stage2-epochs", ab_e2)->capture_default_str();
  ab->add_option("--batch-size", ab_t1.cfg.batch_size)->capture_default_str();
  ab->add_option("--lr", ab_t1.cfg.learning_rate)->capture_default_str();
  ab->add_option("--hard-negatives", ab_t2.cfg.hard_negatives)->capture_default_str();
  ab->add_option("--pool-negatives", ab_t2.cfg.pool_negatives)->capture_default_str();
  ab->add_option("--pool-from", ab_t2.cfg.pool_negatives_from)->capture_default_str();
  ab_model.add(ab);

  // serve
  Common sv_c;
  service::ServiceConfig sv;
  std::string sv_stage2 = "on", sv_fusion = "full";
  int sv_port = -1;
  auto* srv = app.add_subcommand("serve", "HTTP session service");
  add_common(srv, sv_c);
  srv->add_option("--checkpoint", sv.checkpoint_path)->required();
  srv->add_option("--index", sv.index_path)->required();
  srv->add_option("--corpus", sv.corpus_dir, "Corpus for video metadata");
  srv->add_option("--host", sv.host)->capture_default_str();
  srv->add_option("--port", sv_port, "Port (default: DATR_PORT, then 8080; 0 picks one)");
  srv->add_option("--K", sv.k)->capture_default_str();
  srv->add_option("--M", sv.m)->capture_default_str();
  srv->add_option("--stage2", sv_stage2, "on or off")->capture_default_str();
  srv->add_option("--fusion", sv_fusion)->capture_default_str();
  srv->add_option("--session-ttl", sv.session_ttl_seconds, "Seconds")->capture_default_str();

  // validate
  Common va_c;
  std::string va_corpus;
  auto* va = app.add_subcommand("validate", "Check a corpus directory");
  add_common(va, va_c);
  va->add_option("--corpus", va_corpus)->required();

  std::vector<std::string> args(argv, argv + argc);
  try {
    args = expand_config(std::move(args));
  } catch (const std::exception& e) {
    std::cerr << "datr: " << e.what() << "\n";
    return 2;
  }
  // CLI11 wants the arguments in reverse, without the program name.
  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      spec.seed = gen_c.seed;
      const auto c = data::generate_synthetic_corpus(spec);
      data::write_synthetic_corpus(gen_out, c);
      if (gen_c.json) {
        auto j = ordered_json::parse(spec.to_json());
        j["out"] = gen_out;
        j["videos"] = c.manifest.size();
        std::cout << j.dump() << "\n";
      } else {
        std::cout << "wrote " << c.manifest.size() << " videos to " << gen_out << "\n";
      }
    } else if (*split) {
      const auto corpus = data::Corpus::load(split_corpus);
      const auto s = eval::grouped_split(corpus.manifest, split_c.seed, test_fraction);
      write_text(split_out, s.to_json());
      if (split_c.json) {
        std::cout << ordered_json{{"out", split_out}, {"train", s.train_videos.size()}, {"test", s.test_videos.size()}}.dump()
                  << "\n";
      } else {
        std::cout << "train " << s.train_videos.size() << ", test " << s.test_videos.size() << " -> " << split_out << "\n";
      }
    } else if (*t1) {
      const auto corpus = data::Corpus::load(t1_corpus);
      const auto s = load_split(t1_split);
      const auto cfg = t1_opts.resolve(t1_c.seed);
      auto m = model::Model::initialize(train::model_config_for(corpus, t1_model.base()), t1_c.seed);
      const auto train_items = train::make_items(corpus, s.train_videos);
      const auto heldout = train::make_items(corpus, s.test_videos);
      const auto report = train::train_stage1(m, train_items, cfg, heldout.size() >= 2 ? &heldout : nullptr);
      write_text(t1_out, ad::encode_checkpoint(m.to_checkpoint()));
      if (!t1_report.empty()) write_text(t1_report, report.to_json() + "\n");
      print_report(report, t1_c.json);
    } else if (*t2) {
      const auto corpus = data::Corpus::load(t2_corpus);
      const auto s = load_split(t2_split);
      const auto cfg = t2_opts.resolve(t2_c.seed);
      auto m = model::Model::from_checkpoint(ad::load_checkpoint(t2_init));
      const auto index = retrieval::build_index(corpus, s.train_videos, m);
      const auto report = train::train_stage2(m, train::make_items(corpus, s.train_videos), index, cfg);
      write_text(t2_out, ad::encode_checkpoint(m.to_checkpoint()));
      if (!t2_report.empty()) write_text(t2_report, report.to_json() + "\n");
      print_report(report, t2_c.json);
    } else if (*bi) {
      const auto corpus = data::Corpus::load(bi_corpus);
      const auto m = model::Model::from_checkpoint(ad::load_checkpoint(bi_ckpt));
      const auto index = retrieval::build_index(corpus, videos_for(corpus, bi_split, bi_side), m);
      const auto parent = fs::path(bi_out).parent_path();
      if (!parent.empty()) fs::create_directories(parent);
      retrieval::save_index(bi_out, index);
      if (bi_c.json) {
        std::cout << ordered_json{{"out", bi_out}, {"size", index.size()}, {"dim", index.dim()},
                                  {"checkpoint_hash", io::to_hex(index.checkpoint_hash())}}.dump()
                  << "\n";
      } else {
        std::cout << "indexed " << index.size() << " videos -> " << bi_out << "\n";
      }
    } else if (*ev) {
      const auto corpus = data::Corpus::load(ev_corpus);
      const auto s = load_split(ev_split);
      const auto m = model::Model::from_checkpoint(ad::load_checkpoint(ev_ckpt));
      const auto index = ev_index.empty() ? retrieval::build_index(corpus, s.test_videos, m)
                                          : retrieval::load_index(ev_index);
      if (index.checkpoint_hash() != retrieval::model_hash(m)) throw ConfigError("index does not match the checkpoint");
      eval::EvalConfig cfg;
      if (ev_stage2 != "on" && ev_stage2 != "off") throw ConfigError("--stage2 must be on or off");
      cfg.stage2 = ev_stage2 == "on";
      cfg.k = ev_k;
      cfg.fusion = model::parse_fusion_mode(ev_fusion);
      const auto r = eval::evaluate(eval::triplets_for(corpus, s.test_videos), m, index, cfg);
      std::cout << (ev_c.json ? r.to_json() + "\n" : eval::metrics_table({{cfg.descriptor(), &r}}));
    } else if (*ab) {
      const auto corpus = data::Corpus::load(ab_corpus);
      const auto s = load_split(ab_split);
      if (ab_train) {
        auto c1 = ab_t1.resolve(ab_c.seed);
        auto c2 = ab_t2.resolve(ab_c.seed);
        c2.batch_size = c1.batch_size;
        c2.learning_rate = c1.learning_rate;
        c1.epochs = ab_e1;
        c2.epochs = ab_e2;
        eval::train_ablation_checkpoints(corpus, s, ab_dir, ab_spec.seeds, c1, c2, ab_model.base(),
                                         [](const std::string& line) { std::cerr << line << "\n"; });
      }
      const auto table = eval::ablation_suite(corpus, s, ab_dir, ab_spec);
      std::cout << (ab_c.json ? table.to_json() + "\n" : table.to_text());
    } else if (*srv) {
      if (sv_port < 0) {
        const char* env = std::getenv("DATR_PORT");
        sv_port = env ? std::stoi(env) : 8080;
      }
      sv.port = static_cast<std::uint16_t>(sv_port);
      if (sv_stage2 != "on" && sv_stage2 != "off") throw ConfigError("--stage2 must be on or off");
      sv.stage2 = sv_stage2 == "on";
      sv.fusion = model::parse_fusion_mode(sv_fusion);
      service::Service service(sv);
      service.load(service::Snapshot::load(sv));
      service::HttpServer server(service);
      const int port = server.bind(sv.host, sv_port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      if (sv_c.json) {
        std::cout << ordered_json{{"host", sv.host}, {"port", port}}.dump() << std::endl;
      } else {
        std::cout << "listening on " << sv.host << ":" << port << std::endl;
      }
      server.listen();
      g_server = nullptr;
    } else if (*va) {
      const auto r = data::validate_corpus(va_corpus);
      if (va_c.json) {
        ordered_json j{{"ok", r.ok()}, {"videos", r.videos}, {"triplets", r.triplets}, {"sources", r.sources}};
        auto& v = j["violations"] = ordered_json::array();
        for (const auto& x : r.violations) v.push_back({{"kind", x.kind}, {"path", x.path}, {"message", x.message}});
        std::cout << j.dump() << "\n";
      } else {
        std::cout << r.videos << " videos, " << r.triplets << " triplets, " << r.sources << " sources\n";
        for (const auto& x : r.violations) std::cout << x.kind << ": " << x.path << ": " << x.message << "\n";
      }
      return r.ok() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "datr: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
