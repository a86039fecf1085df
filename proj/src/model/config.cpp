#include "datr/model/config.hpp"

#include <algorithm>
#include <sstream>

#include "datr/autodiff/ops.hpp"
#include "datr/error.hpp"

namespace datr::model {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kFull:
      return "full";
    case FusionMode::kAddOnly:
      return "add";
    case FusionMode::kMulOnly:
      return "mul";
  }
  return "full";
}

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "full") return FusionMode::kFull;
  if (text == "add" || text == "add-only") return FusionMode::kAddOnly;
  if (text == "mul" || text == "mul-only") return FusionMode::kMulOnly;
  throw ConfigError("unknown fusion mode '" + text + "' (expected full, add or mul)");
}

void ModelConfig::validate() const {
  if (d == 0 || layers == 0 || heads == 0 || n_frames == 0 || d_in == 0 || max_tokens == 0) {
    throw ConfigError("model dimensions must all be >= 1");
  }
  if (d % heads != 0) {
    throw ConfigError("d=" + std::to_string(d) + " is not divisible by heads=" +
                      std::to_string(heads));
  }
  if (!(tau_init > 0.0)) throw ConfigError("tau_init must be positive");
  if (!std::is_sorted(vocab.begin(), vocab.end()) ||
      std::adjacent_find(vocab.begin(), vocab.end()) != vocab.end()) {
    throw ConfigError("vocabulary must be sorted and free of duplicates");
  }
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "d=" << d << "\n"
      << "layers=" << layers << "\n"
      << "heads=" << heads << "\n"
      << "n_frames=" << n_frames << "\n"
      << "d_in=" << d_in << "\n"
      << "text_layers=" << text_layers << "\n"
      << "max_tokens=" << max_tokens << "\n"
      << "tau_init=" << tau_init << "\n"
      << "vocab=";
  for (std::size_t i = 0; i < vocab.size(); ++i) out << (i ? " " : "") << vocab[i];
  out << "\n";
  return out.str();
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + line + "'");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  const auto kv = parse_key_values(text);
  auto size_of = [&](const char* key, std::size_t& field) {
    if (auto it = kv.find(key); it != kv.end()) field = std::stoul(it->second);
  };
  size_of("d", c.d);
  size_of("layers", c.layers);
  size_of("heads", c.heads);
  size_of("n_frames", c.n_frames);
  size_of("d_in", c.d_in);
  size_of("text_layers", c.text_layers);
  size_of("max_tokens", c.max_tokens);
  if (auto it = kv.find("tau_init"); it != kv.end()) c.tau_init = std::stod(it->second);
  if (auto it = kv.find("vocab"); it != kv.end()) {
    std::istringstream words(it->second);
    for (std::string w; words >> w;) c.vocab.push_back(w);
  }
  c.validate();
  return c;
}

std::vector<std::size_t> video_length_schedule(const ModelConfig& config) {
  std::vector<std::size_t> out;
  std::size_t length = config.n_frames;
  for (std::size_t l = 0; l < config.layers; ++l) {
    length = ad::conv1d_output_length(length, 3, 2, 1);
    out.push_back(length);
  }
  return out;
}

}  // namespace datr::model
