#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace datr::model {

enum class FusionMode { kFull, kAddOnly, kMulOnly };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

struct ModelConfig {
  std::size_t d = 64;            // shared embedding width
  std::size_t layers = 6;        // video transformer blocks, each followed by a conv downsampler
  std::size_t heads = 8;
  std::size_t n_frames = 32;     // frames sampled per video
  std::size_t d_in = 32;         // raw frame-feature width
  std::size_t text_layers = 2;
  std::size_t max_tokens = 64;
  double tau_init = 0.07;
  // Vocabulary words, sorted; id 0 is reserved for UNK so ids are 1..size.
  std::vector<std::string> vocab;

  std::size_t vocab_size() const { return vocab.size() + 1; }
  std::size_t head_dim() const { return d / heads; }
  // FFN and adapter hidden width.
  std::size_t hidden() const { return 2 * d; }

  // Throws ConfigError when an invariant is violated.
  void validate() const;

  // Human-readable key=value lines; embedded in checkpoints.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

// Temporal length after each video block: max(1, ceil(n_frames / 2^l)) for l=1..layers.
std::vector<std::size_t> video_length_schedule(const ModelConfig& config);

// Parses "key=value" lines; '#' starts a comment. Later keys win.
std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace datr::model
