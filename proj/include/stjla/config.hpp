#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stjla/tensor.hpp"

namespace stjla {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Flat `key = value` text; `#` starts a comment, blank lines are ignored.
KeyValues parse_key_values(const std::string& text, const std::string& origin = "<string>");
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);

Index parse_index(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::vector<Index> parse_index_list(const std::string& key, const std::string& value);

/// Every tunable of a model and its training run.
struct ModelConfig {
  // architecture
  Index model_dim = 128;   // F
  Index heads = 8;         // K
  Index head_dim = 16;     // d
  Index hops = 8;          // k, MHDCN heads
  Index gru_layers = 2;    // L
  Index history = 12;      // T_h
  Index horizon = 12;      // T_p
  Index channels = 1;      // C
  Index slots_per_day = 288;
  Index start_weekday = 0;
  bool use_ssc = true;
  bool use_tsc = true;
  bool use_dsc = true;
  bool use_dtc = true;

  // optimisation
  double learning_rate = 1e-3;
  std::vector<Index> lr_decay_epochs;  // 1-based epochs at which lr is multiplied by lr_decay
  double lr_decay = 0.1;
  Index batch_size = 16;
  Index epochs = 8;
  Index max_batches_per_epoch = 0;  // 0 = full pass over the training windows
  std::uint64_t seed = 0;

  // evaluation
  double mape_mask = 1e-3;

  // static spatial context
  double node2vec_p = 1.0;
  double node2vec_q = 1.0;
  Index walk_length = 80;
  Index walks_per_node = 10;
  Index skipgram_window = 10;
  Index skipgram_negatives = 5;
  Index skipgram_epochs = 5;

  /// Throws ConfigError naming the violated constraint.
  void validate() const;

  KeyValues to_key_values() const;
  /// Applies each pair; throws ConfigError naming an unknown key.
  void apply(const KeyValues& kv);

  static ModelConfig from_file(const std::filesystem::path& path);

  /// Full-size England configuration (15-minute flow data).
  static ModelConfig england();
  /// Full-size PEMSD7 configuration (5-minute speed data).
  static ModelConfig pemsd7();
  /// Small configuration for tests and desk-scale runs.
  static ModelConfig toy();
};

/// lr at a 1-based epoch: initial rate times lr_decay per decay epoch <= epoch.
double learning_rate_at(const ModelConfig& cfg, Index epoch);

}  // namespace stjla
