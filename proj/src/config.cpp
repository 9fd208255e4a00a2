#include "stjla/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace stjla {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string join(const std::vector<Index>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

Index parse_index(const std::string& key, const std::string& value) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + value + "'");
  }
  return static_cast<Index>(v);
}

double parse_double(const std::string& key, const std::string& value) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(v)) {
    throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + value + "'");
}

std::vector<Index> parse_index_list(const std::string& key, const std::string& value) {
  std::vector<Index> out;
  std::stringstream ss(value);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_index(key, item));
  }
  return out;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  require(model_dim > 0 && heads > 0 && head_dim > 0 && hops > 0, "dimensions must be positive");
  require(model_dim == heads * head_dim,
          "model_dim (" + std::to_string(model_dim) + ") must equal heads * head_dim (" +
              std::to_string(heads * head_dim) + ")");
  require(model_dim % hops == 0,
          "model_dim (" + std::to_string(model_dim) + ") must be divisible by hops (" + std::to_string(hops) + ")");
  require(gru_layers >= 1, "gru_layers must be >= 1");
  require(history >= 1 && horizon >= 1, "history and horizon must be >= 1");
  require(channels >= 1, "channels must be >= 1");
  require(slots_per_day >= 1, "slots_per_day must be >= 1");
  require(start_weekday >= 0 && start_weekday <= 6, "start_weekday must be in 0..6");
  require(learning_rate > 0, "learning_rate must be positive");
  require(lr_decay > 0, "lr_decay must be positive");
  require(batch_size >= 1 && epochs >= 1 && max_batches_per_epoch >= 0, "batch_size/epochs must be positive");
  require(mape_mask >= 0, "mape_mask must be >= 0");
  require(node2vec_p > 0 && node2vec_q > 0 && walk_length >= 2 && walks_per_node >= 1, "node2vec settings");
  require(skipgram_window >= 1 && skipgram_negatives >= 0 && skipgram_epochs >= 1, "skip-gram settings");
}

KeyValues ModelConfig::to_key_values() const {
  return {
      {"model_dim", std::to_string(model_dim)},
      {"heads", std::to_string(heads)},
      {"head_dim", std::to_string(head_dim)},
      {"hops", std::to_string(hops)},
      {"gru_layers", std::to_string(gru_layers)},
      {"history", std::to_string(history)},
      {"horizon", std::to_string(horizon)},
      {"channels", std::to_string(channels)},
      {"slots_per_day", std::to_string(slots_per_day)},
      {"start_weekday", std::to_string(start_weekday)},
      {"use_ssc", use_ssc ? "true" : "false"},
      {"use_tsc", use_tsc ? "true" : "false"},
      {"use_dsc", use_dsc ? "true" : "false"},
      {"use_dtc", use_dtc ? "true" : "false"},
      {"learning_rate", format_double(learning_rate)},
      {"lr_decay_epochs", join(lr_decay_epochs)},
      {"lr_decay", format_double(lr_decay)},
      {"batch_size", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"max_batches_per_epoch", std::to_string(max_batches_per_epoch)},
      {"seed", std::to_string(seed)},
      {"mape_mask", format_double(mape_mask)},
      {"node2vec_p", format_double(node2vec_p)},
      {"node2vec_q", format_double(node2vec_q)},
      {"walk_length", std::to_string(walk_length)},
      {"walks_per_node", std::to_string(walks_per_node)},
      {"skipgram_window", std::to_string(skipgram_window)},
      {"skipgram_negatives", std::to_string(skipgram_negatives)},
      {"skipgram_epochs", std::to_string(skipgram_epochs)},
  };
}

void ModelConfig::apply(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "model_dim") model_dim = parse_index(key, value);
    else if (key == "heads") heads = parse_index(key, value);
    else if (key == "head_dim") head_dim = parse_index(key, value);
    else if (key == "hops") hops = parse_index(key, value);
    else if (key == "gru_layers") gru_layers = parse_index(key, value);
    else if (key == "history") history = parse_index(key, value);
    else if (key == "horizon") horizon = parse_index(key, value);
    else if (key == "channels") channels = parse_index(key, value);
    else if (key == "slots_per_day") slots_per_day = parse_index(key, value);
    else if (key == "start_weekday") start_weekday = parse_index(key, value);
    else if (key == "use_ssc") use_ssc = parse_bool(key, value);
    else if (key == "use_tsc") use_tsc = parse_bool(key, value);
    else if (key == "use_dsc") use_dsc = parse_bool(key, value);
    else if (key == "use_dtc") use_dtc = parse_bool(key, value);
    else if (key == "learning_rate") learning_rate = parse_double(key, value);
    else if (key == "lr_decay_epochs") lr_decay_epochs = parse_index_list(key, value);
    else if (key == "lr_decay") lr_decay = parse_double(key, value);
    else if (key == "batch_size") batch_size = parse_index(key, value);
    else if (key == "epochs") epochs = parse_index(key, value);
    else if (key == "max_batches_per_epoch") max_batches_per_epoch = parse_index(key, value);
    else if (key == "seed") seed = static_cast<std::uint64_t>(parse_index(key, value));
    else if (key == "mape_mask") mape_mask = parse_double(key, value);
    else if (key == "node2vec_p") node2vec_p = parse_double(key, value);
    else if (key == "node2vec_q") node2vec_q = parse_double(key, value);
    else if (key == "walk_length") walk_length = parse_index(key, value);
    else if (key == "walks_per_node") walks_per_node = parse_index(key, value);
    else if (key == "skipgram_window") skipgram_window = parse_index(key, value);
    else if (key == "skipgram_negatives") skipgram_negatives = parse_index(key, value);
    else if (key == "skipgram_epochs") skipgram_epochs = parse_index(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
}

ModelConfig ModelConfig::from_file(const std::filesystem::path& path) {
  ModelConfig cfg;
  cfg.apply(read_key_values(path));
  return cfg;
}

ModelConfig ModelConfig::england() {
  ModelConfig cfg;
  cfg.slots_per_day = 96;
  cfg.start_weekday = 2;  // 2014-01-01 was a Wednesday
  cfg.epochs = 40;
  cfg.lr_decay_epochs = {25, 35};
  cfg.mape_mask = 1.0;
  return cfg;
}

ModelConfig ModelConfig::pemsd7() {
  ModelConfig cfg;
  cfg.slots_per_day = 288;
  cfg.start_weekday = 1;  // 2012-05-01 was a Tuesday
  cfg.epochs = 8;
  cfg.lr_decay_epochs = {5, 6, 7};
  cfg.mape_mask = 1e-3;
  return cfg;
}

ModelConfig ModelConfig::toy() {
  ModelConfig cfg;
  cfg.model_dim = 16;
  cfg.heads = 2;
  cfg.head_dim = 8;
  cfg.hops = 2;
  cfg.gru_layers = 1;
  cfg.history = 12;
  cfg.horizon = 12;
  cfg.slots_per_day = 48;
  cfg.batch_size = 16;
  // 10 x 50 = 500 Adam steps
  cfg.epochs = 10;
  cfg.max_batches_per_epoch = 50;
  cfg.learning_rate = 2e-2;
  cfg.lr_decay_epochs = {7, 9};
  cfg.walk_length = 20;
  cfg.walks_per_node = 5;
  cfg.skipgram_epochs = 2;
  return cfg;
}

double learning_rate_at(const ModelConfig& cfg, Index epoch) {
  double lr = cfg.learning_rate;
  for (Index e : cfg.lr_decay_epochs) {
    if (epoch >= e) lr *= cfg.lr_decay;
  }
  return lr;
}

}  // namespace stjla
