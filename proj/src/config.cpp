#include "transcues/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace transcues {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key " + key + ": cannot parse '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError("config key " + key + ": expected true/false, got '" + value + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_ids(const std::optional<std::set<std::int32_t>>& ids) {
  if (!ids) return "auto";
  if (ids->empty()) return "none";
  std::string out;
  for (auto id : *ids) out += (out.empty() ? "" : ",") + std::to_string(id);
  return out;
}

std::optional<std::set<std::int32_t>> parse_ids(const std::string& key, const std::string& value) {
  if (value == "auto") return std::nullopt;
  std::set<std::int32_t> ids;
  if (value == "none" || value.empty()) return ids;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) ids.insert(parse_number<std::int32_t>(key, trim(item)));
  return ids;
}

}  // namespace

std::pair<std::string, std::string> split_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + text + "'");
  const std::string key = trim(text.substr(0, eq));
  if (key.empty()) throw ConfigError("empty key in '" + text + "'");
  return {key, trim(text.substr(eq + 1))};
}

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    auto [k, v] = split_assignment(line);
    out[k] = v;
  }
  return out;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "model.backbone") model.backbone = value;
  else if (key == "model.embed_channel") model.embed_channel = parse_number<int>(key, value);
  else if (key == "model.n_class") model.n_class = parse_number<int>(key, value);
  else if (key == "model.resolution") model.resolution = parse_number<int>(key, value);
  else if (key == "model.pos_resolution") model.pos_resolution = parse_number<int>(key, value);
  else if (key == "model.bfe") model.bfe_enabled = parse_bool(key, value);
  else if (key == "model.rfe") model.rfe_enabled = parse_bool(key, value);
  else if (key == "model.order") model.order = parse_module_order(value);
  else if (key == "loss.alpha") loss.alpha = parse_number<double>(key, value);
  else if (key == "loss.beta") loss.beta = parse_number<double>(key, value);
  else if (key == "loss.gamma") loss.gamma = parse_number<double>(key, value);
  else if (key == "loss.boundary_target") boundary_target = parse_boundary_target(value);
  else if (key == "data.reflective_ids") reflective_ids = parse_ids(key, value);
  else if (key == "optim.kind") optim.kind = value;
  else if (key == "optim.lr") optim.lr = parse_number<double>(key, value);
  else if (key == "optim.eps") optim.eps = parse_number<double>(key, value);
  else if (key == "optim.weight_decay") optim.weight_decay = parse_number<double>(key, value);
  else if (key == "optim.beta1") optim.beta1 = parse_number<double>(key, value);
  else if (key == "optim.beta2") optim.beta2 = parse_number<double>(key, value);
  else if (key == "train.batch_size") batch_size = parse_number<int>(key, value);
  else if (key == "train.max_steps") max_steps = parse_number<int>(key, value);
  else if (key == "train.val_every") val_every = parse_number<int>(key, value);
  else if (key == "train.seed") model.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "train.augment") augment = parse_bool(key, value);
  else if (key == "data.root") data_root = value;
  else if (key == "data.val_root") val_root = value;
  else if (key == "output.dir") output_dir = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

std::map<std::string, std::string> ExperimentConfig::to_map() const {
  return {
      {"model.backbone", model.backbone},
      {"model.embed_channel", std::to_string(model.embed_channel)},
      {"model.n_class", std::to_string(model.n_class)},
      {"model.resolution", std::to_string(model.resolution)},
      {"model.pos_resolution", std::to_string(model.pos_resolution)},
      {"model.bfe", model.bfe_enabled ? "true" : "false"},
      {"model.rfe", model.rfe_enabled ? "true" : "false"},
      {"model.order", std::string(to_string(model.order))},
      {"loss.alpha", format_double(loss.alpha)},
      {"loss.beta", format_double(loss.beta)},
      {"loss.gamma", format_double(loss.gamma)},
      {"loss.boundary_target", std::string(to_string(boundary_target))},
      {"data.reflective_ids", format_ids(reflective_ids)},
      {"optim.kind", optim.kind},
      {"optim.lr", format_double(optim.lr)},
      {"optim.eps", format_double(optim.eps)},
      {"optim.weight_decay", format_double(optim.weight_decay)},
      {"optim.beta1", format_double(optim.beta1)},
      {"optim.beta2", format_double(optim.beta2)},
      {"train.batch_size", std::to_string(batch_size)},
      {"train.max_steps", std::to_string(max_steps)},
      {"train.val_every", std::to_string(val_every)},
      {"train.seed", std::to_string(model.seed)},
      {"train.augment", augment ? "true" : "false"},
      {"data.root", data_root},
      {"data.val_root", val_root},
      {"output.dir", output_dir},
  };
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_map()) out += k + "=" + v + "\n";
  return out;
}

ExperimentConfig ExperimentConfig::from_map(const std::map<std::string, std::string>& values) {
  ExperimentConfig cfg;
  for (const auto& [k, v] : values) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
  std::istringstream in(text);
  return from_map(parse_key_values(in));
}

void ExperimentConfig::validate() const {
  make_backbone_config(model.backbone);
  if (model.embed_channel < 0) throw ConfigError("model.embed_channel must be >= 0");
  if (model.n_class < 2) throw ConfigError("model.n_class must be >= 2, got " + std::to_string(model.n_class));
  if (model.resolution <= 0 || model.resolution % 32 != 0) {
    throw ConfigError("model.resolution must be a positive multiple of 32, got " + std::to_string(model.resolution));
  }
  if (model.pos_resolution <= 0 || model.pos_resolution % 32 != 0) {
    throw ConfigError("model.pos_resolution must be a positive multiple of 32, got " +
                      std::to_string(model.pos_resolution));
  }
  loss.validate();
  if (loss.beta > 0 && !model.bfe_enabled && boundary_target == BoundaryTarget::boundary_head) {
    throw ConfigError("loss.beta > 0 needs the BFE module (model.bfe=true) or loss.boundary_target=semantic_foreground");
  }
  if (loss.gamma > 0 && !model.rfe_enabled) throw ConfigError("loss.gamma > 0 needs the RFE module (model.rfe=true)");
  if (reflective_ids) {
    for (auto id : *reflective_ids) {
      if (id <= 0 || id >= model.n_class) {
        throw ConfigError("data.reflective_ids: " + std::to_string(id) + " is not a foreground class id");
      }
    }
  }
  if (optim.kind != "adamw") throw ConfigError("optim.kind: only 'adamw' is supported, got '" + optim.kind + "'");
  if (!(optim.lr > 0) || !(optim.eps > 0) || !(optim.weight_decay >= 0)) {
    throw ConfigError("optim: lr and eps must be positive, weight_decay nonnegative");
  }
  if (!(optim.beta1 >= 0 && optim.beta1 < 1 && optim.beta2 >= 0 && optim.beta2 < 1)) {
    throw ConfigError("optim: betas must lie in [0, 1)");
  }
  if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (max_steps < 0 || val_every < 0) throw ConfigError("train.max_steps and train.val_every must be >= 0");
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::map<std::string, std::string> values;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    values = parse_key_values(in);
  }
  for (const auto& o : overrides) {
    auto [k, v] = split_assignment(o);
    values[k] = v;
  }
  return ExperimentConfig::from_map(values);
}

}  // namespace transcues
