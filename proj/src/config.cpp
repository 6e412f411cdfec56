#include "wsds/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"
#include "wsds/errors.hpp"

namespace wsds {

using nlohmann::json;

namespace {

double as_real(const std::string& key, const json& v) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  return v.get<double>();
}

std::size_t as_count(const std::string& key, const json& v) {
  if (!v.is_number_unsigned()) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be true or false");
  return v.get<bool>();
}

using Setter = std::function<void(RunConfig&, const std::string&, const json&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"learning_rate", [](RunConfig& c, auto& k, auto& v) { c.sgd.learning_rate = as_real(k, v); }},
      {"momentum", [](RunConfig& c, auto& k, auto& v) { c.sgd.momentum = as_real(k, v); }},
      {"weight_decay", [](RunConfig& c, auto& k, auto& v) { c.sgd.weight_decay = as_real(k, v); }},
      {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.sgd.batch_size = as_count(k, v); }},
      {"lr_decay", [](RunConfig& c, auto& k, auto& v) { c.sgd.lr_decay = as_real(k, v); }},
      {"epochs", [](RunConfig& c, auto& k, auto& v) { c.plan.epochs = as_count(k, v); }},
      {"alpha", [](RunConfig& c, auto& k, auto& v) { c.plan.alpha = as_real(k, v); }},
      {"beta1", [](RunConfig& c, auto& k, auto& v) { c.plan.beta1 = as_real(k, v); }},
      {"beta2", [](RunConfig& c, auto& k, auto& v) { c.plan.beta2 = as_real(k, v); }},
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.plan.seed = as_count(k, v); }},
      {"height", [](RunConfig& c, auto& k, auto& v) { c.plan.height = as_count(k, v); }},
      {"width", [](RunConfig& c, auto& k, auto& v) { c.plan.width = as_count(k, v); }},
      {"hidden_dim",
       [](RunConfig& c, auto& k, auto& v) { c.model.encoder.hidden_dim = as_count(k, v); }},
      {"heads", [](RunConfig& c, auto& k, auto& v) { c.model.encoder.heads = as_count(k, v); }},
      {"points", [](RunConfig& c, auto& k, auto& v) { c.model.encoder.points = as_count(k, v); }},
      {"ffn_dim", [](RunConfig& c, auto& k, auto& v) { c.model.encoder.ffn_dim = as_count(k, v); }},
      {"dropout", [](RunConfig& c, auto& k, auto& v) { c.model.encoder.dropout = as_real(k, v); }},
      {"encoder_layers",
       [](RunConfig& c, auto& k, auto& v) { c.model.encoder.encoder_layers = as_count(k, v); }},
      {"stem_channels",
       [](RunConfig& c, auto& k, auto& v) { c.model.stem_channels = as_count(k, v); }},
      {"use_dten", [](RunConfig& c, auto& k, auto& v) { c.model.use_dten = as_bool(k, v); }},
      {"backbone_channels",
       [](RunConfig& c, auto& k, const json& v) {
         if (!v.is_array() || v.size() != kNumLevels) {
           throw ConfigError("config key '" + k + "' must be an array of 3 integers");
         }
         for (std::size_t l = 0; l < kNumLevels; ++l) {
           c.model.backbone_channels[l] = as_count(k, v[l]);
         }
       }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  sgd.validate();
  plan.validate();
  model.validate();
}

RunConfig parse_run_config(const std::string& json_text, RunConfig base) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& ex) {
    throw FormatError(std::string("config is not valid JSON: ") + ex.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(base, key, value);
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str(), std::move(base));
  } catch (const FormatError& ex) {
    throw FormatError(path.string() + ": " + ex.what());
  }
}

std::string run_config_json(const RunConfig& c) {
  const json doc{
      {"learning_rate", c.sgd.learning_rate},
      {"momentum", c.sgd.momentum},
      {"weight_decay", c.sgd.weight_decay},
      {"batch_size", c.sgd.batch_size},
      {"lr_decay", c.sgd.lr_decay},
      {"epochs", c.plan.epochs},
      {"alpha", c.plan.alpha},
      {"beta1", c.plan.beta1},
      {"beta2", c.plan.beta2},
      {"seed", c.plan.seed},
      {"height", c.plan.height},
      {"width", c.plan.width},
      {"hidden_dim", c.model.encoder.hidden_dim},
      {"heads", c.model.encoder.heads},
      {"points", c.model.encoder.points},
      {"ffn_dim", c.model.encoder.ffn_dim},
      {"dropout", c.model.encoder.dropout},
      {"encoder_layers", c.model.encoder.encoder_layers},
      {"backbone_channels", c.model.backbone_channels},
      {"stem_channels", c.model.stem_channels},
      {"use_dten", c.model.use_dten},
  };
  return doc.dump(2) + "\n";
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << run_config_json(config);
}

}  // namespace wsds
