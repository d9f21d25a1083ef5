// SPDX-License-Identifier: Apache-2.0
#include "leafnet_cli/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "leafnet/error.hpp"

namespace leafnet::cli {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = {
      // run
      {"data", ""},
      {"out", ""},
      {"base", ""},
      {"unfreeze_last", "0"},
      {"head_classes", "0"},
      {"threads", "0"},
      // model
      {"preset", "mini"},
      {"image_size", "0"},
      {"dtype", "f32"},
      {"head_widths", "128,64"},
      {"head_dropout", "0.3,0.4"},
      {"leaky_alpha", "0.01"},
      // training
      {"epochs", "auto"},
      {"batch_size", "32"},
      {"val_fraction", "0.2"},
      {"seed", "0"},
      {"shuffle", "true"},
      {"prefetch_chunk", "128"},
      {"optimizer", "adam"},
      {"lr", "0.0001"},
      {"momentum", "0.9"},
      {"beta1", "0.9"},
      {"beta2", "0.999"},
      {"epsilon", "1e-08"},
      {"early_stopping", "true"},
      {"patience", "5"},
      {"restore_best", "true"},
      {"plateau", "true"},
      {"plateau_factor", "0.1"},
      {"plateau_patience", "3"},
      {"plateau_min_lr", "1e-06"},
      {"min_delta", "0"},
      {"cosine", "true"},
      {"cosine_lr_min", "0"},
      {"cosine_steps", "0"},
      {"lr_floor", "1e-06"},
      // augmentation
      {"augment", "true"},
      {"rotation", "20"},
      {"flip_prob", "0.5"},
      {"zoom_min", "0.8"},
      {"zoom_max", "1.2"},
      {"contrast_min", "0.8"},
      {"contrast_max", "1.2"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  require(!v.empty() && end == v.c_str() + v.size(), ErrorCode::InvalidArgument,
          key + ": expected a number, got '" + v + "'");
  return d;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && ptr == v.data() + v.size(), ErrorCode::InvalidArgument,
          key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

}  // namespace

Config::Config() : values_(defaults()) {}

bool Config::known(const std::string& key) { return defaults().count(key) > 0; }

void Config::set(const std::string& key, const std::string& value) {
  require(known(key), ErrorCode::UnknownConfigKey, "unknown config key '" + key + "'");
  values_[key] = value;
  assigned_.insert(key);
}

void Config::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::InvalidArgument,
            origin + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    require(known(key), ErrorCode::UnknownConfigKey,
            origin + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
    values_[key] = trim(line.substr(eq + 1));
    assigned_.insert(key);
  }
}

void Config::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::InvalidArgument, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path.string());
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  require(it != values_.end(), ErrorCode::UnknownConfigKey, "unknown config key '" + key + "'");
  return it->second;
}

double Config::get_double(const std::string& key) const { return parse_double(key, get(key)); }
std::uint64_t Config::get_u64(const std::string& key) const { return parse_u64(key, get(key)); }
std::size_t Config::get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

bool Config::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorCode::InvalidArgument, key + ": expected a boolean, got '" + v + "'");
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get(key))) out.push_back(parse_double(key, item));
  return out;
}

std::vector<std::size_t> Config::get_sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(get(key))) out.push_back(static_cast<std::size_t>(parse_u64(key, item)));
  return out;
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

Preset Config::preset() const {
  try {
    return parse_preset(get("preset"));
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidArgument, e.what());
  }
}

DType Config::dtype() const {
  const auto& v = get("dtype");
  if (v == "f32") return DType::F32;
  if (v == "f64") return DType::F64;
  throw Error(ErrorCode::InvalidArgument, "dtype must be f32 or f64, got '" + v + "'");
}

InputSpec Config::input() const {
  std::size_t size = get_size("image_size");
  if (size == 0) size = preset() == Preset::ResNet50 ? 224 : 32;
  return InputSpec{3, size, size};
}

HeadSpec Config::head(std::size_t classes) const {
  HeadSpec h;
  h.widths = get_sizes("head_widths");
  h.dropout_rates = get_doubles("head_dropout");
  h.leaky_alpha = get_double("leaky_alpha");
  h.classes = classes;
  require(h.widths.size() == h.dropout_rates.size(), ErrorCode::InvalidArgument,
          "head_widths and head_dropout must have the same length");
  return h;
}

TrainConfig Config::train_config() const {
  TrainConfig c;
  if (get("epochs") != "auto") c.max_epochs = get_size("epochs");
  c.batch_size = get_size("batch_size");
  c.val_fraction = get_double("val_fraction");
  c.seed = get_u64("seed");
  c.shuffle = get_bool("shuffle");
  c.prefetch_chunk = get_size("prefetch_chunk");
  try {
    c.optimizer.rule = parse_update_rule(get("optimizer"));
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidArgument, e.what());
  }
  c.optimizer.base_lr = get_double("lr");
  c.optimizer.momentum = get_double("momentum");
  c.optimizer.beta1 = get_double("beta1");
  c.optimizer.beta2 = get_double("beta2");
  c.optimizer.epsilon = get_double("epsilon");
  c.early_stopping = get_bool("early_stopping");
  c.early_stop_patience = get_size("patience");
  c.restore_best = get_bool("restore_best");
  c.plateau = get_bool("plateau");
  c.plateau_factor = get_double("plateau_factor");
  c.plateau_patience = get_size("plateau_patience");
  c.plateau_min_lr = get_double("plateau_min_lr");
  c.min_delta = get_double("min_delta");
  c.cosine = get_bool("cosine");
  c.cosine_lr_min = get_double("cosine_lr_min");
  c.cosine_steps = get_size("cosine_steps");
  c.lr_floor = get_double("lr_floor");
  if (get_bool("augment")) {
    AugmentConfig a;
    a.rotation_degrees = get_double("rotation");
    a.flip_probability = get_double("flip_prob");
    a.zoom_min = get_double("zoom_min");
    a.zoom_max = get_double("zoom_max");
    a.contrast_min = get_double("contrast_min");
    a.contrast_max = get_double("contrast_max");
    c.augment = a;
  } else {
    c.augment.reset();
  }
  c.validate();
  return c;
}

}  // namespace leafnet::cli
