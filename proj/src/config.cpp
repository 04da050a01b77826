#include "metaprompt/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace metaprompt {
namespace {

using nlohmann::json;

struct Field {
  std::string name;
  std::function<void(Config&, const json&)> set;
  std::function<json(const Config&)> get;
};

template <typename I>
I as_integer(const std::string& name, const json& v) {
  if (!v.is_number_integer()) {
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (std::floor(d) == d) return static_cast<I>(d);
    }
    throw ConfigError(name, "expected an integer, got " + v.dump());
  }
  if constexpr (std::is_unsigned_v<I>) {
    if (v.is_number_unsigned()) return static_cast<I>(v.get<std::uint64_t>());
    const auto s = v.get<std::int64_t>();
    if (s < 0) throw ConfigError(name, "expected a non-negative integer, got " + v.dump());
    return static_cast<I>(s);
  } else {
    const auto s = v.get<std::int64_t>();
    if (s < static_cast<std::int64_t>(std::numeric_limits<I>::min()) ||
        s > static_cast<std::int64_t>(std::numeric_limits<I>::max())) {
      throw ConfigError(name, "integer out of range: " + v.dump());
    }
    return static_cast<I>(s);
  }
}

double as_number(const std::string& name, const json& v) {
  if (!v.is_number()) throw ConfigError(name, "expected a number, got " + v.dump());
  return v.get<double>();
}

bool as_bool(const std::string& name, const json& v) {
  if (!v.is_boolean()) throw ConfigError(name, "expected true or false, got " + v.dump());
  return v.get<bool>();
}

std::string as_string(const std::string& name, const json& v) {
  if (!v.is_string()) throw ConfigError(name, "expected a string, got " + v.dump());
  return v.get<std::string>();
}

template <typename I>
Field int_field(const std::string& name, I Config::*member) {
  return {name, [=](Config& c, const json& v) { c.*member = as_integer<I>(name, v); },
          [=](const Config& c) { return json(c.*member); }};
}

Field num_field(const std::string& name, double Config::*member) {
  return {name, [=](Config& c, const json& v) { c.*member = as_number(name, v); },
          [=](const Config& c) { return json(c.*member); }};
}

Field bool_field(const std::string& name, bool Config::*member) {
  return {name, [=](Config& c, const json& v) { c.*member = as_bool(name, v); },
          [=](const Config& c) { return json(c.*member); }};
}

Field str_field(const std::string& name, std::string Config::*member) {
  return {name, [=](Config& c, const json& v) { c.*member = as_string(name, v); },
          [=](const Config& c) { return json(c.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"task",
                 [](Config& c, const json& v) {
                   const auto t = parse_task(as_string("task", v));
                   if (!t) throw ConfigError("task", "expected \"segmentation\" or \"depth\", got " + v.dump());
                   c.task = *t;
                 },
                 [](const Config& c) { return json(std::string(task_name(c.task))); }});
    f.push_back(int_field("H", &Config::H));
    f.push_back(int_field("W", &Config::W));
    f.push_back(int_field("K", &Config::K));
    f.push_back(num_field("max_depth", &Config::max_depth));
    f.push_back(int_field("N", &Config::N));
    f.push_back(int_field("D", &Config::D));
    f.push_back(int_field("t_steps", &Config::t_steps));
    f.push_back(num_field("lr", &Config::lr));
    f.push_back(num_field("weight_decay", &Config::weight_decay));
    f.push_back(int_field("warmup_iters", &Config::warmup_iters));
    f.push_back(int_field("total_iters", &Config::total_iters));
    f.push_back(int_field("batch_size", &Config::batch_size));
    f.push_back(int_field("seed", &Config::seed));
    f.push_back(int_field("data_seed", &Config::data_seed));
    f.push_back(int_field("encoder_seed", &Config::encoder_seed));
    f.push_back(bool_field("rearrangement", &Config::rearrangement));
    f.push_back(bool_field("modulated_timesteps", &Config::modulated_timesteps));
    f.push_back(str_field("out_dir", &Config::out_dir));
    f.push_back(str_field("checkpoint", &Config::checkpoint));
    f.push_back({"unet_channels",
                 [](Config& c, const json& v) {
                   if (!v.is_array() || v.size() != kPyramidLevels) {
                     throw ConfigError("unet_channels", "expected an array of 4 integers, got " + v.dump());
                   }
                   for (int i = 0; i < kPyramidLevels; ++i) {
                     c.unet_channels[i] = as_integer<std::int64_t>("unet_channels", v[i]);
                   }
                 },
                 [](const Config& c) { return json(c.unet_channels); }});
    f.push_back(int_field("time_embed_dim", &Config::time_embed_dim));
    f.push_back(int_field("head_width", &Config::head_width));
    f.push_back(int_field("train_count", &Config::train_count));
    f.push_back(int_field("val_count", &Config::val_count));
    f.push_back(int_field("object_count_min", &Config::object_count_min));
    f.push_back(int_field("object_count_max", &Config::object_count_max));
    f.push_back(num_field("power", &Config::power));
    f.push_back(num_field("grad_clip", &Config::grad_clip));
    f.push_back(num_field("beta1", &Config::beta1));
    f.push_back(num_field("beta2", &Config::beta2));
    f.push_back(num_field("eps", &Config::eps));
    f.push_back(int_field("ignore_index", &Config::ignore_index));
    f.push_back(int_field("log_interval", &Config::log_interval));
    f.push_back(int_field("eval_interval", &Config::eval_interval));
    f.push_back(int_field("checkpoint_interval", &Config::checkpoint_interval));
    f.push_back(str_field("tta", &Config::tta));
    f.push_back(int_field("tta_window", &Config::tta_window));
    f.push_back(int_field("tta_stride", &Config::tta_stride));
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& name) {
  for (const auto& f : fields()) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

}  // namespace

void Config::validate() const {
  require(H >= 8 && H % 8 == 0, "H", "image height must be a positive multiple of 8, got " + std::to_string(H));
  require(W >= 8 && W % 8 == 0, "W", "image width must be a positive multiple of 8, got " + std::to_string(W));
  require(K >= 2 && K <= 255, "K", "class count must lie in [2, 255], got " + std::to_string(K));
  require(max_depth > 0.0, "max_depth", "must be positive");
  require(N >= 1, "N", "prompt count must be at least 1");
  require(D >= 1, "D", "prompt dimension must be at least 1");
  require(t_steps >= 1, "t_steps", "must be at least 1");
  require(lr > 0.0, "lr", "must be positive");
  require(weight_decay >= 0.0, "weight_decay", "must be non-negative");
  require(warmup_iters >= 0, "warmup_iters", "must be non-negative");
  require(total_iters > warmup_iters, "total_iters", "must exceed warmup_iters");
  require(batch_size >= 1, "batch_size", "must be at least 1");
  for (auto c : unet_channels) require(c >= 1, "unet_channels", "channel counts must be positive");
  require(time_embed_dim >= 1, "time_embed_dim", "must be positive");
  require(head_width >= 1, "head_width", "must be positive");
  require(train_count >= 1, "train_count", "must be at least 1");
  require(val_count >= 1, "val_count", "must be at least 1");
  require(object_count_min >= 0, "object_count_min", "must be non-negative");
  require(object_count_max >= object_count_min, "object_count_max", "must be at least object_count_min");
  require(power > 0.0, "power", "must be positive");
  require(grad_clip > 0.0, "grad_clip", "must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0, "beta1", "must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "beta2", "must lie in [0, 1)");
  require(eps > 0.0, "eps", "must be positive");
  require(ignore_index < 0 || ignore_index >= K, "ignore_index", "must not be a valid class index");
  require(log_interval >= 1, "log_interval", "must be at least 1");
  require(eval_interval >= 0, "eval_interval", "must be non-negative");
  require(checkpoint_interval >= 0, "checkpoint_interval", "must be non-negative");
  require(!out_dir.empty(), "out_dir", "must not be empty");
  TtaMode mode;
  try {
    mode = tta_mode();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("tta", e.what());
  }
  if (mode.sliding) {
    require(tta_window >= 8 && tta_window % 8 == 0 && tta_window <= std::min(H, W), "tta_window",
            "must be a multiple of 8 no larger than the image");
    require(tta_stride >= 1 && tta_stride <= tta_window, "tta_stride", "must lie in [1, tta_window]");
  }
}

ModelSpec Config::model_spec() const {
  ModelSpec s;
  s.task = task;
  s.classes = K;
  s.max_depth = max_depth;
  s.prompt_count = N;
  s.unet.channels = unet_channels;
  s.unet.prompt_dim = D;
  s.unet.time_embed_dim = time_embed_dim;
  s.head_width = head_width;
  s.t_steps = t_steps;
  s.rearrangement = rearrangement;
  s.modulated_timesteps = modulated_timesteps;
  s.init_seed = seed;
  s.encoder_seed = encoder_seed;
  return s;
}

SceneSpec Config::scene_spec() const {
  return {H, W, K, max_depth, object_count_min, object_count_max};
}

AdamWConfig Config::optimizer() const { return {beta1, beta2, eps, weight_decay}; }

TtaMode Config::tta_mode() const { return parse_tta_mode(tta, tta_window, tta_stride); }

Config task_defaults(Task task) {
  Config c;
  c.task = task;
  if (task == Task::segmentation) {
    c.N = 150;
    c.lr = 8e-5;
    c.weight_decay = 1e-3;
    c.warmup_iters = 1500;
  } else {
    c.N = 50;
    c.lr = 5e-4;
    c.weight_decay = 0.1;
    c.warmup_iters = 50;
  }
  return c;
}

Config resolve_config(const std::string& json_text, const std::vector<std::string>& overrides) {
  json file = json::object();
  if (!json_text.empty()) {
    try {
      file = json::parse(json_text);
    } catch (const json::parse_error& e) {
      throw ConfigError("", std::string("invalid JSON: ") + e.what());
    }
    if (!file.is_object()) throw ConfigError("", "config must be a JSON object");
  }
  std::vector<std::pair<std::string, json>> sets;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("", "override '" + o + "' is not key=value");
    sets.emplace_back(o.substr(0, eq), parse_override_value(o.substr(eq + 1)));
  }
  for (const auto& [key, value] : file.items()) {
    if (find_field(key) == nullptr) throw ConfigError(key, "unknown key");
  }
  for (const auto& [key, value] : sets) {
    if (find_field(key) == nullptr) throw ConfigError(key, "unknown key");
  }

  Config base;
  json task_value = file.contains("task") ? file["task"] : json("segmentation");
  for (const auto& [key, value] : sets) {
    if (key == "task") task_value = value;
  }
  find_field("task")->set(base, task_value);
  Config c = task_defaults(base.task);
  for (const auto& [key, value] : file.items()) find_field(key)->set(c, value);
  for (const auto& [key, value] : sets) find_field(key)->set(c, value);
  c.validate();
  return c;
}

Config load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::string text;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return resolve_config(text, overrides);
}

std::string config_to_json(const Config& config) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& f : fields()) out[f.name] = nlohmann::ordered_json::parse(f.get(config).dump());
  return out.dump(2) + "\n";
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.name);
    return k;
  }();
  return keys;
}

}  // namespace metaprompt
