#include "lilac/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "lilac/checkpoint.hpp"
#include "lilac/error.hpp"

namespace lilac {

void AppConfig::validate() const {
  backbone.validate();
  train.validate();
  backbone_train.validate();
  data.validate();
  eval.validate();
  if (data.frames % backbone.time_divisor() != 0) {
    throw ConfigError("data.frames = " + std::to_string(data.frames) + " must be divisible by " +
                      std::to_string(backbone.time_divisor()));
  }
  if (data.num_styles != backbone.num_styles) throw ConfigError("data.num_styles must equal backbone.num_styles");
  if (backbone.context_channels != backbone.latent_channels) {
    throw ConfigError("backbone.context_channels must equal latent_channels (context is encoded by the same codec)");
  }
}

LatentCodec make_codec(const AppConfig& c) {
  return LatentCodec(c.backbone.latent_channels, c.data.num_styles, c.data.texture_amplitude, c.data.seed);
}

std::vector<SyntheticSample> train_split(const AppConfig& c) {
  return generate_dataset(c.data.samples, c.data, c.data.seed);
}

std::vector<SyntheticSample> test_split(const AppConfig& c) {
  return generate_dataset(c.data.test_samples, c.data, c.data.seed + 0x9e3779b97f4a7c15ULL);
}

AppConfig default_config() {
  AppConfig c;
  c.train.base_lr = 3e-3;
  c.backbone_train = c.train;
  return c;
}

namespace {

using Setter = std::function<void(const toml::node&)>;

std::string where(const toml::node& n) {
  const auto& src = n.source();
  return " (line " + std::to_string(src.begin.line) + ")";
}

template <typename T>
Setter integer(T& field) {
  return [&field](const toml::node& n) {
    const auto v = n.value<std::int64_t>();
    if (!v || *v < 0) throw ConfigError("expected a non-negative integer" + where(n));
    field = static_cast<T>(*v);
  };
}

Setter real(double& field) {
  return [&field](const toml::node& n) {
    const auto v = n.value<double>();
    if (!v) throw ConfigError("expected a number" + where(n));
    field = *v;
  };
}

Setter int_list(std::vector<std::size_t>& field) {
  return [&field](const toml::node& n) {
    const auto* arr = n.as_array();
    if (!arr) throw ConfigError("expected an array of integers" + where(n));
    field.clear();
    for (const auto& e : *arr) {
      const auto v = e.value<std::int64_t>();
      if (!v || *v <= 0) throw ConfigError("expected positive integers" + where(n));
      field.push_back(static_cast<std::size_t>(*v));
    }
  };
}

void apply(const toml::table& table, const std::string& section, const std::map<std::string, Setter>& setters,
           const std::vector<std::string>& subtables = {}) {
  for (const auto& [key, node] : table) {
    const std::string k(key.str());
    if (std::find(subtables.begin(), subtables.end(), k) != subtables.end()) continue;
    const auto it = setters.find(k);
    if (it == setters.end()) throw ConfigError("unknown key [" + section + "] " + k + where(node));
    it->second(node);
  }
}

std::map<std::string, Setter> train_setters(TrainConfig& t) {
  return {{"batch_size", integer(t.batch_size)},
          {"steps", integer(t.steps)},
          {"base_lr", real(t.base_lr)},
          {"warmup_steps", integer(t.warmup_steps)},
          {"min_lr", real(t.min_lr)},
          {"weight_decay", real(t.weight_decay)},
          {"dropout_p_context", real(t.dropout_context)},
          {"dropout_p_e", real(t.dropout_e)},
          {"dropout_p_c", real(t.dropout_c)},
          {"p_mean", real(t.p_mean)},
          {"p_std", real(t.p_std)},
          {"grad_clip", real(t.grad_clip)},
          {"seed", integer(t.seed)}};
}

const toml::table* section(const toml::table& root, const char* name) {
  const auto* node = root.get(name);
  if (!node) return nullptr;
  const auto* t = node->as_table();
  if (!t) throw ConfigError(std::string("[") + name + "] must be a table");
  return t;
}

}  // namespace

AppConfig parse_config(const std::string& toml_text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    throw ConfigError(source + ": " + std::string(e.description()) + " (line " +
                      std::to_string(e.source().begin.line) + ")");
  }
  AppConfig c = default_config();
  for (const auto& [key, node] : root) {
    const std::string k(key.str());
    if (k != "backbone" && k != "train" && k != "data" && k != "eval") {
      throw ConfigError("unknown section [" + k + "]" + where(node));
    }
  }
  if (const auto* t = section(root, "backbone")) {
    auto& b = c.backbone;
    apply(*t, "backbone",
          {{"latent_channels", integer(b.latent_channels)},
           {"levels", int_list(b.levels)},
           {"blocks_per_level", integer(b.blocks_per_level)},
           {"embed_dim", integer(b.embed_dim)},
           {"context_channels", integer(b.context_channels)},
           {"num_styles", integer(b.num_styles)},
           {"fourier_features", integer(b.fourier_features)},
           {"frame_rate_hz", real(b.frame_rate_hz)}});
  }
  if (const auto* t = section(root, "train")) {
    apply(*t, "train", train_setters(c.train), {"backbone"});
    c.backbone_train = c.train;
    if (const auto* bt = section(*t, "backbone")) apply(*bt, "train.backbone", train_setters(c.backbone_train));
  } else {
    c.backbone_train = c.train;
  }
  if (const auto* t = section(root, "data")) {
    auto& d = c.data;
    apply(*t, "data",
          {{"samples", integer(d.samples)},
           {"test_samples", integer(d.test_samples)},
           {"frames", integer(d.frames)},
           {"chord_frames", integer(d.chord_frames)},
           {"num_styles", integer(d.num_styles)},
           {"style_coupling", real(d.style_coupling)},
           {"passing_prob", real(d.passing_prob)},
           {"passing_level", real(d.passing_level)},
           {"texture_amplitude", real(d.texture_amplitude)},
           {"seed", integer(d.seed)}});
  }
  if (const auto* t = section(root, "eval")) {
    auto& e = c.eval;
    apply(*t, "eval",
          {{"samples", integer(e.samples)},
           {"batch_size", integer(e.batch_size)},
           {"steps", integer(e.sampler.steps)},
           {"sigma_min", real(e.sampler.sigma_min)},
           {"sigma_max", real(e.sampler.sigma_max)},
           {"rho", real(e.sampler.rho)},
           {"cfg_weight", real(e.cfg_weight)},
           {"seed", integer(e.seed)}});
  }
  c.validate();
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string());
}

namespace {

nlohmann::json train_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},       {"steps", t.steps},
          {"base_lr", t.base_lr},             {"warmup_steps", t.warmup_steps},
          {"min_lr", t.min_lr},               {"weight_decay", t.weight_decay},
          {"dropout_p_context", t.dropout_context}, {"dropout_p_e", t.dropout_e},
          {"dropout_p_c", t.dropout_c},       {"p_mean", t.p_mean},
          {"p_std", t.p_std},                 {"grad_clip", t.grad_clip},
          {"seed", t.seed}};
}

}  // namespace

nlohmann::json to_json(const AppConfig& c) {
  const auto& d = c.data;
  const auto& e = c.eval;
  return {{"backbone", to_json(c.backbone)},
          {"train", train_json(c.train)},
          {"train.backbone", train_json(c.backbone_train)},
          {"data",
           {{"samples", d.samples},
            {"test_samples", d.test_samples},
            {"frames", d.frames},
            {"chord_frames", d.chord_frames},
            {"num_styles", d.num_styles},
            {"style_coupling", d.style_coupling},
            {"passing_prob", d.passing_prob},
            {"passing_level", d.passing_level},
            {"texture_amplitude", d.texture_amplitude},
            {"seed", d.seed}}},
          {"eval",
           {{"samples", e.samples},
            {"batch_size", e.batch_size},
            {"steps", e.sampler.steps},
            {"sigma_min", e.sampler.sigma_min},
            {"sigma_max", e.sampler.sigma_max},
            {"rho", e.sampler.rho},
            {"cfg_weight", e.cfg_weight},
            {"seed", e.seed}}}};
}

std::string config_digest(const AppConfig& config) { return sha256_hex(to_json(config).dump()); }

}  // namespace lilac
