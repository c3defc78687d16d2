// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "markdiff/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "markdiff/errors.hpp"

namespace markdiff {

using nlohmann::json;

namespace {

struct Field {
  std::function<void(RunConfig&, const json&)> read;
  std::function<json(const RunConfig&)> write;
};

template <typename T>
T expect(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
        throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has an invalid value: " + v.dump());
  }
}

template <typename A>
A expect_array(const json& v, const std::string& key) {
  A out{};
  if (!v.is_array() || v.size() != out.size())
    throw ConfigError("config key '" + key + "' must be an array of " + std::to_string(out.size()) + " integers");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = expect<typename A::value_type>(v[i], key);
  return out;
}

#define MARKDIFF_FIELD(name)                                                                                 \
  {                                                                                                          \
    #name, Field {                                                                                           \
      [](RunConfig& c, const json& v) { c.name = expect<decltype(c.name)>(v, #name); },                     \
          [](const RunConfig& c) { return json(c.name); }                                                   \
    }                                                                                                        \
  }
#define MARKDIFF_ARRAY_FIELD(name)                                                                           \
  {                                                                                                          \
    #name, Field {                                                                                           \
      [](RunConfig& c, const json& v) { c.name = expect_array<decltype(c.name)>(v, #name); },               \
          [](const RunConfig& c) { return json(c.name); }                                                   \
    }                                                                                                        \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      MARKDIFF_FIELD(seed),
      MARKDIFF_FIELD(image_height),
      MARKDIFF_FIELD(image_width),
      MARKDIFF_FIELD(corpus_size),
      MARKDIFF_FIELD(d_model),
      MARKDIFF_FIELD(max_tokens),
      MARKDIFF_ARRAY_FIELD(encoder_channels),
      MARKDIFF_ARRAY_FIELD(unet_channels),
      MARKDIFF_FIELD(attn_dim),
      MARKDIFF_FIELD(time_dim),
      MARKDIFF_FIELD(ccam_blocks),
      MARKDIFF_FIELD(crossattn_blocks),
      MARKDIFF_FIELD(T),
      MARKDIFF_FIELD(beta_start),
      MARKDIFF_FIELD(beta_end),
      MARKDIFF_FIELD(lambda),
      MARKDIFF_FIELD(beta_fa),
      MARKDIFF_FIELD(tau),
      MARKDIFF_FIELD(num_negatives),
      MARKDIFF_FIELD(exp_clamp),
      MARKDIFF_FIELD(cl_denominator),
      MARKDIFF_FIELD(batch),
      MARKDIFF_FIELD(anchors_per_step),
      MARKDIFF_FIELD(lr),
      MARKDIFF_FIELD(warmup_steps),
      MARKDIFF_FIELD(lr_schedule),
      MARKDIFF_FIELD(steps),
      MARKDIFF_FIELD(checkpoint_every),
      MARKDIFF_FIELD(threads),
      MARKDIFF_FIELD(corpus_dir),
      MARKDIFF_FIELD(out_dir),
      MARKDIFF_FIELD(resume_from),
      MARKDIFF_FIELD(gradcheck_eps),
      MARKDIFF_FIELD(verify_samples),
  };
  return table;
}

#undef MARKDIFF_FIELD
#undef MARKDIFF_ARRAY_FIELD

void apply_json(RunConfig& cfg, const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  const auto& table = fields();
  for (const auto& [key, value] : doc.items()) {
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.read(cfg, value);
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

void RunConfig::validate() const {
  require(image_height > 0 && image_width > 0, "image dimensions must be positive");
  require(corpus_size >= 1, "corpus_size must be at least 1");
  require(T >= 1, "T must be at least 1");
  require(std::isfinite(beta_start) && std::isfinite(beta_end) && beta_start > 0.0 && beta_end < 1.0 &&
              beta_start <= beta_end,
          "beta schedule needs 0 < beta_start <= beta_end < 1");
  require(cl_denominator == "with_positive" || cl_denominator == "negatives_only",
          "cl_denominator must be 'with_positive' or 'negatives_only'");
  require(lr_schedule == "constant" || lr_schedule == "cosine", "lr_schedule must be 'constant' or 'cosine'");
  require(std::isfinite(lr) && lr > 0.0, "lr must be positive");
  require(batch >= 2, "batch must be at least 2");
  require(batch > num_negatives, "batch must exceed num_negatives");
  require(anchors_per_step >= 1 && anchors_per_step <= batch, "anchors_per_step must lie in [1, batch]");
  require(checkpoint_every >= 1, "checkpoint_every must be at least 1");
  require(threads >= 1, "threads must be at least 1");
  require(gradcheck_eps >= 1e-6 && gradcheck_eps <= 1e-3, "gradcheck_eps must lie in [1e-6, 1e-3]");
  require(verify_samples >= 10000, "verify_samples must be at least 10000");
  require(max_tokens >= 1 && max_tokens <= markup::kMaxTokens,
          "max_tokens must lie in [1, " + std::to_string(markup::kMaxTokens) + "]");
  markdiff::validate(model());
  diffusion::validate(loss_weights());
  NoiseSchedule(T, beta_start, beta_end);
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.encoder.image_height = image_height;
  m.encoder.image_width = image_width;
  m.encoder.d_model = d_model;
  m.encoder.max_tokens = max_tokens;
  m.encoder.conv_channels = encoder_channels;
  m.unet.channels = unet_channels;
  m.unet.attn_dim = attn_dim;
  m.unet.time_dim = time_dim;
  m.unet.ccam_blocks = ccam_blocks;
  m.unet.crossattn_blocks = crossattn_blocks;
  return m;
}

NoiseSchedule RunConfig::schedule() const { return NoiseSchedule(T, beta_start, beta_end); }

diffusion::LossWeights RunConfig::loss_weights() const {
  diffusion::LossWeights w;
  w.lambda = lambda;
  w.beta_fa = beta_fa;
  w.tau = tau;
  w.num_negatives = num_negatives;
  w.exp_clamp = exp_clamp;
  w.cl_denominator = cl_denominator == "negatives_only" ? diffusion::ClDenominator::NegativesOnly
                                                        : diffusion::ClDenominator::WithPositive;
  return w;
}

RunConfig config_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  apply_json(cfg, doc);
  cfg.validate();
  return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
  json doc = json::object();
  for (const auto& [key, field] : fields()) doc[key] = field.write(cfg);
  return doc.dump(2) + "\n";
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void apply_env_overrides(RunConfig& cfg, char** envp) {
  if (!envp) return;
  constexpr std::string_view prefix = "FSACDM_";
  std::map<std::string, std::string> upper_to_key;
  for (const auto& [key, field] : fields()) {
    std::string up = key;
    std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
    upper_to_key.emplace(up, key);
  }
  std::map<std::string, std::string> overrides;
  for (char** e = envp; *e; ++e) {
    const std::string_view entry(*e);
    if (!entry.starts_with(prefix)) continue;
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    const std::string name(entry.substr(prefix.size(), eq - prefix.size()));
    auto it = upper_to_key.find(name);
    if (it == upper_to_key.end()) throw ConfigError("unknown environment override FSACDM_" + name);
    overrides[it->second] = std::string(entry.substr(eq + 1));
  }
  for (const auto& [key, raw] : overrides) {
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    try {
      apply_json(cfg, json{{key, value}});
    } catch (const ConfigError&) {
      if (value.is_string()) throw;
      apply_json(cfg, json{{key, raw}});
    }
  }
  cfg.validate();
}

}  // namespace markdiff
