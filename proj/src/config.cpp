// SPDX-License-Identifier: Apache-2.0
#include "tiue/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <type_traits>

namespace tiue {

using nlohmann::json;

namespace {

// Reads keys from one JSON object and rejects anything it was not asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail(ErrorCode::ConfigInvalid, where_ + " must be a JSON object");
  }

  template <class V>
  void get(const char* key, V& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const auto& v = j_.at(key);
    const auto path = where_ + "." + key;
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) fail(ErrorCode::ConfigInvalid, path + " must be a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer()) fail(ErrorCode::ConfigInvalid, path + " must be an integer");
      if (std::is_unsigned_v<V> && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) fail(ErrorCode::ConfigInvalid, path + " must be >= 0");
      out = v.get<V>();
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) fail(ErrorCode::ConfigInvalid, path + " must be a number");
      out = v.get<V>();
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!v.is_string()) fail(ErrorCode::ConfigInvalid, path + " must be a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<V, std::vector<int>>) {
      if (!v.is_array()) fail(ErrorCode::ConfigInvalid, path + " must be an array of integers");
      out.clear();
      for (const auto& x : v) {
        if (!x.is_number_integer()) fail(ErrorCode::ConfigInvalid, path + " must be an array of integers");
        out.push_back(x.get<int>());
      }
    } else {
      static_assert(sizeof(V) == 0, "unsupported config value type");
    }
  }

  const json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(ErrorCode::ConfigInvalid, "unknown key '" + where_ + "." + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_model(const json& j, UNetConfig& c, const std::string& where) {
  StrictObject o(j, where);
  o.get("image_size", c.image_size);
  o.get("in_channels", c.in_channels);
  o.get("out_channels", c.out_channels);
  o.get("base_channels", c.base_channels);
  o.get("channel_mults", c.channel_mults);
  o.get("resblocks", c.resblocks);
  o.get("time_embed_dim", c.time_embed_dim);
  o.get("cond_dim", c.cond_dim);
  o.get("groups", c.groups);
  o.finish();
}

void read_schedule(const json& j, ScheduleParams& p, const std::string& where) {
  StrictObject o(j, where);
  o.get("steps", p.steps);
  o.get("beta_start", p.beta_start);
  o.get("beta_end", p.beta_end);
  std::string kind = to_string(p.kind);
  o.get("kind", kind);
  o.finish();
  try {
    p.kind = beta_kind_from_string(kind);
  } catch (const Error& e) {
    fail(ErrorCode::ConfigInvalid, e.what());
  }
}

template <class F>
void as_config_error(const char* section, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigInvalid) throw;
    fail(ErrorCode::ConfigInvalid, std::string(section) + ": " + e.what());
  }
}

}  // namespace

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json to_json(const UNetConfig& c) {
  return {{"image_size", c.image_size},         {"in_channels", c.in_channels}, {"out_channels", c.out_channels},
          {"base_channels", c.base_channels},   {"channel_mults", c.channel_mults}, {"resblocks", c.resblocks},
          {"time_embed_dim", c.time_embed_dim}, {"cond_dim", c.cond_dim},       {"groups", c.groups}};
}

json to_json(const ScheduleParams& p) {
  return {{"steps", p.steps}, {"beta_start", p.beta_start}, {"beta_end", p.beta_end}, {"kind", to_string(p.kind)}};
}

json to_json(const SamplerPlan& p) { return {{"k", p.k}, {"timesteps", p.timesteps}, {"terminal", p.terminal}, {"s", p.s}, {"e", p.e}}; }

UNetConfig unet_config_from_json(const json& j) {
  UNetConfig c;
  read_model(j, c, "model");
  return c;
}

ScheduleParams schedule_params_from_json(const json& j) {
  ScheduleParams p;
  read_schedule(j, p, "schedule");
  return p;
}

SamplerPlan sampler_plan_from_json(const json& j) {
  try {
    SamplerPlan p;
    p.k = j.at("k").get<std::int64_t>();
    p.timesteps = j.at("timesteps").get<std::vector<std::int64_t>>();
    p.terminal = j.at("terminal").get<std::int64_t>();
    p.s = j.at("s").get<double>();
    p.e = j.at("e").get<std::vector<double>>();
    return p;
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidPlan, std::string("malformed sampler plan: ") + e.what());
  }
}

void RunConfig::validate() const {
  as_config_error("model", [&] { model.validate(); });
  as_config_error("schedule", [&] { build_schedule(schedule); });
  as_config_error("data", [&] { data.validate(); });
  if (data.image_size != model.image_size) fail(ErrorCode::ConfigInvalid, "data image size must equal model.image_size");
  if (data_count < 1) fail(ErrorCode::ConfigInvalid, "data.count must be >= 1");
  if (model.cond_dim != kCondDim) fail(ErrorCode::ConfigInvalid, "model.cond_dim must be " + std::to_string(kCondDim) + " for the toy conditions");
  if (model.in_channels != 3 || model.out_channels != 3) fail(ErrorCode::ConfigInvalid, "toy images need 3 input and output channels");
  as_config_error("teacher", [&] { teacher.validate(); });
  as_config_error("distill", [&] {
    distill.validate();
    if (distill.k > schedule.steps) fail(ErrorCode::ConfigInvalid, "distill.k must not exceed schedule.steps");
    make_plan(distill.k, build_schedule(schedule), distill.spacing);
  });
}

json RunConfig::to_json() const {
  const auto& t = teacher;
  const auto& d = distill;
  return {{"model", tiue::to_json(model)},
          {"schedule", tiue::to_json(schedule)},
          {"data",
           {{"count", data_count},
            {"seed", data_seed},
            {"position_jitter", data.position_jitter},
            {"size_min", data.size_min},
            {"size_max", data.size_max},
            {"background", data.background}}},
          {"teacher",
           {{"lr", t.lr},
            {"batch", t.batch},
            {"iterations", t.iterations},
            {"ema_decay", t.ema_decay},
            {"cond_drop_prob", t.cond_drop_prob},
            {"seed", t.seed},
            {"log_every", t.log_every}}},
          {"distill",
           {{"lr_student", d.lr_student},
            {"lr_lora", d.lr_lora},
            {"guidance_scale", d.guidance_scale},
            {"k", d.k},
            {"kl_weight", d.kl_weight},
            {"w_kind", to_string(d.w_kind)},
            {"ema_decay", d.ema_decay},
            {"t_min_frac", d.t_min_frac},
            {"t_max_frac", d.t_max_frac},
            {"cond_drop_prob", d.cond_drop_prob},
            {"batch", d.batch},
            {"iterations", d.iterations},
            {"seed", d.seed},
            {"lora_rank", d.lora_rank},
            {"lora_alpha", d.lora_alpha},
            {"spacing", to_string(d.spacing)},
            {"log_every", d.log_every}}}};
}

std::string RunConfig::hash() const { return fnv1a_hex(to_json().dump()); }

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  StrictObject root(j, "config");
  if (const auto* m = root.child("model")) read_model(*m, c.model, "model");
  if (const auto* s = root.child("schedule")) read_schedule(*s, c.schedule, "schedule");
  if (const auto* dj = root.child("data")) {
    StrictObject o(*dj, "data");
    o.get("count", c.data_count);
    o.get("seed", c.data_seed);
    o.get("position_jitter", c.data.position_jitter);
    o.get("size_min", c.data.size_min);
    o.get("size_max", c.data.size_max);
    o.get("background", c.data.background);
    o.finish();
  }
  c.data.image_size = c.model.image_size;
  if (const auto* tj = root.child("teacher")) {
    StrictObject o(*tj, "teacher");
    auto& t = c.teacher;
    o.get("lr", t.lr);
    o.get("batch", t.batch);
    o.get("iterations", t.iterations);
    o.get("ema_decay", t.ema_decay);
    o.get("cond_drop_prob", t.cond_drop_prob);
    o.get("seed", t.seed);
    o.get("log_every", t.log_every);
    o.finish();
  }
  if (const auto* dj = root.child("distill")) {
    StrictObject o(*dj, "distill");
    auto& d = c.distill;
    o.get("lr_student", d.lr_student);
    o.get("lr_lora", d.lr_lora);
    o.get("guidance_scale", d.guidance_scale);
    o.get("k", d.k);
    o.get("kl_weight", d.kl_weight);
    std::string w = to_string(d.w_kind), spacing = to_string(d.spacing);
    o.get("w_kind", w);
    o.get("ema_decay", d.ema_decay);
    o.get("t_min_frac", d.t_min_frac);
    o.get("t_max_frac", d.t_max_frac);
    o.get("cond_drop_prob", d.cond_drop_prob);
    o.get("batch", d.batch);
    o.get("iterations", d.iterations);
    o.get("seed", d.seed);
    o.get("lora_rank", d.lora_rank);
    o.get("lora_alpha", d.lora_alpha);
    o.get("spacing", spacing);
    o.get("log_every", d.log_every);
    o.finish();
    as_config_error("distill", [&] {
      d.w_kind = weight_kind_from_string(w);
      d.spacing = spacing_from_string(spacing);
    });
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigInvalid, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigInvalid, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace tiue
