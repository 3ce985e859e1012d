// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "tiue/data.hpp"
#include "tiue/distill.hpp"
#include "tiue/schedule.hpp"
#include "tiue/unet.hpp"

namespace tiue {

/// Everything a run needs. Every section is optional in the JSON document and
/// falls back to the defaults below; unknown keys anywhere are rejected.
///
///   {
///     "model":    {image_size, in_channels, out_channels, base_channels, channel_mults,
///                  resblocks, time_embed_dim, cond_dim, groups},
///     "schedule": {steps, beta_start, beta_end, kind: "linear" | "scaled_linear"},
///     "data":     {count, seed, position_jitter, size_min, size_max, background},
///     "teacher":  {lr, batch, iterations, ema_decay, cond_drop_prob, seed, log_every},
///     "distill":  {lr_student, lr_lora, guidance_scale, k, kl_weight, w_kind: "sigma2" | "constant",
///                  ema_decay, t_min_frac, t_max_frac, cond_drop_prob, batch, iterations, seed,
///                  lora_rank, lora_alpha, spacing: "trailing" | "leading", log_every}
///   }
///
/// The data image size always follows model.image_size.
struct RunConfig {
  UNetConfig model;
  ScheduleParams schedule;
  ToySpec data;
  std::int64_t data_count = 12000;
  std::uint64_t data_seed = 0;
  TeacherConfig teacher;
  DistillConfig distill;

  /// Runs every downstream validation; throws Error(ConfigInvalid) on any violation.
  void validate() const;
  nlohmann::json to_json() const;
  /// FNV-1a over the canonical JSON dump.
  std::string hash() const;
};

/// Strict parse: unknown keys and wrong types fail with ConfigInvalid.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const UNetConfig& c);
nlohmann::json to_json(const ScheduleParams& p);
nlohmann::json to_json(const SamplerPlan& p);
UNetConfig unet_config_from_json(const nlohmann::json& j);
ScheduleParams schedule_params_from_json(const nlohmann::json& j);
SamplerPlan sampler_plan_from_json(const nlohmann::json& j);

std::string fnv1a_hex(const std::string& text);

}  // namespace tiue
