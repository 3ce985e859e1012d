// SPDX-License-Identifier: Apache-2.0
// tiue: export toy data, train a toy teacher, distill a one-pass student, sample, analyze, evaluate, benchmark.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "tiue/analysis.hpp"
#include "tiue/config.hpp"
#include "tiue/distill.hpp"
#include "tiue/io.hpp"
#include "tiue/metrics.hpp"

namespace fs = std::filesystem;
using namespace tiue;
using nlohmann::json;

namespace {

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigInvalid:
    case ErrorCode::InvalidSpec:
    case ErrorCode::InvalidK:
    case ErrorCode::InvalidSteps:
    case ErrorCode::InvalidRange:
    case ErrorCode::DecayOutOfRange:
    case ErrorCode::KTooLarge:
    case ErrorCode::UnknownClass:
    case ErrorCode::InvalidAttr:
      return 2;
    case ErrorCode::Corrupt:
    case ErrorCode::VersionUnsupported:
    case ErrorCode::CheckpointInvalid:
      return 3;
    default:
      return 1;
  }
}

int default_threads() {
  if (const char* env = std::getenv("TIUE_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

void log_line(const std::string& s) { std::cerr << s << "\n"; }

struct LoadedModel {
  Checkpoint ck;
  DiffusionModel<float> model;
};

LoadedModel load_model(const std::string& path) {
  auto ck = load_checkpoint(path);
  try {
    ck.meta.model.validate();
  } catch (const Error& e) {
    fail(ErrorCode::CheckpointInvalid, std::string("checkpoint model config: ") + e.what());
  }
  UNet<float> net(ck.meta.model);
  auto weights = served_weights(ck.tensors);
  for (const auto& name : net.init_params(0).names())
    if (!weights.contains(name)) fail(ErrorCode::CheckpointInvalid, "checkpoint is missing parameter '" + name + "'");
  DiffusionModel<float> model{net, std::move(weights), build_schedule(ck.meta.schedule)};
  return {std::move(ck), std::move(model)};
}

std::vector<std::int64_t> parse_int_list(const std::string& s) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoll(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorCode::ConfigInvalid, "'" + s + "' is not a comma-separated integer list");
    }
  }
  if (out.empty()) fail(ErrorCode::ConfigInvalid, "empty integer list");
  return out;
}

// ---------------------------------------------------------------- export-data

struct ExportArgs {
  std::string config, out;
  std::int64_t count = -1;
  std::int64_t seed = -1;
};

int run_export(const ExportArgs& a) {
  const auto cfg = load_run_config(a.config);
  const auto n = a.count >= 0 ? a.count : cfg.data_count;
  const auto seed = a.seed >= 0 ? static_cast<std::uint64_t>(a.seed) : cfg.data_seed;
  const auto data = generate_dataset(cfg.data, n, seed);
  fs::create_directories(a.out);
  json manifest = json::object();
  char name[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::snprintf(name, sizeof name, "%05zu.ppm", i);
    write_ppm(fs::path(a.out) / name, data[i].image);
    manifest[name] = {{"shape_id", data[i].shape_id}, {"color_id", data[i].color_id}, {"class_id", data[i].class_id()}};
  }
  write_file(fs::path(a.out) / "manifest.json", manifest.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- train-teacher

struct TeacherArgs {
  std::string config, out, log;
};

int run_train_teacher(const TeacherArgs& a) {
  const auto cfg = load_run_config(a.config);
  const UNet<float> net(cfg.model);
  const auto sched = build_schedule(cfg.schedule);
  const auto data = generate_dataset(cfg.data, cfg.data_count, cfg.data_seed);
  std::string csv = "iteration,loss\n";
  const auto r = train_teacher(net, sched, data, cfg.teacher, [&](const std::string& line) {
    csv += line + "\n";
    log_line("teacher " + line);
  });
  ParamStore<float> out = r.ema;
  for (const auto& e : r.raw.entries()) out.add("raw." + e.name, e.value);
  CheckpointMeta meta;
  meta.model = cfg.model;
  meta.schedule = cfg.schedule;
  meta.iterations = cfg.teacher.iterations;
  meta.config_hash = cfg.hash();
  meta.kind = "teacher";
  save_checkpoint(a.out, out, meta);
  if (!a.log.empty()) write_file(a.log, csv);
  return 0;
}

// ---------------------------------------------------------------- distill

struct DistillArgs {
  std::string teacher, config, out, log;
};

int run_distill(const DistillArgs& a) {
  const auto cfg = load_run_config(a.config);
  auto loaded = load_model(a.teacher);
  if (!(loaded.ck.meta.model == cfg.model)) fail(ErrorCode::CheckpointInvalid, "teacher model config differs from the run config");
  if (loaded.ck.meta.schedule.steps != cfg.schedule.steps || loaded.ck.meta.schedule.beta_start != cfg.schedule.beta_start ||
      loaded.ck.meta.schedule.beta_end != cfg.schedule.beta_end || loaded.ck.meta.schedule.kind != cfg.schedule.kind)
    fail(ErrorCode::CheckpointInvalid, "teacher schedule differs from the run config");
  const auto& teacher = loaded.model.params;
  std::string csv = distill_log_header() + "\n";
  const auto r = distill_loop(loaded.model.net, loaded.model.schedule, teacher, cfg.distill, prompt_set(), [&](const std::string& line) {
    csv += line + "\n";
    log_line("distill " + line);
  });
  ParamStore<float> out = r.student_ema;
  for (const auto& e : r.student_raw.entries()) out.add("raw." + e.name, e.value);
  for (const auto& e : r.lora.tensors.entries()) out.add(e.name, e.value);
  CheckpointMeta meta;
  meta.model = cfg.model;
  meta.schedule = cfg.schedule;
  meta.plan = r.plan;
  meta.iterations = cfg.distill.iterations;
  meta.config_hash = cfg.hash();
  meta.kind = "student";
  meta.lora_rank = cfg.distill.lora_rank;
  meta.lora_alpha = cfg.distill.lora_alpha;
  save_checkpoint(a.out, out, meta);
  if (!a.log.empty()) write_file(a.log, csv);
  return 0;
}

// ---------------------------------------------------------------- sample

struct SampleArgs {
  std::string model, mode = "ddim", out, interp, run_id = "sample";
  std::int64_t steps = 0, k = 0, count = 16;
  std::uint64_t seed = 0;
  int threads = 1;
  double guidance = 1.0;
};

int run_sample(const SampleArgs& a) {
  auto loaded = load_model(a.model);
  const auto& model = loaded.model;
  SampleRequest<float> req;
  req.seed = a.seed;
  req.mode = sample_mode_from_string(a.mode);
  req.thread_count = a.threads;
  req.guidance_scale = a.guidance;
  if (req.mode == SampleMode::Ddim) {
    if (a.steps < 1) fail(ErrorCode::ConfigInvalid, "ddim sampling needs --steps");
    req.steps = a.steps;
  } else {
    const auto& stored = loaded.ck.meta.plan;
    if (stored && (a.k == 0 || a.k == stored->k)) {
      req.plan = *stored;
    } else {
      if (a.k < 1) fail(ErrorCode::ConfigInvalid, "loop-free sampling needs --k (or a checkpoint with a stored plan)");
      req.plan = make_plan(a.k, model.schedule);
    }
  }

  std::vector<std::vector<double>> conds;
  json frames = json::array();
  bool shared_noise = false;
  if (!a.interp.empty()) {
    const auto parts = parse_int_list(a.interp);
    if (parts.size() != 3) fail(ErrorCode::ConfigInvalid, "--interp expects C1,C2,N");
    conds = interpolate_conditions(cond_embed(static_cast<int>(parts[0])), cond_embed(static_cast<int>(parts[1])), static_cast<int>(parts[2]));
    shared_noise = true;
  } else {
    if (a.count < 1) fail(ErrorCode::ConfigInvalid, "--count must be >= 1");
    conds = cycled_conditions(a.count);
  }

  fs::create_directories(a.out);
  std::vector<Tensor<float>> images;
  if (shared_noise) {
    // Every interpolation frame starts from the same noise so only the condition varies.
    for (const auto& c : conds) {
      auto one = sample_many(model, req, {c});
      images.push_back(Tensor<float>(Shape{3, one.dim(2), one.dim(3)}, std::vector<float>(one.values().begin(), one.values().end())));
    }
  } else {
    const auto all = sample_many(model, req, conds);
    const auto per = all.numel() / all.dim(0);
    for (std::int64_t i = 0; i < all.dim(0); ++i)
      images.push_back(Tensor<float>(Shape{3, all.dim(2), all.dim(3)}, std::vector<float>(all.data() + i * per, all.data() + (i + 1) * per)));
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[160];
    std::snprintf(name, sizeof name, "%s_%llu_%05zu.ppm", a.run_id.c_str(), static_cast<unsigned long long>(a.seed), i);
    write_ppm(fs::path(a.out) / name, images[i]);
    frames.push_back({{"file", name}, {"noise_index", shared_noise ? 0 : i}, {"class", shared_noise ? -1 : static_cast<int>(i % kClassCount)}});
  }
  json manifest{{"model", fs::path(a.model).filename().string()},
                {"mode", to_string(req.mode)},
                {"seed", a.seed},
                {"guidance_scale", a.guidance},
                {"frames", frames}};
  if (req.mode == SampleMode::Ddim) manifest["steps"] = a.steps;
  else manifest["plan"] = to_json(*req.plan);
  if (!a.interp.empty()) manifest["interp"] = a.interp;
  write_file(fs::path(a.out) / "manifest.json", manifest.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::string model, out, quality_steps, real;
  std::int64_t steps = 50, probes = 16, count = 500;
  std::uint64_t seed = 0;
};

int run_analyze(const AnalyzeArgs& a) {
  auto loaded = load_model(a.model);
  const auto& model = loaded.model;
  if (!a.quality_steps.empty()) {
    if (a.real.empty()) fail(ErrorCode::ConfigInvalid, "--quality-steps needs --real DIR");
    const auto steps = parse_int_list(a.quality_steps);
    const auto real_images = read_ppm_dir(a.real);
    const Embedder embed = [&](const Tensor<float>& imgs) { return embed_teacher(model.net, model.params, imgs, Provenance::Generated); };
    auto real = embed(real_images);
    real.provenance = Provenance::Real;
    const auto points = quality_vs_steps(model, steps, a.count, real, a.seed, embed);
    write_file(a.out, quality_csv(points));
    return 0;
  }
  const auto trace = feature_similarity_trace(model, a.steps, a.probes, a.seed);
  write_file(a.out, trace.to_csv());
  write_file(a.out + ".json", trace.metadata_json() + "\n");
  std::fprintf(stderr, "mean enc_sim %.6f  mean dec_sim %.6f\n", trace.mean_enc(), trace.mean_dec());
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string real, fake, embedding = "pixels", out;
  int k = 3;
};

int run_eval(const EvalArgs& a) {
  const auto real_images = read_ppm_dir(a.real);
  const auto fake_images = read_ppm_dir(a.fake);
  FeatureSet real, fake;
  if (a.embedding == "pixels") {
    real = embed_pixels(real_images, Provenance::Real);
    fake = embed_pixels(fake_images, Provenance::Generated);
  } else if (a.embedding.rfind("teacher:", 0) == 0) {
    const auto loaded = load_model(a.embedding.substr(8));
    real = embed_teacher(loaded.model.net, loaded.model.params, real_images, Provenance::Real);
    fake = embed_teacher(loaded.model.net, loaded.model.params, fake_images, Provenance::Generated);
  } else {
    fail(ErrorCode::ConfigInvalid, "--embedding must be 'pixels' or 'teacher:CKPT'");
  }
  auto report = evaluate(real, fake, a.k);
  report.has_noise = true;
  report.noise = normality_stats(std::span<const float>(fake_images.data(), static_cast<std::size_t>(fake_images.numel())));
  const auto text = report.to_json() + "\n";
  if (a.out.empty()) std::cout << text;
  else write_file(a.out, text);
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string model, out, threads = "1,2,4,8";
  std::int64_t k = 4, batch = 16, repeats = 10;
};

int run_bench(const BenchArgs& a) {
  auto loaded = load_model(a.model);
  const auto& model = loaded.model;
  const auto plan = make_plan(a.k, model.schedule);
  const auto threads = parse_int_list(a.threads);
  if (a.batch < 1 || a.repeats < 1) fail(ErrorCode::ConfigInvalid, "--batch and --repeats must be >= 1");
  SampleRequest<float> req;
  req.cond = stack_conds<float>(cycled_conditions(a.batch));
  req.plan = plan;
  req.steps = a.k;

  auto time_median = [&](SampleMode mode, int t) {
    req.mode = mode;
    req.thread_count = t;
    sample(model, req);  // warm-up
    std::vector<double> ms;
    for (std::int64_t r = 0; r < a.repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      sample(model, req);
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    return ms[ms.size() / 2];
  };

  std::string csv = "mode,threads,k,batch,median_ms,hardware_threads\n";
  const auto hw = std::thread::hardware_concurrency();
  char buf[160];
  auto row = [&](SampleMode m, int t, double ms) {
    std::snprintf(buf, sizeof buf, "%s,%d,%lld,%lld,%.3f,%u\n", to_string(m).c_str(), t, static_cast<long long>(a.k),
                  static_cast<long long>(a.batch), ms, hw);
    csv += buf;
    std::cerr << buf;
  };
  row(SampleMode::Ddim, 1, time_median(SampleMode::Ddim, 1));
  row(SampleMode::LoopfreeSeq, 1, time_median(SampleMode::LoopfreeSeq, 1));
  for (auto t : threads) {
    if (t < 1) fail(ErrorCode::ConfigInvalid, "thread counts must be >= 1");
    row(SampleMode::LoopfreePar, static_cast<int>(t), time_median(SampleMode::LoopfreePar, static_cast<int>(t)));
  }
  if (a.out.empty()) std::cout << csv;
  else write_file(a.out, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy shared-encoder diffusion lab: teacher training, one-pass distillation, sampling and evaluation"};
  app.require_subcommand(1);

  ExportArgs xa;
  auto* xp = app.add_subcommand("export-data", "Write the toy dataset as PPM files plus a class manifest");
  xp->add_option("--config", xa.config, "Run config JSON")->required();
  xp->add_option("--out", xa.out, "Output directory")->required();
  xp->add_option("--count", xa.count, "Number of images (default: data.count)");
  xp->add_option("--seed", xa.seed, "Generator seed (default: data.seed)");

  TeacherArgs ta;
  auto* tt = app.add_subcommand("train-teacher", "Train the toy teacher on generated data");
  tt->add_option("--config", ta.config, "Run config JSON")->required();
  tt->add_option("--out", ta.out, "Output checkpoint")->required();
  tt->add_option("--log", ta.log, "Loss CSV");

  DistillArgs da;
  auto* ds = app.add_subcommand("distill", "Distill a one-pass student from a teacher checkpoint");
  ds->add_option("--teacher", da.teacher, "Teacher checkpoint")->required();
  ds->add_option("--config", da.config, "Run config JSON")->required();
  ds->add_option("--out", da.out, "Output checkpoint")->required();
  ds->add_option("--log", da.log, "Progress CSV");

  SampleArgs sa;
  sa.threads = default_threads();
  auto* sp = app.add_subcommand("sample", "Generate PPM images");
  sp->add_option("--model", sa.model, "Checkpoint")->required();
  sp->add_option("--mode", sa.mode, "ddim | loopfree-seq | loopfree-par")->check(CLI::IsMember({"ddim", "loopfree-seq", "loopfree-par"}));
  auto* steps_opt = sp->add_option("--steps", sa.steps, "DDIM steps");
  sp->add_option("--k", sa.k, "Loop-free decoder passes")->excludes(steps_opt);
  sp->add_option("--seed", sa.seed, "Noise seed");
  sp->add_option("--count", sa.count, "Number of images");
  sp->add_option("--threads", sa.threads, "Decoder threads (default $TIUE_THREADS or 1)");
  sp->add_option("--guidance", sa.guidance, "Guidance scale for ddim");
  sp->add_option("--out", sa.out, "Output directory")->required();
  sp->add_option("--run-id", sa.run_id, "File name prefix");
  sp->add_option("--interp", sa.interp, "C1,C2,N: interpolate between class ids over N frames");

  AnalyzeArgs aa;
  auto* an = app.add_subcommand("analyze", "Feature-similarity trace or quality-vs-steps curve");
  an->add_option("--model", aa.model, "Checkpoint")->required();
  an->add_option("--steps", aa.steps, "DDIM steps for the similarity trace");
  an->add_option("--probes", aa.probes, "Probe seeds");
  an->add_option("--quality-steps", aa.quality_steps, "Comma-separated step counts");
  an->add_option("--real", aa.real, "Directory of real PPM images");
  an->add_option("--count", aa.count, "Samples per step count");
  an->add_option("--seed", aa.seed, "Noise seed");
  an->add_option("--out", aa.out, "Output CSV")->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Frechet proxy, precision/recall, density/coverage");
  ev->add_option("--real", ea.real, "Real PPM directory")->required();
  ev->add_option("--fake", ea.fake, "Generated PPM directory")->required();
  ev->add_option("--embedding", ea.embedding, "pixels | teacher:CKPT");
  ev->add_option("--k", ea.k, "Nearest-neighbor k");
  ev->add_option("--out", ea.out, "Output JSON (stdout when omitted)");

  BenchArgs ba;
  auto* bn = app.add_subcommand("bench", "Wall-clock per sampling mode and thread count");
  bn->add_option("--model", ba.model, "Checkpoint")->required();
  bn->add_option("--k", ba.k, "Decoder passes");
  bn->add_option("--threads", ba.threads, "Comma-separated thread counts");
  bn->add_option("--batch", ba.batch, "Batch size");
  bn->add_option("--repeats", ba.repeats, "Timed runs per row");
  bn->add_option("--out", ba.out, "Output CSV (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*xp) return run_export(xa);
    if (*tt) return run_train_teacher(ta);
    if (*ds) return run_distill(da);
    if (*sp) return run_sample(sa);
    if (*an) return run_analyze(aa);
    if (*ev) return run_eval(ea);
    if (*bn) return run_bench(ba);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
