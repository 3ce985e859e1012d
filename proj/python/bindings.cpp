// SPDX-License-Identifier: Apache-2.0
// Python surface: schedules and plans, toy data, sampling from checkpoints, metrics.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tiue/analysis.hpp"
#include "tiue/config.hpp"
#include "tiue/data.hpp"
#include "tiue/io.hpp"
#include "tiue/metrics.hpp"
#include "tiue/sampler.hpp"

namespace py = pybind11;
using namespace tiue;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Tensor<float> from_numpy(const F32Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<float>(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

FeatureSet features(const F64Array& a, Provenance p) {
  if (a.ndim() != 2) throw py::value_error("features must be a 2-d array (n, d)");
  return FeatureSet(a.shape(0), a.shape(1), std::vector<double>(a.data(), a.data() + a.size()), p);
}

py::dict plan_dict(const SamplerPlan& p) {
  py::dict d;
  d["k"] = p.k;
  d["timesteps"] = p.timesteps;
  d["terminal"] = p.terminal;
  d["s"] = p.s;
  d["e"] = p.e;
  return d;
}

struct PyModel {
  Checkpoint ck;
  DiffusionModel<float> model;
};

PyModel load_model(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  UNet<float> net(ck.meta.model);
  auto weights = served_weights(ck.tensors);
  DiffusionModel<float> m{std::move(net), std::move(weights), build_schedule(ck.meta.schedule)};
  return {std::move(ck), std::move(m)};
}

std::vector<std::vector<double>> class_conditions(const std::vector<int>& classes) {
  std::vector<std::vector<double>> out;
  for (int c : classes) out.push_back(cond_embed(c));
  return out;
}

}  // namespace

PYBIND11_MODULE(_tiue, m) {
  m.doc() = "Shared-encoder diffusion toolkit: loop-free sampling, distillation artifacts and metrics";

  static py::exception<Error> error_type(m, "TiueError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type)(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.def(
      "alpha_bars",
      [](std::int64_t steps, double beta_start, double beta_end, const std::string& kind) {
        return build_schedule(steps, beta_start, beta_end, kind == "linear" ? BetaKind::Linear : BetaKind::ScaledLinear).alpha_bars();
      },
      py::arg("steps") = 1000, py::arg("beta_start") = 8.5e-4, py::arg("beta_end") = 1.2e-2, py::arg("kind") = "scaled_linear");

  m.def(
      "make_plan",
      [](std::int64_t k, std::int64_t steps) { return plan_dict(make_plan(k, build_schedule(ScheduleParams{steps}))); },
      py::arg("k"), py::arg("steps") = 1000, "Loop-free timesteps and combination coefficients for the default schedule family.");

  m.def(
      "combine_loopfree",
      [](std::int64_t k, const F64Array& noise, const std::vector<F64Array>& preds) {
        const auto plan = make_plan(k, build_schedule(ScheduleParams{}));
        Tensor<double> n(Shape{static_cast<std::int64_t>(noise.size())}, std::vector<double>(noise.data(), noise.data() + noise.size()));
        std::vector<Tensor<double>> ps;
        for (const auto& p : preds) ps.emplace_back(Shape{static_cast<std::int64_t>(p.size())}, std::vector<double>(p.data(), p.data() + p.size()));
        const auto z = combine_loopfree<double>(plan, n, ps);
        return std::vector<double>(z.values().begin(), z.values().end());
      },
      py::arg("k"), py::arg("noise"), py::arg("preds"));

  m.def("cond_embed", py::overload_cast<int>(&cond_embed), py::arg("class_id"));
  m.def("interpolate_conditions", &interpolate_conditions, py::arg("c1"), py::arg("c2"), py::arg("n"));

  m.def(
      "generate_dataset",
      [](std::int64_t n, std::uint64_t seed, int image_size) {
        ToySpec spec;
        spec.image_size = image_size;
        const auto data = generate_dataset(spec, n, seed);
        const auto images = stack_images<float>(data, 0, data.size());
        std::vector<int> classes;
        for (const auto& s : data) classes.push_back(s.class_id());
        return py::make_tuple(to_numpy(images), classes);
      },
      py::arg("n"), py::arg("seed") = 0, py::arg("image_size") = 24, "Images (n, 3, H, W) in [-1, 1] and class ids.");

  py::class_<PyModel>(m, "Model")
      .def_static("load", &load_model, py::arg("path"))
      .def_static(
          "initialized",
          [](const std::string& config_json, std::uint64_t seed) {
            const auto cfg = parse_run_config(nlohmann::json::parse(config_json));
            cfg.validate();
            Checkpoint ck;
            ck.meta.model = cfg.model;
            ck.meta.schedule = cfg.schedule;
            ck.meta.kind = "teacher";
            ck.meta.config_hash = cfg.hash();
            UNet<float> net(cfg.model);
            ck.tensors = net.init_params(seed);
            auto params = ck.tensors;
            DiffusionModel<float> model{std::move(net), std::move(params), build_schedule(cfg.schedule)};
            return PyModel{std::move(ck), std::move(model)};
          },
          py::arg("config_json") = "{}", py::arg("seed") = 0, "Untrained weights for a run-config JSON document.")
      .def(
          "save", [](const PyModel& p, const std::filesystem::path& path) { save_checkpoint(path, p.ck.tensors, p.ck.meta); },
          py::arg("path"))
      .def_property_readonly("kind", [](const PyModel& p) { return p.ck.meta.kind; })
      .def_property_readonly("image_size", [](const PyModel& p) { return p.ck.meta.model.image_size; })
      .def_property_readonly("parameter_count", [](const PyModel& p) { return p.model.params.total_elements(); })
      .def(
          "sample",
          [](const PyModel& p, const std::vector<int>& classes, const std::string& mode, std::int64_t steps, std::uint64_t seed, int threads,
             double guidance) {
            SampleRequest<float> req;
            req.seed = seed;
            req.mode = sample_mode_from_string(mode);
            req.thread_count = threads;
            req.guidance_scale = guidance;
            if (req.mode == SampleMode::Ddim) {
              req.steps = steps;
            } else if (p.ck.meta.plan && p.ck.meta.plan->k == steps) {
              req.plan = p.ck.meta.plan;
            } else {
              req.plan = make_plan(steps, p.model.schedule);
            }
            py::gil_scoped_release release;
            auto out = sample_many(p.model, req, class_conditions(classes));
            py::gil_scoped_acquire acquire;
            return to_numpy(out);
          },
          py::arg("classes"), py::arg("mode") = "loopfree-par", py::arg("steps") = 4, py::arg("seed") = 0, py::arg("threads") = 1,
          py::arg("guidance") = 1.0, "Images in [-1, 1]; `steps` is the DDIM step count or the loop-free K.")
      .def(
          "similarity_trace",
          [](const PyModel& p, std::int64_t steps, std::int64_t probes, std::uint64_t seed) {
            const auto tr = feature_similarity_trace(p.model, steps, probes, seed);
            return py::make_tuple(tr.steps, tr.enc_sim, tr.dec_sim);
          },
          py::arg("steps") = 50, py::arg("probes") = 16, py::arg("seed") = 0);

  m.def(
      "frechet", [](const F64Array& real, const F64Array& fake) { return frechet_proxy(features(real, Provenance::Real), features(fake, Provenance::Generated)); },
      py::arg("real"), py::arg("fake"));
  m.def(
      "precision_recall",
      [](const F64Array& real, const F64Array& fake, int k) {
        const auto r = precision_recall(features(real, Provenance::Real), features(fake, Provenance::Generated), k);
        return py::make_tuple(r.precision, r.recall);
      },
      py::arg("real"), py::arg("fake"), py::arg("k") = 3);
  m.def(
      "density_coverage",
      [](const F64Array& real, const F64Array& fake, int k) {
        const auto r = density_coverage(features(real, Provenance::Real), features(fake, Provenance::Generated), k);
        return py::make_tuple(r.density, r.coverage);
      },
      py::arg("real"), py::arg("fake"), py::arg("k") = 3);
  m.def(
      "normality_stats",
      [](const F64Array& values) {
        const auto s = normality_stats(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
        py::dict d;
        d["mean"] = s.mean;
        d["var"] = s.var;
        d["excess_kurtosis"] = s.excess_kurtosis;
        d["kl"] = s.kl;
        d["degenerate"] = s.degenerate;
        return d;
      },
      py::arg("values"));
  m.def(
      "pixel_features", [](const F32Array& images) { return embed_pixels(from_numpy(images), Provenance::Generated).rows; },
      py::arg("images"));
}
