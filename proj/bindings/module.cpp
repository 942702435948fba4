#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "scoreda/assimilation.hpp"
#include "scoreda/errors.hpp"
#include "scoreda/experiments.hpp"
#include "scoreda/sampler.hpp"
#include "scoreda/schedule.hpp"
#include "scoreda/score_model.hpp"
#include "scoreda/toys.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace scoreda;

namespace {

ExperimentConfig config_from_string(const std::string& config_json) {
    return ExperimentConfig::from_json(json::parse(config_json));
}

}  // namespace

PYBIND11_MODULE(_scoreda, m) {
    m.doc() = "Score-based data assimilation core (C++ implementation)";

    py::register_exception<Error>(m, "ScoredaError");

    py::class_<DiffusionSchedule>(m, "DiffusionSchedule")
        .def_static("vp", &DiffusionSchedule::vp, py::arg("beta_min") = 0.1,
                    py::arg("beta_max") = 28.0)
        .def_static("ve", &DiffusionSchedule::ve, py::arg("sigma_min") = 1e-3,
                    py::arg("sigma_max") = 10.0)
        .def("mean_scale", &DiffusionSchedule::mean_scale)
        .def("std_dev", &DiffusionSchedule::std_dev)
        .def("variance", &DiffusionSchedule::variance);

    m.def("simulate_lorenz96",
          [](int dim, double forcing, int T, std::uint64_t seed) {
              Lorenz96Config cfg;
              cfg.dim = dim;
              cfg.forcing = forcing;
              return simulate_lorenz96(cfg, T, seed).values;
          },
          py::arg("dim"), py::arg("forcing"), py::arg("steps"), py::arg("seed"),
          "Lorenz-96 trajectory after spin-up; rows are time steps.");

    m.def("wasserstein_1d", &wasserstein_1d, py::arg("samples_a"), py::arg("samples_b"),
          "Order-1 Wasserstein distance between 1-D empirical distributions.");

    m.def("sample_unconditional",
          [](const std::string& artifact_json, int n_steps, int corrections, int n_samples,
             std::uint64_t seed) {
              const ScoreModelArtifact artifact =
                  ScoreModelArtifact::from_json(json::parse(artifact_json));
              artifact.validate();
              ModelScoreField field(artifact.model, artifact.schedule);
              SamplerConfig cfg;
              cfg.n_steps = n_steps;
              cfg.corrections = corrections;
              cfg.seed = seed;
              const SampleResult result = sample(field, cfg, n_samples);
              return py::make_tuple(result.samples, result.failures.size());
          },
          py::arg("artifact_json"), py::arg("n_steps"), py::arg("corrections"),
          py::arg("n_samples"), py::arg("seed"),
          "Draw from a trained score model (normalized model units); returns "
          "(samples, n_failed).");

    // Pipeline commands: one call per CLI subcommand, driven by the same
    // JSON configuration document.
    m.def("simulate", [](const std::string& c) { cmd_simulate(config_from_string(c)); },
          py::arg("config_json"));
    m.def("train_codec", [](const std::string& c) { cmd_train_codec(config_from_string(c)); },
          py::arg("config_json"));
    m.def("train_score",
          [](const std::string& c, const std::string& space) {
              cmd_train_score(config_from_string(c), assimilation_mode_from_string(space));
          },
          py::arg("config_json"), py::arg("space"));
    m.def("assimilate",
          [](const std::string& c, const std::string& mode, int coarsening, double noise,
             int gap) {
              const RunRow row = cmd_assimilate(config_from_string(c), ModeSpec::parse(mode),
                                                GridPoint{coarsening, noise, gap});
              return row.to_json().dump();
          },
          py::arg("config_json"), py::arg("mode"), py::arg("coarsening"), py::arg("noise"),
          py::arg("gap"), "Run one grid cell; returns the report row as JSON.");
    m.def("ablate",
          [](const std::string& c) {
              const ExperimentConfig config = config_from_string(c);
              const RunReport report = cmd_ablate(config);
              return report_json(config, report).dump();
          },
          py::arg("config_json"), "Run the full grid; returns the report as JSON.");
    m.def("report",
          [](const std::string& outdir) {
              const RunReport report = cmd_report(outdir);
              json rows = json::array();
              for (const auto& row : report.rows) rows.push_back(row.to_json());
              return json{{"content_hash", report.content_hash}, {"rows", rows}}.dump();
          },
          py::arg("outdir"), "Rebuild report tables from a finished run directory.");
}
