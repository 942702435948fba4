#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "scoreda/errors.hpp"
#include "scoreda/experiments.hpp"

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonOptions& opts, bool need_config = true) {
    auto* c = cmd->add_option("--config", opts.config_path,
                              "experiment configuration file (JSON)");
    if (need_config) c->required();
    cmd->add_option("--seed", opts.seed, "override the configured seed list with this seed");
    cmd->add_option("--out", opts.out, "override the configured output directory");
}

scoreda::ExperimentConfig load_config(const CommonOptions& opts) {
    scoreda::ExperimentConfig config = scoreda::ExperimentConfig::load(opts.config_path);
    if (opts.seed) config.seeds = {*opts.seed};
    if (opts.out) config.outdir = *opts.out;
    return config;
}

void print_report(const scoreda::RunReport& report) {
    int failed = 0;
    for (const auto& row : report.rows)
        if (row.failed) ++failed;
    std::cout << report.rows.size() << " rows, " << failed << " failed, content hash "
              << report.content_hash << "\n";
    if (failed > 0) {
        std::cout << "failed grid points (see failures.json):\n";
        for (const auto& row : report.rows)
            if (row.failed)
                std::cout << "  " << row.mode.label() << " " << row.point.label() << ": "
                          << row.error << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Score-based data assimilation experiments"};
    app.require_subcommand(1);

    CommonOptions opts;
    std::string space = "pixel";
    std::string mode_label = "pixel:multimodal";
    scoreda::GridPoint point;
    bool point_given = false;
    std::string report_dir;

    auto* simulate = app.add_subcommand(
        "simulate", "generate truth, training, and background trajectories");
    add_common(simulate, opts);

    auto* train_codec =
        app.add_subcommand("train-codec", "fit the multimodal latent codec");
    add_common(train_codec, opts);

    auto* train_score =
        app.add_subcommand("train-score", "train the windowed noise-prediction model");
    add_common(train_score, opts);
    train_score->add_option("--space", space, "model space: pixel or latent")
        ->check(CLI::IsMember({"pixel", "latent"}));

    auto* assimilate = app.add_subcommand(
        "assimilate", "run one assimilation configuration (one mode, one grid point)");
    add_common(assimilate, opts);
    assimilate->add_option("--mode", mode_label,
                           "assimilation mode, e.g. pixel:unimodal or latent:multimodal");
    auto* c_opt = assimilate->add_option("--coarsening", point.coarsening,
                                         "ex-situ coarsening factor");
    assimilate->add_option("--noise", point.noise, "observation noise variance")
        ->needs(c_opt);
    assimilate->add_option("--gap", point.gap, "in-situ sampling gap")->needs(c_opt);

    auto* ablate = app.add_subcommand(
        "ablate", "run the full mode x degradation grid and write the report");
    add_common(ablate, opts);

    auto* report = app.add_subcommand(
        "report", "rebuild the report tables from a finished run directory");
    report->add_option("--out", report_dir, "run directory containing report.json")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) {
            scoreda::cmd_simulate(load_config(opts));
        } else if (train_codec->parsed()) {
            scoreda::cmd_train_codec(load_config(opts));
        } else if (train_score->parsed()) {
            scoreda::cmd_train_score(load_config(opts),
                                     scoreda::assimilation_mode_from_string(space));
        } else if (assimilate->parsed()) {
            const scoreda::ExperimentConfig config = load_config(opts);
            point_given = c_opt->count() > 0;
            const scoreda::GridPoint p = point_given ? point : config.grid().front();
            const scoreda::RunRow row =
                scoreda::cmd_assimilate(config, scoreda::ModeSpec::parse(mode_label), p);
            std::cout << row.to_json().dump(2) << "\n";
        } else if (ablate->parsed()) {
            const scoreda::RunReport result = scoreda::cmd_ablate(load_config(opts));
            print_report(result);
            // Exit 0 only when every grid point succeeded; 2 flags a partial
            // failure whose manifest is in failures.json.
            if (!result.all_ok()) return 2;
        } else if (report->parsed()) {
            print_report(scoreda::cmd_report(report_dir));
        }
    } catch (const scoreda::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
