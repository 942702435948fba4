#include "scoreda/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "scoreda/errors.hpp"

namespace scoreda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Deterministic derived seed: base seed mixed with a purpose label so each
/// pipeline stage and grid point consumes an independent stream.
std::uint64_t mix_seed(std::uint64_t base, const std::string& label) {
    return fnv1a(label + "#" + std::to_string(base));
}

void save_json(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json load_json(const fs::path& path, const std::string& producing_command) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("missing artifact " + path.string() + "; run `scoreda " +
                          producing_command + "` first");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    return j;
}

/// Codec channel layout used throughout the pipeline: state first, then one
/// grid-lifted block per active modality.
ChannelLayout pipeline_layout(const ExperimentConfig& config) {
    ChannelLayout layout;
    layout.state_dim = config.state_dim();
    if (config.modalities.use_in_situ)
        layout.modalities.push_back({"in-situ", config.state_dim()});
    if (config.modalities.use_ex_situ)
        layout.modalities.push_back({"ex-situ", config.state_dim()});
    return layout;
}

/// Noiseless observation tuple A_k(x) per active modality (the truth tuple
/// used as the calibration reference).
std::vector<ObservationModel> clean_observations(const Eigen::VectorXd& x,
                                                 const SyntheticModalities& modalities) {
    std::vector<ObservationModel> obs;
    const int n = static_cast<int>(x.size());
    if (modalities.use_in_situ) {
        const MeasurementOp op = in_situ_op(n, modalities.in_situ_gap);
        obs.emplace_back(op.apply(x), op, 1e-12, "in-situ");
    }
    if (modalities.use_ex_situ) {
        const MeasurementOp op = ex_situ_op(n, modalities.ex_situ_factor);
        obs.emplace_back(op.apply(x), op, 1e-12, "ex-situ");
    }
    return obs;
}

Trajectory simulate_system(const ExperimentConfig& config, int T, std::uint64_t seed) {
    if (config.system == "lorenz96") return simulate_lorenz96(config.lorenz96, T, seed);
    return simulate_lgssm(config.lgssm, T, seed);
}

Trajectory load_trajectory(const fs::path& path, const std::string& producing_command) {
    return Trajectory::from_json(load_json(path, producing_command));
}

fs::path artifact_path(const ExperimentConfig& config, const std::string& name) {
    return fs::path(config.outdir) / name;
}

std::string run_dirname(const ModeSpec& mode, const GridPoint& point) {
    std::string m = mode.label();
    std::replace(m.begin(), m.end(), ':', '_');
    return "run_" + m + "_" + point.label();
}

/// Per-cell W1 between the ensemble and the (point-mass) truth, averaged over
/// all trajectory cells.
double ensemble_wasserstein(const std::vector<Trajectory>& members, const Trajectory& truth) {
    const int M = static_cast<int>(members.size());
    if (M == 0) throw NumericError("ensemble_wasserstein: empty ensemble");
    double total = 0.0;
    Eigen::VectorXd cell(M);
    Eigen::VectorXd ref(1);
    for (int t = 0; t < truth.steps(); ++t) {
        for (int i = 0; i < truth.dim(); ++i) {
            for (int m = 0; m < M; ++m) cell(m) = members[static_cast<std::size_t>(m)].values(t, i);
            ref(0) = truth.values(t, i);
            total += wasserstein_1d(cell, ref);
        }
    }
    return total / (static_cast<double>(truth.steps()) * truth.dim());
}

}  // namespace

json observations_to_json(const ObservationSequence& observations) {
    json seq = json::array();
    for (const auto& step : observations) {
        json entries = json::array();
        for (const auto& obs : step)
            entries.push_back(
                json{{"y", std::vector<double>(obs.y.data(), obs.y.data() + obs.y.size())},
                     {"op", obs.op.to_json()},
                     {"noise_variance", obs.noise_variance},
                     {"tag", obs.tag}});
        seq.push_back(std::move(entries));
    }
    return seq;
}

ObservationSequence observations_from_json(const json& j) {
    ObservationSequence seq;
    for (const auto& step : j) {
        std::vector<ObservationModel> entries;
        for (const auto& e : step) {
            const auto values = e.at("y").get<std::vector<double>>();
            Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(
                values.data(), static_cast<Eigen::Index>(values.size()));
            entries.emplace_back(std::move(y), MeasurementOp::from_json(e.at("op")),
                                 e.at("noise_variance").get<double>(),
                                 e.value("tag", std::string{}));
        }
        seq.push_back(std::move(entries));
    }
    return seq;
}

// ---------------------------------------------------------------------------
// GridPoint / ModeSpec

std::string GridPoint::label() const {
    return "c" + std::to_string(coarsening) + "_n" + fmt_short(noise) + "_g" +
           std::to_string(gap);
}

std::string ModeSpec::label() const { return to_string(mode) + ":" + to_string(selection); }

ModeSpec ModeSpec::parse(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos)
        throw ConfigError("mode '" + s + "' must look like 'pixel:unimodal'");
    ModeSpec spec;
    spec.mode = assimilation_mode_from_string(s.substr(0, colon));
    spec.selection = modality_selection_from_string(s.substr(colon + 1));
    return spec;
}

// ---------------------------------------------------------------------------
// ExperimentConfig

LinearGaussianSSM ExperimentConfig::default_lgssm() {
    const int n = 4;
    Eigen::MatrixXd A = 0.9 * Eigen::MatrixXd::Identity(n, n);
    for (int i = 0; i < n; ++i) A(i, (i + 1) % n) += 0.05;
    return LinearGaussianSSM(A, 0.19 * Eigen::MatrixXd::Identity(n, n),
                             Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Identity(n, n));
}

std::vector<ModeSpec> ExperimentConfig::default_modes() {
    return {ModeSpec{AssimilationMode::pixel, ModalitySelection::unimodal},
            ModeSpec{AssimilationMode::pixel, ModalitySelection::multimodal},
            ModeSpec{AssimilationMode::latent, ModalitySelection::unimodal},
            ModeSpec{AssimilationMode::latent, ModalitySelection::multimodal}};
}

int ExperimentConfig::state_dim() const {
    return system == "lorenz96" ? lorenz96.dim : lgssm.dim();
}

std::vector<GridPoint> ExperimentConfig::grid() const {
    std::vector<GridPoint> points;
    points.reserve(coarsening_grid.size() * noise_grid.size() * gap_grid.size());
    for (int c : coarsening_grid)
        for (double s : noise_grid)
            for (int g : gap_grid) points.push_back(GridPoint{c, s, g});
    return points;
}

json ExperimentConfig::to_json() const {
    std::vector<std::string> mode_labels;
    for (const auto& m : modes) mode_labels.push_back(m.label());
    return json{{"system", system},
                {"lorenz96", lorenz96.to_json()},
                {"lgssm", lgssm.to_json()},
                {"schedule", schedule.to_json()},
                {"train_steps", train_steps},
                {"eval_steps", eval_steps},
                {"window", window.to_json()},
                {"stitch", to_string(stitch)},
                {"codec", codec.to_json()},
                {"score_training", score_training.to_json()},
                {"score_hidden_width", score_hidden_width},
                {"score_hidden_layers", score_hidden_layers},
                {"sampler", sampler.to_json()},
                {"guidance", guidance.to_json()},
                {"background_variance", background_variance},
                {"modalities", modalities.to_json()},
                {"grid",
                 json{{"coarsening", coarsening_grid}, {"noise", noise_grid}, {"gaps", gap_grid}}},
                {"modes", mode_labels},
                {"ensemble_size", ensemble_size},
                {"seeds", seeds},
                {"outdir", outdir}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    c.system = j.value("system", c.system);
    if (c.system != "lorenz96" && c.system != "lgssm")
        throw ConfigError("system must be 'lorenz96' or 'lgssm', got '" + c.system + "'");
    if (j.contains("lorenz96")) c.lorenz96 = Lorenz96Config::from_json(j.at("lorenz96"));
    if (j.contains("lgssm")) c.lgssm = LinearGaussianSSM::from_json(j.at("lgssm"));
    if (j.contains("schedule")) c.schedule = DiffusionSchedule::from_json(j.at("schedule"));
    c.train_steps = j.value("train_steps", c.train_steps);
    c.eval_steps = j.value("eval_steps", c.eval_steps);
    if (j.contains("window")) c.window = WindowConfig::from_json(j.at("window"));
    if (j.contains("stitch")) c.stitch = stitch_from_string(j.at("stitch").get<std::string>());
    if (j.contains("codec")) c.codec = CodecTrainConfig::from_json(j.at("codec"));
    if (j.contains("score_training"))
        c.score_training = TrainConfig::from_json(j.at("score_training"));
    c.score_hidden_width = j.value("score_hidden_width", c.score_hidden_width);
    c.score_hidden_layers = j.value("score_hidden_layers", c.score_hidden_layers);
    if (j.contains("sampler")) c.sampler = SamplerConfig::from_json(j.at("sampler"));
    if (j.contains("guidance")) c.guidance = GuidanceConfig::from_json(j.at("guidance"));
    c.background_variance = j.value("background_variance", c.background_variance);
    if (j.contains("modalities"))
        c.modalities = SyntheticModalities::from_json(j.at("modalities"));
    if (j.contains("grid")) {
        const json& g = j.at("grid");
        c.coarsening_grid = g.value("coarsening", c.coarsening_grid);
        c.noise_grid = g.value("noise", c.noise_grid);
        c.gap_grid = g.value("gaps", c.gap_grid);
    }
    if (j.contains("modes")) {
        c.modes.clear();
        for (const auto& s : j.at("modes")) c.modes.push_back(ModeSpec::parse(s.get<std::string>()));
    }
    c.ensemble_size = j.value("ensemble_size", c.ensemble_size);
    c.seeds = j.value("seeds", c.seeds);
    c.outdir = j.value("outdir", c.outdir);

    if (c.seeds.empty()) throw ConfigError("seeds must be nonempty");
    if (c.modes.empty()) throw ConfigError("modes must be nonempty");
    if (c.coarsening_grid.empty() || c.noise_grid.empty() || c.gap_grid.empty())
        throw ConfigError("all three grid axes must be nonempty");
    if (c.ensemble_size < 1) throw ConfigError("ensemble_size must be >= 1");
    if (c.train_steps < c.window.size || c.eval_steps < c.window.size)
        throw ConfigError("train_steps and eval_steps must be >= window size");
    if (c.background_variance <= 0.0) throw ConfigError("background_variance must be positive");
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse config file " + path + ": " + e.what());
    }
    return from_json(j);
}

// ---------------------------------------------------------------------------
// RunRow / RunReport

json RunRow::to_json() const {
    return json{{"mode", mode.label()},
                {"coarsening", point.coarsening},
                {"noise", point.noise},
                {"gap", point.gap},
                {"failed", failed},
                {"error", error},
                {"wasserstein", wasserstein},
                {"rmse", rmse},
                {"spread", spread},
                {"per_seed_wasserstein", per_seed_wasserstein}};
}

RunRow RunRow::from_json(const json& j) {
    RunRow row;
    row.mode = ModeSpec::parse(j.at("mode").get<std::string>());
    row.point = GridPoint{j.at("coarsening").get<int>(), j.at("noise").get<double>(),
                          j.at("gap").get<int>()};
    row.failed = j.at("failed").get<bool>();
    row.error = j.at("error").get<std::string>();
    row.wasserstein = j.at("wasserstein").get<double>();
    row.rmse = j.at("rmse").get<double>();
    row.spread = j.at("spread").get<double>();
    row.per_seed_wasserstein = j.at("per_seed_wasserstein").get<std::vector<double>>();
    return row;
}

bool RunReport::all_ok() const {
    return std::none_of(rows.begin(), rows.end(), [](const RunRow& r) { return r.failed; });
}

std::string fnv1a_hex(const std::string& bytes) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(bytes)));
    return buf;
}

// ---------------------------------------------------------------------------
// Pipeline commands

void cmd_simulate(const ExperimentConfig& config) {
    const std::uint64_t base = config.seeds.front();
    const Trajectory training = simulate_system(config, config.train_steps,
                                                mix_seed(base, "training"));
    Trajectory truth = simulate_system(config, config.eval_steps, mix_seed(base, "truth"));
    truth.role = Trajectory::Role::truth;

    NoiseSource bg_noise(mix_seed(base, "background"), 0);
    Eigen::MatrixXd bg_values =
        truth.values + std::sqrt(config.background_variance) *
                           bg_noise.gaussian_matrix(truth.values.rows(), truth.values.cols());
    const Trajectory background(std::move(bg_values), Trajectory::Role::background, truth.dt);

    const ObservationSequence default_obs =
        make_observations(truth, config.modalities, mix_seed(base, "default-observations"));

    save_json(artifact_path(config, "config.json"), config.to_json());
    save_json(artifact_path(config, "training.json"), training.to_json());
    save_json(artifact_path(config, "truth.json"), truth.to_json());
    save_json(artifact_path(config, "background.json"), background.to_json());
    save_json(artifact_path(config, "observations_default.json"),
              observations_to_json(default_obs));
}

void cmd_train_codec(const ExperimentConfig& config) {
    const Trajectory training =
        load_trajectory(artifact_path(config, "training.json"), "simulate");
    const ChannelLayout layout = pipeline_layout(config);
    const int N = layout.state_dim;
    const int K = layout.n_modalities();
    const std::uint64_t base = config.seeds.front();

    const ObservationSequence obs = make_observations(
        training, config.modalities, mix_seed(base, "codec-observations"));

    Eigen::MatrixXd dataset(layout.total_dim(), training.steps());
    for (int t = 0; t < training.steps(); ++t) {
        Eigen::VectorXd col(layout.total_dim());
        col.segment(0, N) = training.state(t);
        int offset = N;
        for (int k = 0; k < K; ++k) {
            const auto& modality = layout.modalities[static_cast<std::size_t>(k)];
            const ObservationModel* found = nullptr;
            for (const auto& o : obs[static_cast<std::size_t>(t)])
                if (o.tag == modality.name) found = &o;
            if (!found)
                throw NumericError("codec dataset: modality '" + modality.name +
                                   "' missing at step " + std::to_string(t));
            col.segment(offset, modality.length) = found->op.lift_to_grid(found->y);
            offset += modality.length;
            col(layout.total_dim() - K + k) = 1.0;
        }
        dataset.col(t) = col;
    }

    CodecTrainConfig tc = config.codec;
    tc.seed = mix_seed(base, "codec-train");
    CodecTrainResult result;
    const LatentCodec codec = train_codec(dataset, layout, tc, &result);

    save_json(artifact_path(config, "codec.json"), codec.to_json());
    save_json(artifact_path(config, "codec_training.json"),
              json{{"validation_error", result.validation_error},
                   {"within_bound", result.within_bound},
                   {"loss_history", result.loss_history}});
}

void cmd_train_score(const ExperimentConfig& config, AssimilationMode mode) {
    const Trajectory training =
        load_trajectory(artifact_path(config, "training.json"), "simulate");
    const std::uint64_t base = config.seeds.front();
    const std::string space = to_string(mode);

    Trajectory model_space = training;
    LatentCodec codec;
    double latent_variance = 0.0;
    if (mode == AssimilationMode::latent) {
        codec = LatentCodec::from_json(
            load_json(artifact_path(config, "codec.json"), "train-codec"));
        codec.check_layout(pipeline_layout(config));
        const ObservationSequence obs = make_observations(
            training, config.modalities, mix_seed(base, "latent-observations"));

        Eigen::MatrixXd z(training.steps(), codec.latent_dim());
        for (int t = 0; t < training.steps(); ++t)
            z.row(t) = codec.encode(training.state(t),
                                    lift_observations(obs[static_cast<std::size_t>(t)],
                                                      codec.layout()))
                           .transpose();
        model_space = Trajectory(std::move(z), Trajectory::Role::truth, training.dt);

        // Conditioning-variance calibration on a trailing validation slice:
        // encoded truth tuples vs encoded assimilation inputs (noisy
        // background plus degraded observations).
        const int val_start = std::max(0, training.steps() - training.steps() / 4 - 1);
        const int n_val = training.steps() - val_start;
        NoiseSource cal_noise(mix_seed(base, "calibration"), 0);
        Eigen::MatrixXd z_ref(codec.latent_dim(), n_val);
        Eigen::MatrixXd z_deg(codec.latent_dim(), n_val);
        for (int t = val_start; t < training.steps(); ++t) {
            const Eigen::VectorXd x = training.state(t);
            const Eigen::VectorXd bg =
                x + std::sqrt(config.background_variance) *
                        cal_noise.gaussian_vector(x.size());
            z_ref.col(t - val_start) =
                codec.encode(x, lift_observations(clean_observations(x, config.modalities),
                                                  codec.layout()));
            z_deg.col(t - val_start) = codec.encode(
                bg, lift_observations(obs[static_cast<std::size_t>(t)], codec.layout()));
        }
        latent_variance = calibrate_latent_variance(z_ref, z_deg);
    }

    const int n = model_space.dim();
    const Eigen::MatrixXd data = flatten_windows(model_space, config.window.size);
    const Normalization norm = Normalization::fit(data);
    const Eigen::MatrixXd normalized = norm.apply(data);

    NoiseSource init_rng(mix_seed(base, "score-init-" + space), 0);
    ScoreModel model = ScoreModel::init(
        ScoreArchitecture::dense(config.window.size * n, config.score_hidden_width,
                                 config.score_hidden_layers),
        init_rng);
    TrainConfig tc = config.score_training;
    tc.seed = mix_seed(base, "score-train-" + space);
    const TrainResult result = train(model, normalized, tc, config.schedule);

    ScoreModelArtifact artifact;
    artifact.model = std::move(model);
    artifact.schedule = config.schedule;
    artifact.norm_mean = norm.mean;
    artifact.norm_std = norm.std_dev;
    artifact.space = space;
    artifact.window_size = config.window.size;
    artifact.state_dim = n;
    artifact.latent_observation_variance = latent_variance;
    artifact.validate();

    save_json(artifact_path(config, "score_" + space + ".json"), artifact.to_json());
    save_json(artifact_path(config, "score_" + space + "_training.json"),
              json{{"loss_history", result.loss_history},
                   {"smooth_monotone", result.smooth_monotone}});
}

ObservationSequence grid_observations(const ExperimentConfig& config, const Trajectory& truth,
                                      const ModeSpec& mode, const GridPoint& point) {
    SyntheticModalities m = config.modalities;
    m.in_situ_gap = point.gap;
    m.in_situ_noise = point.noise;
    m.ex_situ_factor = point.coarsening;
    m.ex_situ_noise = point.noise;
    if (mode.selection == ModalitySelection::unimodal) m.use_ex_situ = false;
    return make_observations(truth, m,
                             mix_seed(config.seeds.front(), "obs:" + point.label()));
}

RunRow cmd_assimilate(const ExperimentConfig& config, const ModeSpec& mode,
                      const GridPoint& point) {
    const Trajectory truth = load_trajectory(artifact_path(config, "truth.json"), "simulate");
    const Trajectory background =
        load_trajectory(artifact_path(config, "background.json"), "simulate");
    const std::string space = to_string(mode.mode);
    const ScoreModelArtifact artifact = ScoreModelArtifact::from_json(
        load_json(artifact_path(config, "score_" + space + ".json"),
                  "train-score --space " + space));
    LatentCodec codec;
    const LatentCodec* codec_ptr = nullptr;
    if (mode.mode == AssimilationMode::latent) {
        codec = LatentCodec::from_json(
            load_json(artifact_path(config, "codec.json"), "train-codec"));
        codec_ptr = &codec;
    }

    const ObservationSequence observations = grid_observations(config, truth, mode, point);

    RunRow row;
    row.mode = mode;
    row.point = point;
    double sum_w = 0.0, sum_rmse = 0.0, sum_spread = 0.0;
    bool first_saved = false;

    for (std::size_t s = 0; s < config.seeds.size(); ++s) {
        AssimilationProblem problem;
        problem.background = background;
        problem.observations = observations;
        problem.mode = mode.mode;
        problem.selection = mode.selection;
        problem.background_variance = config.background_variance;
        problem.ensemble_size = config.ensemble_size;
        problem.window = config.window;
        problem.stitch = config.stitch;
        problem.latent_observation_variance = artifact.latent_observation_variance;

        SamplerConfig sc = config.sampler;
        sc.seed = mix_seed(config.seeds[s],
                           "sample:" + mode.label() + ":" + point.label());

        const AnalysisEnsemble ensemble =
            assimilate(problem, artifact, sc, config.guidance, codec_ptr);
        if (ensemble.members.empty())
            throw NumericError("all " + std::to_string(config.ensemble_size) +
                               " ensemble members diverged (seed " +
                               std::to_string(config.seeds[s]) + ")");

        const EnsembleSummary summary = summarize(ensemble);
        const double w = ensemble_wasserstein(ensemble.members, truth);
        row.per_seed_wasserstein.push_back(w);
        sum_w += w;
        sum_rmse += rmse(summary.mean, truth);
        sum_spread += summary.spread.mean();

        if (!first_saved) {
            json members = json::array();
            for (const auto& member : ensemble.members) members.push_back(member.to_json());
            save_json(artifact_path(config, run_dirname(mode, point)) / "ensemble.json",
                      json{{"seed", config.seeds[s]},
                           {"members", std::move(members)},
                           {"n_failed_members", ensemble.failures.size()}});
            first_saved = true;
        }
    }

    const double n_seeds = static_cast<double>(config.seeds.size());
    row.wasserstein = sum_w / n_seeds;
    row.rmse = sum_rmse / n_seeds;
    row.spread = sum_spread / n_seeds;
    save_json(artifact_path(config, run_dirname(mode, point)) / "row.json", row.to_json());
    return row;
}

std::string report_csv(const RunReport& report) {
    std::ostringstream out;
    out << "mode,coarsening,noise,gap,failed,wasserstein,rmse,spread\n";
    for (const auto& row : report.rows) {
        out << row.mode.label() << ',' << row.point.coarsening << ','
            << fmt_double(row.point.noise) << ',' << row.point.gap << ','
            << (row.failed ? 1 : 0) << ',' << fmt_double(row.wasserstein) << ','
            << fmt_double(row.rmse) << ',' << fmt_double(row.spread) << '\n';
    }
    return out.str();
}

json report_json(const ExperimentConfig& config, const RunReport& report) {
    json rows = json::array();
    for (const auto& row : report.rows) rows.push_back(row.to_json());
    return json{{"provenance",
                 json{{"format", 1},
                      {"config", config.to_json()},
                      {"content_hash", report.content_hash}}},
                {"rows", std::move(rows)}};
}

namespace {

std::string hash_input(const ExperimentConfig& config, const std::vector<RunRow>& rows) {
    json rows_json = json::array();
    for (const auto& row : rows) rows_json.push_back(row.to_json());
    return json{{"config", config.to_json()}, {"rows", std::move(rows_json)}}.dump();
}

void write_report_files(const ExperimentConfig& config, const RunReport& report,
                        const fs::path& out) {
    save_json(out / "report.json", report_json(config, report));
    {
        fs::create_directories(out);
        std::ofstream csv(out / "report.csv", std::ios::binary);
        if (!csv) throw ConfigError("cannot write " + (out / "report.csv").string());
        csv << report_csv(report);
    }
    // Data-only plot series: one file per mode with the grid coordinates and
    // the seed-averaged metrics.
    fs::create_directories(out / "series");
    for (const auto& mode : config.modes) {
        std::string name = mode.label();
        std::replace(name.begin(), name.end(), ':', '_');
        std::ofstream series(out / "series" / (name + ".csv"), std::ios::binary);
        series << "coarsening,noise,gap,wasserstein,rmse,spread\n";
        for (const auto& row : report.rows) {
            if (row.mode.label() != mode.label() || row.failed) continue;
            series << row.point.coarsening << ',' << fmt_double(row.point.noise) << ','
                   << row.point.gap << ',' << fmt_double(row.wasserstein) << ','
                   << fmt_double(row.rmse) << ',' << fmt_double(row.spread) << '\n';
        }
    }
    if (!report.all_ok()) {
        json failures = json::array();
        for (const auto& row : report.rows) {
            if (!row.failed) continue;
            failures.push_back(json{{"mode", row.mode.label()},
                                    {"coarsening", row.point.coarsening},
                                    {"noise", row.point.noise},
                                    {"gap", row.point.gap},
                                    {"error", row.error}});
        }
        save_json(out / "failures.json", failures);
    }
}

}  // namespace

RunReport cmd_ablate(const ExperimentConfig& config) {
    RunReport report;
    json timings = json::array();
    const auto grid = config.grid();
    const auto t_start = std::chrono::steady_clock::now();
    for (const auto& mode : config.modes) {
        for (const auto& point : grid) {
            const auto t0 = std::chrono::steady_clock::now();
            RunRow row;
            try {
                row = cmd_assimilate(config, mode, point);
            } catch (const std::exception& e) {
                // Crash isolation: record the failing grid point and continue.
                row = RunRow{};
                row.mode = mode;
                row.point = point;
                row.failed = true;
                row.error = e.what();
            }
            const auto t1 = std::chrono::steady_clock::now();
            timings.push_back(
                json{{"mode", mode.label()},
                     {"point", point.label()},
                     {"seconds", std::chrono::duration<double>(t1 - t0).count()}});
            report.rows.push_back(std::move(row));
        }
    }
    report.content_hash = fnv1a_hex(hash_input(config, report.rows));
    write_report_files(config, report, fs::path(config.outdir));
    // Wall-clock is non-normative and lives outside the deterministic report.
    const auto t_end = std::chrono::steady_clock::now();
    save_json(fs::path(config.outdir) / "timings.json",
              json{{"total_seconds", std::chrono::duration<double>(t_end - t_start).count()},
                   {"rows", std::move(timings)}});
    return report;
}

RunReport cmd_report(const std::string& outdir) {
    const json j = load_json(fs::path(outdir) / "report.json", "ablate");
    const ExperimentConfig config =
        ExperimentConfig::from_json(j.at("provenance").at("config"));
    RunReport report;
    for (const auto& rj : j.at("rows")) report.rows.push_back(RunRow::from_json(rj));
    report.content_hash = j.at("provenance").at("content_hash").get<std::string>();
    const std::string recomputed = fnv1a_hex(hash_input(config, report.rows));
    if (recomputed != report.content_hash)
        throw InputError("report.json content hash mismatch: stored " + report.content_hash +
                         ", recomputed " + recomputed);
    // Rebuild into the directory the caller named; the embedded config (and
    // hence the hash) stays as recorded.
    write_report_files(config, report, fs::path(outdir));
    return report;
}

}  // namespace scoreda
