#include "scoreda/assimilation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "scoreda/errors.hpp"

namespace scoreda {
namespace {

using nlohmann::json;

/// Window-coordinate operator selecting the block of timestep j and applying
/// the per-timestep operator on top of it.
MeasurementOp block_op(int window_size, int state_dim, int j, const MeasurementOp& op) {
    std::vector<int> idx(static_cast<std::size_t>(state_dim));
    std::iota(idx.begin(), idx.end(), j * state_dim);
    MeasurementOp block = MeasurementOp::mask_indices(window_size * state_dim, std::move(idx));
    if (op.kind() == MeasurementOp::Kind::identity) return block;
    return MeasurementOp::compose({std::move(block), op});
}

}  // namespace

json WindowConfig::to_json() const { return json{{"size", size}, {"stride", stride}}; }

WindowConfig WindowConfig::from_json(const json& j) {
    WindowConfig cfg;
    if (j.contains("size")) cfg.size = j.at("size").get<int>();
    if (j.contains("stride")) cfg.stride = j.at("stride").get<int>();
    if (cfg.size < 1 || cfg.stride < 1 || cfg.stride > cfg.size)
        throw ConfigError("window config: need 1 <= stride <= size");
    return cfg;
}

std::vector<Window> build_windows(int T, const WindowConfig& cfg) {
    if (cfg.size < 1 || cfg.stride < 1 || cfg.stride > cfg.size)
        throw InputError("build_windows: need 1 <= stride <= size");
    if (cfg.size > T)
        throw InputError("build_windows: window size " + std::to_string(cfg.size) +
                         " exceeds trajectory length " + std::to_string(T));
    std::vector<Window> windows;
    for (int start = 0;; start += cfg.stride) {
        if (start + cfg.size >= T) {
            // Shift the final window back so it ends exactly at T.
            const Window last{T - cfg.size, cfg.size};
            if (windows.empty() || !(windows.back() == last)) windows.push_back(last);
            break;
        }
        windows.push_back(Window{start, cfg.size});
    }
    return windows;
}

std::string to_string(StitchRule rule) {
    return rule == StitchRule::central ? "central" : "average";
}

StitchRule stitch_from_string(const std::string& s) {
    if (s == "central") return StitchRule::central;
    if (s == "average") return StitchRule::average;
    throw ConfigError("unknown stitch rule '" + s + "'");
}

std::string to_string(AssimilationMode mode) {
    return mode == AssimilationMode::pixel ? "pixel" : "latent";
}

AssimilationMode assimilation_mode_from_string(const std::string& s) {
    if (s == "pixel") return AssimilationMode::pixel;
    if (s == "latent") return AssimilationMode::latent;
    throw ConfigError("unknown assimilation mode '" + s + "'");
}

std::string to_string(ModalitySelection sel) {
    return sel == ModalitySelection::unimodal ? "unimodal" : "multimodal";
}

ModalitySelection modality_selection_from_string(const std::string& s) {
    if (s == "unimodal") return ModalitySelection::unimodal;
    if (s == "multimodal") return ModalitySelection::multimodal;
    throw ConfigError("unknown modality selection '" + s + "'");
}

// ---------------------------------------------------------------------------
// Artifact

void ScoreModelArtifact::validate() const {
    if (space != "pixel" && space != "latent")
        throw ConfigError("artifact: space must be 'pixel' or 'latent', got '" + space + "'");
    if (window_size < 1 || state_dim < 1)
        throw ConfigError("artifact: window_size and state_dim must be positive");
    if (norm_std <= 0.0) throw ConfigError("artifact: norm_std must be positive");
    if (model.dim() != window_size * state_dim)
        throw ConfigError("artifact: model dimension " + std::to_string(model.dim()) +
                          " does not equal window_size * state_dim = " +
                          std::to_string(window_size * state_dim));
}

json ScoreModelArtifact::to_json() const {
    return json{{"model", model.to_json()},
                {"schedule", schedule.to_json()},
                {"norm_mean", norm_mean},
                {"norm_std", norm_std},
                {"space", space},
                {"window_size", window_size},
                {"state_dim", state_dim},
                {"latent_observation_variance", latent_observation_variance}};
}

ScoreModelArtifact ScoreModelArtifact::from_json(const json& j) {
    ScoreModelArtifact a;
    a.model = ScoreModel::from_json(j.at("model"));
    a.schedule = DiffusionSchedule::from_json(j.at("schedule"));
    a.norm_mean = j.at("norm_mean").get<double>();
    a.norm_std = j.at("norm_std").get<double>();
    a.space = j.at("space").get<std::string>();
    a.window_size = j.at("window_size").get<int>();
    a.state_dim = j.at("state_dim").get<int>();
    a.latent_observation_variance = j.value("latent_observation_variance", 0.0);
    a.validate();
    return a;
}

Eigen::MatrixXd flatten_windows(const Trajectory& traj, int window_size) {
    const int T = traj.steps();
    const int N = traj.dim();
    if (window_size < 1 || window_size > T)
        throw InputError("flatten_windows: window size must be in [1, T]");
    const int n_windows = T - window_size + 1;
    Eigen::MatrixXd out(window_size * N, n_windows);
    for (int w = 0; w < n_windows; ++w)
        for (int j = 0; j < window_size; ++j)
            out.col(w).segment(static_cast<Eigen::Index>(j) * N, N) =
                traj.values.row(w + j).transpose();
    return out;
}

Normalization Normalization::fit(const Eigen::MatrixXd& data) {
    if (data.size() == 0) throw InputError("normalization: empty data");
    Normalization n;
    n.mean = data.mean();
    n.std_dev = std::sqrt((data.array() - n.mean).square().mean());
    n.std_dev = std::max(n.std_dev, 1e-12);
    return n;
}

Eigen::MatrixXd Normalization::apply(const Eigen::MatrixXd& data) const {
    return (data.array() - mean) / std_dev;
}

Eigen::MatrixXd Normalization::invert(const Eigen::MatrixXd& data) const {
    return data.array() * std_dev + mean;
}

// ---------------------------------------------------------------------------
// Composite field

CompositeWindowField::CompositeWindowField(
    const ScoreField& window_field, int T, int state_dim, std::vector<Window> windows,
    std::vector<std::vector<ObservationModel>> window_observations, GuidanceConfig guidance,
    StitchRule rule)
    : ScoreField(window_field.schedule()),
      window_field_(&window_field),
      T_(T),
      n_(state_dim),
      windows_(std::move(windows)),
      observations_(std::move(window_observations)),
      guidance_(guidance),
      rule_(rule) {
    if (windows_.empty()) throw InputError("composite field: no windows");
    if (observations_.size() != windows_.size())
        throw InputError("composite field: one observation set per window required");
    for (const auto& w : windows_) {
        if (w.start < 0 || w.end() > T_)
            throw InputError("composite field: window outside trajectory");
        if (window_field_->dim() != w.size * n_)
            throw InputError("composite field: window field dimension mismatch");
    }
    // Owner per timestep: the covering window where the step is most interior
    // (ties go to the earlier window). Also checks coverage.
    owner_.assign(static_cast<std::size_t>(T_), -1);
    std::vector<int> best(static_cast<std::size_t>(T_), -1);
    for (std::size_t w = 0; w < windows_.size(); ++w) {
        for (int t = windows_[w].start; t < windows_[w].end(); ++t) {
            const int interior = std::min(t - windows_[w].start, windows_[w].end() - 1 - t);
            if (interior > best[static_cast<std::size_t>(t)]) {
                best[static_cast<std::size_t>(t)] = interior;
                owner_[static_cast<std::size_t>(t)] = static_cast<int>(w);
            }
        }
    }
    for (int t = 0; t < T_; ++t)
        if (owner_[static_cast<std::size_t>(t)] < 0)
            throw InputError("composite field: timestep " + std::to_string(t) +
                             " is not covered by any window");
}

Eigen::MatrixXd CompositeWindowField::conditional(const Eigen::MatrixXd& x_t, double t) const {
    if (x_t.rows() != dim()) throw InputError("composite field: state dimension mismatch");
    std::vector<Eigen::MatrixXd> window_scores(windows_.size());
    for (std::size_t w = 0; w < windows_.size(); ++w) {
        const auto& win = windows_[w];
        const Eigen::MatrixXd xw =
            x_t.middleRows(static_cast<Eigen::Index>(win.start) * n_, win.size * n_);
        try {
            window_scores[w] =
                conditional_score(xw, t, observations_[w], *window_field_, guidance_);
        } catch (const Error& e) {
            throw NumericError("window " + std::to_string(w) + " [" +
                               std::to_string(win.start) + ", " + std::to_string(win.end()) +
                               "): " + e.what());
        }
    }

    Eigen::MatrixXd score = Eigen::MatrixXd::Zero(x_t.rows(), x_t.cols());
    if (rule_ == StitchRule::central) {
        for (int step = 0; step < T_; ++step) {
            const int w = owner_[static_cast<std::size_t>(step)];
            const int local = step - windows_[static_cast<std::size_t>(w)].start;
            score.middleRows(static_cast<Eigen::Index>(step) * n_, n_) =
                window_scores[static_cast<std::size_t>(w)].middleRows(
                    static_cast<Eigen::Index>(local) * n_, n_);
        }
    } else {
        Eigen::VectorXd cover = Eigen::VectorXd::Zero(T_);
        for (std::size_t w = 0; w < windows_.size(); ++w) {
            const auto& win = windows_[w];
            for (int step = win.start; step < win.end(); ++step) {
                const int local = step - win.start;
                score.middleRows(static_cast<Eigen::Index>(step) * n_, n_) +=
                    window_scores[w].middleRows(static_cast<Eigen::Index>(local) * n_, n_);
                cover[step] += 1.0;
            }
        }
        for (int step = 0; step < T_; ++step)
            score.middleRows(static_cast<Eigen::Index>(step) * n_, n_) /= cover[step];
    }
    return score;
}

ScoreField::EpsEval CompositeWindowField::epsilon_eval(const Eigen::MatrixXd& x_t,
                                                       double t) const {
    // The composite score is already conditional; the sampler never needs to
    // differentiate through it, so no VJP is provided.
    EpsEval ev;
    ev.eps = -schedule_.std_dev(t) * conditional(x_t, t);
    return ev;
}

double CompositeWindowField::curvature_bound(double t) const {
    const double mu = schedule_.mean_scale(t);
    const double s2 = schedule_.variance(t);
    double worst = 0.0;
    for (const auto& obs_set : observations_) {
        double sum = 0.0;
        for (const auto& obs : obs_set)
            sum += 1.0 / (mu * mu * obs.noise_variance + guidance_.gamma * s2);
        worst = std::max(worst, sum);
    }
    return 1.0 / s2 + worst;
}

// ---------------------------------------------------------------------------
// Summaries

EnsembleSummary summarize(const AnalysisEnsemble& ensemble) {
    if (ensemble.members.empty()) throw InputError("summarize: empty ensemble");
    const auto& first = ensemble.members.front();
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(first.values.rows(), first.values.cols());
    for (const auto& m : ensemble.members) {
        if (m.values.rows() != mean.rows() || m.values.cols() != mean.cols())
            throw InputError("summarize: members have mismatched shapes");
        mean += m.values;
    }
    const double M = static_cast<double>(ensemble.members.size());
    mean /= M;

    Eigen::MatrixXd spread = Eigen::MatrixXd::Zero(mean.rows(), mean.cols());
    if (ensemble.members.size() > 1) {
        for (const auto& m : ensemble.members)
            spread.array() += (m.values - mean).array().square();
        spread = (spread.array() / (M - 1.0)).sqrt();
    }
    EnsembleSummary summary;
    summary.mean = Trajectory(std::move(mean), Trajectory::Role::analysis, first.dt);
    summary.spread = std::move(spread);
    return summary;
}

Eigen::MatrixXd ensemble_quantile(const AnalysisEnsemble& ensemble, double p) {
    if (ensemble.members.empty()) throw InputError("ensemble_quantile: empty ensemble");
    if (p < 0.0 || p > 1.0) throw DomainError("ensemble_quantile: p must lie in [0, 1]");
    const auto rows = ensemble.members.front().values.rows();
    const auto cols = ensemble.members.front().values.cols();
    const std::size_t M = ensemble.members.size();
    Eigen::MatrixXd out(rows, cols);
    std::vector<double> cell(M);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            for (std::size_t m = 0; m < M; ++m) cell[m] = ensemble.members[m].values(r, c);
            std::sort(cell.begin(), cell.end());
            const double pos = p * static_cast<double>(M - 1);
            const auto lo = static_cast<std::size_t>(pos);
            const std::size_t hi = std::min(lo + 1, M - 1);
            const double frac = pos - static_cast<double>(lo);
            out(r, c) = (1.0 - frac) * cell[lo] + frac * cell[hi];
        }
    }
    return out;
}

double calibrate_latent_variance(const Eigen::MatrixXd& z_reference,
                                 const Eigen::MatrixXd& z_degraded) {
    if (z_reference.rows() != z_degraded.rows() || z_reference.cols() != z_degraded.cols())
        throw InputError("calibrate_latent_variance: shape mismatch");
    if (z_reference.size() == 0) throw InputError("calibrate_latent_variance: empty input");
    const double v = (z_reference - z_degraded).array().square().mean();
    return std::max(v, 1e-12);
}

// ---------------------------------------------------------------------------
// Driver

std::vector<ModalityValue> lift_observations(const std::vector<ObservationModel>& observations,
                                             const ChannelLayout& layout) {
    for (const auto& obs : observations) {
        const bool known = std::any_of(
            layout.modalities.begin(), layout.modalities.end(),
            [&](const ChannelLayout::Modality& m) { return m.name == obs.tag; });
        if (!known)
            throw InputError("lift_observations: observation tag '" + obs.tag +
                             "' not in the codec layout");
    }
    std::vector<ModalityValue> values;
    values.reserve(layout.modalities.size());
    for (const auto& modality : layout.modalities) {
        ModalityValue v{modality.name, std::nullopt};
        for (const auto& obs : observations) {
            if (obs.tag != modality.name) continue;
            Eigen::VectorXd lifted = obs.op.lift_to_grid(obs.y);
            if (lifted.size() != modality.length)
                throw InputError("lift_observations: lifted modality '" + modality.name +
                                 "' has length " + std::to_string(lifted.size()) +
                                 ", layout expects " + std::to_string(modality.length));
            v.value = std::move(lifted);
            break;
        }
        values.push_back(std::move(v));
    }
    return values;
}

AnalysisEnsemble assimilate(const AssimilationProblem& problem,
                            const ScoreModelArtifact& artifact,
                            const SamplerConfig& sampler_cfg,
                            const GuidanceConfig& guidance_cfg, const LatentCodec* codec) {
    artifact.validate();
    const int T = problem.background.steps();
    const int N = problem.background.dim();
    if (static_cast<int>(problem.observations.size()) != T)
        throw InputError("assimilate: need one observation set per timestep (" +
                         std::to_string(problem.observations.size()) + " given, T = " +
                         std::to_string(T) + ")");
    if (problem.ensemble_size < 1) throw ConfigError("assimilate: ensemble size must be >= 1");
    if (problem.background_variance <= 0.0)
        throw ConfigError("assimilate: background variance must be positive");
    if (artifact.window_size != problem.window.size)
        throw ConfigError("assimilate: artifact was trained with window size " +
                          std::to_string(artifact.window_size) + ", problem uses " +
                          std::to_string(problem.window.size));

    const bool latent = problem.mode == AssimilationMode::latent;
    if (latent) {
        if (codec == nullptr)
            throw ConfigError("assimilate: latent mode requires a codec");
        if (artifact.space != "latent")
            throw ConfigError("assimilate: latent mode requires a latent-space artifact");
        if (codec->state_dim() != N)
            throw ConfigError("assimilate: codec state dimension does not match background");
        if (artifact.state_dim != codec->latent_dim())
            throw ConfigError("assimilate: artifact state_dim does not match codec latent dim");
        if (problem.latent_observation_variance <= 0.0)
            throw ConfigError(
                "assimilate: latent mode needs a calibrated latent_observation_variance");
    } else {
        if (artifact.space != "pixel")
            throw ConfigError("assimilate: pixel mode requires a pixel-space artifact");
        if (artifact.state_dim != N)
            throw ConfigError("assimilate: artifact state_dim does not match background");
    }

    const int n = artifact.state_dim;  // per-timestep channels in model space
    const double m = artifact.norm_mean;
    const double s = artifact.norm_std;

    // Per-timestep conditioning modalities in normalized model space. All
    // operators preserve constants, so A((x - m1)/s) = (Ax - m1)/s.
    std::vector<std::vector<ObservationModel>> step_obs(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        auto& list = step_obs[static_cast<std::size_t>(t)];
        if (latent) {
            const Eigen::VectorXd z = codec->encode(
                problem.background.state(t),
                lift_observations(problem.observations[static_cast<std::size_t>(t)],
                                  codec->layout()));
            list.emplace_back(((z.array() - m) / s).matrix(), MeasurementOp::identity(n),
                              problem.latent_observation_variance / (s * s),
                              "encoded@" + std::to_string(t));
        } else {
            list.emplace_back(((problem.background.state(t).array() - m) / s).matrix(),
                              MeasurementOp::identity(n),
                              problem.background_variance / (s * s),
                              "background@" + std::to_string(t));
            for (const auto& obs : problem.observations[static_cast<std::size_t>(t)]) {
                if (obs.op.input_dim() != N)
                    throw InputError("assimilate: observation '" + obs.tag +
                                     "' does not act on the state dimension");
                list.emplace_back(((obs.y.array() - m) / s).matrix(), obs.op,
                                  obs.noise_variance / (s * s),
                                  obs.tag + "@" + std::to_string(t));
            }
        }
    }

    // Lift per-timestep modalities into window coordinates.
    const auto windows = build_windows(T, problem.window);
    std::vector<std::vector<ObservationModel>> window_obs(windows.size());
    for (std::size_t w = 0; w < windows.size(); ++w) {
        for (int j = 0; j < windows[w].size; ++j) {
            const int t = windows[w].start + j;
            for (const auto& obs : step_obs[static_cast<std::size_t>(t)])
                window_obs[w].emplace_back(obs.y,
                                           block_op(windows[w].size, n, j, obs.op),
                                           obs.noise_variance, obs.tag);
        }
    }

    const ModelScoreField window_field(artifact.model, artifact.schedule);
    const CompositeWindowField composite(window_field, T, n, windows, std::move(window_obs),
                                         guidance_cfg, problem.stitch);
    const SampleResult result = sample(composite, sampler_cfg, problem.ensemble_size);

    AnalysisEnsemble ensemble;
    ensemble.failures = result.failures;
    for (int member = 0; member < problem.ensemble_size; ++member) {
        const bool failed = std::any_of(result.failures.begin(), result.failures.end(),
                                        [&](const SampleFailure& f) { return f.member == member; });
        if (failed) continue;
        Eigen::MatrixXd values(T, N);
        for (int t = 0; t < T; ++t) {
            Eigen::VectorXd z =
                result.samples.col(member).segment(static_cast<Eigen::Index>(t) * n, n);
            z = (z.array() * s + m).matrix();
            values.row(t) = latent ? codec->decode(z).transpose() : z.transpose();
        }
        ensemble.members.emplace_back(std::move(values), Trajectory::Role::analysis,
                                      problem.background.dt);
    }
    return ensemble;
}

}  // namespace scoreda
