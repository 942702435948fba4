#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "scoreda/guidance.hpp"
#include "scoreda/latent.hpp"
#include "scoreda/sampler.hpp"
#include "scoreda/score_model.hpp"
#include "scoreda/toys.hpp"
#include "scoreda/trajectory.hpp"

namespace scoreda {

// ---------------------------------------------------------------------------
// Markov-blanket windowing

struct WindowConfig {
    int size = 5;    // blanket size K
    int stride = 5;  // start offset between consecutive windows

    nlohmann::json to_json() const;
    static WindowConfig from_json(const nlohmann::json& j);
};

struct Window {
    int start = 0;  // zero-based first timestep
    int size = 0;

    int end() const { return start + size; }  // exclusive
    bool operator==(const Window& o) const { return start == o.start && size == o.size; }
};

/// Ordered windows of length K covering 0..T-1; the last window is shifted
/// back so it ends exactly at T. Requires 1 <= stride <= K <= T.
std::vector<Window> build_windows(int T, const WindowConfig& cfg);

/// How overlapping window scores are reconciled: `central` takes, per
/// timestep, the score from the window where that step is most interior;
/// `average` takes the uniform mean over covering windows.
enum class StitchRule { central, average };

std::string to_string(StitchRule rule);
StitchRule stitch_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Trained-model artifact

/// A trained noise-prediction model together with everything needed to use it
/// for assimilation: its schedule, the scalar normalization of the training
/// data, and the window shape it was trained on.
struct ScoreModelArtifact {
    ScoreModel model;
    DiffusionSchedule schedule = DiffusionSchedule::vp();
    double norm_mean = 0.0;
    double norm_std = 1.0;
    std::string space = "pixel";  // "pixel" or "latent"
    int window_size = 5;
    int state_dim = 0;  // per-timestep channels in model space (N_x or L)
    /// Latent artifacts: calibrated variance of the encoded-observation
    /// conditioning modality (0 when not calibrated / pixel space).
    double latent_observation_variance = 0.0;

    /// Checks internal consistency (model dim == window_size * state_dim).
    void validate() const;

    nlohmann::json to_json() const;
    static ScoreModelArtifact from_json(const nlohmann::json& j);
};

/// Each column is one flattened window of `window_size` consecutive rows
/// (stride 1), time-major: entry t*N+i is cell i at window step t.
Eigen::MatrixXd flatten_windows(const Trajectory& traj, int window_size);

/// Scalar normalization fitted over all cells of a training set.
struct Normalization {
    double mean = 0.0;
    double std_dev = 1.0;

    static Normalization fit(const Eigen::MatrixXd& data);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& data) const;
    Eigen::MatrixXd invert(const Eigen::MatrixXd& data) const;
};

// ---------------------------------------------------------------------------
// Composite trajectory-level score field

/// Joint reverse-SDE field over a full T-step trajectory whose score is
/// assembled from per-window conditional scores of a K-step window model.
/// Observations must already be expressed in window coordinates.
class CompositeWindowField final : public ScoreField {
public:
    CompositeWindowField(const ScoreField& window_field, int T, int state_dim,
                         std::vector<Window> windows,
                         std::vector<std::vector<ObservationModel>> window_observations,
                         GuidanceConfig guidance, StitchRule rule);

    int dim() const override { return T_ * n_; }
    EpsEval epsilon_eval(const Eigen::MatrixXd& x_t, double t) const override;
    /// Prior curvature plus the largest per-window likelihood curvature.
    double curvature_bound(double t) const override;

    /// Full stitched conditional score (used directly by tests).
    Eigen::MatrixXd conditional(const Eigen::MatrixXd& x_t, double t) const;

private:
    const ScoreField* window_field_;
    int T_;
    int n_;
    std::vector<Window> windows_;
    std::vector<std::vector<ObservationModel>> observations_;
    GuidanceConfig guidance_;
    StitchRule rule_;
    std::vector<int> owner_;  // central rule: owning window per timestep
};

// ---------------------------------------------------------------------------
// Assimilation driver

enum class AssimilationMode { pixel, latent };
enum class ModalitySelection { unimodal, multimodal };

std::string to_string(AssimilationMode mode);
AssimilationMode assimilation_mode_from_string(const std::string& s);
std::string to_string(ModalitySelection sel);
ModalitySelection modality_selection_from_string(const std::string& s);

struct AssimilationProblem {
    Trajectory background;
    ObservationSequence observations;  // length T; entries may be empty
    AssimilationMode mode = AssimilationMode::pixel;
    ModalitySelection selection = ModalitySelection::multimodal;
    double background_variance = 1.0;
    int ensemble_size = 8;
    WindowConfig window;
    StitchRule stitch = StitchRule::central;
    /// Latent mode: variance of the encoded-observation conditioning modality,
    /// calibrated from validation reconstruction discrepancy.
    double latent_observation_variance = 0.0;
};

struct AnalysisEnsemble {
    std::vector<Trajectory> members;  // role = analysis; failed members dropped
    std::vector<SampleFailure> failures;
};

struct EnsembleSummary {
    Trajectory mean;         // role = analysis
    Eigen::MatrixXd spread;  // per-cell sample standard deviation
};

EnsembleSummary summarize(const AnalysisEnsemble& ensemble);

/// Per-cell empirical quantile (linear interpolation between order
/// statistics); monotone in p.
Eigen::MatrixXd ensemble_quantile(const AnalysisEnsemble& ensemble, double p);

/// Mean per-dimension squared discrepancy between two latent code sets
/// (columns are samples): the calibrated conditioning variance for latent
/// assimilation.
double calibrate_latent_variance(const Eigen::MatrixXd& z_reference,
                                 const Eigen::MatrixXd& z_degraded);

/// Runs windowed conditional sampling of the full trajectory. The background
/// enters as an identity-operator observation with the configured variance;
/// steps without observations contribute the background term only. Latent
/// mode requires a codec: per-timestep observations are lifted to the state
/// grid, encoded together with the background, and conditioned through an
/// identity operator in latent space; decoded members are returned.
AnalysisEnsemble assimilate(const AssimilationProblem& problem,
                            const ScoreModelArtifact& artifact,
                            const SamplerConfig& sampler_cfg,
                            const GuidanceConfig& guidance_cfg,
                            const LatentCodec* codec = nullptr);

/// Latent-mode helper, exposed for training-set construction: lift each
/// observation onto the state grid and pair it with the codec layout.
std::vector<ModalityValue> lift_observations(const std::vector<ObservationModel>& observations,
                                             const ChannelLayout& layout);

}  // namespace scoreda
