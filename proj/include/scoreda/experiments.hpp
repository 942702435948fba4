#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "scoreda/assimilation.hpp"
#include "scoreda/latent.hpp"
#include "scoreda/toys.hpp"

namespace scoreda {

/// One ablation grid point: the three degradation knobs.
struct GridPoint {
    int coarsening = 4;
    double noise = 0.1;
    int gap = 1;

    std::string label() const;
    bool operator==(const GridPoint& o) const {
        return coarsening == o.coarsening && noise == o.noise && gap == o.gap;
    }
};

/// One assimilation mode: state space x modality selection.
struct ModeSpec {
    AssimilationMode mode = AssimilationMode::pixel;
    ModalitySelection selection = ModalitySelection::multimodal;

    std::string label() const;
    static ModeSpec parse(const std::string& s);  // "pixel:unimodal" etc.
};

struct ExperimentConfig {
    std::string system = "lorenz96";  // or "lgssm"
    Lorenz96Config lorenz96;
    LinearGaussianSSM lgssm = default_lgssm();

    DiffusionSchedule schedule = DiffusionSchedule::vp();
    int train_steps = 400;  // training trajectory length
    int eval_steps = 8;     // assimilation horizon T
    WindowConfig window{5, 3};
    StitchRule stitch = StitchRule::central;

    CodecTrainConfig codec;
    TrainConfig score_training;
    int score_hidden_width = 128;
    int score_hidden_layers = 2;
    SamplerConfig sampler;
    GuidanceConfig guidance;

    double background_variance = 0.5;
    SyntheticModalities modalities;  // generation defaults (ideal setting)

    std::vector<int> coarsening_grid = {4, 15, 20};
    std::vector<double> noise_grid = {0.1, 2.0, 4.0};
    std::vector<int> gap_grid = {1, 12, 16};
    std::vector<ModeSpec> modes = default_modes();

    int ensemble_size = 8;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::string outdir = "runs/experiment";

    static LinearGaussianSSM default_lgssm();
    static std::vector<ModeSpec> default_modes();

    int state_dim() const;
    std::vector<GridPoint> grid() const;  // cartesian product, row-major

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
};

/// One report row: a (mode, grid point) cell with seed-averaged metrics.
struct RunRow {
    ModeSpec mode;
    GridPoint point;
    bool failed = false;
    std::string error;
    double wasserstein = 0.0;  // per-cell W1 to truth, averaged over cells+seeds
    double rmse = 0.0;         // analysis-mean RMSE to truth, seed-averaged
    double spread = 0.0;       // mean ensemble spread, seed-averaged
    std::vector<double> per_seed_wasserstein;

    nlohmann::json to_json() const;
    static RunRow from_json(const nlohmann::json& j);
};

struct RunReport {
    std::vector<RunRow> rows;
    std::string content_hash;  // FNV-1a over config + rows

    bool all_ok() const;
};

/// FNV-1a 64-bit over a byte string, hex-encoded.
std::string fnv1a_hex(const std::string& bytes);

// ---------------------------------------------------------------------------
// Pipeline commands. Each persists its outputs under config.outdir and throws
// ConfigError naming the producing command when an upstream artifact is
// missing.

/// Truth + training + background trajectories and the default-setting
/// observation sequence.
void cmd_simulate(const ExperimentConfig& config);

/// Codec over (state, lifted observations) tuples of the training period.
void cmd_train_codec(const ExperimentConfig& config);

/// Score model for one space; latent requires the codec and stores the
/// calibrated conditioning variance in the artifact.
void cmd_train_score(const ExperimentConfig& config, AssimilationMode mode);

/// One (mode, grid point) assimilation over config.seeds; persists the
/// ensemble of the first seed plus metrics, and returns the report row.
RunRow cmd_assimilate(const ExperimentConfig& config, const ModeSpec& mode,
                      const GridPoint& point);

/// Full grid with crash isolation; writes report.csv/report.json, plot series,
/// a timing sidecar, and (on partial failure) a failure manifest.
RunReport cmd_ablate(const ExperimentConfig& config);

/// Rebuilds the report tables and plot series from the persisted rows.
RunReport cmd_report(const std::string& outdir);

/// Deterministic observation sequence for a grid point (modality selection
/// applied): multimodal uses in-situ (gap, noise) + ex-situ (coarsening,
/// noise); unimodal uses none.
ObservationSequence grid_observations(const ExperimentConfig& config, const Trajectory& truth,
                                      const ModeSpec& mode, const GridPoint& point);

/// Persistence of per-timestep observation sets (used by simulate/assimilate).
nlohmann::json observations_to_json(const ObservationSequence& observations);
ObservationSequence observations_from_json(const nlohmann::json& j);

/// Serialized report text (deterministic; used for the byte-identity check).
std::string report_csv(const RunReport& report);
nlohmann::json report_json(const ExperimentConfig& config, const RunReport& report);

}  // namespace scoreda
