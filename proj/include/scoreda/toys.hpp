#pragma once

#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "scoreda/guidance.hpp"
#include "scoreda/noise.hpp"
#include "scoreda/trajectory.hpp"

namespace scoreda {

// ---------------------------------------------------------------------------
// Linear-Gaussian state-space model (exact-posterior oracle)

/// x_1 ~ N(m0, P0), x_{t+1} = A x_t + w_t, w_t ~ N(0, Q).
struct LinearGaussianSSM {
    Eigen::MatrixXd transition;     // A
    Eigen::MatrixXd process_noise;  // Q
    Eigen::VectorXd initial_mean;   // m0
    Eigen::MatrixXd initial_cov;    // P0

    LinearGaussianSSM(Eigen::MatrixXd A, Eigen::MatrixXd Q, Eigen::VectorXd m0,
                      Eigen::MatrixXd P0);
    int dim() const { return static_cast<int>(initial_mean.size()); }

    nlohmann::json to_json() const;
    static LinearGaussianSSM from_json(const nlohmann::json& j);
};

Trajectory simulate_lgssm(const LinearGaussianSSM& model, int T, std::uint64_t seed);

/// Per-timestep observation sets; entries may be empty (no data at that step).
using ObservationSequence = std::vector<std::vector<ObservationModel>>;

struct SmootherResult {
    std::vector<Eigen::VectorXd> means;        // smoothed E[x_t | y_{1:T}]
    std::vector<Eigen::MatrixXd> covariances;  // smoothed Cov[x_t | y_{1:T}]
};

/// Exact fixed-interval (RTS) smoother. observations.size() defines T.
SmootherResult kalman_smoother(const LinearGaussianSSM& model,
                               const ObservationSequence& observations);

// ---------------------------------------------------------------------------
// Ensemble Kalman filter baseline

struct EnkfResult {
    std::vector<Eigen::MatrixXd> ensembles;  // per step, dim x n_members (analysis)
    std::vector<int> inflation_warnings;     // steps with degenerate spread
};

/// One stochastic perturbed-observation analysis update.
/// Sets *degenerate when the forecast spread has collapsed.
Eigen::MatrixXd enkf_update(const Eigen::MatrixXd& ensemble,
                            const std::vector<ObservationModel>& observations,
                            NoiseSource& noise, bool* degenerate = nullptr);

/// Sequential filter: sample the initial ensemble from the model prior, then
/// alternate forecast (dynamics + process noise) and analysis steps.
EnkfResult enkf_assimilate(const LinearGaussianSSM& model, int n_members,
                           const ObservationSequence& observations, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Lorenz-96

struct Lorenz96Config {
    int dim = 40;
    double forcing = 8.0;
    double step = 0.05;     // RK4 integrator step
    int spin_up = 500;      // steps discarded before recording

    nlohmann::json to_json() const;
    static Lorenz96Config from_json(const nlohmann::json& j);
};

Eigen::VectorXd lorenz96_tendency(const Eigen::VectorXd& x, double forcing);

/// RK4 integration; records T states after spin-up. The optional start state
/// overrides the default (forcing plus a small random perturbation).
Trajectory simulate_lorenz96(const Lorenz96Config& cfg, int T, std::uint64_t seed,
                             const Eigen::VectorXd* start = nullptr);

// ---------------------------------------------------------------------------
// Synthetic multimodal observations

/// In-situ: mask with a sampling gap (point sensors). Ex-situ: circular
/// Gaussian smoothing (width = factor/2) composed with average-pooling
/// (coarse remote footprint).
struct SyntheticModalities {
    bool use_in_situ = true;
    int in_situ_gap = 1;
    double in_situ_noise = 0.1;
    bool use_ex_situ = true;
    int ex_situ_factor = 4;
    double ex_situ_noise = 0.1;

    nlohmann::json to_json() const;
    static SyntheticModalities from_json(const nlohmann::json& j);
};

MeasurementOp in_situ_op(int state_dim, int gap);
MeasurementOp ex_situ_op(int state_dim, int factor);

/// y = A(truth_t) + noise per step and modality, with the generating variance
/// recorded as the observation's noise variance.
ObservationSequence make_observations(const Trajectory& truth,
                                      const SyntheticModalities& modalities,
                                      std::uint64_t seed);

// ---------------------------------------------------------------------------
// Metrics

/// Order-1 Wasserstein distance between 1-D empirical distributions via the
/// sorted quantile coupling; supports unequal sample counts.
double wasserstein_1d(const Eigen::VectorXd& samples_a, const Eigen::VectorXd& samples_b);

}  // namespace scoreda
