#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "scoreda/guidance.hpp"
#include "scoreda/score_model.hpp"

namespace scoreda {

struct SamplerConfig {
    int n_steps = 512;        // predictor steps on the uniform time grid
    int corrections = 1;      // LMC corrector steps per time node
    double tau = 0.5;         // base Langevin amplitude
    double t_floor = 1e-3;    // reverse integration stops here
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static SamplerConfig from_json(const nlohmann::json& j);
};

/// One exponential-integrator step from t to t - dt:
///   x' = (mu(t-dt)/mu(t)) x + (mu(t-dt)/mu(t) - sigma(t-dt)/sigma(t))
///        * sigma^2(t) * s(x, t).
Eigen::MatrixXd ei_predictor_step(const Eigen::MatrixXd& x_t, double t, double dt,
                                  const Eigen::MatrixXd& score,
                                  const DiffusionSchedule& schedule);
Eigen::VectorXd ei_predictor_step(const Eigen::VectorXd& x_t, double t, double dt,
                                  const Eigen::VectorXd& score,
                                  const DiffusionSchedule& schedule);

/// One Langevin corrector step: x <- x + tau s + sqrt(2 tau) eps.
/// The overload with a NoiseSource draws eps itself.
Eigen::MatrixXd lmc_corrector_step(const Eigen::MatrixXd& x_t,
                                   const Eigen::MatrixXd& score, double tau,
                                   const Eigen::MatrixXd& eps);
Eigen::VectorXd lmc_corrector_step(const Eigen::VectorXd& x_t,
                                   const Eigen::VectorXd& score, double tau,
                                   NoiseSource& noise);

struct SampleFailure {
    int member = 0;
    int step = 0;  // time-grid index at which the state left the finite range
};

struct SampleResult {
    Eigen::MatrixXd samples;  // columns are ensemble members; failed ones zeroed
    std::vector<SampleFailure> failures;

    bool ok() const { return failures.empty(); }
};

/// Full reverse run: x(1) ~ N(0, sigma^2(1) I), then for each node of the
/// uniform grid from 1 down to t_floor one EI predictor step followed by
/// cfg.corrections LMC steps. The per-node Langevin amplitude is annealed as
/// tau_t = cfg.tau * sigma^2(t), so the corrector's stationary spread tracks
/// the perturbation kernel instead of flattening it. Each ensemble member
/// consumes its own noise stream (seed, member index), so results are
/// independent of ensemble size and batching.
SampleResult sample(const ScoreField& field, const SamplerConfig& cfg, int n_samples);

/// Conditional variant: wraps the field with the guided score.
SampleResult sample(const ScoreField& field,
                    const std::vector<ObservationModel>& observations,
                    const GuidanceConfig& guidance, const SamplerConfig& cfg,
                    int n_samples);

}  // namespace scoreda
