#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "scoreda/nn.hpp"
#include "scoreda/noise.hpp"
#include "scoreda/schedule.hpp"

namespace scoreda {

/// Architecture descriptor for a noise-prediction network.
/// `dense`: MLP with sinusoidal time embedding injected into the first hidden
/// layer. `conv1d`: circular 1-D convolutions over (channels x width) samples,
/// for periodic states.
struct ScoreArchitecture {
    enum class Kind { dense, conv1d };

    Kind kind = Kind::dense;
    int input_dim = 0;

    // dense
    int hidden_width = 256;
    int hidden_layers = 2;

    // conv1d; input_dim must equal channels * width
    int channels = 1;
    int width = 0;
    std::vector<int> hidden_channels = {32, 64};
    int kernel = 5;

    // time conditioning (two-layer time network)
    int time_embed_dim = 64;
    int time_hidden = 256;

    static ScoreArchitecture dense(int input_dim, int hidden_width = 256,
                                   int hidden_layers = 2);
    static ScoreArchitecture conv1d(int channels, int width,
                                    std::vector<int> hidden_channels = {32, 64},
                                    int kernel = 5);

    nlohmann::json to_json() const;
    static ScoreArchitecture from_json(const nlohmann::json& j);
    bool operator==(const ScoreArchitecture& o) const;
};

/// Trainable noise-prediction model eps_phi(x(t), t). Parameters live in one
/// flat vector; evaluation is deterministic and pure, so frozen models are
/// safe to share across threads.
class ScoreModel {
public:
    ScoreModel() = default;
    static ScoreModel init(const ScoreArchitecture& arch, NoiseSource& rng);

    const ScoreArchitecture& architecture() const { return arch_; }
    int dim() const { return arch_.input_dim; }
    int n_params() const { return static_cast<int>(params_.size()); }
    const Eigen::VectorXd& params() const { return params_; }
    Eigen::VectorXd& params() { return params_; }

    /// eps_hat for a single input.
    Eigen::VectorXd predict_noise(const Eigen::VectorXd& x_t, double t) const;

    /// Batched eps_hat; columns are samples, `t` has one entry per column.
    Eigen::MatrixXd predict_noise_batch(const Eigen::MatrixXd& x_t,
                                        const Eigen::VectorXd& t) const;

    struct Cache;

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x_t, const Eigen::VectorXd& t,
                            Cache* cache) const;
    /// Backprop of a cotangent on eps_hat; accumulates into `param_grad`
    /// (must be zero-initialised by the caller) and returns dL/dx.
    Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& d_eps,
                             Eigen::VectorXd& param_grad) const;
    /// J^T cot where J = d eps_hat / d x, parameters frozen.
    Eigen::MatrixXd input_vjp_batch(const Eigen::MatrixXd& x_t, const Eigen::VectorXd& t,
                                    const Eigen::MatrixXd& cot) const;
    Eigen::MatrixXd input_vjp_cached(const Cache& cache, const Eigen::MatrixXd& cot) const;

    nlohmann::json to_json() const;
    static ScoreModel from_json(const nlohmann::json& j);

private:
    void build_layout();

    ScoreArchitecture arch_;
    Eigen::VectorXd params_;

    // layout (derived from arch_)
    nn::Mlp time_net_;
    std::vector<nn::Linear> dense_layers_;           // trunk + head
    std::vector<nn::CircularConv1d> conv_layers_;    // trunk + head
    int total_params_ = 0;
};

struct ScoreModel::Cache {
    Eigen::MatrixXd x;
    Eigen::MatrixXd time_features;
    nn::Mlp::Cache time_cache;
    std::vector<Eigen::MatrixXd> inputs;    // input to each trunk layer
    std::vector<Eigen::MatrixXd> preacts;   // pre-activation (after time add)
};

/// s = -eps_hat / sigma(t). Sign fixed so that s approximates
/// grad_x log p(x(t)) and Tweedie denoising returns the clean sample.
Eigen::VectorXd score_from_noise(const Eigen::VectorXd& eps_hat, double t,
                                 const DiffusionSchedule& schedule);
Eigen::MatrixXd score_from_noise(const Eigen::MatrixXd& eps_hat, double t,
                                 const DiffusionSchedule& schedule);

// ---------------------------------------------------------------------------
// Denoising score matching

/// One set of DSM randomisation draws for a batch of clean samples
/// (columns): t ~ U[t_floor, 1], eps ~ N(0, I), x_t = mu(t) x + sigma(t) eps.
struct DsmDraws {
    Eigen::VectorXd t;
    Eigen::MatrixXd eps;
    Eigen::MatrixXd x_t;
};

DsmDraws dsm_draws(const DiffusionSchedule& schedule, const Eigen::MatrixXd& batch,
                   NoiseSource& noise, double t_floor = 1e-3);

/// Mean over the batch of || eps_hat(x_t, t) - eps ||^2.
double dsm_loss(const ScoreModel& model, const Eigen::MatrixXd& batch,
                const DiffusionSchedule& schedule, NoiseSource& noise,
                double t_floor = 1e-3);
double dsm_loss_on_draws(const ScoreModel& model, const DsmDraws& draws);
/// Loss and its gradient w.r.t. the model parameters.
double dsm_loss_grad(const ScoreModel& model, const DsmDraws& draws,
                     Eigen::VectorXd& grad);

struct TrainConfig {
    int epochs = 64;
    int batch_size = 64;
    double learning_rate = 2e-4;
    double weight_decay = 1e-3;
    double t_floor = 1e-3;
    std::uint64_t seed = 0;
    int validation_size = 256;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainResult {
    std::vector<double> loss_history;  // validation DSM loss per epoch
    bool smooth_monotone = true;       // window-5 smoothed history nonincreasing
};

/// Trains in place. Deterministic given config.seed. Throws TrainingError on
/// divergence (loss > 1e6 or non-finite).
TrainResult train(ScoreModel& model, const Eigen::MatrixXd& dataset,
                  const TrainConfig& config, const DiffusionSchedule& schedule);

// ---------------------------------------------------------------------------
// Oracles and score fields

/// Gaussian data distribution N(m, C) whose perturbed score is known in
/// closed form: x(t) ~ N(mu m, mu^2 C + sigma^2 I).
struct GaussianOracle {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    GaussianOracle(Eigen::VectorXd m, Eigen::MatrixXd C);
};

Eigen::VectorXd analytic_score(const GaussianOracle& oracle,
                               const DiffusionSchedule& schedule,
                               const Eigen::VectorXd& x_t, double t);

/// Noise-prediction field with its schedule: the common interface the sampler
/// and guidance consume. epsilon_eval returns eps_hat plus a VJP closure for
/// differentiating through the (frozen) field.
class ScoreField {
public:
    struct EpsEval {
        Eigen::MatrixXd eps;
        std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> vjp;
    };

    explicit ScoreField(DiffusionSchedule schedule) : schedule_(schedule) {}
    virtual ~ScoreField() = default;

    virtual int dim() const = 0;
    virtual EpsEval epsilon_eval(const Eigen::MatrixXd& x_t, double t) const = 0;

    /// Upper bound on the largest curvature of -log p_t the field represents,
    /// used by the Langevin corrector to pick a stable amplitude. The default
    /// is the perturbation-kernel curvature 1/sigma^2(t); guided fields add
    /// their likelihood curvature on top.
    virtual double curvature_bound(double t) const;

    Eigen::MatrixXd epsilon(const Eigen::MatrixXd& x_t, double t) const;
    Eigen::MatrixXd score(const Eigen::MatrixXd& x_t, double t) const;
    const DiffusionSchedule& schedule() const { return schedule_; }

protected:
    DiffusionSchedule schedule_;
};

class ModelScoreField final : public ScoreField {
public:
    ModelScoreField(const ScoreModel& model, DiffusionSchedule schedule)
        : ScoreField(schedule), model_(&model) {}
    int dim() const override { return model_->dim(); }
    EpsEval epsilon_eval(const Eigen::MatrixXd& x_t, double t) const override;

private:
    const ScoreModel* model_;
};

class GaussianOracleField final : public ScoreField {
public:
    GaussianOracleField(GaussianOracle oracle, DiffusionSchedule schedule)
        : ScoreField(schedule), oracle_(std::move(oracle)) {}
    int dim() const override { return static_cast<int>(oracle_.mean.size()); }
    EpsEval epsilon_eval(const Eigen::MatrixXd& x_t, double t) const override;

private:
    GaussianOracle oracle_;
};

}  // namespace scoreda
