#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "scoreda/score_model.hpp"

namespace scoreda {

/// Linear measurement operator A mapping a state vector to an observation
/// vector. All kinds are linear, support exact transpose application, and
/// preserve constant vectors.
class MeasurementOp {
public:
    enum class Kind { identity, coarsen, mask, gaussian_smooth, compose };

    static MeasurementOp identity(int dim);
    /// Non-overlapping average pooling over blocks of `factor` cells; a
    /// non-divisible dimension leaves a shorter (ragged) final block.
    static MeasurementOp coarsen(int input_dim, int factor);
    /// Keep every `gap`-th entry starting at index 0.
    static MeasurementOp mask_gap(int input_dim, int gap);
    /// Keep an explicit, strictly increasing zero-based index set.
    static MeasurementOp mask_indices(int input_dim, std::vector<int> indices);
    /// Circular Gaussian smoothing with the given kernel width (std dev in
    /// grid cells); dimension-preserving.
    static MeasurementOp gaussian_smooth(int input_dim, double width);
    /// Composition: ops are applied left-to-right (ops[0] first).
    static MeasurementOp compose(std::vector<MeasurementOp> ops);

    Kind kind() const { return kind_; }
    int input_dim() const { return input_dim_; }
    int output_dim() const { return output_dim_; }
    int factor() const { return factor_; }
    double smooth_width() const { return width_; }
    const std::vector<int>& indices() const { return indices_; }
    const std::vector<MeasurementOp>& parts() const { return parts_; }

    Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
    Eigen::MatrixXd apply(const Eigen::MatrixXd& v) const;  // columns are samples
    Eigen::VectorXd apply_transpose(const Eigen::VectorXd& w) const;
    Eigen::MatrixXd apply_transpose(const Eigen::MatrixXd& w) const;

    /// Constant-preserving right inverse used to place an observation back on
    /// the state grid: coarsen repeats cell values, mask scatters observed
    /// entries and fills gaps by nearest observed neighbour, smoothing and
    /// identity return the input. Used by the latent observation encoding.
    Eigen::VectorXd lift_to_grid(const Eigen::VectorXd& y) const;

    /// Dense matrix representation (for oracles and small problems).
    Eigen::MatrixXd to_matrix() const;

    nlohmann::json to_json() const;
    static MeasurementOp from_json(const nlohmann::json& j);
    /// Plain-text index list: one zero-based index per line.
    static std::vector<int> load_index_file(const std::string& path);

private:
    MeasurementOp() = default;

    Kind kind_ = Kind::identity;
    int input_dim_ = 0;
    int output_dim_ = 0;
    int factor_ = 1;            // coarsen factor or mask gap (informational)
    double width_ = 0.0;        // gaussian_smooth
    std::vector<int> indices_;  // mask
    Eigen::VectorXd kernel_;    // gaussian_smooth taps, centred
    std::vector<MeasurementOp> parts_;
};

/// One observed modality: y = A x + noise, noise ~ N(0, sigma2_y I).
struct ObservationModel {
    Eigen::VectorXd y;
    MeasurementOp op;
    double noise_variance = 1.0;
    std::string tag;  // e.g. "background", "in-situ", "ex-situ"

    ObservationModel(Eigen::VectorXd y_in, MeasurementOp op_in, double sigma2,
                     std::string tag_in = {});
};

struct GuidanceConfig {
    enum class Mode { differentiate_through_score, frozen_denoiser };

    double gamma = 1e-2;
    Mode mode = Mode::differentiate_through_score;
    /// Clamp on |x_hat| entries before the residual is formed (model-space
    /// units). Bounds the 1/mu amplification of model error at large t;
    /// inactive for in-distribution denoised estimates. 0 disables.
    double denoised_clip = 10.0;

    nlohmann::json to_json() const;
    static GuidanceConfig from_json(const nlohmann::json& j);
};

/// x_hat = (x_t + sigma^2(t) s(x_t, t)) / mu(t): posterior-mean estimate of
/// the clean sample. Throws NumericError if mu(t) is below the floor.
Eigen::VectorXd tweedie_denoise(const Eigen::VectorXd& x_t, double t,
                                const ScoreField& field);
Eigen::MatrixXd tweedie_denoise(const Eigen::MatrixXd& x_t, double t,
                                const ScoreField& field);

/// grad_{x_t} log N(y | A x_hat(x_t), v(t) I), v(t) = sigma2_y + gamma
/// sigma^2(t)/mu^2(t).
Eigen::MatrixXd likelihood_score(const Eigen::MatrixXd& x_t, double t,
                                 const ObservationModel& obs, const ScoreField& field,
                                 const GuidanceConfig& cfg);
Eigen::VectorXd likelihood_score(const Eigen::VectorXd& x_t, double t,
                                 const ObservationModel& obs, const ScoreField& field,
                                 const GuidanceConfig& cfg);

/// s_cond = s_uncond + sum_k grad log p(y_k | x_t). Shares one field
/// evaluation (and one VJP accumulation in differentiate_through_score mode)
/// across all modalities.
Eigen::MatrixXd conditional_score(const Eigen::MatrixXd& x_t, double t,
                                  const std::vector<ObservationModel>& observations,
                                  const ScoreField& field, const GuidanceConfig& cfg);
Eigen::VectorXd conditional_score(const Eigen::VectorXd& x_t, double t,
                                  const std::vector<ObservationModel>& observations,
                                  const ScoreField& field, const GuidanceConfig& cfg);

/// Guided field: epsilon of the conditional score, usable by the sampler.
class GuidedScoreField final : public ScoreField {
public:
    GuidedScoreField(const ScoreField& base, std::vector<ObservationModel> observations,
                     GuidanceConfig cfg)
        : ScoreField(base.schedule()), base_(&base),
          observations_(std::move(observations)), cfg_(cfg) {}

    int dim() const override { return base_->dim(); }
    EpsEval epsilon_eval(const Eigen::MatrixXd& x_t, double t) const override;
    /// Prior curvature plus mu^2/v per modality (all measurement operators
    /// have operator norm <= 1).
    double curvature_bound(double t) const override;

private:
    const ScoreField* base_;
    std::vector<ObservationModel> observations_;
    GuidanceConfig cfg_;
};

}  // namespace scoreda
