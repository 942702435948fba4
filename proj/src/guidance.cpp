#include "scoreda/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "scoreda/errors.hpp"

namespace scoreda {

// ---------------------------------------------------------------------------
// MeasurementOp constructors

MeasurementOp MeasurementOp::identity(int dim) {
    if (dim < 1) throw ConfigError("identity op: dimension must be positive");
    MeasurementOp op;
    op.kind_ = Kind::identity;
    op.input_dim_ = op.output_dim_ = dim;
    return op;
}

MeasurementOp MeasurementOp::coarsen(int input_dim, int factor) {
    if (input_dim < 1 || factor < 1)
        throw ConfigError("coarsen op: dimension and factor must be positive");
    MeasurementOp op;
    op.kind_ = Kind::coarsen;
    op.input_dim_ = input_dim;
    // ragged last block when the factor does not divide the dimension
    op.output_dim_ = (input_dim + factor - 1) / factor;
    op.factor_ = factor;
    return op;
}

MeasurementOp MeasurementOp::mask_gap(int input_dim, int gap) {
    if (input_dim < 1 || gap < 1)
        throw ConfigError("mask op: dimension and gap must be positive");
    std::vector<int> idx;
    for (int i = 0; i < input_dim; i += gap) idx.push_back(i);
    MeasurementOp op = mask_indices(input_dim, std::move(idx));
    op.factor_ = gap;
    return op;
}

MeasurementOp MeasurementOp::mask_indices(int input_dim, std::vector<int> indices) {
    if (input_dim < 1) throw ConfigError("mask op: dimension must be positive");
    if (indices.empty()) throw ConfigError("mask op: empty index set");
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= input_dim)
            throw ConfigError("mask op: index " + std::to_string(indices[i]) +
                              " out of range [0, " + std::to_string(input_dim) + ")");
        if (i > 0 && indices[i] <= indices[i - 1])
            throw ConfigError("mask op: index set must be strictly increasing");
    }
    MeasurementOp op;
    op.kind_ = Kind::mask;
    op.input_dim_ = input_dim;
    op.output_dim_ = static_cast<int>(indices.size());
    op.indices_ = std::move(indices);
    return op;
}

MeasurementOp MeasurementOp::gaussian_smooth(int input_dim, double width) {
    if (input_dim < 1) throw ConfigError("gaussian_smooth op: dimension must be positive");
    if (!(width > 0.0)) throw ConfigError("gaussian_smooth op: width must be positive");
    MeasurementOp op;
    op.kind_ = Kind::gaussian_smooth;
    op.input_dim_ = op.output_dim_ = input_dim;
    op.width_ = width;
    int half = static_cast<int>(std::ceil(3.0 * width));
    half = std::min(half, input_dim / 2);
    half = std::max(half, 1);
    op.kernel_.resize(2 * half + 1);
    for (int k = -half; k <= half; ++k)
        op.kernel_[k + half] = std::exp(-0.5 * (k * k) / (width * width));
    op.kernel_ /= op.kernel_.sum();
    return op;
}

MeasurementOp MeasurementOp::compose(std::vector<MeasurementOp> ops) {
    if (ops.empty()) throw ConfigError("compose op: needs at least one part");
    for (std::size_t i = 1; i < ops.size(); ++i)
        if (ops[i].input_dim() != ops[i - 1].output_dim())
            throw ConfigError("compose op: part " + std::to_string(i) +
                              " expects dimension " + std::to_string(ops[i].input_dim()) +
                              " but receives " + std::to_string(ops[i - 1].output_dim()));
    MeasurementOp op;
    op.kind_ = Kind::compose;
    op.input_dim_ = ops.front().input_dim();
    op.output_dim_ = ops.back().output_dim();
    op.parts_ = std::move(ops);
    return op;
}

// ---------------------------------------------------------------------------
// apply / transpose

Eigen::MatrixXd MeasurementOp::apply(const Eigen::MatrixXd& v) const {
    if (v.rows() != input_dim_)
        throw InputError("measurement op: expected input dimension " +
                         std::to_string(input_dim_) + ", got " + std::to_string(v.rows()));
    switch (kind_) {
        case Kind::identity:
            return v;
        case Kind::coarsen: {
            Eigen::MatrixXd y = Eigen::MatrixXd::Zero(output_dim_, v.cols());
            for (int i = 0; i < output_dim_; ++i) {
                const int len = std::min(factor_, input_dim_ - i * factor_);
                y.row(i) = v.middleRows(i * factor_, len).colwise().mean();
            }
            return y;
        }
        case Kind::mask: {
            Eigen::MatrixXd y(output_dim_, v.cols());
            for (int i = 0; i < output_dim_; ++i) y.row(i) = v.row(indices_[i]);
            return y;
        }
        case Kind::gaussian_smooth: {
            Eigen::MatrixXd y = Eigen::MatrixXd::Zero(output_dim_, v.cols());
            const int half = static_cast<int>(kernel_.size()) / 2;
            for (int i = 0; i < output_dim_; ++i)
                for (int k = -half; k <= half; ++k) {
                    const int src = ((i + k) % input_dim_ + input_dim_) % input_dim_;
                    y.row(i) += kernel_[k + half] * v.row(src);
                }
            return y;
        }
        case Kind::compose: {
            Eigen::MatrixXd h = v;
            for (const auto& p : parts_) h = p.apply(h);
            return h;
        }
    }
    throw InputError("measurement op: unknown kind");
}

Eigen::MatrixXd MeasurementOp::apply_transpose(const Eigen::MatrixXd& w) const {
    if (w.rows() != output_dim_)
        throw InputError("measurement op transpose: expected dimension " +
                         std::to_string(output_dim_) + ", got " + std::to_string(w.rows()));
    switch (kind_) {
        case Kind::identity:
            return w;
        case Kind::coarsen: {
            Eigen::MatrixXd u = Eigen::MatrixXd::Zero(input_dim_, w.cols());
            for (int i = 0; i < output_dim_; ++i) {
                const int len = std::min(factor_, input_dim_ - i * factor_);
                for (int k = 0; k < len; ++k)
                    u.row(i * factor_ + k) = w.row(i) / len;
            }
            return u;
        }
        case Kind::mask: {
            Eigen::MatrixXd u = Eigen::MatrixXd::Zero(input_dim_, w.cols());
            for (int i = 0; i < output_dim_; ++i) u.row(indices_[i]) = w.row(i);
            return u;
        }
        case Kind::gaussian_smooth: {
            // symmetric circular kernel: the operator is self-adjoint
            return apply(w);
        }
        case Kind::compose: {
            Eigen::MatrixXd h = w;
            for (auto it = parts_.rbegin(); it != parts_.rend(); ++it)
                h = it->apply_transpose(h);
            return h;
        }
    }
    throw InputError("measurement op: unknown kind");
}

Eigen::VectorXd MeasurementOp::apply(const Eigen::VectorXd& v) const {
    return apply(Eigen::MatrixXd(v)).col(0);
}

Eigen::VectorXd MeasurementOp::apply_transpose(const Eigen::VectorXd& w) const {
    return apply_transpose(Eigen::MatrixXd(w)).col(0);
}

Eigen::VectorXd MeasurementOp::lift_to_grid(const Eigen::VectorXd& y) const {
    if (y.size() != output_dim_)
        throw InputError("lift_to_grid: expected dimension " + std::to_string(output_dim_) +
                         ", got " + std::to_string(y.size()));
    switch (kind_) {
        case Kind::identity:
        case Kind::gaussian_smooth:
            return y;
        case Kind::coarsen: {
            Eigen::VectorXd x(input_dim_);
            for (int i = 0; i < output_dim_; ++i) {
                const int len = std::min(factor_, input_dim_ - i * factor_);
                x.segment(i * factor_, len).setConstant(y[i]);
            }
            return x;
        }
        case Kind::mask: {
            Eigen::VectorXd x(input_dim_);
            for (int i = 0; i < input_dim_; ++i) {
                // nearest observed index (earlier one on ties)
                int best = 0;
                int best_d = std::abs(i - indices_[0]);
                for (int j = 1; j < output_dim_; ++j) {
                    const int d = std::abs(i - indices_[j]);
                    if (d < best_d) {
                        best = j;
                        best_d = d;
                    }
                }
                x[i] = y[best];
            }
            return x;
        }
        case Kind::compose: {
            Eigen::VectorXd h = y;
            for (auto it = parts_.rbegin(); it != parts_.rend(); ++it)
                h = it->lift_to_grid(h);
            return h;
        }
    }
    throw InputError("measurement op: unknown kind");
}

Eigen::MatrixXd MeasurementOp::to_matrix() const {
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(input_dim_, input_dim_);
    return apply(eye);
}

// ---------------------------------------------------------------------------
// serialization

nlohmann::json MeasurementOp::to_json() const {
    nlohmann::json j;
    switch (kind_) {
        case Kind::identity:
            j["kind"] = "identity";
            j["input_dim"] = input_dim_;
            break;
        case Kind::coarsen:
            j["kind"] = "coarsen";
            j["input_dim"] = input_dim_;
            j["factor"] = factor_;
            break;
        case Kind::mask:
            j["kind"] = "mask";
            j["input_dim"] = input_dim_;
            j["indices"] = indices_;
            break;
        case Kind::gaussian_smooth:
            j["kind"] = "gaussian_smooth";
            j["input_dim"] = input_dim_;
            j["width"] = width_;
            break;
        case Kind::compose: {
            j["kind"] = "compose";
            nlohmann::json ops = nlohmann::json::array();
            for (const auto& p : parts_) ops.push_back(p.to_json());
            j["ops"] = std::move(ops);
            break;
        }
    }
    return j;
}

MeasurementOp MeasurementOp::from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "identity") return identity(j.at("input_dim").get<int>());
    if (kind == "coarsen")
        return coarsen(j.at("input_dim").get<int>(), j.at("factor").get<int>());
    if (kind == "mask") {
        const int dim = j.at("input_dim").get<int>();
        if (j.contains("indices"))
            return mask_indices(dim, j.at("indices").get<std::vector<int>>());
        if (j.contains("index_file"))
            return mask_indices(dim, load_index_file(j.at("index_file").get<std::string>()));
        if (j.contains("gap")) return mask_gap(dim, j.at("gap").get<int>());
        throw ConfigError("mask op: needs 'gap', 'indices', or 'index_file'");
    }
    if (kind == "gaussian_smooth")
        return gaussian_smooth(j.at("input_dim").get<int>(), j.at("width").get<double>());
    if (kind == "compose") {
        std::vector<MeasurementOp> parts;
        for (const auto& sub : j.at("ops")) parts.push_back(from_json(sub));
        return compose(std::move(parts));
    }
    throw ConfigError("unknown measurement op kind '" + kind + "'");
}

std::vector<int> MeasurementOp::load_index_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open index file '" + path + "'");
    std::vector<int> indices;
    std::string line;
    while (std::getline(in, line)) {
        // strip comments and whitespace-only lines
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        int v;
        if (ls >> v) indices.push_back(v);
        std::string rest;
        if (ls >> rest)
            throw InputError("index file '" + path + "': one index per line expected");
    }
    if (indices.empty()) throw InputError("index file '" + path + "' holds no indices");
    return indices;
}

// ---------------------------------------------------------------------------
// ObservationModel / GuidanceConfig

ObservationModel::ObservationModel(Eigen::VectorXd y_in, MeasurementOp op_in, double sigma2,
                                   std::string tag_in)
    : y(std::move(y_in)), op(std::move(op_in)), noise_variance(sigma2),
      tag(std::move(tag_in)) {
    if (y.size() != op.output_dim())
        throw InputError("observation" + (tag.empty() ? "" : " '" + tag + "'") +
                         ": y has dimension " + std::to_string(y.size()) +
                         " but the operator outputs " + std::to_string(op.output_dim()));
    if (!(noise_variance > 0.0))
        throw InputError("observation" + (tag.empty() ? "" : " '" + tag + "'") +
                         ": noise variance must be positive");
}

nlohmann::json GuidanceConfig::to_json() const {
    return {{"gamma", gamma},
            {"mode", mode == Mode::differentiate_through_score ? "differentiate_through_score"
                                                               : "frozen_denoiser"},
            {"denoised_clip", denoised_clip}};
}

GuidanceConfig GuidanceConfig::from_json(const nlohmann::json& j) {
    GuidanceConfig c;
    c.gamma = j.value("gamma", 1e-2);
    if (c.gamma < 0.0) throw ConfigError("guidance: gamma must be nonnegative");
    c.denoised_clip = j.value("denoised_clip", 10.0);
    if (c.denoised_clip < 0.0)
        throw ConfigError("guidance: denoised_clip must be nonnegative (0 disables)");
    const std::string mode = j.value("mode", std::string("differentiate_through_score"));
    if (mode == "differentiate_through_score")
        c.mode = Mode::differentiate_through_score;
    else if (mode == "frozen_denoiser")
        c.mode = Mode::frozen_denoiser;
    else
        throw ConfigError("guidance: unknown mode '" + mode + "'");
    return c;
}

// ---------------------------------------------------------------------------
// Tweedie / likelihood / conditional score

namespace {

constexpr double kMuFloor = 1e-8;

Eigen::MatrixXd tweedie_from_eps(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& eps,
                                 double t, const DiffusionSchedule& schedule) {
    const double mu = schedule.mean_scale(t);
    if (mu < kMuFloor)
        throw NumericError("tweedie_denoise: mu(t) below floor at t=" + std::to_string(t));
    const double sigma = schedule.std_dev(t);
    // x_hat = (x_t + sigma^2 s)/mu with s = -eps/sigma
    return (x_t - sigma * eps) / mu;
}

/// Per-modality cotangent on x_hat: A^T (y - A x_hat) / v(t), accumulated
/// into `cot`. Returns nothing; errors carry the modality tag.
void accumulate_modality_cotangent(const Eigen::MatrixXd& x_hat,
                                   const ObservationModel& obs,
                                   const DiffusionSchedule& schedule, double t,
                                   const GuidanceConfig& cfg, Eigen::MatrixXd& cot) {
    const double mu = schedule.mean_scale(t);
    const double s2 = schedule.variance(t);
    const double v = obs.noise_variance + cfg.gamma * s2 / (mu * mu);
    if (!(v > 0.0))
        throw ConfigError("likelihood variance v(t) is not positive for observation '" +
                          obs.tag + "'");
    const Eigen::MatrixXd residual = (-obs.op.apply(x_hat)).colwise() + obs.y;
    cot += obs.op.apply_transpose(residual) / v;
}

}  // namespace

Eigen::MatrixXd tweedie_denoise(const Eigen::MatrixXd& x_t, double t,
                                const ScoreField& field) {
    return tweedie_from_eps(x_t, field.epsilon(x_t, t), t, field.schedule());
}

Eigen::VectorXd tweedie_denoise(const Eigen::VectorXd& x_t, double t,
                                const ScoreField& field) {
    return tweedie_denoise(Eigen::MatrixXd(x_t), t, field).col(0);
}

Eigen::MatrixXd conditional_score(const Eigen::MatrixXd& x_t, double t,
                                  const std::vector<ObservationModel>& observations,
                                  const ScoreField& field, const GuidanceConfig& cfg) {
    const DiffusionSchedule& schedule = field.schedule();
    const ScoreField::EpsEval eval = field.epsilon_eval(x_t, t);
    const double sigma = schedule.std_dev(t);
    const double mu = schedule.mean_scale(t);
    Eigen::MatrixXd score = -eval.eps / sigma;
    if (observations.empty()) return score;
    if (mu < kMuFloor)
        throw NumericError("conditional_score: mu(t) below floor at t=" + std::to_string(t));

    Eigen::MatrixXd x_hat = tweedie_from_eps(x_t, eval.eps, t, schedule);
    // Optional clamp on the denoised estimate: bounds the 1/mu amplification
    // of model error early in the reverse run. Clamped cells have zero
    // denoiser Jacobian, so their cotangent is masked out below.
    Eigen::ArrayXXd active;
    if (cfg.denoised_clip > 0.0) {
        active = (x_hat.array().abs() <= cfg.denoised_clip).cast<double>();
        x_hat = x_hat.array().min(cfg.denoised_clip).max(-cfg.denoised_clip).matrix();
    }
    Eigen::MatrixXd cot = Eigen::MatrixXd::Zero(x_t.rows(), x_t.cols());
    for (const auto& obs : observations) {
        if (obs.op.input_dim() != x_t.rows())
            throw InputError("observation '" + obs.tag + "': operator expects dimension " +
                             std::to_string(obs.op.input_dim()) + ", state has " +
                             std::to_string(x_t.rows()));
        try {
            accumulate_modality_cotangent(x_hat, obs, schedule, t, cfg, cot);
        } catch (const Error& e) {
            throw InputError("observation '" + obs.tag + "': " + e.what());
        }
    }

    // chain rule through x_hat = (x_t - sigma eps(x_t))/mu
    if (cfg.denoised_clip > 0.0) cot.array() *= active;
    if (cfg.mode == GuidanceConfig::Mode::differentiate_through_score) {
        if (!eval.vjp)
            throw NumericError("conditional_score: field provides no VJP for "
                               "differentiate_through_score mode");
        score += (cot - sigma * eval.vjp(cot)) / mu;
    } else {
        score += cot / mu;
    }
    if (!score.allFinite())
        throw NumericError("conditional_score: non-finite gradient at t=" +
                           std::to_string(t));
    return score;
}

Eigen::VectorXd conditional_score(const Eigen::VectorXd& x_t, double t,
                                  const std::vector<ObservationModel>& observations,
                                  const ScoreField& field, const GuidanceConfig& cfg) {
    return conditional_score(Eigen::MatrixXd(x_t), t, observations, field, cfg).col(0);
}

Eigen::MatrixXd likelihood_score(const Eigen::MatrixXd& x_t, double t,
                                 const ObservationModel& obs, const ScoreField& field,
                                 const GuidanceConfig& cfg) {
    const Eigen::MatrixXd cond = conditional_score(x_t, t, {obs}, field, cfg);
    const Eigen::MatrixXd uncond = conditional_score(x_t, t, {}, field, cfg);
    return cond - uncond;
}

Eigen::VectorXd likelihood_score(const Eigen::VectorXd& x_t, double t,
                                 const ObservationModel& obs, const ScoreField& field,
                                 const GuidanceConfig& cfg) {
    return likelihood_score(Eigen::MatrixXd(x_t), t, obs, field, cfg).col(0);
}

ScoreField::EpsEval GuidedScoreField::epsilon_eval(const Eigen::MatrixXd& x_t,
                                                   double t) const {
    EpsEval e;
    const Eigen::MatrixXd s = conditional_score(x_t, t, observations_, *base_, cfg_);
    e.eps = -schedule_.std_dev(t) * s;
    // no VJP: guided fields are consumed by the sampler, never differentiated
    return e;
}

double GuidedScoreField::curvature_bound(double t) const {
    const double mu = schedule_.mean_scale(t);
    const double s2 = schedule_.variance(t);
    double bound = base_->curvature_bound(t);
    // Likelihood curvature with the Tweedie Jacobian bounded by 1/mu:
    // |A d(x_hat)/dx|^2 / v <= (1/mu^2) / (sigma2_y + gamma s2/mu^2).
    for (const auto& obs : observations_)
        bound += 1.0 / (mu * mu * obs.noise_variance + cfg_.gamma * s2);
    return bound;
}

}  // namespace scoreda
