#include "scoreda/score_model.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "scoreda/errors.hpp"

namespace scoreda {

namespace {

Eigen::MatrixXd time_features(const Eigen::VectorXd& t, int embed_dim) {
    const int n_freq = embed_dim / 2;
    Eigen::MatrixXd tf(embed_dim, t.size());
    for (int i = 0; i < n_freq; ++i) {
        const double omega =
            n_freq > 1 ? std::pow(1000.0, static_cast<double>(i) / (n_freq - 1)) : 1.0;
        for (Eigen::Index c = 0; c < t.size(); ++c) {
            tf(2 * i, c) = std::sin(omega * t[c]);
            tf(2 * i + 1, c) = std::cos(omega * t[c]);
        }
    }
    return tf;
}

}  // namespace

// ---------------------------------------------------------------------------
// ScoreArchitecture

ScoreArchitecture ScoreArchitecture::dense(int input_dim, int hidden_width,
                                           int hidden_layers) {
    if (input_dim < 1 || hidden_width < 1 || hidden_layers < 1)
        throw ConfigError("dense score architecture: dimensions must be positive");
    ScoreArchitecture a;
    a.kind = Kind::dense;
    a.input_dim = input_dim;
    a.hidden_width = hidden_width;
    a.hidden_layers = hidden_layers;
    return a;
}

ScoreArchitecture ScoreArchitecture::conv1d(int channels, int width,
                                            std::vector<int> hidden_channels, int kernel) {
    if (channels < 1 || width < 1 || hidden_channels.empty() || kernel < 1 || kernel % 2 == 0)
        throw ConfigError("conv1d score architecture: bad channels/width/kernel");
    ScoreArchitecture a;
    a.kind = Kind::conv1d;
    a.input_dim = channels * width;
    a.channels = channels;
    a.width = width;
    a.hidden_channels = std::move(hidden_channels);
    a.kernel = kernel;
    return a;
}

nlohmann::json ScoreArchitecture::to_json() const {
    nlohmann::json j;
    j["kind"] = kind == Kind::dense ? "dense" : "conv1d";
    j["input_dim"] = input_dim;
    j["hidden_width"] = hidden_width;
    j["hidden_layers"] = hidden_layers;
    j["channels"] = channels;
    j["width"] = width;
    j["hidden_channels"] = hidden_channels;
    j["kernel"] = kernel;
    j["time_embed_dim"] = time_embed_dim;
    j["time_hidden"] = time_hidden;
    return j;
}

ScoreArchitecture ScoreArchitecture::from_json(const nlohmann::json& j) {
    ScoreArchitecture a;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "dense") a.kind = Kind::dense;
    else if (kind == "conv1d") a.kind = Kind::conv1d;
    else throw ConfigError("unknown score architecture kind '" + kind + "'");
    a.input_dim = j.at("input_dim").get<int>();
    a.hidden_width = j.value("hidden_width", 256);
    a.hidden_layers = j.value("hidden_layers", 2);
    a.channels = j.value("channels", 1);
    a.width = j.value("width", 0);
    a.hidden_channels = j.value("hidden_channels", std::vector<int>{32, 64});
    a.kernel = j.value("kernel", 5);
    a.time_embed_dim = j.value("time_embed_dim", 64);
    a.time_hidden = j.value("time_hidden", 256);
    return a;
}

bool ScoreArchitecture::operator==(const ScoreArchitecture& o) const {
    return kind == o.kind && input_dim == o.input_dim && hidden_width == o.hidden_width &&
           hidden_layers == o.hidden_layers && channels == o.channels && width == o.width &&
           hidden_channels == o.hidden_channels && kernel == o.kernel &&
           time_embed_dim == o.time_embed_dim && time_hidden == o.time_hidden;
}

// ---------------------------------------------------------------------------
// ScoreModel layout

void ScoreModel::build_layout() {
    const int first_width = arch_.kind == ScoreArchitecture::Kind::dense
                                ? arch_.hidden_width
                                : arch_.hidden_channels.front();
    time_net_ = nn::Mlp({arch_.time_embed_dim, arch_.time_hidden, first_width},
                        nn::Activation::silu);
    int off = time_net_.n_params();
    dense_layers_.clear();
    conv_layers_.clear();
    if (arch_.kind == ScoreArchitecture::Kind::dense) {
        std::vector<int> widths;
        widths.push_back(arch_.input_dim);
        for (int i = 0; i < arch_.hidden_layers; ++i) widths.push_back(arch_.hidden_width);
        widths.push_back(arch_.input_dim);
        for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
            nn::Linear l{widths[i], widths[i + 1], off};
            off += l.n_params();
            dense_layers_.push_back(l);
        }
    } else {
        std::vector<int> chans;
        chans.push_back(arch_.channels);
        for (int c : arch_.hidden_channels) chans.push_back(c);
        chans.push_back(arch_.channels);
        for (std::size_t i = 0; i + 1 < chans.size(); ++i) {
            nn::CircularConv1d l{chans[i], chans[i + 1], arch_.width, arch_.kernel, off};
            off += l.n_params();
            conv_layers_.push_back(l);
        }
    }
    total_params_ = off;
}

ScoreModel ScoreModel::init(const ScoreArchitecture& arch, NoiseSource& rng) {
    ScoreModel m;
    m.arch_ = arch;
    m.build_layout();
    m.params_ = Eigen::VectorXd::Zero(m.total_params_);
    Eigen::VectorXd time_params = m.time_net_.init_params(rng);
    m.params_.head(time_params.size()) = time_params;
    if (arch.kind == ScoreArchitecture::Kind::dense) {
        for (std::size_t i = 0; i < m.dense_layers_.size(); ++i)
            m.dense_layers_[i].init(m.params_, rng, i + 1 == m.dense_layers_.size());
    } else {
        for (std::size_t i = 0; i < m.conv_layers_.size(); ++i)
            m.conv_layers_[i].init(m.params_, rng, i + 1 == m.conv_layers_.size());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Forward / backward

Eigen::MatrixXd ScoreModel::forward(const Eigen::MatrixXd& x_t, const Eigen::VectorXd& t,
                                    Cache* cache) const {
    if (x_t.rows() != arch_.input_dim)
        throw InputError("score model: input dimension mismatch (got " +
                         std::to_string(x_t.rows()) + ", expected " +
                         std::to_string(arch_.input_dim) + ")");
    if (t.size() != x_t.cols())
        throw InputError("score model: one time entry per sample required");

    const Eigen::MatrixXd tf = time_features(t, arch_.time_embed_dim);
    nn::Mlp::Cache tc;
    Eigen::MatrixXd temb = time_net_.forward(params_, tf, cache ? &tc : nullptr);

    if (cache) {
        cache->x = x_t;
        cache->time_features = tf;
        cache->time_cache = std::move(tc);
        cache->inputs.clear();
        cache->preacts.clear();
    }

    const bool dense = arch_.kind == ScoreArchitecture::Kind::dense;
    const std::size_t n_layers = dense ? dense_layers_.size() : conv_layers_.size();
    Eigen::MatrixXd h = x_t;
    for (std::size_t i = 0; i < n_layers; ++i) {
        if (cache) cache->inputs.push_back(h);
        Eigen::MatrixXd z = dense ? dense_layers_[i].forward(params_, h)
                                  : conv_layers_[i].forward(params_, h);
        if (i == 0) {
            if (dense) {
                z += temb;
            } else {
                // broadcast per-channel time embedding across the width
                for (int c = 0; c < arch_.hidden_channels.front(); ++c)
                    z.middleRows(c * arch_.width, arch_.width).rowwise() +=
                        temb.row(c);
            }
        }
        if (i + 1 < n_layers) {
            if (cache) cache->preacts.push_back(z);
            h = nn::activate(z, nn::Activation::silu);
        } else {
            h = std::move(z);
        }
    }
    return h;
}

Eigen::MatrixXd ScoreModel::backward(const Cache& cache, const Eigen::MatrixXd& d_eps,
                                     Eigen::VectorXd& param_grad) const {
    const bool dense = arch_.kind == ScoreArchitecture::Kind::dense;
    const std::size_t n_layers = dense ? dense_layers_.size() : conv_layers_.size();
    Eigen::MatrixXd d = d_eps;
    Eigen::MatrixXd d_temb;
    for (int i = static_cast<int>(n_layers) - 1; i >= 0; --i) {
        if (i == 0) {
            // gradient w.r.t. the additive time embedding
            if (dense) {
                d_temb = d;
            } else {
                d_temb.resize(arch_.hidden_channels.front(), d.cols());
                for (int c = 0; c < arch_.hidden_channels.front(); ++c)
                    d_temb.row(c) = d.middleRows(c * arch_.width, arch_.width).colwise().sum();
            }
        }
        d = dense ? dense_layers_[i].backward(params_, cache.inputs[i], d, param_grad)
                  : conv_layers_[i].backward(params_, cache.inputs[i], d, param_grad);
        if (i > 0)
            d = d.cwiseProduct(nn::activate_grad(cache.preacts[i - 1], nn::Activation::silu));
    }
    time_net_.backward(params_, cache.time_cache, d_temb, param_grad);
    return d;
}

Eigen::MatrixXd ScoreModel::input_vjp_cached(const Cache& cache,
                                             const Eigen::MatrixXd& cot) const {
    const bool dense = arch_.kind == ScoreArchitecture::Kind::dense;
    const std::size_t n_layers = dense ? dense_layers_.size() : conv_layers_.size();
    Eigen::MatrixXd d = cot;
    for (int i = static_cast<int>(n_layers) - 1; i >= 0; --i) {
        d = dense ? dense_layers_[i].input_grad(params_, d)
                  : conv_layers_[i].input_grad(params_, d);
        if (i > 0)
            d = d.cwiseProduct(nn::activate_grad(cache.preacts[i - 1], nn::Activation::silu));
    }
    return d;
}

Eigen::MatrixXd ScoreModel::input_vjp_batch(const Eigen::MatrixXd& x_t,
                                            const Eigen::VectorXd& t,
                                            const Eigen::MatrixXd& cot) const {
    Cache cache;
    forward(x_t, t, &cache);
    return input_vjp_cached(cache, cot);
}

Eigen::MatrixXd ScoreModel::predict_noise_batch(const Eigen::MatrixXd& x_t,
                                                const Eigen::VectorXd& t) const {
    Eigen::MatrixXd out = forward(x_t, t, nullptr);
    if (!out.allFinite()) throw NumericError("score model produced non-finite output");
    return out;
}

Eigen::VectorXd ScoreModel::predict_noise(const Eigen::VectorXd& x_t, double t) const {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("predict_noise: t outside [0,1]");
    Eigen::VectorXd tv(1);
    tv[0] = t;
    return predict_noise_batch(x_t, tv).col(0);
}

nlohmann::json ScoreModel::to_json() const {
    nlohmann::json j;
    j["architecture"] = arch_.to_json();
    j["params"] = std::vector<double>(params_.data(), params_.data() + params_.size());
    return j;
}

ScoreModel ScoreModel::from_json(const nlohmann::json& j) {
    ScoreModel m;
    m.arch_ = ScoreArchitecture::from_json(j.at("architecture"));
    m.build_layout();
    const auto p = j.at("params").get<std::vector<double>>();
    if (static_cast<int>(p.size()) != m.total_params_)
        throw InputError("score model: parameter count does not match architecture");
    m.params_ = Eigen::Map<const Eigen::VectorXd>(p.data(), p.size());
    return m;
}

// ---------------------------------------------------------------------------
// score conversion

Eigen::MatrixXd score_from_noise(const Eigen::MatrixXd& eps_hat, double t,
                                 const DiffusionSchedule& schedule) {
    const double sigma = schedule.std_dev(t);
    if (sigma < DiffusionSchedule::kSigmaFloor)
        throw NumericError("score_from_noise: sigma(t) below floor");
    return -eps_hat / sigma;
}

Eigen::VectorXd score_from_noise(const Eigen::VectorXd& eps_hat, double t,
                                 const DiffusionSchedule& schedule) {
    const Eigen::MatrixXd m =
        score_from_noise(Eigen::MatrixXd(eps_hat), t, schedule);
    return m.col(0);
}

// ---------------------------------------------------------------------------
// DSM

DsmDraws dsm_draws(const DiffusionSchedule& schedule, const Eigen::MatrixXd& batch,
                   NoiseSource& noise, double t_floor) {
    if (batch.cols() == 0) throw InputError("dsm: empty batch");
    DsmDraws d;
    d.t.resize(batch.cols());
    for (Eigen::Index i = 0; i < batch.cols(); ++i)
        d.t[i] = t_floor + (1.0 - t_floor) * noise.uniform();
    d.eps = noise.gaussian_matrix(batch.rows(), batch.cols());
    d.x_t.resize(batch.rows(), batch.cols());
    for (Eigen::Index i = 0; i < batch.cols(); ++i)
        d.x_t.col(i) = schedule.mean_scale(d.t[i]) * batch.col(i) +
                       schedule.std_dev(d.t[i]) * d.eps.col(i);
    return d;
}

double dsm_loss_on_draws(const ScoreModel& model, const DsmDraws& draws) {
    const Eigen::MatrixXd r = model.predict_noise_batch(draws.x_t, draws.t) - draws.eps;
    return r.squaredNorm() / static_cast<double>(r.cols());
}

double dsm_loss(const ScoreModel& model, const Eigen::MatrixXd& batch,
                const DiffusionSchedule& schedule, NoiseSource& noise, double t_floor) {
    return dsm_loss_on_draws(model, dsm_draws(schedule, batch, noise, t_floor));
}

double dsm_loss_grad(const ScoreModel& model, const DsmDraws& draws,
                     Eigen::VectorXd& grad) {
    ScoreModel::Cache cache;
    const Eigen::MatrixXd eps_hat = model.forward(draws.x_t, draws.t, &cache);
    const Eigen::MatrixXd r = eps_hat - draws.eps;
    const double inv_b = 1.0 / static_cast<double>(r.cols());
    model.backward(cache, 2.0 * inv_b * r, grad);
    return r.squaredNorm() * inv_b;
}

// ---------------------------------------------------------------------------
// Training

nlohmann::json TrainConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"t_floor", t_floor},
            {"seed", seed},
            {"validation_size", validation_size}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", 64);
    c.batch_size = j.value("batch_size", 64);
    c.learning_rate = j.value("learning_rate", 2e-4);
    c.weight_decay = j.value("weight_decay", 1e-3);
    c.t_floor = j.value("t_floor", 1e-3);
    c.seed = j.value("seed", std::uint64_t{0});
    c.validation_size = j.value("validation_size", 256);
    if (c.epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (!(c.learning_rate > 0.0)) throw ConfigError("train config: learning rate must be > 0");
    return c;
}

TrainResult train(ScoreModel& model, const Eigen::MatrixXd& dataset,
                  const TrainConfig& config, const DiffusionSchedule& schedule) {
    const int n = static_cast<int>(dataset.cols());
    if (n == 0) throw InputError("train: empty dataset");
    if (dataset.rows() != model.dim())
        throw InputError("train: dataset dimension does not match model");
    if (config.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(config.learning_rate > 0.0)) throw ConfigError("train: learning rate must be > 0");

    // fixed validation batch with fixed draws so epochs are comparable
    const int n_val = std::min(config.validation_size, n);
    NoiseSource val_noise(config.seed, 2);
    const DsmDraws val_draws =
        dsm_draws(schedule, dataset.rightCols(n_val), val_noise, config.t_floor);
    const int n_train = n > n_val ? n - n_val : n;

    NoiseSource train_noise(config.seed, 1);
    const int batches = (n_train + config.batch_size - 1) / config.batch_size;
    nn::AdamW opt(model.n_params(), config.learning_rate, config.weight_decay,
                  config.epochs * batches);

    std::vector<int> order(n_train);
    for (int i = 0; i < n_train; ++i) order[i] = i;

    TrainResult result;
    Eigen::VectorXd grad(model.n_params());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // Fisher-Yates off the deterministic stream
        for (int i = n_train - 1; i > 0; --i) {
            const int j = static_cast<int>(train_noise.uniform() * (i + 1));
            std::swap(order[i], order[std::min(j, i)]);
        }
        for (int b = 0; b < batches; ++b) {
            const int lo = b * config.batch_size;
            const int hi = std::min(lo + config.batch_size, n_train);
            Eigen::MatrixXd batch(dataset.rows(), hi - lo);
            for (int i = lo; i < hi; ++i) batch.col(i - lo) = dataset.col(order[i]);
            const DsmDraws draws = dsm_draws(schedule, batch, train_noise, config.t_floor);
            grad.setZero();
            const double loss = dsm_loss_grad(model, draws, grad);
            if (!std::isfinite(loss) || loss > 1e6)
                throw TrainingError("training diverged at epoch " + std::to_string(epoch),
                                    epoch);
            opt.step(model.params(), grad);
        }
        result.loss_history.push_back(dsm_loss_on_draws(model, val_draws));
    }

    // window-5 smoothed monotonicity diagnostic
    const auto& h = result.loss_history;
    auto smooth = [&](int i) {
        const int lo = std::max(0, i - 4);
        double s = 0.0;
        for (int k = lo; k <= i; ++k) s += h[k];
        return s / (i - lo + 1);
    };
    // tolerate converged-plateau jitter; the flag is for upward drift
    for (std::size_t i = 1; i < h.size(); ++i)
        if (smooth(static_cast<int>(i)) >
            smooth(static_cast<int>(i) - 1) * 1.01) {
            result.smooth_monotone = false;
            break;
        }
    return result;
}

// ---------------------------------------------------------------------------
// Oracles and fields

GaussianOracle::GaussianOracle(Eigen::VectorXd m, Eigen::MatrixXd C)
    : mean(std::move(m)), cov(std::move(C)) {
    if (cov.rows() != cov.cols() || cov.rows() != mean.size())
        throw InputError("GaussianOracle: covariance shape mismatch");
    if (!cov.isApprox(cov.transpose(), 1e-10))
        throw InputError("GaussianOracle: covariance must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
        throw InputError("GaussianOracle: covariance must be positive definite");
}

Eigen::VectorXd analytic_score(const GaussianOracle& oracle,
                               const DiffusionSchedule& schedule,
                               const Eigen::VectorXd& x_t, double t) {
    const double mu = schedule.mean_scale(t);
    const double s2 = schedule.variance(t);
    const Eigen::MatrixXd Ct =
        mu * mu * oracle.cov +
        s2 * Eigen::MatrixXd::Identity(oracle.cov.rows(), oracle.cov.cols());
    Eigen::LLT<Eigen::MatrixXd> llt(Ct);
    if (llt.info() != Eigen::Success)
        throw InputError("analytic_score: perturbed covariance not SPD");
    return -llt.solve(x_t - mu * oracle.mean);
}

Eigen::MatrixXd ScoreField::epsilon(const Eigen::MatrixXd& x_t, double t) const {
    return epsilon_eval(x_t, t).eps;
}

Eigen::MatrixXd ScoreField::score(const Eigen::MatrixXd& x_t, double t) const {
    return score_from_noise(epsilon(x_t, t), t, schedule_);
}

double ScoreField::curvature_bound(double t) const { return 1.0 / schedule_.variance(t); }

ScoreField::EpsEval ModelScoreField::epsilon_eval(const Eigen::MatrixXd& x_t,
                                                  double t) const {
    auto cache = std::make_shared<ScoreModel::Cache>();
    const Eigen::VectorXd tv = Eigen::VectorXd::Constant(x_t.cols(), t);
    EpsEval e;
    e.eps = model_->forward(x_t, tv, cache.get());
    const ScoreModel* model = model_;
    e.vjp = [model, cache](const Eigen::MatrixXd& cot) {
        return model->input_vjp_cached(*cache, cot);
    };
    return e;
}

ScoreField::EpsEval GaussianOracleField::epsilon_eval(const Eigen::MatrixXd& x_t,
                                                      double t) const {
    const double mu = schedule_.mean_scale(t);
    const double sigma = schedule_.std_dev(t);
    const Eigen::MatrixXd Ct =
        mu * mu * oracle_.cov +
        sigma * sigma * Eigen::MatrixXd::Identity(oracle_.cov.rows(), oracle_.cov.cols());
    auto llt = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(Ct);
    EpsEval e;
    // eps = -sigma * score = sigma * Ct^{-1} (x - mu m)
    e.eps = sigma * llt->solve(x_t.colwise() - mu * oracle_.mean);
    e.vjp = [llt, sigma](const Eigen::MatrixXd& cot) {
        return Eigen::MatrixXd(sigma * llt->solve(cot));
    };
    return e;
}

}  // namespace scoreda
