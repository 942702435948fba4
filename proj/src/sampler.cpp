#include "scoreda/sampler.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "scoreda/errors.hpp"

namespace scoreda {

nlohmann::json SamplerConfig::to_json() const {
    return {{"n_steps", n_steps},
            {"corrections", corrections},
            {"tau", tau},
            {"t_floor", t_floor},
            {"seed", seed}};
}

SamplerConfig SamplerConfig::from_json(const nlohmann::json& j) {
    SamplerConfig c;
    c.n_steps = j.value("n_steps", 512);
    c.corrections = j.value("corrections", 1);
    c.tau = j.value("tau", 0.5);
    c.t_floor = j.value("t_floor", 1e-3);
    c.seed = j.value("seed", std::uint64_t{0});
    if (c.n_steps < 1) throw ConfigError("sampler: n_steps must be >= 1");
    if (c.corrections < 0) throw ConfigError("sampler: corrections must be >= 0");
    if (!(c.tau > 0.0)) throw ConfigError("sampler: tau must be positive");
    if (!(c.t_floor > 0.0 && c.t_floor < 1.0))
        throw ConfigError("sampler: t_floor must lie in (0, 1)");
    return c;
}

Eigen::MatrixXd ei_predictor_step(const Eigen::MatrixXd& x_t, double t, double dt,
                                  const Eigen::MatrixXd& score,
                                  const DiffusionSchedule& schedule) {
    if (dt < 0.0 || t - dt < 0.0)
        throw DomainError("ei_predictor_step: target time t - dt outside [0, t]");
    const double mu_t = schedule.mean_scale(t);
    const double sigma_t = schedule.std_dev(t);
    if (mu_t < 1e-8 || sigma_t < DiffusionSchedule::kSigmaFloor)
        throw NumericError("ei_predictor_step: schedule coefficients below floor at t=" +
                           std::to_string(t));
    const double mu_s = schedule.mean_scale(t - dt);
    const double sigma_s = schedule.std_dev(t - dt);
    const double mu_ratio = mu_s / mu_t;
    const double coeff = (mu_ratio - sigma_s / sigma_t) * sigma_t * sigma_t;
    return mu_ratio * x_t + coeff * score;
}

Eigen::VectorXd ei_predictor_step(const Eigen::VectorXd& x_t, double t, double dt,
                                  const Eigen::VectorXd& score,
                                  const DiffusionSchedule& schedule) {
    return ei_predictor_step(Eigen::MatrixXd(x_t), t, dt, Eigen::MatrixXd(score), schedule)
        .col(0);
}

Eigen::MatrixXd lmc_corrector_step(const Eigen::MatrixXd& x_t,
                                   const Eigen::MatrixXd& score, double tau,
                                   const Eigen::MatrixXd& eps) {
    if (!(tau > 0.0)) throw ConfigError("lmc_corrector_step: tau must be positive");
    Eigen::MatrixXd x = x_t + tau * score + std::sqrt(2.0 * tau) * eps;
    if (!x.allFinite()) throw NumericError("lmc_corrector_step: non-finite update");
    return x;
}

Eigen::VectorXd lmc_corrector_step(const Eigen::VectorXd& x_t,
                                   const Eigen::VectorXd& score, double tau,
                                   NoiseSource& noise) {
    return lmc_corrector_step(Eigen::MatrixXd(x_t), Eigen::MatrixXd(score), tau,
                              Eigen::MatrixXd(noise.gaussian_vector(x_t.size())))
        .col(0);
}

namespace {

constexpr double kDivergenceBound = 1e6;

bool member_bad(const Eigen::Ref<const Eigen::VectorXd>& x) {
    return !x.allFinite() || x.cwiseAbs().maxCoeff() > kDivergenceBound;
}

}  // namespace

SampleResult sample(const ScoreField& field, const SamplerConfig& cfg, int n_samples) {
    if (n_samples < 1) throw InputError("sample: n_samples must be >= 1");
    if (cfg.n_steps < 1) throw ConfigError("sample: n_steps must be >= 1");
    if (!(cfg.tau > 0.0)) throw ConfigError("sample: tau must be positive");
    const int dim = field.dim();
    const DiffusionSchedule& schedule = field.schedule();

    std::vector<NoiseSource> streams;
    streams.reserve(n_samples);
    for (int m = 0; m < n_samples; ++m)
        streams.emplace_back(cfg.seed, static_cast<std::uint64_t>(m));

    SampleResult result;
    std::vector<bool> failed(n_samples, false);
    result.samples.resize(dim, n_samples);
    const double sigma1 = schedule.std_dev(1.0);
    for (int m = 0; m < n_samples; ++m)
        result.samples.col(m) = sigma1 * streams[m].gaussian_vector(dim);

    auto check = [&](int step) {
        for (int m = 0; m < n_samples; ++m) {
            if (failed[m]) continue;
            if (member_bad(result.samples.col(m))) {
                failed[m] = true;
                result.failures.push_back({m, step});
                result.samples.col(m).setZero();
            }
        }
    };
    check(0);

    const double dt = (1.0 - cfg.t_floor) / cfg.n_steps;
    Eigen::MatrixXd eps(dim, n_samples);
    for (int i = 0; i < cfg.n_steps; ++i) {
        const double t = 1.0 - i * dt;
        const double t_next = (i + 1 == cfg.n_steps) ? cfg.t_floor : 1.0 - (i + 1) * dt;

        result.samples =
            ei_predictor_step(result.samples, t, t - t_next, field.score(result.samples, t),
                              schedule);
        check(i + 1);

        // Stable ULA amplitude: tau over the field's curvature bound. For an
        // unconditional field this is the annealed tau * sigma^2(t); guided
        // fields shrink it further by their likelihood curvature.
        const double tau_t = cfg.tau / field.curvature_bound(t_next);
        for (int c = 0; c < cfg.corrections; ++c) {
            for (int m = 0; m < n_samples; ++m)
                eps.col(m) = streams[m].gaussian_vector(dim);
            result.samples = result.samples + tau_t * field.score(result.samples, t_next) +
                             std::sqrt(2.0 * tau_t) * eps;
            check(i + 1);
        }
    }
    // failed columns kept evolving as placeholders; blank them again
    for (const auto& f : result.failures) result.samples.col(f.member).setZero();
    return result;
}

SampleResult sample(const ScoreField& field,
                    const std::vector<ObservationModel>& observations,
                    const GuidanceConfig& guidance, const SamplerConfig& cfg,
                    int n_samples) {
    if (observations.empty()) return sample(field, cfg, n_samples);
    const GuidedScoreField guided(field, observations, guidance);
    return sample(guided, cfg, n_samples);
}

}  // namespace scoreda
