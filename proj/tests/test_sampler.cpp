#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "scoreda/errors.hpp"
#include "scoreda/sampler.hpp"

using namespace scoreda;

namespace {

const DiffusionSchedule kVp = DiffusionSchedule::vp();

GaussianOracleField std_normal_field() {
    return {GaussianOracle(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1)), kVp};
}

}  // namespace

TEST_CASE("ei predictor step degenerate cases") {
    NoiseSource rng(1, 0);
    const Eigen::VectorXd x = rng.gaussian_vector(3);
    const Eigen::VectorXd s = rng.gaussian_vector(3);

    // dt = 0: both coefficients collapse, x unchanged
    CHECK((ei_predictor_step(x, 0.5, 0.0, s, kVp) - x).cwiseAbs().maxCoeff() < 1e-14);

    // zero score: pure rescaling by the mu ratio
    const double t = 0.6, dt = 0.1;
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
    const double ratio = kVp.mean_scale(t - dt) / kVp.mean_scale(t);
    CHECK((ei_predictor_step(x, t, dt, zero, kVp) - ratio * x).cwiseAbs().maxCoeff() <
          1e-14);

    CHECK_THROWS_AS(ei_predictor_step(x, 0.1, 0.2, s, kVp), DomainError);
}

TEST_CASE("lmc corrector step degenerate cases") {
    NoiseSource rng(2, 0);
    const Eigen::VectorXd x = rng.gaussian_vector(3);
    const Eigen::VectorXd eps = rng.gaussian_vector(3);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);

    // zero score with captured eps: x + sqrt(2 tau) eps
    const Eigen::MatrixXd out =
        lmc_corrector_step(Eigen::MatrixXd(x), Eigen::MatrixXd(zero), 0.5,
                           Eigen::MatrixXd(eps));
    CHECK((out.col(0) - x - std::sqrt(1.0) * eps).cwiseAbs().maxCoeff() < 1e-14);

    // tau -> 0 with eps = 0 approaches the identity
    const Eigen::MatrixXd tiny =
        lmc_corrector_step(Eigen::MatrixXd(x), Eigen::MatrixXd(x), 1e-12,
                           Eigen::MatrixXd(zero));
    CHECK((tiny.col(0) - x).cwiseAbs().maxCoeff() < 1e-10);

    CHECK_THROWS_AS(lmc_corrector_step(Eigen::MatrixXd(x), Eigen::MatrixXd(zero), 0.0,
                                       Eigen::MatrixXd(eps)),
                    ConfigError);
}

TEST_CASE("repeated lmc correction converges to the perturbed gaussian") {
    // Langevin stationarity: iterate at fixed t with the analytic score and a
    // small step; the empirical spread approaches the target's.
    const double t = 0.5;
    const GaussianOracleField field = std_normal_field();
    const double target_var = kVp.mean_scale(t) * kVp.mean_scale(t) + kVp.variance(t);

    NoiseSource rng(3, 0);
    const int n = 4000;
    Eigen::MatrixXd x = 3.0 * rng.gaussian_matrix(1, n);  // deliberately too wide
    const double tau = 0.05;
    double err_early = 0.0, err_late = 0.0;
    for (int it = 0; it < 200; ++it) {
        x = x + tau * field.score(x, t) + std::sqrt(2 * tau) * rng.gaussian_matrix(1, n);
        const double var = x.row(0).squaredNorm() / n -
                           std::pow(x.row(0).mean(), 2);
        const double err = std::abs(var - target_var);
        if (it == 10) err_early = err;
        if (it == 199) err_late = err;
    }
    CHECK(err_late < err_early);
    CHECK(err_late < 0.1 * target_var);
}

TEST_CASE("unconditional sampling hits the standard normal moments") {
    const GaussianOracleField field = std_normal_field();
    SamplerConfig cfg;
    cfg.n_steps = 512;
    cfg.seed = 4;
    const SampleResult res = sample(field, cfg, 10000);
    REQUIRE(res.ok());
    const double mean = res.samples.row(0).mean();
    const double var = res.samples.row(0).squaredNorm() / res.samples.cols() - mean * mean;
    CHECK(std::abs(mean) <= 0.02);
    CHECK(var >= 0.95);
    CHECK(var <= 1.05);
}

TEST_CASE("predictor-only sampling is also close on mean and variance") {
    const GaussianOracleField field = std_normal_field();
    SamplerConfig cfg;
    cfg.n_steps = 512;
    cfg.corrections = 0;
    cfg.seed = 5;
    const SampleResult res = sample(field, cfg, 10000);
    REQUIRE(res.ok());
    const double mean = res.samples.row(0).mean();
    const double var = res.samples.row(0).squaredNorm() / res.samples.cols() - mean * mean;
    CHECK(std::abs(mean) <= 0.02);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("conditional sampling matches the conjugate posterior mean") {
    // prior N(0.4, 0.9), observe y = 1.2 with variance 0.3
    const double m0 = 0.4, c0 = 0.9, y = 1.2, s2y = 0.3;
    const GaussianOracleField field(
        GaussianOracle(Eigen::VectorXd::Constant(1, m0),
                       Eigen::MatrixXd::Constant(1, 1, c0)),
        kVp);
    const double cp = 1.0 / (1.0 / c0 + 1.0 / s2y);
    const double mp = cp * (m0 / c0 + y / s2y);

    const std::vector<ObservationModel> obs{
        {Eigen::VectorXd::Constant(1, y), MeasurementOp::identity(1), s2y, "probe"}};
    SamplerConfig cfg;
    cfg.n_steps = 256;
    cfg.seed = 6;
    const int n = 2000;
    const SampleResult res = sample(field, obs, GuidanceConfig{}, cfg, n);
    REQUIRE(res.ok());
    const double mean = res.samples.row(0).mean();
    const double se = std::sqrt(cp / n);
    CHECK(std::abs(mean - mp) <= 3.0 * se + 0.02);
}

TEST_CASE("sampling reproducibility and batching invariance") {
    const GaussianOracleField field = std_normal_field();
    SamplerConfig cfg;
    cfg.n_steps = 32;
    cfg.seed = 7;
    const SampleResult a = sample(field, cfg, 1);
    const SampleResult b = sample(field, cfg, 1);
    CHECK(a.samples == b.samples);

    // member 0 of a larger ensemble equals the single-member run
    const SampleResult c = sample(field, cfg, 5);
    CHECK(c.samples.col(0) == a.samples.col(0));
}

TEST_CASE("halving the step size moves the mean by less than the mc error") {
    const GaussianOracleField field = std_normal_field();
    SamplerConfig coarse;
    coarse.n_steps = 256;
    coarse.seed = 8;
    SamplerConfig fine = coarse;
    fine.n_steps = 512;
    const int n = 4000;
    const double m_coarse = sample(field, coarse, n).samples.row(0).mean();
    const double m_fine = sample(field, fine, n).samples.row(0).mean();
    CHECK(std::abs(m_coarse - m_fine) < 2.0 / std::sqrt(double(n)));
}

TEST_CASE("diverging member is reported with its step index") {
    // A field pushing mass outward exponentially forces an overflow.
    struct Exploder final : ScoreField {
        explicit Exploder(DiffusionSchedule s) : ScoreField(s) {}
        int dim() const override { return 1; }
        EpsEval epsilon_eval(const Eigen::MatrixXd& x, double t) const override {
            EpsEval e;
            e.eps = -schedule_.std_dev(t) * 1e4 * x;  // score = +1e4 x
            return e;
        }
    };
    const Exploder field(kVp);
    SamplerConfig cfg;
    cfg.n_steps = 64;
    cfg.seed = 9;
    const SampleResult res = sample(field, cfg, 3);
    CHECK(!res.ok());
    REQUIRE(!res.failures.empty());
    CHECK(res.failures.front().step > 0);
    for (const auto& f : res.failures)
        CHECK(res.samples.col(f.member).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sampler config json") {
    SamplerConfig c;
    c.n_steps = 100;
    c.tau = 0.25;
    const SamplerConfig back = SamplerConfig::from_json(c.to_json());
    CHECK(back.n_steps == 100);
    CHECK(back.tau == 0.25);
    CHECK_THROWS_AS(SamplerConfig::from_json({{"n_steps", 0}}), ConfigError);
    CHECK_THROWS_AS(SamplerConfig::from_json({{"tau", -1.0}}), ConfigError);
}
