#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "scoreda/errors.hpp"
#include "scoreda/noise.hpp"
#include "scoreda/schedule.hpp"

using namespace scoreda;

TEST_CASE("noise source is deterministic per (seed, stream)") {
    NoiseSource a(42, 0);
    NoiseSource b(42, 0);
    NoiseSource c(42, 1);
    bool identical = true;
    bool distinct = false;
    for (int i = 0; i < 1000; ++i) {
        const double va = a.gaussian();
        identical = identical && (va == b.gaussian());
        distinct = distinct || (va != c.gaussian());
    }
    CHECK(identical);
    CHECK(distinct);
}

TEST_CASE("noise source moments") {
    NoiseSource rng(7, 0);
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0, sum3 = 0.0, sum4 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        sum += g;
        sum2 += g * g;
        sum3 += g * g * g;
        sum4 += g * g * g * g;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(var == doctest::Approx(1.0).epsilon(0.02));
    // skewness and excess kurtosis of standardized draws
    const double skew = (sum3 / n - 3 * mean * var - mean * mean * mean) / std::pow(var, 1.5);
    const double kurt = sum4 / n / (var * var) - 3.0;
    CHECK(std::abs(skew) <= 0.05);
    CHECK(std::abs(kurt) <= 0.1);

    NoiseSource u(7, 1);
    for (int i = 0; i < 1000; ++i) {
        const double x = u.uniform();
        REQUIRE(x >= 0.0);
        REQUIRE(x < 1.0);
    }
}

TEST_CASE("vp schedule boundary values") {
    const auto vp = DiffusionSchedule::vp();
    CHECK(vp.mean_scale(0.0) == 1.0);
    CHECK(vp.mean_scale(1.0) <= 1e-3);
    CHECK(vp.std_dev(0.0) <= 1e-3);
    CHECK(vp.std_dev(1.0) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK_THROWS_AS(vp.mean_scale(-0.1), DomainError);
    CHECK_THROWS_AS(vp.mean_scale(1.1), DomainError);
}

TEST_CASE("ve schedule boundary values and geometric interpolation") {
    const auto ve = DiffusionSchedule::ve();
    CHECK(ve.mean_scale(0.0) == 1.0);
    CHECK(ve.mean_scale(0.7) == 1.0);
    CHECK(ve.std_dev(0.0) <= 1e-3);
    const auto ve2 = DiffusionSchedule::ve(0.01, 10.0);
    CHECK(ve2.std_dev(0.5) == doctest::Approx(std::sqrt(0.01 * 10.0)));  // geometric midpoint
    CHECK(ve2.drift_coeff(0.3) == 0.0);
}

TEST_CASE("schedule monotonicity and moment-ODE consistency") {
    for (const auto& sched :
         {DiffusionSchedule::vp(), DiffusionSchedule::vp(0.1, 20.0), DiffusionSchedule::ve()}) {
        double prev_sigma = -1.0, prev_mu = 2.0;
        for (int i = 0; i <= 100; ++i) {
            const double t = i / 100.0;
            const double sigma = sched.std_dev(t);
            const double mu = sched.mean_scale(t);
            CHECK(sigma >= prev_sigma);
            CHECK(mu <= prev_mu + 1e-15);
            prev_sigma = sigma;
            prev_mu = mu;
            CHECK(sched.diffusion_coeff(t) * sched.diffusion_coeff(t) >= 0.0);
        }
        // d mu/dt = f mu and d sigma^2/dt = 2 f sigma^2 + g^2 via central differences
        for (int i = 1; i < 100; ++i) {
            const double t = i / 100.0;
            const double h = 1e-5;
            const double dmu = (sched.mean_scale(t + h) - sched.mean_scale(t - h)) / (2 * h);
            CHECK(dmu == doctest::Approx(sched.drift_coeff(t) * sched.mean_scale(t))
                             .epsilon(1e-6));
            if (sched.std_dev(t) > 10 * DiffusionSchedule::kSigmaFloor) {
                const double dvar = (sched.variance(t + h) - sched.variance(t - h)) / (2 * h);
                const double g = sched.diffusion_coeff(t);
                const double rhs =
                    2.0 * sched.drift_coeff(t) * sched.variance(t) + g * g;
                CHECK(dvar == doctest::Approx(rhs).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("vp mean scale matches quadrature of the moment ODE") {
    const auto vp = DiffusionSchedule::vp(0.1, 20.0);
    // integrate d mu/dt = f(t) mu with RK4 from 0 to 0.5
    double mu = 1.0, t = 0.0;
    const int n = 20000;
    const double h = 0.5 / n;
    auto f = [&](double tt, double m) { return vp.drift_coeff(tt) * m; };
    for (int i = 0; i < n; ++i) {
        const double k1 = f(t, mu);
        const double k2 = f(t + h / 2, mu + h / 2 * k1);
        const double k3 = f(t + h / 2, mu + h / 2 * k2);
        const double k4 = f(t + h, mu + h * k3);
        mu += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        t += h;
    }
    CHECK(vp.mean_scale(0.5) == doctest::Approx(mu).epsilon(1e-8));
}

TEST_CASE("forward perturb identity at t=0 and variance at general t") {
    const auto vp = DiffusionSchedule::vp();
    NoiseSource rng(3, 0);
    Eigen::VectorXd x(4);
    x << 1.0, -2.0, 0.5, 3.0;
    const Eigen::VectorXd y = vp.forward_perturb(x, 0.0, rng);
    CHECK((y - x).cwiseAbs().maxCoeff() <= 1e-3 * 6.0);

    // x = 0: sample variance over 1e5 scalar draws within 2% of sigma^2(t)
    const double t = 0.4;
    NoiseSource rng2(5, 0);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
    double s2 = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double v = vp.forward_perturb(zero, t, rng2)[0];
        s2 += v * v;
    }
    CHECK(s2 / n == doctest::Approx(vp.variance(t)).epsilon(0.02));

    // determinism
    NoiseSource r1(11, 2), r2(11, 2);
    CHECK(vp.forward_perturb(x, 0.3, r1) == vp.forward_perturb(x, 0.3, r2));

    Eigen::VectorXd bad(2);
    bad << 1.0, std::nan("");
    CHECK_THROWS_AS(vp.forward_perturb(bad, 0.3, rng), InputError);
}

TEST_CASE("schedule json round trip") {
    const auto vp = DiffusionSchedule::vp(0.2, 15.0);
    CHECK(DiffusionSchedule::from_json(vp.to_json()) == vp);
    const auto ve = DiffusionSchedule::ve(0.005, 8.0);
    CHECK(DiffusionSchedule::from_json(ve.to_json()) == ve);
    CHECK_THROWS_AS(DiffusionSchedule::from_json({{"kind", "vpp"}}), ConfigError);
    CHECK_THROWS_AS(DiffusionSchedule::vp(1.0, 0.5), ConfigError);
}
