#pragma once

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "scoreda/noise.hpp"

namespace scoreda {

enum class ScheduleKind { variance_preserving, variance_exploding };

/// Linear-SDE diffusion schedule with analytic Gaussian perturbation kernel
///   p(x(t) | x) = N(mu(t) x, sigma^2(t) I),  t in [0, 1].
///
/// VP: beta(t) = beta_min + t (beta_max - beta_min),
///     mu(t) = exp(-1/2 int beta), sigma^2(t) = 1 - mu^2(t),
///     f(t) = -beta(t)/2, g^2(t) = beta(t).
/// VE: sigma(t) = sigma_min (sigma_max/sigma_min)^t,
///     mu(t) = 1, f(t) = 0, g^2(t) = d sigma^2/dt.
///
/// sigma(t) is clamped to a floor of 1e-4 so ratio terms never divide by zero.
class DiffusionSchedule {
public:
    static constexpr double kSigmaFloor = 1e-4;

    static DiffusionSchedule vp(double beta_min = 0.1, double beta_max = 28.0);
    static DiffusionSchedule ve(double sigma_min = 1e-3, double sigma_max = 10.0);

    ScheduleKind kind() const { return kind_; }
    double param_a() const { return a_; }  // beta_min or sigma_min
    double param_b() const { return b_; }  // beta_max or sigma_max

    double mean_scale(double t) const;      // mu(t)
    double std_dev(double t) const;         // sigma(t), clamped
    double variance(double t) const;        // sigma^2(t) (clamped consistently)
    double drift_coeff(double t) const;     // f(t)
    double diffusion_coeff(double t) const; // g(t)

    /// x(t) = mu(t) x + sigma(t) eps, eps ~ N(0, I).
    Eigen::VectorXd forward_perturb(const Eigen::VectorXd& x, double t,
                                    NoiseSource& noise) const;

    nlohmann::json to_json() const;
    static DiffusionSchedule from_json(const nlohmann::json& j);
    bool operator==(const DiffusionSchedule& other) const;

private:
    DiffusionSchedule(ScheduleKind kind, double a, double b);
    static void check_time(double t);

    ScheduleKind kind_;
    double a_;
    double b_;
};

}  // namespace scoreda
