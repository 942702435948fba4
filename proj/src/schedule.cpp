#include "scoreda/schedule.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "scoreda/errors.hpp"

namespace scoreda {

DiffusionSchedule::DiffusionSchedule(ScheduleKind kind, double a, double b)
    : kind_(kind), a_(a), b_(b) {}

DiffusionSchedule DiffusionSchedule::vp(double beta_min, double beta_max) {
    if (!(beta_min > 0.0) || !(beta_max > beta_min))
        throw ConfigError("vp schedule requires 0 < beta_min < beta_max");
    return DiffusionSchedule(ScheduleKind::variance_preserving, beta_min, beta_max);
}

DiffusionSchedule DiffusionSchedule::ve(double sigma_min, double sigma_max) {
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
        throw ConfigError("ve schedule requires 0 < sigma_min < sigma_max");
    return DiffusionSchedule(ScheduleKind::variance_exploding, sigma_min, sigma_max);
}

void DiffusionSchedule::check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0))
        throw DomainError("diffusion time must lie in [0, 1], got " + std::to_string(t));
}

double DiffusionSchedule::mean_scale(double t) const {
    check_time(t);
    if (kind_ == ScheduleKind::variance_exploding) return 1.0;
    const double integral = a_ * t + 0.5 * (b_ - a_) * t * t;
    return std::exp(-0.5 * integral);
}

double DiffusionSchedule::std_dev(double t) const {
    check_time(t);
    double s;
    if (kind_ == ScheduleKind::variance_preserving) {
        const double integral = a_ * t + 0.5 * (b_ - a_) * t * t;
        s = std::sqrt(std::max(0.0, 1.0 - std::exp(-integral)));
    } else {
        s = a_ * std::pow(b_ / a_, t);
    }
    return std::max(s, kSigmaFloor);
}

double DiffusionSchedule::variance(double t) const {
    const double s = std_dev(t);
    return s * s;
}

double DiffusionSchedule::drift_coeff(double t) const {
    check_time(t);
    if (kind_ == ScheduleKind::variance_exploding) return 0.0;
    const double beta = a_ + t * (b_ - a_);
    return -0.5 * beta;
}

double DiffusionSchedule::diffusion_coeff(double t) const {
    check_time(t);
    if (kind_ == ScheduleKind::variance_preserving) {
        const double beta = a_ + t * (b_ - a_);
        return std::sqrt(beta);
    }
    // d sigma^2/dt = sigma_min^2 r^{2t} 2 ln r with r = sigma_max/sigma_min
    const double r = b_ / a_;
    const double s = a_ * std::pow(r, t);
    return s * std::sqrt(2.0 * std::log(r));
}

Eigen::VectorXd DiffusionSchedule::forward_perturb(const Eigen::VectorXd& x, double t,
                                                   NoiseSource& noise) const {
    if (!x.allFinite()) throw InputError("forward_perturb: input has non-finite entries");
    check_time(t);
    return mean_scale(t) * x + std_dev(t) * noise.gaussian_vector(x.size());
}

nlohmann::json DiffusionSchedule::to_json() const {
    if (kind_ == ScheduleKind::variance_preserving)
        return {{"kind", "vp"}, {"beta_min", a_}, {"beta_max", b_}};
    return {{"kind", "ve"}, {"sigma_min", a_}, {"sigma_max", b_}};
}

DiffusionSchedule DiffusionSchedule::from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "vp")
        return vp(j.value("beta_min", 0.1), j.value("beta_max", 28.0));
    if (kind == "ve")
        return ve(j.value("sigma_min", 1e-3), j.value("sigma_max", 10.0));
    throw ConfigError("unknown schedule kind '" + kind + "' (expected vp or ve)");
}

bool DiffusionSchedule::operator==(const DiffusionSchedule& o) const {
    return kind_ == o.kind_ && a_ == o.a_ && b_ == o.b_;
}

}  // namespace scoreda
