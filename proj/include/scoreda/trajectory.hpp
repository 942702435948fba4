#pragma once

#include <string>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

namespace scoreda {

/// A T x N_x state trajectory. Rows are time steps, columns spatial cells.
struct Trajectory {
    enum class Role { truth, background, analysis };

    Eigen::MatrixXd values;  // T x N_x
    double dt = 1.0;         // physical time step tag
    Role role = Role::truth;

    Trajectory() = default;
    Trajectory(Eigen::MatrixXd v, Role r, double step = 1.0);

    int steps() const { return static_cast<int>(values.rows()); }
    int dim() const { return static_cast<int>(values.cols()); }
    Eigen::VectorXd state(int t) const { return values.row(t).transpose(); }

    nlohmann::json to_json() const;
    static Trajectory from_json(const nlohmann::json& j);
};

std::string to_string(Trajectory::Role role);
Trajectory::Role role_from_string(const std::string& s);

/// Root mean squared cellwise difference between equal-shape trajectories.
double rmse(const Trajectory& a, const Trajectory& b);

}  // namespace scoreda
