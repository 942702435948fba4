#include "scoreda/trajectory.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "scoreda/errors.hpp"

namespace scoreda {

Trajectory::Trajectory(Eigen::MatrixXd v, Role r, double step)
    : values(std::move(v)), dt(step), role(r) {
    if (values.rows() < 1) throw InputError("trajectory needs at least one step");
    if (!values.allFinite()) throw InputError("trajectory holds non-finite values");
    if (!(dt > 0.0)) throw InputError("trajectory time step must be positive");
}

std::string to_string(Trajectory::Role role) {
    switch (role) {
        case Trajectory::Role::truth: return "truth";
        case Trajectory::Role::background: return "background";
        case Trajectory::Role::analysis: return "analysis";
    }
    return "truth";
}

Trajectory::Role role_from_string(const std::string& s) {
    if (s == "truth") return Trajectory::Role::truth;
    if (s == "background") return Trajectory::Role::background;
    if (s == "analysis") return Trajectory::Role::analysis;
    throw InputError("unknown trajectory role '" + s + "'");
}

nlohmann::json Trajectory::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (int t = 0; t < steps(); ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (int i = 0; i < dim(); ++i) row.push_back(values(t, i));
        rows.push_back(std::move(row));
    }
    return {{"role", to_string(role)}, {"dt", dt}, {"values", std::move(rows)}};
}

Trajectory Trajectory::from_json(const nlohmann::json& j) {
    const auto& rows = j.at("values");
    if (rows.empty()) throw InputError("trajectory json holds no rows");
    const int T = static_cast<int>(rows.size());
    const int n = static_cast<int>(rows.at(0).size());
    Eigen::MatrixXd v(T, n);
    for (int t = 0; t < T; ++t) {
        if (static_cast<int>(rows.at(t).size()) != n)
            throw InputError("trajectory json rows have inconsistent lengths");
        for (int i = 0; i < n; ++i) v(t, i) = rows.at(t).at(i).get<double>();
    }
    return Trajectory(std::move(v), role_from_string(j.at("role").get<std::string>()),
                      j.value("dt", 1.0));
}

double rmse(const Trajectory& a, const Trajectory& b) {
    if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols())
        throw InputError("rmse: trajectory shapes differ");
    return std::sqrt((a.values - b.values).squaredNorm() /
                     static_cast<double>(a.values.size()));
}

}  // namespace scoreda
