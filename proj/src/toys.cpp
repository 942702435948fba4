#include "scoreda/toys.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "scoreda/errors.hpp"

namespace scoreda {

namespace {

Eigen::MatrixXd spd_chol(const Eigen::MatrixXd& C, const char* what) {
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    if (llt.info() != Eigen::Success)
        throw InputError(std::string(what) + " must be symmetric positive definite");
    return llt.matrixL();
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const int r = static_cast<int>(j.size());
    if (r == 0) throw InputError("matrix json is empty");
    const int c = static_cast<int>(j.at(0).size());
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int k = 0; k < c; ++k) m(i, k) = j.at(i).at(k).get<double>();
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// LGSSM

LinearGaussianSSM::LinearGaussianSSM(Eigen::MatrixXd A, Eigen::MatrixXd Q,
                                     Eigen::VectorXd m0, Eigen::MatrixXd P0)
    : transition(std::move(A)), process_noise(std::move(Q)), initial_mean(std::move(m0)),
      initial_cov(std::move(P0)) {
    const int n = dim();
    if (transition.rows() != n || transition.cols() != n || process_noise.rows() != n ||
        process_noise.cols() != n || initial_cov.rows() != n || initial_cov.cols() != n)
        throw InputError("lgssm: inconsistent matrix dimensions");
    spd_chol(process_noise, "lgssm process noise");
    spd_chol(initial_cov, "lgssm initial covariance");
}

nlohmann::json LinearGaussianSSM::to_json() const {
    return {{"transition", matrix_to_json(transition)},
            {"process_noise", matrix_to_json(process_noise)},
            {"initial_mean",
             std::vector<double>(initial_mean.data(), initial_mean.data() + dim())},
            {"initial_cov", matrix_to_json(initial_cov)}};
}

LinearGaussianSSM LinearGaussianSSM::from_json(const nlohmann::json& j) {
    const auto m0v = j.at("initial_mean").get<std::vector<double>>();
    return {matrix_from_json(j.at("transition")), matrix_from_json(j.at("process_noise")),
            Eigen::Map<const Eigen::VectorXd>(m0v.data(), m0v.size()),
            matrix_from_json(j.at("initial_cov"))};
}

Trajectory simulate_lgssm(const LinearGaussianSSM& model, int T, std::uint64_t seed) {
    if (T < 1) throw InputError("simulate_lgssm: T must be >= 1");
    NoiseSource rng(seed, 0);
    const Eigen::MatrixXd L0 = spd_chol(model.initial_cov, "lgssm initial covariance");
    const Eigen::MatrixXd Lq = spd_chol(model.process_noise, "lgssm process noise");
    Eigen::MatrixXd values(T, model.dim());
    Eigen::VectorXd x = model.initial_mean + L0 * rng.gaussian_vector(model.dim());
    values.row(0) = x.transpose();
    for (int t = 1; t < T; ++t) {
        x = model.transition * x + Lq * rng.gaussian_vector(model.dim());
        values.row(t) = x.transpose();
    }
    return Trajectory(std::move(values), Trajectory::Role::truth);
}

namespace {

struct Stacked {
    Eigen::MatrixXd H;
    Eigen::MatrixXd R;
    Eigen::VectorXd y;
    std::vector<double> variances;  // per stacked row
};

Stacked stack_observations(const std::vector<ObservationModel>& obs, int dim) {
    int rows = 0;
    for (const auto& o : obs) {
        if (o.op.input_dim() != dim)
            throw InputError("observation '" + o.tag + "' expects dimension " +
                             std::to_string(o.op.input_dim()) + ", state has " +
                             std::to_string(dim));
        rows += o.op.output_dim();
    }
    Stacked s;
    s.H = Eigen::MatrixXd::Zero(rows, dim);
    s.R = Eigen::MatrixXd::Zero(rows, rows);
    s.y = Eigen::VectorXd::Zero(rows);
    int at = 0;
    for (const auto& o : obs) {
        const int m = o.op.output_dim();
        s.H.middleRows(at, m) = o.op.to_matrix();
        s.R.block(at, at, m, m) =
            o.noise_variance * Eigen::MatrixXd::Identity(m, m);
        s.y.segment(at, m) = o.y;
        for (int i = 0; i < m; ++i) s.variances.push_back(o.noise_variance);
        at += m;
    }
    return s;
}

}  // namespace

SmootherResult kalman_smoother(const LinearGaussianSSM& model,
                               const ObservationSequence& observations) {
    const int T = static_cast<int>(observations.size());
    if (T < 1) throw InputError("kalman_smoother: needs at least one step");
    const int n = model.dim();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);

    std::vector<Eigen::VectorXd> mf(T), mp(T);  // filtered / predicted means
    std::vector<Eigen::MatrixXd> Pf(T), Pp(T);

    for (int t = 0; t < T; ++t) {
        if (t == 0) {
            mp[0] = model.initial_mean;
            Pp[0] = model.initial_cov;
        } else {
            mp[t] = model.transition * mf[t - 1];
            Pp[t] = model.transition * Pf[t - 1] * model.transition.transpose() +
                    model.process_noise;
        }
        if (observations[t].empty()) {
            mf[t] = mp[t];
            Pf[t] = Pp[t];
            continue;
        }
        const Stacked s = stack_observations(observations[t], n);
        const Eigen::MatrixXd S = s.H * Pp[t] * s.H.transpose() + s.R;
        Eigen::LLT<Eigen::MatrixXd> llt(S);
        if (llt.info() != Eigen::Success)
            throw NumericError("kalman_smoother: singular innovation covariance at step " +
                               std::to_string(t));
        const Eigen::MatrixXd K = llt.solve(s.H * Pp[t]).transpose();
        mf[t] = mp[t] + K * (s.y - s.H * mp[t]);
        // Joseph form keeps the covariance symmetric
        const Eigen::MatrixXd J = I - K * s.H;
        Pf[t] = J * Pp[t] * J.transpose() + K * s.R * K.transpose();
    }

    SmootherResult out;
    out.means.resize(T);
    out.covariances.resize(T);
    out.means[T - 1] = mf[T - 1];
    out.covariances[T - 1] = Pf[T - 1];
    for (int t = T - 2; t >= 0; --t) {
        const Eigen::MatrixXd G =
            Pp[t + 1].llt().solve(model.transition * Pf[t]).transpose();
        out.means[t] = mf[t] + G * (out.means[t + 1] - mp[t + 1]);
        out.covariances[t] =
            Pf[t] + G * (out.covariances[t + 1] - Pp[t + 1]) * G.transpose();
    }
    return out;
}

// ---------------------------------------------------------------------------
// EnKF

Eigen::MatrixXd enkf_update(const Eigen::MatrixXd& ensemble,
                            const std::vector<ObservationModel>& observations,
                            NoiseSource& noise, bool* degenerate) {
    if (ensemble.cols() < 2) throw InputError("enkf_update: ensemble size must be >= 2");
    if (degenerate) *degenerate = false;
    if (observations.empty()) return ensemble;

    const int n = static_cast<int>(ensemble.rows());
    const int m = static_cast<int>(ensemble.cols());
    const Stacked s = stack_observations(observations, n);

    const Eigen::VectorXd mean = ensemble.rowwise().mean();
    const Eigen::MatrixXd anom = ensemble.colwise() - mean;
    if (anom.norm() < 1e-12 * std::max(1.0, mean.norm())) {
        if (degenerate) *degenerate = true;
    }
    const Eigen::MatrixXd P = anom * anom.transpose() / (m - 1);
    const Eigen::MatrixXd S = s.H * P * s.H.transpose() + s.R;
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success)
        throw NumericError("enkf_update: singular innovation covariance");
    const Eigen::MatrixXd K = llt.solve(s.H * P).transpose();

    Eigen::MatrixXd analysis = ensemble;
    for (int j = 0; j < m; ++j) {
        Eigen::VectorXd y_pert = s.y;
        for (std::size_t i = 0; i < s.variances.size(); ++i)
            y_pert[static_cast<int>(i)] += std::sqrt(s.variances[i]) * noise.gaussian();
        analysis.col(j) += K * (y_pert - s.H * ensemble.col(j));
    }
    return analysis;
}

EnkfResult enkf_assimilate(const LinearGaussianSSM& model, int n_members,
                           const ObservationSequence& observations, std::uint64_t seed) {
    if (n_members < 2) throw InputError("enkf_assimilate: ensemble size must be >= 2");
    const int T = static_cast<int>(observations.size());
    if (T < 1) throw InputError("enkf_assimilate: needs at least one step");
    NoiseSource rng(seed, 0);
    const int n = model.dim();
    const Eigen::MatrixXd L0 = spd_chol(model.initial_cov, "lgssm initial covariance");
    const Eigen::MatrixXd Lq = spd_chol(model.process_noise, "lgssm process noise");

    Eigen::MatrixXd ens(n, n_members);
    for (int j = 0; j < n_members; ++j)
        ens.col(j) = model.initial_mean + L0 * rng.gaussian_vector(n);

    EnkfResult out;
    for (int t = 0; t < T; ++t) {
        if (t > 0)
            for (int j = 0; j < n_members; ++j)
                ens.col(j) = model.transition * ens.col(j) + Lq * rng.gaussian_vector(n);
        bool degenerate = false;
        ens = enkf_update(ens, observations[t], rng, &degenerate);
        if (degenerate) out.inflation_warnings.push_back(t);
        out.ensembles.push_back(ens);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Lorenz-96

nlohmann::json Lorenz96Config::to_json() const {
    return {{"dim", dim}, {"forcing", forcing}, {"step", step}, {"spin_up", spin_up}};
}

Lorenz96Config Lorenz96Config::from_json(const nlohmann::json& j) {
    Lorenz96Config c;
    c.dim = j.value("dim", 40);
    c.forcing = j.value("forcing", 8.0);
    c.step = j.value("step", 0.05);
    c.spin_up = j.value("spin_up", 500);
    if (c.dim < 4) throw ConfigError("lorenz96: dimension must be >= 4");
    if (!(c.step > 0.0)) throw ConfigError("lorenz96: integrator step must be positive");
    if (c.spin_up < 0) throw ConfigError("lorenz96: spin_up must be >= 0");
    return c;
}

Eigen::VectorXd lorenz96_tendency(const Eigen::VectorXd& x, double forcing) {
    const int n = static_cast<int>(x.size());
    Eigen::VectorXd d(n);
    for (int i = 0; i < n; ++i) {
        const int ip1 = (i + 1) % n;
        const int im1 = (i - 1 + n) % n;
        const int im2 = (i - 2 + n) % n;
        d[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + forcing;
    }
    return d;
}

Trajectory simulate_lorenz96(const Lorenz96Config& cfg, int T, std::uint64_t seed,
                             const Eigen::VectorXd* start) {
    if (cfg.dim < 4) throw ConfigError("lorenz96: dimension must be >= 4");
    if (!(cfg.step > 0.0)) throw ConfigError("lorenz96: integrator step must be positive");
    if (T < 1) throw InputError("simulate_lorenz96: T must be >= 1");

    Eigen::VectorXd x;
    if (start) {
        if (start->size() != cfg.dim)
            throw InputError("simulate_lorenz96: start state has wrong dimension");
        x = *start;
    } else {
        NoiseSource rng(seed, 0);
        x = Eigen::VectorXd::Constant(cfg.dim, cfg.forcing) +
            0.01 * rng.gaussian_vector(cfg.dim);
    }

    auto rk4 = [&](Eigen::VectorXd& state) {
        const double h = cfg.step;
        const Eigen::VectorXd k1 = lorenz96_tendency(state, cfg.forcing);
        const Eigen::VectorXd k2 = lorenz96_tendency(state + 0.5 * h * k1, cfg.forcing);
        const Eigen::VectorXd k3 = lorenz96_tendency(state + 0.5 * h * k2, cfg.forcing);
        const Eigen::VectorXd k4 = lorenz96_tendency(state + h * k3, cfg.forcing);
        state += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!state.allFinite() || state.cwiseAbs().maxCoeff() > 1e3)
            throw NumericError("lorenz96 integration blew up");
    };

    for (int i = 0; i < cfg.spin_up; ++i) rk4(x);
    Eigen::MatrixXd values(T, cfg.dim);
    values.row(0) = x.transpose();
    for (int t = 1; t < T; ++t) {
        rk4(x);
        values.row(t) = x.transpose();
    }
    return Trajectory(std::move(values), Trajectory::Role::truth, cfg.step);
}

// ---------------------------------------------------------------------------
// Synthetic modalities

nlohmann::json SyntheticModalities::to_json() const {
    return {{"use_in_situ", use_in_situ},
            {"in_situ_gap", in_situ_gap},
            {"in_situ_noise", in_situ_noise},
            {"use_ex_situ", use_ex_situ},
            {"ex_situ_factor", ex_situ_factor},
            {"ex_situ_noise", ex_situ_noise}};
}

SyntheticModalities SyntheticModalities::from_json(const nlohmann::json& j) {
    SyntheticModalities m;
    m.use_in_situ = j.value("use_in_situ", true);
    m.in_situ_gap = j.value("in_situ_gap", 1);
    m.in_situ_noise = j.value("in_situ_noise", 0.1);
    m.use_ex_situ = j.value("use_ex_situ", true);
    m.ex_situ_factor = j.value("ex_situ_factor", 4);
    m.ex_situ_noise = j.value("ex_situ_noise", 0.1);
    if (m.in_situ_gap < 1 || m.ex_situ_factor < 1)
        throw ConfigError("modalities: gap and factor must be >= 1");
    if (m.in_situ_noise < 0.0 || m.ex_situ_noise < 0.0)
        throw ConfigError("modalities: noise variances must be nonnegative");
    return m;
}

MeasurementOp in_situ_op(int state_dim, int gap) {
    return MeasurementOp::mask_gap(state_dim, gap);
}

MeasurementOp ex_situ_op(int state_dim, int factor) {
    if (factor == 1) return MeasurementOp::identity(state_dim);
    return MeasurementOp::compose(
        {MeasurementOp::gaussian_smooth(state_dim, factor / 2.0),
         MeasurementOp::coarsen(state_dim, factor)});
}

ObservationSequence make_observations(const Trajectory& truth,
                                      const SyntheticModalities& modalities,
                                      std::uint64_t seed) {
    NoiseSource rng(seed, 0);
    const int n = truth.dim();
    // recorded variance floor: the guidance likelihood needs sigma_y^2 > 0
    constexpr double kVarFloor = 1e-12;
    ObservationSequence seq(truth.steps());
    for (int t = 0; t < truth.steps(); ++t) {
        const Eigen::VectorXd x = truth.state(t);
        if (modalities.use_in_situ) {
            const MeasurementOp op = in_situ_op(n, modalities.in_situ_gap);
            Eigen::VectorXd y = op.apply(x);
            if (modalities.in_situ_noise > 0.0)
                y += std::sqrt(modalities.in_situ_noise) * rng.gaussian_vector(y.size());
            seq[t].emplace_back(std::move(y), op,
                                std::max(modalities.in_situ_noise, kVarFloor), "in-situ");
        }
        if (modalities.use_ex_situ) {
            const MeasurementOp op = ex_situ_op(n, modalities.ex_situ_factor);
            Eigen::VectorXd y = op.apply(x);
            if (modalities.ex_situ_noise > 0.0)
                y += std::sqrt(modalities.ex_situ_noise) * rng.gaussian_vector(y.size());
            seq[t].emplace_back(std::move(y), op,
                                std::max(modalities.ex_situ_noise, kVarFloor), "ex-situ");
        }
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Wasserstein

double wasserstein_1d(const Eigen::VectorXd& samples_a, const Eigen::VectorXd& samples_b) {
    if (samples_a.size() == 0 || samples_b.size() == 0)
        throw InputError("wasserstein_1d: empty sample set");
    std::vector<double> a(samples_a.data(), samples_a.data() + samples_a.size());
    std::vector<double> b(samples_b.data(), samples_b.data() + samples_b.size());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    // integrate |F_a^{-1}(u) - F_b^{-1}(u)| du over the merged quantile grid
    const double wa = 1.0 / a.size(), wb = 1.0 / b.size();
    std::size_t i = 0, j = 0;
    double u = 0.0, acc = 0.0;
    while (i < a.size() && j < b.size()) {
        const double ua = (i + 1) * wa;
        const double ub = (j + 1) * wb;
        const double next = std::min(ua, ub);
        acc += std::abs(a[i] - b[j]) * (next - u);
        u = next;
        if (ua <= next + 1e-15) ++i;
        if (ub <= next + 1e-15) ++j;
    }
    return acc;
}

}  // namespace scoreda
