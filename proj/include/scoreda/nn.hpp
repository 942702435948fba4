#pragma once

#include <vector>

#include <Eigen/Core>

#include "scoreda/noise.hpp"

namespace scoreda::nn {

enum class Activation { relu, silu };

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation a);
/// Derivative of the activation evaluated at pre-activation z.
Eigen::MatrixXd activate_grad(const Eigen::MatrixXd& z, Activation a);

/// Fully-connected layer over a flat parameter vector. Columns are samples.
/// Layout inside the parameter vector: [W (out x in, column-major), b (out)].
struct Linear {
    int in = 0;
    int out = 0;
    int offset = 0;

    int n_params() const { return out * in + out; }

    Eigen::Map<const Eigen::MatrixXd> W(const Eigen::VectorXd& p) const;
    Eigen::Map<const Eigen::VectorXd> b(const Eigen::VectorXd& p) const;

    Eigen::MatrixXd forward(const Eigen::VectorXd& p, const Eigen::MatrixXd& x) const;
    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    Eigen::MatrixXd backward(const Eigen::VectorXd& p, const Eigen::MatrixXd& x,
                             const Eigen::MatrixXd& dy, Eigen::VectorXd& grad) const;
    /// Input gradient only (for Jacobian-vector products on frozen parameters).
    Eigen::MatrixXd input_grad(const Eigen::VectorXd& p, const Eigen::MatrixXd& dy) const;

    void init(Eigen::VectorXd& p, NoiseSource& rng, bool zero = false) const;
};

/// 1-D convolution with circular boundary. Sample layout: channel-major,
/// x[c*width + w]. Kernel layout in the flat vector:
/// [K (out_ch x in_ch x kernel), b (out_ch)].
struct CircularConv1d {
    int in_ch = 0;
    int out_ch = 0;
    int width = 0;
    int kernel = 5;
    int offset = 0;

    int n_params() const { return out_ch * in_ch * kernel + out_ch; }
    int in_dim() const { return in_ch * width; }
    int out_dim() const { return out_ch * width; }

    Eigen::MatrixXd forward(const Eigen::VectorXd& p, const Eigen::MatrixXd& x) const;
    Eigen::MatrixXd backward(const Eigen::VectorXd& p, const Eigen::MatrixXd& x,
                             const Eigen::MatrixXd& dy, Eigen::VectorXd& grad) const;
    Eigen::MatrixXd input_grad(const Eigen::VectorXd& p, const Eigen::MatrixXd& dy) const;

    void init(Eigen::VectorXd& p, NoiseSource& rng, bool zero = false) const;
};

/// Plain MLP: Linear stack with activation after every layer but the last.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<int> widths, Activation act);

    int n_params() const { return n_params_; }
    int in_dim() const { return widths_.front(); }
    int out_dim() const { return widths_.back(); }
    const std::vector<int>& widths() const { return widths_; }
    Activation activation() const { return act_; }

    Eigen::VectorXd init_params(NoiseSource& rng, bool zero_last = false) const;

    struct Cache {
        std::vector<Eigen::MatrixXd> inputs;   // input to each layer
        std::vector<Eigen::MatrixXd> preacts;  // pre-activation of each hidden layer
    };

    Eigen::MatrixXd forward(const Eigen::VectorXd& p, const Eigen::MatrixXd& x,
                            Cache* cache = nullptr) const;
    Eigen::MatrixXd backward(const Eigen::VectorXd& p, const Cache& cache,
                             const Eigen::MatrixXd& dy, Eigen::VectorXd& grad) const;
    /// J^T dy with frozen parameters; needs the forward cache.
    Eigen::MatrixXd input_vjp(const Eigen::VectorXd& p, const Cache& cache,
                              const Eigen::MatrixXd& dy) const;

private:
    std::vector<int> widths_;
    std::vector<Linear> layers_;
    Activation act_ = Activation::silu;
    int n_params_ = 0;
};

/// Decoupled weight-decay Adam with a linearly decaying learning rate.
class AdamW {
public:
    AdamW(int n_params, double lr, double weight_decay, int total_steps);

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
    double current_lr() const;

private:
    double lr0_;
    double wd_;
    int total_steps_;
    int t_ = 0;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    Eigen::VectorXd m_, v_;
};

}  // namespace scoreda::nn
