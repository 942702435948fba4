#include "scoreda/nn.hpp"

#include <cmath>

#include "scoreda/errors.hpp"

namespace scoreda::nn {

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation a) {
    if (a == Activation::relu) return z.cwiseMax(0.0);
    // silu(z) = z * sigmoid(z)
    return z.array() / (1.0 + (-z.array()).exp());
}

Eigen::MatrixXd activate_grad(const Eigen::MatrixXd& z, Activation a) {
    if (a == Activation::relu)
        return (z.array() > 0.0).cast<double>();
    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
    return s * (1.0 + z.array() * (1.0 - s));
}

// ---------------------------------------------------------------------------
// Linear

Eigen::Map<const Eigen::MatrixXd> Linear::W(const Eigen::VectorXd& p) const {
    return {p.data() + offset, out, in};
}

Eigen::Map<const Eigen::VectorXd> Linear::b(const Eigen::VectorXd& p) const {
    return {p.data() + offset + out * in, out};
}

Eigen::MatrixXd Linear::forward(const Eigen::VectorXd& p, const Eigen::MatrixXd& x) const {
    return (W(p) * x).colwise() + b(p);
}

Eigen::MatrixXd Linear::backward(const Eigen::VectorXd& p, const Eigen::MatrixXd& x,
                                 const Eigen::MatrixXd& dy, Eigen::VectorXd& grad) const {
    Eigen::Map<Eigen::MatrixXd> dW(grad.data() + offset, out, in);
    Eigen::Map<Eigen::VectorXd> db(grad.data() + offset + out * in, out);
    dW.noalias() += dy * x.transpose();
    db.noalias() += dy.rowwise().sum();
    return W(p).transpose() * dy;
}

Eigen::MatrixXd Linear::input_grad(const Eigen::VectorXd& p, const Eigen::MatrixXd& dy) const {
    return W(p).transpose() * dy;
}

void Linear::init(Eigen::VectorXd& p, NoiseSource& rng, bool zero) const {
    Eigen::Map<Eigen::MatrixXd> w(p.data() + offset, out, in);
    Eigen::Map<Eigen::VectorXd> bias(p.data() + offset + out * in, out);
    if (zero) {
        w.setZero();
        bias.setZero();
        return;
    }
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (int c = 0; c < in; ++c)
        for (int r = 0; r < out; ++r) w(r, c) = scale * rng.gaussian();
    bias.setZero();
}

// ---------------------------------------------------------------------------
// CircularConv1d

Eigen::MatrixXd CircularConv1d::forward(const Eigen::VectorXd& p,
                                        const Eigen::MatrixXd& x) const {
    const int B = static_cast<int>(x.cols());
    const int half = kernel / 2;
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(out_dim(), B);
    const double* K = p.data() + offset;
    const double* bias = K + out_ch * in_ch * kernel;
    for (int co = 0; co < out_ch; ++co) {
        for (int ci = 0; ci < in_ch; ++ci) {
            for (int k = 0; k < kernel; ++k) {
                const double kv = K[(co * in_ch + ci) * kernel + k];
                const int shift = k - half;
                for (int w = 0; w < width; ++w) {
                    const int src = ((w + shift) % width + width) % width;
                    y.row(co * width + w).noalias() += kv * x.row(ci * width + src);
                }
            }
        }
        for (int w = 0; w < width; ++w) y.row(co * width + w).array() += bias[co];
    }
    return y;
}

Eigen::MatrixXd CircularConv1d::backward(const Eigen::VectorXd& p, const Eigen::MatrixXd& x,
                                         const Eigen::MatrixXd& dy,
                                         Eigen::VectorXd& grad) const {
    const int half = kernel / 2;
    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(in_dim(), dy.cols());
    const double* K = p.data() + offset;
    double* dK = grad.data() + offset;
    double* db = dK + out_ch * in_ch * kernel;
    for (int co = 0; co < out_ch; ++co) {
        for (int w = 0; w < width; ++w) db[co] += dy.row(co * width + w).sum();
        for (int ci = 0; ci < in_ch; ++ci) {
            for (int k = 0; k < kernel; ++k) {
                const double kv = K[(co * in_ch + ci) * kernel + k];
                double acc = 0.0;
                const int shift = k - half;
                for (int w = 0; w < width; ++w) {
                    const int src = ((w + shift) % width + width) % width;
                    acc += dy.row(co * width + w).dot(x.row(ci * width + src));
                    dx.row(ci * width + src).noalias() += kv * dy.row(co * width + w);
                }
                dK[(co * in_ch + ci) * kernel + k] += acc;
            }
        }
    }
    return dx;
}

Eigen::MatrixXd CircularConv1d::input_grad(const Eigen::VectorXd& p,
                                           const Eigen::MatrixXd& dy) const {
    const int half = kernel / 2;
    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(in_dim(), dy.cols());
    const double* K = p.data() + offset;
    for (int co = 0; co < out_ch; ++co)
        for (int ci = 0; ci < in_ch; ++ci)
            for (int k = 0; k < kernel; ++k) {
                const double kv = K[(co * in_ch + ci) * kernel + k];
                const int shift = k - half;
                for (int w = 0; w < width; ++w) {
                    const int src = ((w + shift) % width + width) % width;
                    dx.row(ci * width + src).noalias() += kv * dy.row(co * width + w);
                }
            }
    return dx;
}

void CircularConv1d::init(Eigen::VectorXd& p, NoiseSource& rng, bool zero) const {
    double* K = p.data() + offset;
    const int nk = out_ch * in_ch * kernel + out_ch;
    if (zero) {
        for (int i = 0; i < nk; ++i) K[i] = 0.0;
        return;
    }
    const double scale = std::sqrt(2.0 / static_cast<double>(in_ch * kernel));
    for (int i = 0; i < out_ch * in_ch * kernel; ++i) K[i] = scale * rng.gaussian();
    for (int i = out_ch * in_ch * kernel; i < nk; ++i) K[i] = 0.0;
}

// ---------------------------------------------------------------------------
// Mlp

Mlp::Mlp(std::vector<int> widths, Activation act) : widths_(std::move(widths)), act_(act) {
    if (widths_.size() < 2) throw ConfigError("Mlp needs at least two widths");
    int off = 0;
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
        Linear l{widths_[i], widths_[i + 1], off};
        off += l.n_params();
        layers_.push_back(l);
    }
    n_params_ = off;
}

Eigen::VectorXd Mlp::init_params(NoiseSource& rng, bool zero_last) const {
    Eigen::VectorXd p(n_params_);
    for (std::size_t i = 0; i < layers_.size(); ++i)
        layers_[i].init(p, rng, zero_last && i + 1 == layers_.size());
    return p;
}

Eigen::MatrixXd Mlp::forward(const Eigen::VectorXd& p, const Eigen::MatrixXd& x,
                             Cache* cache) const {
    if (x.rows() != in_dim()) throw InputError("Mlp::forward: input dimension mismatch");
    Eigen::MatrixXd h = x;
    if (cache) {
        cache->inputs.clear();
        cache->preacts.clear();
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (cache) cache->inputs.push_back(h);
        Eigen::MatrixXd z = layers_[i].forward(p, h);
        if (i + 1 < layers_.size()) {
            if (cache) cache->preacts.push_back(z);
            h = activate(z, act_);
        } else {
            h = std::move(z);
        }
    }
    return h;
}

Eigen::MatrixXd Mlp::backward(const Eigen::VectorXd& p, const Cache& cache,
                              const Eigen::MatrixXd& dy, Eigen::VectorXd& grad) const {
    Eigen::MatrixXd d = dy;
    for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
        d = layers_[i].backward(p, cache.inputs[i], d, grad);
        if (i > 0) d = d.cwiseProduct(activate_grad(cache.preacts[i - 1], act_));
    }
    return d;
}

Eigen::MatrixXd Mlp::input_vjp(const Eigen::VectorXd& p, const Cache& cache,
                               const Eigen::MatrixXd& dy) const {
    Eigen::MatrixXd d = dy;
    for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
        d = layers_[i].input_grad(p, d);
        if (i > 0) d = d.cwiseProduct(activate_grad(cache.preacts[i - 1], act_));
    }
    return d;
}

// ---------------------------------------------------------------------------
// AdamW

AdamW::AdamW(int n_params, double lr, double weight_decay, int total_steps)
    : lr0_(lr), wd_(weight_decay), total_steps_(total_steps),
      m_(Eigen::VectorXd::Zero(n_params)), v_(Eigen::VectorXd::Zero(n_params)) {
    if (!(lr > 0.0)) throw ConfigError("AdamW: learning rate must be positive");
}

double AdamW::current_lr() const {
    const double frac = total_steps_ > 0
        ? static_cast<double>(t_) / static_cast<double>(total_steps_) : 0.0;
    return lr0_ * std::max(0.0, 1.0 - frac);
}

void AdamW::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    const double lr = current_lr();
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_.array().matrix() + (1.0 - beta2_) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    params.array() -= lr * wd_ * params.array();
    params.array() -=
        lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps_);
}

}  // namespace scoreda::nn
