#include "scoreda/noise.hpp"

#include <cmath>

namespace scoreda {

namespace {
constexpr std::uint64_t kStreamSalt = 0x9e3779b97f4a7c15ULL;
}

NoiseSource::NoiseSource(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream),
                      static_cast<std::uint32_t>(stream >> 32),
                      static_cast<std::uint32_t>(kStreamSalt),
                      static_cast<std::uint32_t>(kStreamSalt >> 32)};
    rng_.seed(seq);
}

double NoiseSource::uniform() {
    return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

double NoiseSource::gaussian() {
    // Box-Muller; std::normal_distribution is implementation-defined, this is not.
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

Eigen::VectorXd NoiseSource::gaussian_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = gaussian();
    return v;
}

Eigen::MatrixXd NoiseSource::gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = gaussian();
    return m;
}

}  // namespace scoreda
