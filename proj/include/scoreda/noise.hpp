#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace scoreda {

/// Deterministic Gaussian noise stream. The same (seed, stream) pair yields
/// bit-identical draws; distinct streams are independent. Not shareable across
/// concurrent tasks; give each task its own stream.
class NoiseSource {
public:
    explicit NoiseSource(std::uint64_t seed, std::uint64_t stream = 0);

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();

    /// Standard normal draw (Box-Muller over the uniform stream).
    double gaussian();

    Eigen::VectorXd gaussian_vector(Eigen::Index n);

    /// Matrix filled column-by-column with gaussian draws.
    Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 rng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace scoreda
