#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "scoreda/nn.hpp"
#include "scoreda/noise.hpp"

namespace scoreda {

/// Ordered channel layout of the codec input: the background state first,
/// then one block per observation modality, then one presence flag per
/// modality.
struct ChannelLayout {
    struct Modality {
        std::string name;
        int length = 0;
    };

    int state_dim = 0;
    std::vector<Modality> modalities;

    int n_modalities() const { return static_cast<int>(modalities.size()); }
    int total_dim() const;

    nlohmann::json to_json() const;
    static ChannelLayout from_json(const nlohmann::json& j);
    bool operator==(const ChannelLayout& o) const;
};

/// One modality value at encode time; missing values are filled with the
/// training mean and flagged through the presence channel.
struct ModalityValue {
    std::string name;
    std::optional<Eigen::VectorXd> value;
};

/// Encoder f: R^{total} -> R^L and decoder g: R^L -> R^{N_x}, either linear
/// (closed-form principal-subspace fit, the oracle variant) or dense
/// (5-layer networks trained with reconstruction loss and modality dropout).
class LatentCodec {
public:
    enum class Kind { linear, dense };

    LatentCodec() = default;

    /// L = N_x, no modalities, identity weights: decode(encode(x)) = x.
    static LatentCodec identity(int state_dim);

    Kind kind() const { return kind_; }
    int latent_dim() const { return latent_dim_; }
    int state_dim() const { return layout_.state_dim; }
    const ChannelLayout& layout() const { return layout_; }
    const Eigen::VectorXd& input_mean() const { return input_mean_; }

    /// Assembles [state; modalities (mean-filled); presence flags]; errors on
    /// any layout mismatch, including permuted modality order.
    Eigen::VectorXd assemble_input(const Eigen::VectorXd& state,
                                   const std::vector<ModalityValue>& observations) const;

    Eigen::VectorXd encode(const Eigen::VectorXd& state,
                           const std::vector<ModalityValue>& observations) const;
    Eigen::VectorXd encode_assembled(const Eigen::VectorXd& input) const;
    Eigen::MatrixXd encode_assembled(const Eigen::MatrixXd& inputs) const;
    Eigen::VectorXd decode(const Eigen::VectorXd& latent) const;
    Eigen::MatrixXd decode(const Eigen::MatrixXd& latents) const;

    /// Hard error when the stored layout differs from the expected one.
    void check_layout(const ChannelLayout& expected) const;

    nlohmann::json to_json() const;
    static LatentCodec from_json(const nlohmann::json& j);

private:
    friend LatentCodec fit_linear_codec(const Eigen::MatrixXd&, const ChannelLayout&, int,
                                        bool*);
    friend LatentCodec train_codec(const Eigen::MatrixXd&, const ChannelLayout&,
                                   const struct CodecTrainConfig&, struct CodecTrainResult*);

    Kind kind_ = Kind::linear;
    ChannelLayout layout_;
    int latent_dim_ = 0;

    Eigen::VectorXd input_mean_;   // over assembled inputs (flags included)
    Eigen::VectorXd state_mean_;   // decoder output offset (linear variant)

    // linear variant
    Eigen::MatrixXd enc_weight_;   // L x total
    Eigen::MatrixXd dec_weight_;   // N_x x L

    // dense variant
    nn::Mlp encoder_;
    nn::Mlp decoder_;
    Eigen::VectorXd enc_params_;
    Eigen::VectorXd dec_params_;
};

struct CodecTrainConfig {
    LatentCodec::Kind kind = LatentCodec::Kind::dense;
    int latent_dim = 0;  // 0: default state_dim / 4 (at least 1)
    int hidden_width = 128;
    int epochs = 200;
    int batch_size = 64;
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    double modality_dropout = 0.25;
    double reconstruction_bound = 0.1;  // relative L2 on the validation split
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static CodecTrainConfig from_json(const nlohmann::json& j);
};

struct CodecTrainResult {
    std::vector<double> loss_history;
    double validation_error = 0.0;  // relative L2 on held-out states
    bool within_bound = true;
};

/// Closed-form variant: principal subspace of the assembled inputs, decoder
/// by least squares onto the state channels. `dataset` columns are assembled
/// inputs (layout order: state, modalities, presence flags). Degenerate data
/// sets `rank_deficient` instead of failing.
LatentCodec fit_linear_codec(const Eigen::MatrixXd& dataset, const ChannelLayout& layout,
                             int latent_dim, bool* rank_deficient = nullptr);

/// Trains the configured variant; dense training applies modality dropout
/// (mean-fill plus cleared presence flag) and reconstructs the state only.
LatentCodec train_codec(const Eigen::MatrixXd& dataset, const ChannelLayout& layout,
                        const CodecTrainConfig& config,
                        CodecTrainResult* result = nullptr);

}  // namespace scoreda
