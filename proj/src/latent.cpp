#include "scoreda/latent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "scoreda/errors.hpp"

namespace scoreda {
namespace {

using nlohmann::json;

Eigen::VectorXd json_to_vector(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j.at(i).get<double>();
    return v;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json j = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

Eigen::MatrixXd json_to_matrix(const json& j) {
    const auto rows = static_cast<Eigen::Index>(j.at("rows").get<int>());
    const auto cols = static_cast<Eigen::Index>(j.at("cols").get<int>());
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw InputError("matrix data size does not match rows*cols");
    Eigen::MatrixXd m(rows, cols);
    Eigen::Index k = 0;
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = data.at(k++).get<double>();
    return m;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json data = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) data.push_back(m(r, c));
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

constexpr int kDenseDepth = 5;  // linear layers per network

std::vector<int> dense_widths(int in, int hidden, int out) {
    std::vector<int> w(kDenseDepth + 1, hidden);
    w.front() = in;
    w.back() = out;
    return w;
}

}  // namespace

int ChannelLayout::total_dim() const {
    int total = state_dim;
    for (const auto& m : modalities) total += m.length;
    return total + n_modalities();
}

json ChannelLayout::to_json() const {
    json mods = json::array();
    for (const auto& m : modalities) mods.push_back({{"name", m.name}, {"length", m.length}});
    return json{{"state_dim", state_dim}, {"modalities", std::move(mods)}};
}

ChannelLayout ChannelLayout::from_json(const json& j) {
    ChannelLayout layout;
    layout.state_dim = j.at("state_dim").get<int>();
    if (layout.state_dim <= 0) throw InputError("channel layout: state_dim must be positive");
    for (const auto& m : j.at("modalities")) {
        ChannelLayout::Modality mod{m.at("name").get<std::string>(), m.at("length").get<int>()};
        if (mod.length <= 0) throw InputError("channel layout: modality length must be positive");
        layout.modalities.push_back(std::move(mod));
    }
    return layout;
}

bool ChannelLayout::operator==(const ChannelLayout& o) const {
    if (state_dim != o.state_dim || modalities.size() != o.modalities.size()) return false;
    for (std::size_t i = 0; i < modalities.size(); ++i)
        if (modalities[i].name != o.modalities[i].name ||
            modalities[i].length != o.modalities[i].length)
            return false;
    return true;
}

LatentCodec LatentCodec::identity(int state_dim) {
    if (state_dim <= 0) throw InputError("identity codec: state_dim must be positive");
    LatentCodec codec;
    codec.kind_ = Kind::linear;
    codec.layout_.state_dim = state_dim;
    codec.latent_dim_ = state_dim;
    codec.input_mean_ = Eigen::VectorXd::Zero(state_dim);
    codec.state_mean_ = Eigen::VectorXd::Zero(state_dim);
    codec.enc_weight_ = Eigen::MatrixXd::Identity(state_dim, state_dim);
    codec.dec_weight_ = Eigen::MatrixXd::Identity(state_dim, state_dim);
    return codec;
}

Eigen::VectorXd LatentCodec::assemble_input(const Eigen::VectorXd& state,
                                            const std::vector<ModalityValue>& observations) const {
    if (state.size() != layout_.state_dim)
        throw InputError("assemble_input: state has length " + std::to_string(state.size()) +
                         ", layout expects " + std::to_string(layout_.state_dim));
    if (static_cast<int>(observations.size()) != layout_.n_modalities())
        throw InputError("assemble_input: got " + std::to_string(observations.size()) +
                         " modalities, layout expects " +
                         std::to_string(layout_.n_modalities()));

    Eigen::VectorXd u(layout_.total_dim());
    u.head(layout_.state_dim) = state;
    int offset = layout_.state_dim;
    const int flags_offset = layout_.total_dim() - layout_.n_modalities();
    for (int k = 0; k < layout_.n_modalities(); ++k) {
        const auto& expected = layout_.modalities[k];
        const auto& given = observations[k];
        if (given.name != expected.name)
            throw InputError("assemble_input: modality #" + std::to_string(k) + " is '" +
                             given.name + "', layout expects '" + expected.name +
                             "' (order must match the layout)");
        if (given.value) {
            if (given.value->size() != expected.length)
                throw InputError("assemble_input: modality '" + expected.name + "' has length " +
                                 std::to_string(given.value->size()) + ", layout expects " +
                                 std::to_string(expected.length));
            u.segment(offset, expected.length) = *given.value;
            u[flags_offset + k] = 1.0;
        } else {
            // Missing modality: training-mean fill plus cleared presence flag.
            u.segment(offset, expected.length) = input_mean_.segment(offset, expected.length);
            u[flags_offset + k] = 0.0;
        }
        offset += expected.length;
    }
    return u;
}

Eigen::VectorXd LatentCodec::encode(const Eigen::VectorXd& state,
                                    const std::vector<ModalityValue>& observations) const {
    return encode_assembled(assemble_input(state, observations));
}

Eigen::MatrixXd LatentCodec::encode_assembled(const Eigen::MatrixXd& inputs) const {
    if (inputs.rows() != layout_.total_dim())
        throw InputError("encode: input has " + std::to_string(inputs.rows()) +
                         " channels, layout expects " + std::to_string(layout_.total_dim()));
    if (kind_ == Kind::linear) return enc_weight_ * (inputs.colwise() - input_mean_);
    return encoder_.forward(enc_params_, inputs.colwise() - input_mean_);
}

Eigen::VectorXd LatentCodec::encode_assembled(const Eigen::VectorXd& input) const {
    return encode_assembled(Eigen::MatrixXd(input)).col(0);
}

Eigen::MatrixXd LatentCodec::decode(const Eigen::MatrixXd& latents) const {
    if (latents.rows() != latent_dim_)
        throw InputError("decode: latent has length " + std::to_string(latents.rows()) +
                         ", codec expects " + std::to_string(latent_dim_));
    if (kind_ == Kind::linear) return (dec_weight_ * latents).colwise() + state_mean_;
    return decoder_.forward(dec_params_, latents).colwise() + state_mean_;
}

Eigen::VectorXd LatentCodec::decode(const Eigen::VectorXd& latent) const {
    return decode(Eigen::MatrixXd(latent)).col(0);
}

void LatentCodec::check_layout(const ChannelLayout& expected) const {
    if (!(layout_ == expected))
        throw InputError("codec layout mismatch: stored layout " + layout_.to_json().dump() +
                         " does not match expected " + expected.to_json().dump());
}

json LatentCodec::to_json() const {
    json j{{"kind", kind_ == Kind::linear ? "linear" : "dense"},
           {"layout", layout_.to_json()},
           {"latent_dim", latent_dim_},
           {"input_mean", vector_to_json(input_mean_)},
           {"state_mean", vector_to_json(state_mean_)}};
    if (kind_ == Kind::linear) {
        j["enc_weight"] = matrix_to_json(enc_weight_);
        j["dec_weight"] = matrix_to_json(dec_weight_);
    } else {
        j["encoder_widths"] = encoder_.widths();
        j["decoder_widths"] = decoder_.widths();
        j["enc_params"] = vector_to_json(enc_params_);
        j["dec_params"] = vector_to_json(dec_params_);
    }
    return j;
}

LatentCodec LatentCodec::from_json(const json& j) {
    LatentCodec codec;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "linear")
        codec.kind_ = Kind::linear;
    else if (kind == "dense")
        codec.kind_ = Kind::dense;
    else
        throw InputError("codec: unknown kind '" + kind + "'");
    codec.layout_ = ChannelLayout::from_json(j.at("layout"));
    codec.latent_dim_ = j.at("latent_dim").get<int>();
    codec.input_mean_ = json_to_vector(j.at("input_mean"));
    codec.state_mean_ = json_to_vector(j.at("state_mean"));
    if (codec.input_mean_.size() != codec.layout_.total_dim() ||
        codec.state_mean_.size() != codec.layout_.state_dim)
        throw InputError("codec: stored means do not match the embedded layout");
    if (codec.kind_ == Kind::linear) {
        codec.enc_weight_ = json_to_matrix(j.at("enc_weight"));
        codec.dec_weight_ = json_to_matrix(j.at("dec_weight"));
        if (codec.enc_weight_.rows() != codec.latent_dim_ ||
            codec.enc_weight_.cols() != codec.layout_.total_dim() ||
            codec.dec_weight_.rows() != codec.layout_.state_dim ||
            codec.dec_weight_.cols() != codec.latent_dim_)
            throw InputError("codec: stored weights do not match the embedded layout");
    } else {
        const auto enc_w = j.at("encoder_widths").get<std::vector<int>>();
        const auto dec_w = j.at("decoder_widths").get<std::vector<int>>();
        if (enc_w.front() != codec.layout_.total_dim() || enc_w.back() != codec.latent_dim_ ||
            dec_w.front() != codec.latent_dim_ || dec_w.back() != codec.layout_.state_dim)
            throw InputError("codec: stored network widths do not match the embedded layout");
        codec.encoder_ = nn::Mlp(enc_w, nn::Activation::silu);
        codec.decoder_ = nn::Mlp(dec_w, nn::Activation::silu);
        codec.enc_params_ = json_to_vector(j.at("enc_params"));
        codec.dec_params_ = json_to_vector(j.at("dec_params"));
        if (codec.enc_params_.size() != codec.encoder_.n_params() ||
            codec.dec_params_.size() != codec.decoder_.n_params())
            throw InputError("codec: stored parameter count does not match the architecture");
    }
    return codec;
}

json CodecTrainConfig::to_json() const {
    return json{{"kind", kind == LatentCodec::Kind::linear ? "linear" : "dense"},
                {"latent_dim", latent_dim},
                {"hidden_width", hidden_width},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"learning_rate", learning_rate},
                {"weight_decay", weight_decay},
                {"modality_dropout", modality_dropout},
                {"reconstruction_bound", reconstruction_bound},
                {"seed", seed}};
}

CodecTrainConfig CodecTrainConfig::from_json(const json& j) {
    CodecTrainConfig c;
    if (j.contains("kind")) {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "linear")
            c.kind = LatentCodec::Kind::linear;
        else if (kind == "dense")
            c.kind = LatentCodec::Kind::dense;
        else
            throw ConfigError("codec config: unknown kind '" + kind + "'");
    }
    if (j.contains("latent_dim")) c.latent_dim = j.at("latent_dim").get<int>();
    if (j.contains("hidden_width")) c.hidden_width = j.at("hidden_width").get<int>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("modality_dropout")) c.modality_dropout = j.at("modality_dropout").get<double>();
    if (j.contains("reconstruction_bound"))
        c.reconstruction_bound = j.at("reconstruction_bound").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (c.latent_dim < 0 || c.hidden_width <= 0 || c.epochs <= 0 || c.batch_size <= 0 ||
        c.learning_rate <= 0.0 || c.weight_decay < 0.0 || c.modality_dropout < 0.0 ||
        c.modality_dropout > 1.0 || c.reconstruction_bound <= 0.0)
        throw ConfigError("codec config: value out of range");
    return c;
}

LatentCodec fit_linear_codec(const Eigen::MatrixXd& dataset, const ChannelLayout& layout,
                             int latent_dim, bool* rank_deficient) {
    if (dataset.cols() == 0) throw InputError("fit_linear_codec: empty dataset");
    if (dataset.rows() != layout.total_dim())
        throw InputError("fit_linear_codec: dataset has " + std::to_string(dataset.rows()) +
                         " channels, layout expects " + std::to_string(layout.total_dim()));
    if (latent_dim <= 0 || latent_dim > dataset.rows())
        throw InputError("fit_linear_codec: latent_dim must be in [1, total_dim]");

    LatentCodec codec;
    codec.kind_ = LatentCodec::Kind::linear;
    codec.layout_ = layout;
    codec.latent_dim_ = latent_dim;
    codec.input_mean_ = dataset.rowwise().mean();
    codec.state_mean_ = codec.input_mean_.head(layout.state_dim);

    const Eigen::MatrixXd centered = dataset.colwise() - codec.input_mean_;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU);
    codec.enc_weight_ = svd.matrixU().leftCols(latent_dim).transpose();

    const double top = svd.singularValues()[0];
    const Eigen::Index used = std::min<Eigen::Index>(latent_dim, svd.singularValues().size());
    if (rank_deficient != nullptr)
        *rank_deficient =
            top <= 0.0 || svd.singularValues()[used - 1] <= 1e-12 * std::max(1.0, top);

    // Decoder: least squares from latents onto the centered state channels.
    const Eigen::MatrixXd z = codec.enc_weight_ * centered;
    const Eigen::MatrixXd xc = centered.topRows(layout.state_dim);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(z * z.transpose());
    codec.dec_weight_ = cod.solve(z * xc.transpose()).transpose();
    return codec;
}

namespace {

/// Relative L2 reconstruction error on state channels over a validation block.
double validation_error(const LatentCodec& codec, const Eigen::MatrixXd& inputs) {
    const Eigen::MatrixXd states = inputs.topRows(codec.state_dim());
    const Eigen::MatrixXd recon = codec.decode(codec.encode_assembled(inputs));
    const double denom = std::max(states.norm(), 1e-12);
    return (recon - states).norm() / denom;
}

}  // namespace

LatentCodec train_codec(const Eigen::MatrixXd& dataset, const ChannelLayout& layout,
                        const CodecTrainConfig& config, CodecTrainResult* result) {
    if (dataset.cols() == 0) throw InputError("train_codec: empty dataset");
    if (dataset.rows() != layout.total_dim())
        throw InputError("train_codec: dataset has " + std::to_string(dataset.rows()) +
                         " channels, layout expects " + std::to_string(layout.total_dim()));
    int latent_dim = config.latent_dim;
    if (latent_dim == 0) latent_dim = std::max(1, layout.state_dim / 4);

    // Hold out the trailing quarter (at least one column) for validation.
    const Eigen::Index n = dataset.cols();
    const Eigen::Index n_val = std::max<Eigen::Index>(1, n / 4);
    const Eigen::Index n_train = std::max<Eigen::Index>(1, n - n_val);
    const Eigen::MatrixXd val = dataset.rightCols(n - n_train);

    if (config.kind == LatentCodec::Kind::linear) {
        LatentCodec codec = fit_linear_codec(dataset, layout, latent_dim);
        if (result != nullptr) {
            result->loss_history.clear();
            result->validation_error = validation_error(codec, val);
            result->within_bound = result->validation_error <= config.reconstruction_bound;
        }
        return codec;
    }

    LatentCodec codec;
    codec.kind_ = LatentCodec::Kind::dense;
    codec.layout_ = layout;
    codec.latent_dim_ = latent_dim;
    codec.input_mean_ = dataset.rowwise().mean();
    codec.state_mean_ = codec.input_mean_.head(layout.state_dim);
    codec.encoder_ =
        nn::Mlp(dense_widths(layout.total_dim(), config.hidden_width, latent_dim),
                nn::Activation::silu);
    codec.decoder_ =
        nn::Mlp(dense_widths(latent_dim, config.hidden_width, layout.state_dim),
                nn::Activation::silu);
    NoiseSource init_rng(config.seed, 0);
    codec.enc_params_ = codec.encoder_.init_params(init_rng);
    codec.dec_params_ = codec.decoder_.init_params(init_rng);

    const Eigen::MatrixXd train = dataset.leftCols(n_train);
    const int batch = std::min<int>(config.batch_size, static_cast<int>(n_train));
    const int batches_per_epoch =
        static_cast<int>((n_train + batch - 1) / batch);
    const int total_steps = config.epochs * batches_per_epoch;
    nn::AdamW enc_opt(static_cast<int>(codec.enc_params_.size()), config.learning_rate,
                      config.weight_decay, total_steps);
    nn::AdamW dec_opt(static_cast<int>(codec.dec_params_.size()), config.learning_rate,
                      config.weight_decay, total_steps);
    NoiseSource rng(config.seed, 1);

    const int flags_offset = layout.total_dim() - layout.n_modalities();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);
    if (result != nullptr) result->loss_history.clear();

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // Fisher-Yates over the training columns.
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
            std::swap(order[i - 1], order[std::min(j, i - 1)]);
        }
        double epoch_loss = 0.0;
        for (int b = 0; b < batches_per_epoch; ++b) {
            const Eigen::Index lo = static_cast<Eigen::Index>(b) * batch;
            const Eigen::Index bs = std::min<Eigen::Index>(batch, n_train - lo);
            Eigen::MatrixXd xb(layout.total_dim(), bs);
            for (Eigen::Index c = 0; c < bs; ++c) xb.col(c) = train.col(order[lo + c]);

            // Modality dropout: mean-fill the block and clear its flag.
            int offset = layout.state_dim;
            for (int k = 0; k < layout.n_modalities(); ++k) {
                const int len = layout.modalities[k].length;
                for (Eigen::Index c = 0; c < bs; ++c) {
                    if (rng.uniform() < config.modality_dropout) {
                        xb.col(c).segment(offset, len) =
                            codec.input_mean_.segment(offset, len);
                        xb(flags_offset + k, c) = 0.0;
                    }
                }
                offset += len;
            }

            const Eigen::MatrixXd centered = xb.colwise() - codec.input_mean_;
            nn::Mlp::Cache enc_cache, dec_cache;
            const Eigen::MatrixXd z = codec.encoder_.forward(codec.enc_params_, centered,
                                                             &enc_cache);
            const Eigen::MatrixXd recon =
                codec.decoder_.forward(codec.dec_params_, z, &dec_cache);
            const Eigen::MatrixXd target =
                (xb.topRows(layout.state_dim).colwise() - codec.state_mean_);
            const Eigen::MatrixXd resid = recon - target;
            const double loss = resid.squaredNorm() / static_cast<double>(bs);
            if (!std::isfinite(loss) || loss > 1e6)
                throw TrainingError("train_codec: loss diverged", epoch);
            epoch_loss += loss * static_cast<double>(bs);

            Eigen::VectorXd enc_grad = Eigen::VectorXd::Zero(codec.enc_params_.size());
            Eigen::VectorXd dec_grad = Eigen::VectorXd::Zero(codec.dec_params_.size());
            const Eigen::MatrixXd d_recon = 2.0 * resid / static_cast<double>(bs);
            const Eigen::MatrixXd d_z =
                codec.decoder_.backward(codec.dec_params_, dec_cache, d_recon, dec_grad);
            codec.encoder_.backward(codec.enc_params_, enc_cache, d_z, enc_grad);
            enc_opt.step(codec.enc_params_, enc_grad);
            dec_opt.step(codec.dec_params_, dec_grad);
        }
        if (result != nullptr)
            result->loss_history.push_back(epoch_loss / static_cast<double>(n_train));
    }

    if (result != nullptr) {
        result->validation_error = validation_error(codec, val);
        result->within_bound = result->validation_error <= config.reconstruction_bound;
    }
    return codec;
}

}  // namespace scoreda
