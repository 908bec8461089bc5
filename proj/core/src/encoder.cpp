#include "xmetra/encoder.hpp"

#include <cmath>

#include "xmetra/ops.hpp"

namespace xmetra {

void EncoderConfig::validate() const {
    if (vocab_size == 0) throw ConfigError("encoder: vocab_size must be positive");
    if (embed_dim == 0 || hidden_dim == 0) throw ConfigError("encoder: zero layer width");
    if (num_layers == 0) throw ConfigError("encoder: num_layers must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("encoder: dropout_rate must be in [0, 1)");
    if (max_seq_len == 0) throw ConfigError("encoder: max_seq_len must be positive");
    if (cls_token_id >= vocab_size) throw ConfigError("encoder: cls_token_id out of vocab");
}

namespace {

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from(std::move(shape), std::move(v));
}

std::string layer_w(std::size_t i) { return "encoder.l" + std::to_string(i) + ".w"; }
std::string layer_b(std::size_t i) { return "encoder.l" + std::to_string(i) + ".b"; }

}  // namespace

ModelState init_encoder(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelState state;
    state.add("encoder.embed", uniform_init({cfg.vocab_size, cfg.embed_dim}, 0.1, rng));
    std::size_t in = cfg.embed_dim;
    for (std::size_t i = 1; i <= cfg.num_layers; ++i) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in + cfg.hidden_dim));
        state.add(layer_w(i), uniform_init({in, cfg.hidden_dim}, bound, rng));
        state.add(layer_b(i), Tensor::zeros({cfg.hidden_dim}));
        in = cfg.hidden_dim;
    }
    return state;
}

std::size_t encoder_block_count(const EncoderConfig& cfg) { return cfg.num_layers + 1; }

std::vector<std::string> encoder_block_params(const EncoderConfig& cfg, std::size_t block_id) {
    if (block_id >= encoder_block_count(cfg))
        throw ConfigError("encoder: unknown block id " + std::to_string(block_id));
    if (block_id == 0) return {"encoder.embed"};
    return {layer_w(block_id), layer_b(block_id)};
}

FreezeMask freeze_layers(const EncoderConfig& cfg, const std::set<std::size_t>& block_ids) {
    FreezeMask mask;
    for (std::size_t id : block_ids)
        for (const std::string& name : encoder_block_params(cfg, id)) mask.insert(name);
    return mask;
}

EncodeResult encode(const BoundParams& params, const EncoderConfig& cfg,
                    std::span<const std::size_t> token_ids, const ForwardMode& mode) {
    if (token_ids.empty()) throw InputError("encode: empty token sequence");
    for (std::size_t id : token_ids)
        if (id >= cfg.vocab_size)
            throw InputError("encode: token id " + std::to_string(id) + " out of vocab of size " +
                             std::to_string(cfg.vocab_size));

    EncodeResult result;
    std::vector<std::size_t> ids(token_ids.begin(), token_ids.end());
    if (ids.size() > cfg.max_seq_len) {
        ids.resize(cfg.max_seq_len);
        result.truncated = true;
    }
    if (cfg.pooling == Pooling::FirstToken && ids[0] != cfg.cls_token_id)
        throw InputError("encode: first-token pooling requires the sequence to start with the CLS id");

    Tensor x = embedding(params.at("encoder.embed"), ids);
    const std::size_t len = ids.size();
    for (std::size_t i = 1; i <= cfg.num_layers; ++i) {
        x = tanh(add(matmul(x, params.at("encoder.l" + std::to_string(i) + ".w")),
                     params.at("encoder.l" + std::to_string(i) + ".b")));
        if (mode.training && cfg.dropout_rate > 0.0) {
            // Inverted dropout with a replayable per-layer mask.
            Rng mask_rng = Rng::derive(mode.dropout_seed, i);
            const double keep = 1.0 - cfg.dropout_rate;
            std::vector<double> mask(x.size());
            for (double& m : mask) m = mask_rng.uniform() < keep ? 1.0 / keep : 0.0;
            x = mul(x, Tensor::from(x.shape(), std::move(mask)));
        }
    }
    result.hidden = x;
    if (cfg.pooling == Pooling::FirstToken) {
        result.pooled = embedding(x, {0});
    } else {
        Tensor ones = Tensor::full({1, len}, 1.0);
        result.pooled = scale(matmul(ones, x), 1.0 / static_cast<double>(len));
    }
    return result;
}

}  // namespace xmetra
