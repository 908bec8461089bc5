#pragma once

#include <set>
#include <span>

#include "xmetra/optim.hpp"
#include "xmetra/rng.hpp"

namespace xmetra {

enum class Pooling { FirstToken, Mean };

// Small trainable encoder: embedding lookup plus a tanh feed-forward stack.
// Stands behind the same contract a pretrained sentence encoder would fill.
struct EncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 16;
    std::size_t hidden_dim = 32;
    std::size_t num_layers = 1;
    Pooling pooling = Pooling::FirstToken;
    double dropout_rate = 0.3;
    std::size_t max_seq_len = 384;
    std::size_t cls_token_id = 0;

    void validate() const;
};

// Parameters live under "encoder.*" in the model state.
ModelState init_encoder(const EncoderConfig& cfg, Rng& rng);

// Freezable blocks: block 0 = embedding table, block i = feed-forward layer i.
std::size_t encoder_block_count(const EncoderConfig& cfg);
std::vector<std::string> encoder_block_params(const EncoderConfig& cfg, std::size_t block_id);
// Resolves block ids to a parameter mask; head parameters are never included.
FreezeMask freeze_layers(const EncoderConfig& cfg, const std::set<std::size_t>& block_ids);

struct EncodeResult {
    Tensor hidden;  // [len, hidden_dim]
    Tensor pooled;  // [1, hidden_dim]
    bool truncated = false;
};

EncodeResult encode(const BoundParams& params, const EncoderConfig& cfg,
                    std::span<const std::size_t> token_ids, const ForwardMode& mode);

}  // namespace xmetra
