#pragma once

#include "xmetra/crf.hpp"
#include "xmetra/encoder.hpp"

namespace xmetra {

// ------------------------------------------------ joint intent + slot model

struct IntentSlotConfig {
    EncoderConfig encoder;
    std::size_t num_intents = 0;
    std::size_t num_slot_labels = 0;  // BIO tags plus O

    void validate() const;
};

ModelState init_intent_slot(const IntentSlotConfig& cfg, Rng& rng);

struct MtodExample {
    std::vector<std::size_t> token_ids;  // utterance tokens, CLS not included
    std::size_t intent = 0;
    std::vector<std::size_t> slot_ids;   // aligned to token_ids
};

struct IntentSlotOut {
    Tensor intent_logits;   // [1, num_intents]
    Tensor slot_emissions;  // [len, num_slot_labels]
    bool truncated = false;
};

IntentSlotOut intent_slot_forward(const BoundParams& params, const IntentSlotConfig& cfg,
                                  std::span<const std::size_t> token_ids,
                                  const ForwardMode& mode);

// Intent cross-entropy plus CRF negative log-likelihood for one example.
Tensor mtod_example_loss(const BoundParams& params, const IntentSlotConfig& cfg,
                         const MtodExample& ex, const ForwardMode& mode);

// Mean over the batch of [intent CE + slot CRF NLL].
Tensor joint_mtod_loss(const BoundParams& params, const IntentSlotConfig& cfg,
                       std::span<const MtodExample> batch, const ForwardMode& mode);

struct MtodPrediction {
    std::size_t intent = 0;
    std::vector<std::size_t> slot_ids;
};

MtodPrediction mtod_predict(const ModelState& state, const IntentSlotConfig& cfg,
                            std::span<const std::size_t> token_ids);

// ----------------------------------------------------- extractive QA model

struct QaConfig {
    EncoderConfig encoder;
    std::size_t max_question_len = 30;
    std::size_t max_answer_len = 30;  // decode-time span cap
    std::size_t sep_token_id = 1;

    void validate() const;
};

ModelState init_qa(const QaConfig& cfg, Rng& rng);

struct QaExample {
    std::vector<std::size_t> question_ids;
    std::vector<std::size_t> context_ids;
    std::size_t answer_start_tok = 0;  // token span within the context
    std::size_t answer_end_tok = 0;    // inclusive
};

struct QaForwardOut {
    Tensor start_logits;  // [1, packed_len]; non-context positions pushed to -1e9
    Tensor end_logits;
    std::size_t context_begin = 0;
    std::size_t context_len = 0;  // decodable positions
    bool truncated = false;
};

// Packs [CLS] question [SEP] context (question capped, whole sequence
// truncated to the encoder limit) and scores every position.
QaForwardOut qa_forward(const BoundParams& params, const QaConfig& cfg,
                        std::span<const std::size_t> question_ids,
                        std::span<const std::size_t> context_ids, const ForwardMode& mode);

struct QaLossOut {
    Tensor loss;
    std::size_t used = 0;      // examples whose gold span survived truncation
    std::size_t excluded = 0;  // dropped from the mean
};

// Mean of start CE + end CE over surviving examples. When every gold span is
// truncated away the loss is a detached zero and used == 0.
QaLossOut qa_loss(const BoundParams& params, const QaConfig& cfg,
                  std::span<const QaExample> batch, const ForwardMode& mode);

struct QaSpanPrediction {
    std::size_t start_tok = 0;  // relative to the context
    std::size_t end_tok = 0;    // inclusive
};

// Best (start, end) pair with start <= end < start + max_answer_len.
QaSpanPrediction qa_decode(const ModelState& state, const QaConfig& cfg,
                           std::span<const std::size_t> question_ids,
                           std::span<const std::size_t> context_ids);

}  // namespace xmetra
