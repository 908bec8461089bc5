#include "xmetra/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xmetra/ops.hpp"

namespace xmetra {

namespace {

constexpr double kMaskedLogit = -1e9;

Tensor linear_head(const BoundParams& params, const Tensor& x, const std::string& prefix) {
    return add(matmul(x, params.at(prefix + ".w")), params.at(prefix + ".b"));
}

void add_head(ModelState& state, const std::string& prefix, std::size_t in, std::size_t out,
              Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(in * out);
    for (double& v : w) v = rng.uniform(-bound, bound);
    state.add(prefix + ".w", Tensor::from({in, out}, std::move(w)));
    state.add(prefix + ".b", Tensor::zeros({out}));
}

}  // namespace

// ------------------------------------------------------------ intent + slot

void IntentSlotConfig::validate() const {
    encoder.validate();
    if (num_intents == 0) throw ConfigError("intent_slot: num_intents must be positive");
    if (num_slot_labels == 0) throw ConfigError("intent_slot: num_slot_labels must be positive");
}

ModelState init_intent_slot(const IntentSlotConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelState state = init_encoder(cfg.encoder, rng);
    add_head(state, "intent", cfg.encoder.hidden_dim, cfg.num_intents, rng);
    add_head(state, "slot", cfg.encoder.hidden_dim, cfg.num_slot_labels, rng);
    add_crf_params(state, cfg.num_slot_labels, rng);
    return state;
}

IntentSlotOut intent_slot_forward(const BoundParams& params, const IntentSlotConfig& cfg,
                                  std::span<const std::size_t> token_ids,
                                  const ForwardMode& mode) {
    if (token_ids.empty()) throw InputError("intent_slot_forward: empty utterance");
    const bool use_cls = cfg.encoder.pooling == Pooling::FirstToken;
    std::vector<std::size_t> ids;
    ids.reserve(token_ids.size() + 1);
    if (use_cls) ids.push_back(cfg.encoder.cls_token_id);
    ids.insert(ids.end(), token_ids.begin(), token_ids.end());

    EncodeResult enc = encode(params, cfg.encoder, ids, mode);
    const std::size_t hidden_rows = enc.hidden.shape()[0];

    IntentSlotOut out;
    out.truncated = enc.truncated;
    out.intent_logits = linear_head(params, enc.pooled, "intent");
    Tensor token_rows = enc.hidden;
    if (use_cls) {
        std::vector<std::size_t> rows(hidden_rows - 1);
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i + 1;
        if (rows.empty()) throw InputError("intent_slot_forward: utterance truncated to nothing");
        token_rows = embedding(enc.hidden, rows);
    }
    out.slot_emissions = linear_head(params, token_rows, "slot");
    return out;
}

Tensor mtod_example_loss(const BoundParams& params, const IntentSlotConfig& cfg,
                         const MtodExample& ex, const ForwardMode& mode) {
    if (ex.slot_ids.size() != ex.token_ids.size())
        throw InputError("mtod loss: slots not aligned with tokens");
    if (ex.intent >= cfg.num_intents)
        throw InputError("mtod loss: intent id out of range");
    IntentSlotOut fwd = intent_slot_forward(params, cfg, ex.token_ids, mode);
    Tensor intent_ce = nll_pick(log_softmax(fwd.intent_logits), {ex.intent});
    std::vector<std::size_t> slots = ex.slot_ids;
    slots.resize(fwd.slot_emissions.shape()[0]);  // follow truncation
    Tensor slot_nll = crf_nll(fwd.slot_emissions, crf_view(params), slots);
    return add(reshape(intent_ce, {1}), slot_nll);
}

Tensor joint_mtod_loss(const BoundParams& params, const IntentSlotConfig& cfg,
                       std::span<const MtodExample> batch, const ForwardMode& mode) {
    if (batch.empty()) throw InputError("joint_mtod_loss: empty batch");
    Tensor total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        ForwardMode ex_mode{mode.training, mix64(mode.dropout_seed, i)};
        Tensor loss = mtod_example_loss(params, cfg, batch[i], ex_mode);
        total = total.defined() ? add(total, loss) : loss;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

MtodPrediction mtod_predict(const ModelState& state, const IntentSlotConfig& cfg,
                            std::span<const std::size_t> token_ids) {
    BoundParams params = bind_eval(state);
    IntentSlotOut fwd = intent_slot_forward(params, cfg, token_ids, ForwardMode{});
    MtodPrediction pred;
    const std::vector<double>& logits = fwd.intent_logits.values();
    pred.intent = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    pred.slot_ids = viterbi_decode(fwd.slot_emissions, crf_view(params));
    return pred;
}

// -------------------------------------------------------------- span QA

void QaConfig::validate() const {
    encoder.validate();
    if (max_question_len == 0) throw ConfigError("qa: max_question_len must be positive");
    if (max_answer_len == 0) throw ConfigError("qa: max_answer_len must be positive");
    if (sep_token_id >= encoder.vocab_size) throw ConfigError("qa: sep_token_id out of vocab");
    // CLS + one question token + SEP + one context token must fit.
    if (encoder.max_seq_len < 4) throw ConfigError("qa: max_seq_len too small to pack anything");
}

ModelState init_qa(const QaConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelState state = init_encoder(cfg.encoder, rng);
    add_head(state, "qa.span", cfg.encoder.hidden_dim, 2, rng);
    return state;
}

QaForwardOut qa_forward(const BoundParams& params, const QaConfig& cfg,
                        std::span<const std::size_t> question_ids,
                        std::span<const std::size_t> context_ids, const ForwardMode& mode) {
    if (context_ids.empty()) throw InputError("qa_forward: empty context");
    if (question_ids.empty()) throw InputError("qa_forward: empty question");

    QaForwardOut out;
    std::vector<std::size_t> packed;
    packed.push_back(cfg.encoder.cls_token_id);
    const std::size_t qlen = std::min(question_ids.size(), cfg.max_question_len);
    out.truncated = qlen < question_ids.size();
    packed.insert(packed.end(), question_ids.begin(), question_ids.begin() + qlen);
    packed.push_back(cfg.sep_token_id);
    out.context_begin = packed.size();
    packed.insert(packed.end(), context_ids.begin(), context_ids.end());

    EncodeResult enc = encode(params, cfg.encoder, packed, mode);
    out.truncated = out.truncated || enc.truncated;
    const std::size_t packed_len = enc.hidden.shape()[0];
    if (packed_len <= out.context_begin)
        throw InputError("qa_forward: context fully truncated away");
    out.context_len = packed_len - out.context_begin;

    Tensor logits = transpose(linear_head(params, enc.hidden, "qa.span"));  // [2, packed_len]
    std::vector<double> mask(packed_len, kMaskedLogit);
    for (std::size_t i = out.context_begin; i < packed_len; ++i) mask[i] = 0.0;
    Tensor mask_t = Tensor::from({packed_len}, std::move(mask));
    out.start_logits = add(embedding(logits, {0}), mask_t);
    out.end_logits = add(embedding(logits, {1}), mask_t);
    return out;
}

QaLossOut qa_loss(const BoundParams& params, const QaConfig& cfg,
                  std::span<const QaExample> batch, const ForwardMode& mode) {
    if (batch.empty()) throw InputError("qa_loss: empty batch");
    QaLossOut out;
    Tensor total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const QaExample& ex = batch[i];
        if (ex.answer_end_tok < ex.answer_start_tok ||
            ex.answer_end_tok >= ex.context_ids.size())
            throw InputError("qa_loss: answer span outside context");
        ForwardMode ex_mode{mode.training, mix64(mode.dropout_seed, i)};
        QaForwardOut fwd = qa_forward(params, cfg, ex.question_ids, ex.context_ids, ex_mode);
        if (ex.answer_end_tok >= fwd.context_len) {
            out.excluded += 1;  // gold span truncated away: ignored during training
            continue;
        }
        const std::size_t gold_start = fwd.context_begin + ex.answer_start_tok;
        const std::size_t gold_end = fwd.context_begin + ex.answer_end_tok;
        Tensor ce = add(nll_pick(log_softmax(fwd.start_logits), {gold_start}),
                        nll_pick(log_softmax(fwd.end_logits), {gold_end}));
        total = total.defined() ? add(total, ce) : ce;
        out.used += 1;
    }
    if (out.used == 0) {
        out.loss = Tensor::scalar(0.0);
        return out;
    }
    out.loss = reshape(scale(total, 1.0 / static_cast<double>(out.used)), {1});
    return out;
}

QaSpanPrediction qa_decode(const ModelState& state, const QaConfig& cfg,
                           std::span<const std::size_t> question_ids,
                           std::span<const std::size_t> context_ids) {
    BoundParams params = bind_eval(state);
    QaForwardOut fwd = qa_forward(params, cfg, question_ids, context_ids, ForwardMode{});
    const std::vector<double>& sv = fwd.start_logits.values();
    const std::vector<double>& ev = fwd.end_logits.values();
    QaSpanPrediction best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < fwd.context_len; ++s) {
        const std::size_t max_e = std::min(fwd.context_len, s + cfg.max_answer_len);
        for (std::size_t e = s; e < max_e; ++e) {
            const double score = sv[fwd.context_begin + s] + ev[fwd.context_begin + e];
            if (score > best_score) {
                best_score = score;
                best.start_tok = s;
                best.end_tok = e;
            }
        }
    }
    return best;
}

}  // namespace xmetra
