#include "xmetra/harness.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace xmetra {

namespace fs = std::filesystem;

std::string csv_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::size_t sweep_worker_cap() {
    const char* env = std::getenv("XMETRA_WORKERS");
    if (!env) return 1;
    const long v = std::atol(env);
    return v < 1 ? 1 : static_cast<std::size_t>(v);
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open csv: " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        rows.push_back(std::move(cells));
    }
    return rows;
}

namespace {

constexpr double kPct = 100.0;  // metrics are reported x100 in every CSV

// Runs f(0..n-1), optionally across XMETRA_WORKERS threads. Cell outputs are
// merged by index, so ordering stays deterministic.
template <class F>
void run_cells(std::size_t n, F&& f) {
    const std::size_t cap = std::min(sweep_worker_cap(), n);
    if (cap <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> threads;
    threads.reserve(cap);
    for (std::size_t w = 0; w < cap; ++w) {
        threads.emplace_back([&]() {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    f(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::vector<std::string> tokenize_with_offsets(const std::string& text,
                                               std::vector<std::size_t>& starts,
                                               std::vector<std::size_t>& ends) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= text.size()) break;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        tokens.push_back(text.substr(i, j - i));
        starts.push_back(i);
        ends.push_back(j);
        i = j;
    }
    return tokens;
}

}  // namespace

// ------------------------------------------------------------ configuration

const std::set<std::string>& ExperimentConfig::config_keys() {
    static const std::set<std::string> keys = {
        "task", "baseline", "seeds",
        "data.source_train", "data.target_dev", "data.target_test",
        "synth.vocab_size", "synth.num_intents", "synth.num_slot_types",
        "synth.lexical_overlap", "synth.label_noise", "synth.source_seed", "synth.target_seed",
        "synth.permutation_seed", "synth.min_len", "synth.max_len", "synth.source_lang",
        "synth.target_lang", "synth.source_train_size", "synth.source_dev_size",
        "synth.source_test_size", "synth.target_train_size", "synth.target_dev_size",
        "synth.target_test_size",
        "encoder.embed_dim", "encoder.hidden_dim", "encoder.num_layers", "encoder.pooling",
        "encoder.dropout", "encoder.max_seq_len",
        "qa.max_question_len", "qa.max_answer_len",
        "episodes.k", "episodes.q", "episodes.replacement",
        "meta.n", "meta.alpha", "meta.beta", "meta.batch_size", "meta.total_tasks",
        "meta.fraction", "meta.outer_optimizer", "meta.weight_decay", "meta.window",
        "meta.patience", "meta.min_delta", "meta.eval_every", "meta.dropout",
        "train.batch_size", "train.lr", "train.max_steps", "train.optimizer",
        "train.weight_decay", "train.window", "train.patience", "train.min_delta",
        "train.eval_every",
        "pre.batch_size", "pre.lr", "pre.max_steps",
        "freeze.blocks",
        "sweep.k", "sweep.q", "sweep.fractions", "sweep.freeze",
    };
    return keys;
}

namespace {

OptimizerState::Kind parse_optimizer(const std::string& name) {
    if (name == "adam") return OptimizerState::Kind::Adam;
    if (name == "sgd") return OptimizerState::Kind::Sgd;
    throw ConfigError("config: unknown optimizer '" + name + "' (adam|sgd)");
}

std::set<std::size_t> parse_block_set(const std::string& cell, std::size_t block_count) {
    std::set<std::size_t> blocks;
    if (cell == "none" || cell.empty()) return blocks;
    if (cell == "all") {
        for (std::size_t b = 0; b < block_count; ++b) blocks.insert(b);
        return blocks;
    }
    std::istringstream in(cell);
    std::string item;
    while (std::getline(in, item, '+')) {
        try {
            blocks.insert(static_cast<std::size_t>(std::stoul(item)));
        } catch (const std::exception&) {
            throw ConfigError("config: bad freeze cell '" + cell + "'");
        }
    }
    return blocks;
}

std::string block_set_name(const std::set<std::size_t>& blocks) {
    if (blocks.empty()) return "none";
    std::string out;
    for (std::size_t b : blocks) {
        if (!out.empty()) out += '+';
        out += std::to_string(b);
    }
    return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_kv(const KvConfig& kv) {
    kv.require_known_keys(config_keys());
    ExperimentConfig cfg;

    const std::string task = kv.get_string("task", "mtod");
    if (task == "mtod") cfg.task = Schema::Mtod;
    else if (task == "qa") cfg.task = Schema::Qa;
    else throw ConfigError("config: task must be mtod or qa, got '" + task + "'");

    cfg.baseline = baseline_from_name(kv.get_string("baseline", "x_metra_ada"));
    cfg.seeds = kv.get_uints("seeds", {1, 2, 3});
    if (cfg.seeds.empty()) throw ConfigError("config: seeds list is empty");

    const bool have_paths = kv.has("data.source_train") || kv.has("data.target_dev") ||
                            kv.has("data.target_test");
    bool have_synth = false;
    for (const auto& [key, value] : kv.entries())
        if (key.rfind("synth.", 0) == 0) have_synth = true;
    if (have_paths && have_synth)
        throw ConfigError("config: give either data.* paths or a synth.* spec, not both");
    if (!have_paths && !have_synth)
        throw ConfigError("config: no data source (set data.* paths or a synth.* spec)");
    cfg.use_synthetic = have_synth;
    if (have_paths) {
        cfg.source_train_path = kv.get_string("data.source_train");
        cfg.target_dev_path = kv.get_string("data.target_dev");
        cfg.target_test_path = kv.get_string("data.target_test");
    } else {
        if (cfg.task == Schema::Qa)
            throw ConfigError("config: the synthetic generator covers mtod only; "
                              "QA experiments need data.* paths");
        SyntheticLanguageSpec& s = cfg.synth_source;
        SyntheticLanguageSpec& t = cfg.synth_target;
        s.vocab_size = t.vocab_size = kv.get_uint("synth.vocab_size", 300);
        s.num_intents = t.num_intents = kv.get_uint("synth.num_intents", 6);
        s.num_slot_types = t.num_slot_types = kv.get_uint("synth.num_slot_types", 3);
        s.min_len = t.min_len = kv.get_uint("synth.min_len", 4);
        s.max_len = t.max_len = kv.get_uint("synth.max_len", 10);
        s.base_seed = kv.get_uint("synth.source_seed", 11);
        t.base_seed = kv.get_uint("synth.target_seed", 12);
        t.permutation_seed = kv.get_uint("synth.permutation_seed", 7);
        s.lexical_overlap = 1.0;
        s.label_noise = 0.0;
        t.lexical_overlap = kv.get_double("synth.lexical_overlap", 0.25);
        t.label_noise = kv.get_double("synth.label_noise", 0.05);
        s.language = kv.get_string("synth.source_lang", "en");
        t.language = kv.get_string("synth.target_lang", "xx");
        s.train_size = kv.get_uint("synth.source_train_size", 400);
        s.dev_size = kv.get_uint("synth.source_dev_size", 100);
        s.test_size = kv.get_uint("synth.source_test_size", 200);
        t.train_size = kv.get_uint("synth.target_train_size", 50);
        t.dev_size = kv.get_uint("synth.target_dev_size", 150);
        t.test_size = kv.get_uint("synth.target_test_size", 300);
    }

    cfg.encoder.embed_dim = kv.get_uint("encoder.embed_dim", 24);
    cfg.encoder.hidden_dim = kv.get_uint("encoder.hidden_dim", 32);
    cfg.encoder.num_layers = kv.get_uint("encoder.num_layers", 1);
    cfg.encoder.dropout_rate = kv.get_double("encoder.dropout", 0.3);
    cfg.encoder.max_seq_len = kv.get_uint("encoder.max_seq_len", 384);
    // Mean pooling by default: the feed-forward stand-in has no token mixing,
    // so a first-token summary would carry no sentence content.
    const std::string pooling = kv.get_string("encoder.pooling", "mean");
    if (pooling == "first") cfg.encoder.pooling = Pooling::FirstToken;
    else if (pooling == "mean") cfg.encoder.pooling = Pooling::Mean;
    else throw ConfigError("config: encoder.pooling must be first or mean");

    cfg.max_question_len = kv.get_uint("qa.max_question_len", 30);
    cfg.max_answer_len = kv.get_uint("qa.max_answer_len", 30);

    cfg.meta.episode.k = kv.get_uint("episodes.k", 6);
    cfg.meta.episode.q = kv.get_uint("episodes.q", 6);
    cfg.meta.episode.allow_replacement = kv.get_bool("episodes.replacement", false);
    cfg.meta.schema = cfg.task;

    const bool qa = cfg.task == Schema::Qa;
    cfg.meta.inner_steps = kv.get_uint("meta.n", 5);
    cfg.meta.inner_lr = kv.get_double("meta.alpha", qa ? 3e-5 : 1e-3);
    cfg.meta.outer_lr = kv.get_double("meta.beta", qa ? 3e-5 : 1e-2);
    cfg.meta.task_batch_size = kv.get_uint("meta.batch_size", 4);
    cfg.meta.total_tasks = kv.get_uint("meta.total_tasks", 2500);
    cfg.meta.dev_split_fraction = kv.get_double("meta.fraction", qa ? 0.60 : 0.75);
    cfg.meta.outer_optimizer = parse_optimizer(kv.get_string("meta.outer_optimizer", "adam"));
    cfg.meta.outer_weight_decay = kv.get_double("meta.weight_decay", 1e-3);
    cfg.meta.convergence.window = kv.get_uint("meta.window", 50);
    cfg.meta.convergence.patience = kv.get_uint("meta.patience", 5);
    cfg.meta.convergence.min_delta = kv.get_double("meta.min_delta", 1e-4);
    cfg.meta.eval_every = kv.get_uint("meta.eval_every", 100);
    cfg.meta.train_dropout = kv.get_bool("meta.dropout", true);
    for (std::uint64_t b : kv.get_uints("freeze.blocks", {}))
        cfg.meta.frozen_blocks.insert(static_cast<std::size_t>(b));

    cfg.train.batch_size = kv.get_uint("train.batch_size", 32);
    cfg.train.lr = kv.get_double("train.lr", qa ? 3e-5 : 1e-3);
    cfg.train.max_steps = kv.get_uint("train.max_steps", 2000);
    cfg.train.optimizer = parse_optimizer(kv.get_string("train.optimizer", "adam"));
    cfg.train.weight_decay = kv.get_double("train.weight_decay", 1e-3);
    cfg.train.convergence.window = kv.get_uint("train.window", 50);
    cfg.train.convergence.patience = kv.get_uint("train.patience", 5);
    cfg.train.convergence.min_delta = kv.get_double("train.min_delta", 1e-4);
    cfg.train.eval_every = kv.get_uint("train.eval_every", 100);

    cfg.pre_train = cfg.train;
    cfg.pre_train.batch_size = kv.get_uint("pre.batch_size", 32);
    cfg.pre_train.lr = kv.get_double("pre.lr", cfg.train.lr);
    cfg.pre_train.max_steps = kv.get_uint("pre.max_steps", 2000);

    cfg.sweep_k = kv.get_uints("sweep.k", {1, 3, 6, 9});
    cfg.sweep_q = kv.get_uints("sweep.q", {});
    cfg.downsample_fractions = kv.get_doubles("sweep.fractions", {0.25, 0.5, 0.75, 1.0});
    if (kv.has("sweep.freeze")) {
        const std::size_t blocks = cfg.encoder.num_layers + 1;
        std::istringstream in(kv.get_string("sweep.freeze"));
        std::string cell;
        while (std::getline(in, cell, ';'))
            cfg.freeze_grid.push_back(parse_block_set(cell, blocks));
    }

    cfg.validate();
    return cfg;
}

void ExperimentConfig::validate() const {
    meta.validate();
    train.validate();
    pre_train.validate();
    if (use_synthetic) {
        synth_source.validate();
        synth_target.validate();
    } else if (source_train_path.empty() || target_dev_path.empty() || target_test_path.empty()) {
        throw ConfigError("config: data.source_train, data.target_dev and data.target_test "
                          "are all required in path mode");
    }
    if (seeds.empty()) throw ConfigError("config: seeds list is empty");
    for (double f : downsample_fractions)
        if (f <= 0.0 || f > 1.0)
            throw ConfigError("config: sweep fractions must lie in (0, 1]");
}

// ----------------------------------------------------------- model family

struct Experiment::Family {
    Schema schema = Schema::Mtod;
    Vocab vocab;
    LabelMap intents;
    LabelMap slots;
    IntentSlotConfig mtod_cfg;
    QaConfig qa_cfg;
    std::map<const Corpus*, std::vector<MtodExample>> mtod_feats;
    std::map<const Corpus*, std::vector<QaExample>> qa_feats;
    const Corpus* test = nullptr;
    std::vector<std::string> metric_names;

    const std::vector<MtodExample>& mtod_of(const Corpus* c) const {
        auto it = mtod_feats.find(c);
        if (it == mtod_feats.end()) throw ContractError("family: corpus has no mtod features");
        return it->second;
    }
    const std::vector<QaExample>& qa_of(const Corpus* c) const {
        auto it = qa_feats.find(c);
        if (it == qa_feats.end()) throw ContractError("family: corpus has no qa features");
        return it->second;
    }

    void add_corpus(const Corpus& corpus) {
        if (schema == Schema::Mtod) {
            std::vector<MtodExample> feats;
            feats.reserve(corpus.utterances.size());
            for (const Utterance& u : corpus.utterances) {
                MtodExample ex;
                ex.token_ids = vocab.ids(u.tokens);
                ex.intent = intents.id(u.intent);
                ex.slot_ids.reserve(u.slots.size());
                for (const std::string& tag : u.slots) ex.slot_ids.push_back(slots.id(tag));
                feats.push_back(std::move(ex));
            }
            mtod_feats.emplace(&corpus, std::move(feats));
        } else {
            std::vector<QaExample> feats;
            feats.reserve(corpus.triplets.size());
            for (const QATriplet& t : corpus.triplets) feats.push_back(to_qa_example(t));
            qa_feats.emplace(&corpus, std::move(feats));
        }
    }

    QaExample to_qa_example(const QATriplet& t) const {
        QaExample ex;
        ex.question_ids = vocab.ids(whitespace_tokens(t.question));
        std::vector<std::size_t> starts, ends;
        std::vector<std::string> ctx_tokens = tokenize_with_offsets(t.context, starts, ends);
        ex.context_ids = vocab.ids(ctx_tokens);
        const std::size_t a0 = t.answer_start;
        const std::size_t a1 = t.answer_start + t.answer_text.size();
        std::size_t first = ctx_tokens.size(), last = 0;
        for (std::size_t i = 0; i < ctx_tokens.size(); ++i) {
            if (ends[i] > a0 && first == ctx_tokens.size()) first = i;
            if (starts[i] < a1) last = i;
        }
        if (first >= ctx_tokens.size())
            throw InputError("qa features: answer span is not covered by any token");
        ex.answer_start_tok = first;
        ex.answer_end_tok = std::max(first, last);
        return ex;
    }

    Tensor loss(const BoundParams& params, std::span<const ExampleRef> refs,
                const ForwardMode& mode) const {
        if (refs.empty()) throw ContractError("family loss: empty batch");
        if (schema == Schema::Mtod) {
            std::vector<MtodExample> batch;
            batch.reserve(refs.size());
            for (const ExampleRef& r : refs) batch.push_back(mtod_of(r.corpus)[r.index]);
            return joint_mtod_loss(params, mtod_cfg, batch, mode);
        }
        std::vector<QaExample> batch;
        batch.reserve(refs.size());
        for (const ExampleRef& r : refs) batch.push_back(qa_of(r.corpus)[r.index]);
        return qa_loss(params, qa_cfg, batch, mode).loss;
    }

    std::map<std::string, double> evaluate(const ModelState& theta) const {
        std::map<std::string, double> out;
        if (schema == Schema::Mtod) {
            const auto& feats = mtod_of(test);
            std::vector<std::size_t> ipred, igold;
            std::vector<std::vector<std::string>> spred, sgold;
            for (std::size_t i = 0; i < feats.size(); ++i) {
                MtodPrediction p = mtod_predict(theta, mtod_cfg, feats[i].token_ids);
                ipred.push_back(p.intent);
                igold.push_back(feats[i].intent);
                std::vector<std::string> pred_tags, gold_tags;
                for (std::size_t id : p.slot_ids) pred_tags.push_back(slots.name(id));
                const auto& gold = test->utterances[i].slots;
                for (std::size_t j = 0; j < pred_tags.size(); ++j) gold_tags.push_back(gold[j]);
                spred.push_back(std::move(pred_tags));
                sgold.push_back(std::move(gold_tags));
            }
            out["intent_acc"] = intent_accuracy(ipred, igold);
            out["slot_f1"] = slot_f1(spred, sgold).f1;
            return out;
        }
        const auto& feats = qa_of(test);
        double f1 = 0.0, em = 0.0;
        for (std::size_t i = 0; i < feats.size(); ++i) {
            const QaExample& ex = feats[i];
            QaSpanPrediction span = qa_decode(theta, qa_cfg, ex.question_ids, ex.context_ids);
            std::vector<std::size_t> s, e;
            std::vector<std::string> ctx =
                tokenize_with_offsets(test->triplets[i].context, s, e);
            std::string pred;
            for (std::size_t j = span.start_tok; j <= span.end_tok && j < ctx.size(); ++j) {
                if (!pred.empty()) pred += ' ';
                pred += ctx[j];
            }
            QaScore score = qa_f1_em(pred, test->triplets[i].answer_text);
            f1 += score.f1;
            em += score.em;
        }
        const double n = static_cast<double>(feats.size());
        out["f1"] = f1 / n;
        out["em"] = em / n;
        return out;
    }

    ModelState init(Rng& rng) const {
        if (schema == Schema::Mtod) return init_intent_slot(mtod_cfg, rng);
        return init_qa(qa_cfg, rng);
    }
};

// --------------------------------------------------------------- experiment

Experiment::Experiment(const ExperimentConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    data_ = std::make_shared<ExperimentData>();
    data_->schema = cfg_.task;
    if (cfg_.use_synthetic) {
        SyntheticPair pair = generate_synthetic_pair(cfg_.synth_source, cfg_.synth_target);
        data_->source_train = std::move(pair.source_train);
        data_->target_dev = std::move(pair.target_dev);
        data_->target_test = std::move(pair.target_test);
    } else {
        data_->source_train = load_corpus(cfg_.source_train_path, cfg_.task);
        data_->source_train.split = Split::Train;
        data_->target_dev = load_corpus(cfg_.target_dev_path, cfg_.task);
        data_->target_dev.split = Split::Dev;
        data_->target_test = load_corpus(cfg_.target_test_path, cfg_.task);
        data_->target_test.split = Split::Test;
    }

    family_ = std::make_shared<Family>();
    family_->schema = cfg_.task;
    const std::vector<const Corpus*> all = {&data_->source_train, &data_->target_dev,
                                            &data_->target_test};
    family_->vocab = Vocab::build(all);
    if (cfg_.task == Schema::Mtod) {
        std::vector<std::string> intents, slots;
        for (const Corpus* c : all) {
            intents.insert(intents.end(), c->intent_labels.begin(), c->intent_labels.end());
            slots.insert(slots.end(), c->slot_labels.begin(), c->slot_labels.end());
        }
        family_->intents = LabelMap::build(intents);
        family_->slots = LabelMap::build(slots);
        family_->mtod_cfg.encoder = cfg_.encoder;
        family_->mtod_cfg.encoder.vocab_size = family_->vocab.size();
        family_->mtod_cfg.encoder.cls_token_id = Vocab::kCls;
        family_->mtod_cfg.num_intents = family_->intents.size();
        family_->mtod_cfg.num_slot_labels = family_->slots.size();
        family_->metric_names = {"intent_acc", "slot_f1"};
    } else {
        family_->qa_cfg.encoder = cfg_.encoder;
        family_->qa_cfg.encoder.vocab_size = family_->vocab.size();
        family_->qa_cfg.encoder.cls_token_id = Vocab::kCls;
        family_->qa_cfg.sep_token_id = Vocab::kSep;
        family_->qa_cfg.max_question_len = cfg_.max_question_len;
        family_->qa_cfg.max_answer_len = cfg_.max_answer_len;
        family_->metric_names = {"f1", "em"};
    }
    for (const Corpus* c : all) family_->add_corpus(*c);
    family_->test = &data_->target_test;

    corpora_.source_train = &data_->source_train;
    corpora_.target_dev = &data_->target_dev;
    corpora_.target_test = &data_->target_test;

    auto family = family_;  // closures keep the family (and data) alive
    auto data = data_;
    driver_.init = [family](Rng& rng) { return family->init(rng); };
    driver_.loss = [family, data](const BoundParams& p, std::span<const ExampleRef> refs, Tape&,
                                  const ForwardMode& mode) { return family->loss(p, refs, mode); };
    driver_.eval = [family, data](const ModelState& theta) { return family->evaluate(theta); };
    driver_.primary_metric = cfg_.task == Schema::Mtod ? "intent_acc" : "f1";
    const EncoderConfig& enc =
        cfg_.task == Schema::Mtod ? family_->mtod_cfg.encoder : family_->qa_cfg.encoder;
    driver_.frozen = freeze_layers(enc, cfg_.meta.frozen_blocks);
    pre_driver_ = driver_;
    pre_driver_.frozen.clear();  // the PRE phase always trains unfrozen
}

const std::vector<std::string>& Experiment::metric_names() const {
    return family_->metric_names;
}

std::map<std::string, double> Experiment::evaluate(const ModelState& theta) const {
    return family_->evaluate(theta);
}

ModelState Experiment::train_pre(std::uint64_t seed, ProvenanceCounter* provenance) const {
    BaselineResult r = run_baseline(BaselineKind::Pre, corpora_, cfg_.meta, cfg_.pre_train,
                                    pre_driver_, seed, nullptr, provenance);
    return r.theta;
}

namespace {

bool needs_pre(BaselineKind kind) {
    return kind == BaselineKind::Ft || kind == BaselineKind::FtWithEn ||
           kind == BaselineKind::XMetra || kind == BaselineKind::XMetraAda;
}

bool is_meta(BaselineKind kind) {
    return kind == BaselineKind::XMetra || kind == BaselineKind::XMetraAda;
}

// Best few-shot metric for the meta schemes, final checkpoint otherwise.
const CheckpointEval* select_checkpoint(BaselineKind kind,
                                        const std::vector<StageReport>& reports,
                                        const std::string& primary_metric) {
    const CheckpointEval* best = nullptr;
    for (const StageReport& report : reports) {
        for (const CheckpointEval& c : report.checkpoints) {
            if (!is_meta(kind)) {
                best = &c;  // ends at the final checkpoint
                continue;
            }
            if (!best || c.metrics.at(primary_metric) > best->metrics.at(primary_metric))
                best = &c;
        }
    }
    return best;
}

}  // namespace

Experiment::RunOut Experiment::run_one(BaselineKind kind, std::uint64_t seed,
                                       const ModelState* theta_pre,
                                       ProvenanceCounter* provenance) const {
    ModelState pre_local;
    if (!theta_pre && needs_pre(kind)) {
        pre_local = train_pre(seed, provenance);
        theta_pre = &pre_local;
    }
    BaselineResult r = run_baseline(kind, corpora_, cfg_.meta, cfg_.train, driver_, seed,
                                    theta_pre, provenance);
    RunOut out;
    out.reports = std::move(r.reports);
    const CheckpointEval* pick = select_checkpoint(kind, out.reports, driver_.primary_metric);
    if (pick) {
        out.theta = pick->snapshot;
        out.metrics = pick->metrics;
    } else {
        out.theta = std::move(r.theta);
        out.metrics = evaluate(out.theta);
    }
    return out;
}

Experiment::RunOut Experiment::run_downsampled(BaselineKind kind, std::uint64_t seed,
                                               double fraction,
                                               const ModelState* theta_pre) const {
    Pool pool = subsample_pool(Pool::whole(data_->target_dev), fraction,
                               mix64(seed, seed_tag("downsample")));
    if (pool.size() == 0) throw SamplingError("downsample: empty target pool");
    // Materialized copy so the scheme sees an ordinary dev corpus.
    Corpus reduced;
    reduced.schema = data_->target_dev.schema;
    reduced.split = Split::Dev;
    reduced.language = data_->target_dev.language;
    reduced.id = data_->target_dev.id;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (reduced.schema == Schema::Mtod)
            reduced.utterances.push_back(data_->target_dev.utterances[pool.indices[i]]);
        else
            reduced.triplets.push_back(data_->target_dev.triplets[pool.indices[i]]);
    }
    reduced.rebuild_inventories();
    family_->add_corpus(reduced);  // feature cache for the temporary corpus

    ModelState pre_local;
    if (!theta_pre && needs_pre(kind)) {
        pre_local = train_pre(seed, nullptr);
        theta_pre = &pre_local;
    }
    TaskCorpora corpora = corpora_;
    corpora.target_dev = &reduced;
    BaselineResult r =
        run_baseline(kind, corpora, cfg_.meta, cfg_.train, driver_, seed, theta_pre, nullptr);
    RunOut out;
    out.reports = std::move(r.reports);
    const CheckpointEval* pick = select_checkpoint(kind, out.reports, driver_.primary_metric);
    if (pick) {
        out.theta = pick->snapshot;
        out.metrics = pick->metrics;
    } else {
        out.theta = std::move(r.theta);
        out.metrics = evaluate(out.theta);
    }
    if (reduced.schema == Schema::Mtod) family_->mtod_feats.erase(&reduced);
    else family_->qa_feats.erase(&reduced);
    return out;
}

// ----------------------------------------------------------------- commands

namespace {

void ensure_dir(const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out << text;
    if (!out) throw IoError("failed writing file: " + path);
}

void write_config_echo(const KvConfig& raw, const std::string& out_dir) {
    write_text(out_dir + "/config_echo.txt", raw.echo());
}

void write_seed_reports(const Experiment& exp, BaselineKind kind, std::uint64_t seed,
                        const std::vector<StageReport>& reports, const std::string& out_dir) {
    const bool meta = is_meta(kind);
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const std::string suffix = meta ? "_stage" + std::to_string(i + 1) : "_train";
        const std::string path = out_dir + "/" + baseline_name(kind) + "_seed" +
                                 std::to_string(seed) + suffix + ".csv";
        write_stage_csv(reports[i], exp.metric_names(), path);
    }
}

void write_summary(const Experiment& exp, BaselineKind kind,
                   const std::vector<Experiment::RunOut>& outs, const std::string& out_dir) {
    std::ostringstream csv;
    csv << "model,language,metric,mean,std,seeds\n";
    for (const std::string& metric : exp.metric_names()) {
        std::vector<double> values;
        for (const auto& out : outs) values.push_back(out.metrics.at(metric) * kPct);
        EvalResult agg = aggregate_seeds(metric, values);
        csv << baseline_name(kind) << ',' << exp.corpora().target_test->language << ','
            << metric << ',' << csv_num(agg.mean) << ',' << csv_num(agg.stddev) << ','
            << agg.support << '\n';
    }
    write_text(out_dir + "/summary.csv", csv.str());
}

}  // namespace

void run_experiment_command(const ExperimentConfig& cfg, const KvConfig& raw,
                            const std::string& out_dir) {
    ensure_dir(out_dir);
    write_config_echo(raw, out_dir);
    Experiment exp(cfg);
    std::vector<Experiment::RunOut> outs;
    outs.reserve(cfg.seeds.size());
    for (std::uint64_t seed : cfg.seeds) {
        Experiment::RunOut out = exp.run_one(cfg.baseline, seed);
        write_seed_reports(exp, cfg.baseline, seed, out.reports, out_dir);
        outs.push_back(std::move(out));
    }
    write_summary(exp, cfg.baseline, outs, out_dir);
}

// Shared PRE states per seed; PRE does not depend on the sweep cell.
class PreCache {
public:
    explicit PreCache(const Experiment& base) : base_(base) {}

    const ModelState& get(std::uint64_t seed) {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(seed);
        if (it == cache_.end()) it = cache_.emplace(seed, base_.train_pre(seed)).first;
        return it->second;
    }

private:
    const Experiment& base_;
    std::mutex mu_;
    std::map<std::uint64_t, ModelState> cache_;
};

void kshot_sweep_command(const ExperimentConfig& cfg, const KvConfig& raw,
                         const std::string& out_dir) {
    ensure_dir(out_dir);
    write_config_echo(raw, out_dir);

    struct Cell {
        std::size_t k, q;
        bool valid;
    };
    std::vector<Cell> cells;
    if (cfg.sweep_k.empty()) throw ConfigError("kshot: sweep.k grid is empty");
    for (std::uint64_t k : cfg.sweep_k) {
        const std::vector<std::uint64_t> qs =
            cfg.sweep_q.empty() ? std::vector<std::uint64_t>{k} : cfg.sweep_q;
        for (std::uint64_t q : qs) {
            bool valid = k >= 1 && q >= 1;
            if (valid && cfg.task == Schema::Qa && k % q != 0) valid = false;
            cells.push_back(Cell{static_cast<std::size_t>(k), static_cast<std::size_t>(q), valid});
        }
    }

    Experiment base(cfg);
    PreCache pre_cache(base);
    std::vector<std::string> cell_rows(cells.size());
    run_cells(cells.size(), [&](std::size_t ci) {
        const Cell& cell = cells[ci];
        std::ostringstream rows;
        if (!cell.valid) {
            rows << cell.k << ',' << cell.q << ",,,skipped";
            for (std::size_t m = 0; m < base.metric_names().size(); ++m) rows << ',';
            rows << '\n';
            cell_rows[ci] = rows.str();
            return;
        }
        ExperimentConfig cell_cfg = cfg;
        cell_cfg.meta.episode.k = cell.k;
        cell_cfg.meta.episode.q = cell.q;
        Experiment exp(cell_cfg);
        for (std::uint64_t seed : cfg.seeds) {
            Experiment::RunOut out = exp.run_one(cfg.baseline, seed, &pre_cache.get(seed));
            std::size_t step_offset = 0;
            for (const StageReport& report : out.reports) {
                for (const CheckpointEval& c : report.checkpoints) {
                    rows << cell.k << ',' << cell.q << ',' << seed << ','
                         << (step_offset + c.step) << ",ok";
                    for (const std::string& m : exp.metric_names())
                        rows << ',' << csv_num(c.metrics.at(m) * kPct);
                    rows << '\n';
                }
                step_offset += report.steps.size();
            }
        }
        cell_rows[ci] = rows.str();
    });

    std::ostringstream csv;
    csv << "k,q,seed,step,status";
    for (const std::string& m : base.metric_names()) csv << ',' << m;
    csv << '\n';
    for (const std::string& rows : cell_rows) csv << rows;
    write_text(out_dir + "/kshot.csv", csv.str());
}

void downsample_sweep_command(const ExperimentConfig& cfg, const KvConfig& raw,
                              const std::string& out_dir) {
    ensure_dir(out_dir);
    write_config_echo(raw, out_dir);
    Experiment base(cfg);
    PreCache pre_cache(base);

    struct Unit {
        double fraction;
        std::uint64_t seed;
    };
    std::vector<Unit> units;
    for (double f : cfg.downsample_fractions)
        for (std::uint64_t seed : cfg.seeds) units.push_back(Unit{f, seed});

    std::vector<std::string> unit_rows(units.size());
    run_cells(units.size(), [&](std::size_t ui) {
        const Unit& unit = units[ui];
        Experiment exp(cfg);  // private instance: run_downsampled touches feature caches
        std::ostringstream rows;
        try {
            const ModelState& pre = pre_cache.get(unit.seed);
            Experiment::RunOut ada =
                exp.run_downsampled(BaselineKind::XMetraAda, unit.seed, unit.fraction, &pre);
            Experiment::RunOut ft =
                exp.run_downsampled(BaselineKind::Ft, unit.seed, unit.fraction, &pre);
            for (const std::string& m : exp.metric_names()) {
                rows << csv_num(unit.fraction) << ',' << unit.seed << ',' << m << ','
                     << csv_num(ada.metrics.at(m) * kPct) << ','
                     << csv_num(ft.metrics.at(m) * kPct) << '\n';
            }
        } catch (const SamplingError&) {
            rows << csv_num(unit.fraction) << ',' << unit.seed << ",skipped,,\n";
        }
        unit_rows[ui] = rows.str();
    });

    std::ostringstream csv;
    csv << "fraction,seed,metric,x_metra_ada,ft\n";
    for (const std::string& rows : unit_rows) csv << rows;
    write_text(out_dir + "/downsample.csv", csv.str());
}

void freeze_sweep_command(const ExperimentConfig& cfg, const KvConfig& raw,
                          const std::string& out_dir) {
    ensure_dir(out_dir);
    write_config_echo(raw, out_dir);

    std::vector<std::set<std::size_t>> grid = cfg.freeze_grid;
    const std::size_t blocks = cfg.encoder.num_layers + 1;
    if (grid.empty()) {
        grid.push_back({});  // unfrozen reference
        for (std::size_t b = 0; b + 1 < blocks; ++b) grid.push_back({b, b + 1});
        std::set<std::size_t> all;
        for (std::size_t b = 0; b < blocks; ++b) all.insert(b);
        grid.push_back(all);
    }

    Experiment base(cfg);
    PreCache pre_cache(base);
    std::vector<std::string> cell_rows(grid.size());
    run_cells(grid.size(), [&](std::size_t gi) {
        ExperimentConfig cell_cfg = cfg;
        cell_cfg.meta.frozen_blocks = grid[gi];
        Experiment exp(cell_cfg);
        std::ostringstream rows;
        for (std::uint64_t seed : cfg.seeds) {
            Experiment::RunOut out = exp.run_one(cfg.baseline, seed, &pre_cache.get(seed));
            for (const std::string& m : exp.metric_names())
                rows << block_set_name(grid[gi]) << ',' << seed << ',' << m << ','
                     << csv_num(out.metrics.at(m) * kPct) << '\n';
        }
        cell_rows[gi] = rows.str();
    });

    std::ostringstream csv;
    csv << "blocks,seed,metric,value\n";
    for (const std::string& rows : cell_rows) csv << rows;
    write_text(out_dir + "/freeze.csv", csv.str());
}

}  // namespace xmetra
