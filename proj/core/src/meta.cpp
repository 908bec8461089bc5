#include "xmetra/meta.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace xmetra {

void MetaConfig::validate() const {
    if (inner_steps == 0) throw ConfigError("meta: inner_steps must be >= 1");
    if (inner_lr < 0.0) throw ConfigError("meta: inner_lr must be >= 0");
    if (outer_lr <= 0.0) throw ConfigError("meta: outer_lr must be positive");
    if (task_batch_size == 0) throw ConfigError("meta: task_batch_size must be >= 1");
    if (dev_split_fraction <= 0.0 || dev_split_fraction > 1.0)
        throw ConfigError("meta: dev_split_fraction must be in (0, 1]");
    if (convergence.window == 0 || convergence.patience == 0)
        throw ConfigError("meta: convergence window/patience must be >= 1");
    episode.validate(schema);
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (lr <= 0.0) throw ConfigError("train: lr must be positive");
    if (max_steps == 0) throw ConfigError("train: max_steps must be >= 1");
}

void count_provenance(ProvenanceCounter* counter, std::span<const ExampleRef> refs,
                      const std::string& role) {
    if (!counter) return;
    for (const ExampleRef& ref : refs) {
        const std::string key =
            (ref.corpus ? ref.corpus->id : std::string("<anon>")) + ":" + role;
        ++counter->counts[key];
        counter->indices[key].insert(ref.index);
    }
}

namespace {

OptimizerState make_outer_optimizer(const MetaConfig& config) {
    if (config.outer_optimizer == OptimizerState::Kind::Adam)
        return OptimizerState::adam(config.outer_lr, config.outer_weight_decay);
    return OptimizerState::sgd(config.outer_lr);
}

// Moving-average stopping rule shared by the meta and supervised loops.
class ConvergenceWatch {
public:
    explicit ConvergenceWatch(const ConvergenceConfig& cfg) : cfg_(cfg) {}

    // Returns true once the windowed loss has stopped improving.
    bool feed(double loss) {
        sum_ += loss;
        if (++count_ < cfg_.window) return false;
        const double avg = sum_ / static_cast<double>(count_);
        sum_ = 0.0;
        count_ = 0;
        if (best_ - avg < cfg_.min_delta) {
            if (++stale_ >= cfg_.patience) return true;
        } else {
            stale_ = 0;
        }
        best_ = std::min(best_, avg);
        return false;
    }

private:
    ConvergenceConfig cfg_;
    double sum_ = 0.0;
    std::size_t count_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t stale_ = 0;
};

}  // namespace

ModelState inner_adapt(const ModelState& theta, std::span<const ExampleRef> support,
                       std::size_t n, double alpha, const BatchLossFn& loss_fn,
                       const FreezeMask& frozen, std::uint64_t dropout_seed,
                       bool train_dropout) {
    if (support.empty()) throw ContractError("inner_adapt: empty support set");
    ModelState current = theta;
    for (std::size_t t = 0; t < n; ++t) {
        Tape tape;
        BoundParams bound = bind(current, tape);
        ForwardMode mode{train_dropout, mix64(dropout_seed, t)};
        Tensor loss = loss_fn(bound, support, tape, mode);
        if (!std::isfinite(loss.value()))
            throw DivergenceError("inner_adapt: non-finite support loss", t);
        if (!loss.attached()) continue;  // zero-contribution batch: no update
        tape.backward(loss);
        current = sgd_step(current, collect_grads(bound), alpha, frozen);
    }
    return current;
}

OuterStepOut outer_step(const ModelState& theta, std::span<const PseudoTask> batch,
                        const MetaConfig& config, OptimizerState& opt,
                        const BatchLossFn& loss_fn, const FreezeMask& frozen,
                        std::uint64_t step_seed, std::size_t step_index,
                        ProvenanceCounter* provenance) {
    if (batch.empty()) throw ContractError("outer_step: empty task batch");
    GradMap summed = zero_grads_like(theta);
    double total_query_loss = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const PseudoTask& task = batch[j];
        const std::uint64_t task_seed = mix64(step_seed, j);
        ModelState theta_j;
        try {
            theta_j = inner_adapt(theta, task.support, config.inner_steps, config.inner_lr,
                                  loss_fn, frozen, mix64(task_seed, seed_tag("inner")),
                                  config.train_dropout);
        } catch (const DivergenceError& e) {
            throw DivergenceError("task " + std::to_string(j) + ": " + e.what(), step_index);
        }
        count_provenance(provenance, task.support, "support");

        Tape tape;
        BoundParams bound = bind(theta_j, tape);
        ForwardMode mode{config.train_dropout, mix64(task_seed, seed_tag("query"))};
        Tensor query_loss = loss_fn(bound, task.query, tape, mode);
        count_provenance(provenance, task.query, "query");
        if (!std::isfinite(query_loss.value()))
            throw DivergenceError("outer_step: non-finite query loss in task " +
                                      std::to_string(j),
                                  step_index);
        total_query_loss += query_loss.value();
        if (query_loss.attached()) {
            // First-order: the gradient is taken at theta_j and summed as-is.
            tape.backward(query_loss);
            accumulate(summed, collect_grads(bound));
        }
    }
    OuterStepOut out;
    out.theta = optimizer_step(theta, summed, opt, frozen);
    out.query_loss = total_query_loss;
    return out;
}

void write_stage_csv(const StageReport& report, const std::vector<std::string>& metric_names,
                     const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open stage csv for writing: " + path);
    out << "step,query_loss";
    for (const std::string& m : metric_names) out << ',' << m;
    out << '\n';
    std::map<std::size_t, const CheckpointEval*> by_step;
    for (const CheckpointEval& c : report.checkpoints) by_step[c.step] = &c;
    char buf[64];
    for (const OuterRecord& rec : report.steps) {
        std::snprintf(buf, sizeof buf, "%.10g", rec.query_loss);
        out << rec.step << ',' << buf;
        auto it = by_step.find(rec.step);
        for (const std::string& m : metric_names) {
            out << ',';
            if (it != by_step.end() && it->second->metrics.count(m)) {
                std::snprintf(buf, sizeof buf, "%.10g", it->second->metrics.at(m));
                out << buf;
            }
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing stage csv: " + path);
}

namespace {

void add_checkpoint(StageReport& report, const MetaDriver& driver, const ModelState& theta,
                    std::size_t step) {
    if (!driver.eval) return;
    if (!report.checkpoints.empty() && report.checkpoints.back().step == step) return;
    CheckpointEval c;
    c.step = step;
    c.metrics = driver.eval(theta);
    c.snapshot = theta;
    report.checkpoints.push_back(std::move(c));
}

}  // namespace

StageResult run_stage(const ModelState& theta0, const TaskDistribution& dist,
                      const MetaConfig& config, const MetaDriver& driver, std::uint64_t seed,
                      ProvenanceCounter* provenance) {
    config.validate();
    if (dist.stage != config.stage)
        throw ConfigError("run_stage: distribution stage does not match the config stage");

    const auto t0 = std::chrono::steady_clock::now();
    StageResult result;
    result.theta = theta0;
    result.report.stage = dist.stage;
    OptimizerState opt = make_outer_optimizer(config);
    ConvergenceWatch watch(config.convergence);
    const std::string tag = stage_name(dist.stage);

    std::size_t tasks_done = 0;
    std::size_t step = 0;
    while (tasks_done < config.total_tasks) {
        const std::size_t b =
            std::min<std::size_t>(config.task_batch_size, config.total_tasks - tasks_done);
        Rng batch_rng = Rng::derive(seed, mix64(seed_tag(tag + ".batch"), step));
        std::vector<PseudoTask> batch = draw_task_batch(dist, b, batch_rng);
        const std::uint64_t step_seed = mix64(seed, mix64(seed_tag(tag + ".step"), step));
        OuterStepOut out = outer_step(result.theta, batch, config, opt, driver.loss,
                                      driver.frozen, step_seed, step + 1, provenance);
        result.theta = std::move(out.theta);
        tasks_done += b;
        ++step;
        result.report.steps.push_back(OuterRecord{step, out.query_loss});
        if (config.eval_every && step % config.eval_every == 0)
            add_checkpoint(result.report, driver, result.theta, step);
        if (watch.feed(out.query_loss)) {
            result.report.converged = true;
            break;
        }
    }
    result.report.tasks_consumed = tasks_done;
    if (step > 0) add_checkpoint(result.report, driver, result.theta, step);
    result.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

XmetraAdaResult run_xmetra_ada(const ModelState& theta_pre, const Pool& source_train,
                               const Corpus& target_dev, const MetaConfig& config,
                               const MetaDriver& driver, std::uint64_t seed,
                               ProvenanceCounter* provenance) {
    config.validate();
    if (theta_pre.empty()) throw ContractError("run_xmetra_ada: empty pre-trained state");

    auto [query_slice, adapt_slice] =
        split_dev(target_dev, config.dev_split_fraction, mix64(seed, seed_tag("dev_split")));

    XmetraAdaResult result;
    {
        TaskDistribution dist;
        dist.stage = Stage::MetaTrain;
        dist.support_pool = source_train;
        dist.query_pool = query_slice;
        dist.spec = config.episode;
        dist.total_tasks = config.total_tasks;
        dist.schema = config.schema;
        SimilarityIndex index;
        if (config.schema == Schema::Qa) {
            index = SimilarityIndex::build_cross(source_train, query_slice);
            dist.similarity = &index;
        }
        MetaConfig stage_cfg = config;
        stage_cfg.stage = Stage::MetaTrain;
        StageResult s1 = run_stage(theta_pre, dist, stage_cfg, driver,
                                   mix64(seed, seed_tag("meta_train")), provenance);
        result.theta = std::move(s1.theta);
        result.meta_train = std::move(s1.report);
    }
    if (config.dev_split_fraction >= 1.0) return result;  // the X-METRA reduction
    if (adapt_slice.size() == 0)
        throw ConfigError(
            "run_xmetra_ada: dev split left no meta-adapt slice; use fraction 1.0 (X-METRA)");

    {
        TaskDistribution dist;
        dist.stage = Stage::MetaAdapt;
        dist.support_pool = adapt_slice;
        dist.query_pool = adapt_slice;
        dist.spec = config.episode;
        dist.total_tasks = config.total_tasks;
        dist.schema = config.schema;
        SimilarityIndex index;
        if (config.schema == Schema::Qa) {
            index = SimilarityIndex::build(adapt_slice);
            dist.similarity = &index;
        }
        MetaConfig stage_cfg = config;
        stage_cfg.stage = Stage::MetaAdapt;
        // Fresh optimizer moments per stage (created inside run_stage).
        StageResult s2 = run_stage(result.theta, dist, stage_cfg, driver,
                                   mix64(seed, seed_tag("meta_adapt")), provenance);
        result.theta = std::move(s2.theta);
        result.meta_adapt = std::move(s2.report);
    }
    return result;
}

StageResult train_supervised(const ModelState& theta0, const std::vector<Pool>& pools,
                             const TrainConfig& config, const MetaDriver& driver,
                             std::uint64_t seed, ProvenanceCounter* provenance) {
    config.validate();
    std::vector<ExampleRef> all_refs;
    for (const Pool& pool : pools)
        for (std::size_t i = 0; i < pool.size(); ++i) all_refs.push_back(pool.ref(i));
    if (all_refs.empty()) throw ContractError("train_supervised: no training examples");

    const auto t0 = std::chrono::steady_clock::now();
    StageResult result;
    result.theta = theta0;
    result.report.stage = Stage::MetaTrain;  // report container reused for plain training
    OptimizerState opt = config.optimizer == OptimizerState::Kind::Adam
                             ? OptimizerState::adam(config.lr, config.weight_decay)
                             : OptimizerState::sgd(config.lr);
    ConvergenceWatch watch(config.convergence);

    std::size_t step = 0;
    bool done = false;
    for (std::size_t epoch = 0; !done; ++epoch) {
        std::vector<ExampleRef> order = all_refs;
        Rng epoch_rng = Rng::derive(seed, mix64(seed_tag("epoch"), epoch));
        epoch_rng.shuffle(order);
        for (std::size_t off = 0; off < order.size() && !done; off += config.batch_size) {
            const std::size_t take = std::min(config.batch_size, order.size() - off);
            std::span<const ExampleRef> batch(order.data() + off, take);
            Tape tape;
            BoundParams bound = bind(result.theta, tape);
            ForwardMode mode{true, mix64(seed, mix64(seed_tag("dropout"), step))};
            Tensor loss = driver.loss(bound, batch, tape, mode);
            if (!std::isfinite(loss.value()))
                throw DivergenceError("train_supervised: non-finite loss", step + 1);
            if (loss.attached()) {
                tape.backward(loss);
                result.theta = optimizer_step(result.theta, collect_grads(bound), opt,
                                              driver.frozen);
            }
            count_provenance(provenance, batch, "train");
            ++step;
            result.report.steps.push_back(OuterRecord{step, loss.value()});
            if (config.eval_every && step % config.eval_every == 0)
                add_checkpoint(result.report, driver, result.theta, step);
            if (watch.feed(loss.value())) {
                result.report.converged = true;
                done = true;
            }
            if (step >= config.max_steps) done = true;
        }
    }
    result.report.tasks_consumed = step;
    if (step > 0) add_checkpoint(result.report, driver, result.theta, step);
    result.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

std::string baseline_name(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::Pre: return "pre";
        case BaselineKind::Mono: return "mono";
        case BaselineKind::Ft: return "ft";
        case BaselineKind::FtWithEn: return "ft_with_en";
        case BaselineKind::XMetra: return "x_metra";
        case BaselineKind::XMetraAda: return "x_metra_ada";
    }
    return "?";
}

BaselineKind baseline_from_name(const std::string& name) {
    if (name == "pre") return BaselineKind::Pre;
    if (name == "mono") return BaselineKind::Mono;
    if (name == "ft") return BaselineKind::Ft;
    if (name == "ft_with_en") return BaselineKind::FtWithEn;
    if (name == "x_metra") return BaselineKind::XMetra;
    if (name == "x_metra_ada") return BaselineKind::XMetraAda;
    throw ConfigError("unknown baseline kind: " + name);
}

namespace {

const Corpus& require_corpus(const Corpus* corpus, const std::string& which,
                             const std::string& kind) {
    if (!corpus) throw ConfigError(kind + ": missing " + which + " corpus");
    return *corpus;
}

const ModelState& require_pre(const ModelState* pre, const std::string& kind) {
    if (!pre || pre->empty()) throw ConfigError(kind + ": requires a trained PRE model state");
    return *pre;
}

}  // namespace

BaselineResult run_baseline(BaselineKind kind, const TaskCorpora& corpora,
                            const MetaConfig& meta_config, const TrainConfig& train_config,
                            const MetaDriver& driver, std::uint64_t seed,
                            const ModelState* theta_pre, ProvenanceCounter* provenance) {
    const std::string name = baseline_name(kind);
    BaselineResult result;
    switch (kind) {
        case BaselineKind::Pre: {
            const Corpus& train = require_corpus(corpora.source_train, "source train", name);
            Rng init_rng = Rng::derive(seed, seed_tag("init"));
            StageResult r = train_supervised(driver.init(init_rng), {Pool::whole(train)},
                                             train_config, driver, seed, provenance);
            result.theta = std::move(r.theta);
            result.reports.push_back(std::move(r.report));
            return result;
        }
        case BaselineKind::Mono: {
            const Corpus& dev = require_corpus(corpora.target_dev, "target dev", name);
            Rng init_rng = Rng::derive(seed, seed_tag("init"));
            StageResult r = train_supervised(driver.init(init_rng), {Pool::whole(dev)},
                                             train_config, driver, seed, provenance);
            result.theta = std::move(r.theta);
            result.reports.push_back(std::move(r.report));
            return result;
        }
        case BaselineKind::Ft: {
            const Corpus& dev = require_corpus(corpora.target_dev, "target dev", name);
            StageResult r = train_supervised(require_pre(theta_pre, name), {Pool::whole(dev)},
                                             train_config, driver, seed, provenance);
            result.theta = std::move(r.theta);
            result.reports.push_back(std::move(r.report));
            return result;
        }
        case BaselineKind::FtWithEn: {
            const Corpus& dev = require_corpus(corpora.target_dev, "target dev", name);
            const Corpus& train = require_corpus(corpora.source_train, "source train", name);
            StageResult r = train_supervised(require_pre(theta_pre, name),
                                             {Pool::whole(dev), Pool::whole(train)},
                                             train_config, driver, seed, provenance);
            result.theta = std::move(r.theta);
            result.reports.push_back(std::move(r.report));
            return result;
        }
        case BaselineKind::XMetra:
        case BaselineKind::XMetraAda: {
            const Corpus& train = require_corpus(corpora.source_train, "source train", name);
            const Corpus& dev = require_corpus(corpora.target_dev, "target dev", name);
            MetaConfig cfg = meta_config;
            if (kind == BaselineKind::XMetra) cfg.dev_split_fraction = 1.0;
            XmetraAdaResult r = run_xmetra_ada(require_pre(theta_pre, name), Pool::whole(train),
                                               dev, cfg, driver, seed, provenance);
            result.theta = std::move(r.theta);
            result.reports.push_back(std::move(r.meta_train));
            if (r.meta_adapt) result.reports.push_back(std::move(*r.meta_adapt));
            return result;
        }
    }
    throw ConfigError("run_baseline: unhandled kind");
}

}  // namespace xmetra
