#pragma once

#include <functional>
#include <optional>

#include "xmetra/episodes.hpp"
#include "xmetra/optim.hpp"

namespace xmetra {

struct ConvergenceConfig {
    std::size_t window = 50;   // outer steps per loss window
    std::size_t patience = 5;  // stale windows before stopping
    double min_delta = 1e-4;
};

struct MetaConfig {
    std::size_t inner_steps = 5;      // n
    double inner_lr = 1e-3;           // alpha
    double outer_lr = 1e-2;           // beta
    std::size_t task_batch_size = 4;  // b
    std::size_t total_tasks = 2500;
    Stage stage = Stage::MetaTrain;
    double dev_split_fraction = 0.75;
    OptimizerState::Kind outer_optimizer = OptimizerState::Kind::Adam;
    double outer_weight_decay = 1e-3;
    ConvergenceConfig convergence;
    std::set<std::size_t> frozen_blocks;
    std::size_t eval_every = 100;  // checkpoint cadence in outer steps (0 = final only)
    bool train_dropout = true;     // dropout active during adaptation passes
    EpisodeSpec episode;
    Schema schema = Schema::Mtod;

    void validate() const;
};

// Scalar loss of `params` on a batch of examples; the model family behind the
// meta loop. ExampleRefs with a null corpus are allowed for synthetic fixtures.
using BatchLossFn = std::function<Tensor(const BoundParams&, std::span<const ExampleRef>, Tape&,
                                         const ForwardMode&)>;

// Held-out evaluation of a parameter snapshot; returns named metrics in [0,1].
using EvalFn = std::function<std::map<std::string, double>(const ModelState&)>;

// Which corpus fed which role. Keys are "corpus_id:role"; alongside raw
// consumption counts the distinct example indices are kept so tests can audit
// slice membership.
struct ProvenanceCounter {
    std::map<std::string, std::size_t> counts;
    std::map<std::string, std::set<std::size_t>> indices;

    std::size_t count(const std::string& key) const {
        auto it = counts.find(key);
        return it == counts.end() ? 0 : it->second;
    }
};
void count_provenance(ProvenanceCounter* counter, std::span<const ExampleRef> refs,
                      const std::string& role);

// Everything the meta loop needs to drive one model family.
struct MetaDriver {
    std::function<ModelState(Rng&)> init;
    BatchLossFn loss;
    EvalFn eval;                // may be empty
    std::string primary_metric; // checkpoint-selection key
    FreezeMask frozen;          // parameters excluded from every update
};

// --------------------------------------------------------------- algorithm

// n plain gradient steps on the support loss at rate alpha, each followed by
// a detach (first-order). Returns theta_j; theta itself is never mutated.
ModelState inner_adapt(const ModelState& theta, std::span<const ExampleRef> support,
                       std::size_t n, double alpha, const BatchLossFn& loss_fn,
                       const FreezeMask& frozen = {}, std::uint64_t dropout_seed = 0,
                       bool train_dropout = false);

struct OuterStepOut {
    ModelState theta;
    double query_loss = 0.0;  // summed over the task batch
};

// One outer step: per task inner_adapt on S_j, query loss at theta_j, query
// gradients summed over tasks, one optimizer update at the outer rate.
OuterStepOut outer_step(const ModelState& theta, std::span<const PseudoTask> batch,
                        const MetaConfig& config, OptimizerState& opt,
                        const BatchLossFn& loss_fn, const FreezeMask& frozen,
                        std::uint64_t step_seed, std::size_t step_index,
                        ProvenanceCounter* provenance = nullptr);

// ---------------------------------------------------------------- reports

struct OuterRecord {
    std::size_t step = 0;  // 1-based
    double query_loss = 0.0;
};

struct CheckpointEval {
    std::size_t step = 0;
    std::map<std::string, double> metrics;
    ModelState snapshot;
};

struct StageReport {
    Stage stage = Stage::MetaTrain;
    std::vector<OuterRecord> steps;
    std::vector<CheckpointEval> checkpoints;
    std::size_t tasks_consumed = 0;
    bool converged = false;
    double wall_seconds = 0.0;
};

// Stage CSV rows: step, query_loss, then metric columns (filled on
// checkpoint steps only).
void write_stage_csv(const StageReport& report, const std::vector<std::string>& metric_names,
                     const std::string& path);

struct StageResult {
    ModelState theta;
    StageReport report;
};

// Outer loop over fresh task batches until total_tasks are consumed or the
// windowed query loss stops improving.
StageResult run_stage(const ModelState& theta0, const TaskDistribution& dist,
                      const MetaConfig& config, const MetaDriver& driver, std::uint64_t seed,
                      ProvenanceCounter* provenance = nullptr);

// ------------------------------------------------------------- full method

struct XmetraAdaResult {
    ModelState theta;
    StageReport meta_train;
    std::optional<StageReport> meta_adapt;
};

// Two-stage pipeline: split the target dev corpus, meta-train with source
// support and target query, then meta-adapt inside the target slice.
// dev_split_fraction = 1 skips the adaptation stage (the X-METRA reduction).
XmetraAdaResult run_xmetra_ada(const ModelState& theta_pre, const Pool& source_train,
                               const Corpus& target_dev, const MetaConfig& config,
                               const MetaDriver& driver, std::uint64_t seed,
                               ProvenanceCounter* provenance = nullptr);

// ---------------------------------------------------------------- baselines

enum class BaselineKind { Pre, Mono, Ft, FtWithEn, XMetra, XMetraAda };
std::string baseline_name(BaselineKind kind);
BaselineKind baseline_from_name(const std::string& name);

struct TrainConfig {
    std::size_t batch_size = 32;
    double lr = 1e-3;
    std::size_t max_steps = 2000;
    OptimizerState::Kind optimizer = OptimizerState::Kind::Adam;
    double weight_decay = 1e-3;
    ConvergenceConfig convergence;
    std::size_t eval_every = 100;

    void validate() const;
};

// Standard mini-batch training over one or two example pools (epochs are
// shuffled unions, so two pools interleave proportionally to their sizes).
StageResult train_supervised(const ModelState& theta0, const std::vector<Pool>& pools,
                             const TrainConfig& config, const MetaDriver& driver,
                             std::uint64_t seed, ProvenanceCounter* provenance = nullptr);

struct TaskCorpora {
    const Corpus* source_train = nullptr;
    const Corpus* target_dev = nullptr;
    const Corpus* target_test = nullptr;
};

struct BaselineResult {
    ModelState theta;
    std::vector<StageReport> reports;
};

// Dispatch per evaluation scheme. PRE and MONO start from a fresh seeded
// init; FT variants and the meta schemes start from theta_pre.
BaselineResult run_baseline(BaselineKind kind, const TaskCorpora& corpora,
                            const MetaConfig& meta_config, const TrainConfig& train_config,
                            const MetaDriver& driver, std::uint64_t seed,
                            const ModelState* theta_pre = nullptr,
                            ProvenanceCounter* provenance = nullptr);

}  // namespace xmetra
