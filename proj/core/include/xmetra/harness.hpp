#pragma once

#include <memory>

#include "xmetra/kvconfig.hpp"
#include "xmetra/meta.hpp"
#include "xmetra/metrics.hpp"
#include "xmetra/models.hpp"
#include "xmetra/synthetic.hpp"

namespace xmetra {

// Fully resolved experiment description. Built from a KvConfig (file plus
// CLI overrides); see config_keys() for the accepted keys.
struct ExperimentConfig {
    Schema task = Schema::Mtod;
    BaselineKind baseline = BaselineKind::XMetraAda;
    std::vector<std::uint64_t> seeds = {1, 2, 3};

    // Exactly one data source: corpus paths or a synthetic pair.
    bool use_synthetic = false;
    std::string source_train_path;
    std::string target_dev_path;
    std::string target_test_path;
    SyntheticLanguageSpec synth_source;
    SyntheticLanguageSpec synth_target;

    // Encoder template; vocab_size is filled from the data.
    EncoderConfig encoder;
    std::size_t max_question_len = 30;
    std::size_t max_answer_len = 30;

    MetaConfig meta;
    TrainConfig train;      // MONO/FT-style supervised runs
    TrainConfig pre_train;  // the PRE phase

    // Sweep grids.
    std::vector<std::uint64_t> sweep_k;
    std::vector<std::uint64_t> sweep_q;           // empty: q = k per cell
    std::vector<double> downsample_fractions = {0.25, 0.5, 0.75, 1.0};
    std::vector<std::set<std::size_t>> freeze_grid;  // empty: none, pairs, all

    static ExperimentConfig from_kv(const KvConfig& kv);
    static const std::set<std::string>& config_keys();
    void validate() const;
};

// Owns every corpus in play; addresses are stable for the harness lifetime.
struct ExperimentData {
    Schema schema = Schema::Mtod;
    Corpus source_train;
    Corpus target_dev;
    Corpus target_test;
};

// One configured experiment: data, vocabulary, model family and the meta
// driver that the training loops consume.
class Experiment {
public:
    explicit Experiment(const ExperimentConfig& cfg);

    struct RunOut {
        ModelState theta;                       // selected checkpoint
        std::map<std::string, double> metrics;  // evaluation of the selection, in [0,1]
        std::vector<StageReport> reports;
    };

    // Train (or reuse) PRE, run the scheme, select the reported checkpoint:
    // best few-shot-language metric for the meta schemes, final checkpoint at
    // convergence for the others.
    RunOut run_one(BaselineKind kind, std::uint64_t seed, const ModelState* theta_pre = nullptr,
                   ProvenanceCounter* provenance = nullptr) const;

    ModelState train_pre(std::uint64_t seed, ProvenanceCounter* provenance = nullptr) const;

    std::map<std::string, double> evaluate(const ModelState& theta) const;
    const std::vector<std::string>& metric_names() const;
    const TaskCorpora& corpora() const { return corpora_; }
    const ExperimentConfig& config() const { return cfg_; }
    const MetaDriver& driver() const { return driver_; }

    // Variant of run_one with the target dev pool subsampled first.
    RunOut run_downsampled(BaselineKind kind, std::uint64_t seed, double fraction,
                           const ModelState* theta_pre = nullptr) const;

private:
    struct Family;
    ExperimentConfig cfg_;
    std::shared_ptr<ExperimentData> data_;
    std::shared_ptr<Family> family_;
    MetaDriver driver_;      // frozen mask applied
    MetaDriver pre_driver_;  // never frozen
    TaskCorpora corpora_;
};

// ------------------------------------------------------- top-level commands

// Runs config.baseline for every seed; writes summary.csv, per-seed stage
// CSVs and config_echo.txt under out_dir.
void run_experiment_command(const ExperimentConfig& cfg, const KvConfig& raw,
                            const std::string& out_dir);

// Learning curves over the (k, q) grid -> kshot.csv.
void kshot_sweep_command(const ExperimentConfig& cfg, const KvConfig& raw,
                         const std::string& out_dir);

// X-METRA-ADA vs FT at shrinking target pools -> downsample.csv.
void downsample_sweep_command(const ExperimentConfig& cfg, const KvConfig& raw,
                              const std::string& out_dir);

// Final metrics per frozen-block set -> freeze.csv.
void freeze_sweep_command(const ExperimentConfig& cfg, const KvConfig& raw,
                          const std::string& out_dir);

// Number of parallel sweep workers (XMETRA_WORKERS, default 1).
std::size_t sweep_worker_cap();

// "%.10g" formatting used by every CSV writer.
std::string csv_num(double v);

// Reads a harness CSV back: first row is the header, cells split on commas
// (fields never contain commas or quotes).
std::vector<std::vector<std::string>> read_csv(const std::string& path);

}  // namespace xmetra
