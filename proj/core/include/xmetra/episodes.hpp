#pragma once

#include "xmetra/corpus.hpp"
#include "xmetra/rng.hpp"
#include "xmetra/tfidf.hpp"

namespace xmetra {

// Episode geometry. For MTOD k and q are per intent class; for QA k is the
// total support size and q the total query size, with k a multiple of q.
struct EpisodeSpec {
    std::size_t k = 6;
    std::size_t q = 6;
    std::uint64_t seed = 0;
    bool allow_replacement = false;

    void validate(Schema schema) const;
};

// Stable example identity: owning corpus plus index within it.
struct ExampleRef {
    const Corpus* corpus = nullptr;
    std::size_t index = 0;

    bool operator==(const ExampleRef&) const = default;
    auto operator<=>(const ExampleRef&) const = default;
};

// Subset view of one corpus; `indices` are positions within the corpus and
// their order defines the pool index used for tie-breaking.
struct Pool {
    const Corpus* corpus = nullptr;
    std::vector<std::size_t> indices;

    static Pool whole(const Corpus& corpus);
    std::size_t size() const { return indices.size(); }
    ExampleRef ref(std::size_t pool_index) const {
        return ExampleRef{corpus, indices[pool_index]};
    }
};

// The paper's T = (S, Q).
struct PseudoTask {
    std::vector<ExampleRef> support;
    std::vector<ExampleRef> query;
    // Intent classes that appear only in the query pool and therefore
    // contributed no support shots.
    std::vector<std::string> classes_without_support;
};

enum class Stage { MetaTrain, MetaAdapt };
std::string stage_name(Stage s);

// Cosine similarities between QA triplets under a lexical TF-IDF encoder.
// Single-pool mode indexes one pool against itself; cross mode ranks support
// candidates against query anchors drawn from a different pool (the index is
// then built over the union of both pools' texts).
class SimilarityIndex {
public:
    static SimilarityIndex build(const Pool& pool);
    static SimilarityIndex build(const Pool& pool, const TextEncoderFn& encoder);
    static SimilarityIndex build_cross(const Pool& support_pool, const Pool& query_pool);

    double sim(std::size_t a, std::size_t b) const;  // single-pool indices
    double cross_sim(std::size_t query_idx, std::size_t support_idx) const;
    bool is_cross() const { return cross_; }
    std::size_t size() const { return vectors_.size(); }

private:
    std::vector<std::vector<double>> vectors_;       // single-pool mode
    std::vector<std::vector<double>> support_vecs_;  // cross mode
    std::vector<std::vector<double>> query_vecs_;
    bool cross_ = false;
};

struct TaskDistribution {
    Stage stage = Stage::MetaTrain;
    Pool support_pool;
    Pool query_pool;
    EpisodeSpec spec;
    std::size_t total_tasks = 2500;
    Schema schema = Schema::Mtod;
    const SimilarityIndex* similarity = nullptr;  // QA only
};

// Balanced k/q-shot task over intent classes. Classes are the union of the
// classes present in either pool; a class missing from the support pool is
// flagged and contributes no support shots.
PseudoTask sample_mtod_task(const Pool& support_pool, const Pool& query_pool,
                            const EpisodeSpec& spec, Rng& rng);

// Draw q random query triplets, then for each the k/q most similar support
// triplets from the remainder (no repeats within the task; ties go to the
// lowest pool index).
PseudoTask sample_qa_task(const Pool& pool, const EpisodeSpec& spec,
                          const SimilarityIndex& index, Rng& rng);

// Cross-lingual variant: anchors come from the query pool, support neighbours
// from the support pool, ranked by `index` built with build_cross.
PseudoTask sample_qa_task_cross(const Pool& support_pool, const Pool& query_pool,
                                const EpisodeSpec& spec, const SimilarityIndex& index, Rng& rng);

// Cosine similarity of the encoded triplet concatenations.
double similarity(const QATriplet& a, const QATriplet& b, const TextEncoderFn& encoder);

// Seeded shuffle, then split at round(fraction * n): (meta-train query slice,
// meta-adapt slice). fraction = 1 leaves the adapt slice empty.
std::pair<Pool, Pool> split_dev(const Corpus& dev, double fraction, std::uint64_t seed);

// Seeded subsample of a pool without replacement; fraction = 1 is identity.
Pool subsample_pool(const Pool& pool, double fraction, std::uint64_t seed);

// b independent tasks; task j uses a stream derived from (batch seed, j), so
// batches are reproducible and order-independent.
std::vector<PseudoTask> draw_task_batch(const TaskDistribution& dist, std::size_t batch_size,
                                        Rng& rng);

}  // namespace xmetra
