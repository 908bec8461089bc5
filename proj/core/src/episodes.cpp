#include "xmetra/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace xmetra {

void EpisodeSpec::validate(Schema schema) const {
    if (k == 0 || q == 0) throw ConfigError("episode spec: k and q must be >= 1");
    if (schema == Schema::Qa && k % q != 0)
        throw ConfigError("episode spec: QA requires k to be a multiple of q (k=" +
                          std::to_string(k) + ", q=" + std::to_string(q) + ")");
}

Pool Pool::whole(const Corpus& corpus) {
    Pool p;
    p.corpus = &corpus;
    p.indices.resize(corpus.size());
    for (std::size_t i = 0; i < p.indices.size(); ++i) p.indices[i] = i;
    return p;
}

std::string stage_name(Stage s) { return s == Stage::MetaTrain ? "meta_train" : "meta_adapt"; }

namespace {

std::vector<std::string> pool_texts(const Pool& pool) {
    std::vector<std::string> docs;
    docs.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i)
        docs.push_back(triplet_text(pool.corpus->triplets[pool.indices[i]]));
    return docs;
}

}  // namespace

SimilarityIndex SimilarityIndex::build(const Pool& pool) {
    std::vector<std::string> docs = pool_texts(pool);
    TfidfIndex tfidf = TfidfIndex::build(docs);
    SimilarityIndex index;
    index.vectors_.reserve(docs.size());
    for (const std::string& d : docs) index.vectors_.push_back(tfidf.encode(d));
    return index;
}

SimilarityIndex SimilarityIndex::build(const Pool& pool, const TextEncoderFn& encoder) {
    SimilarityIndex index;
    index.vectors_.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i)
        index.vectors_.push_back(encoder(triplet_text(pool.corpus->triplets[pool.indices[i]])));
    return index;
}

SimilarityIndex SimilarityIndex::build_cross(const Pool& support_pool, const Pool& query_pool) {
    std::vector<std::string> support_docs = pool_texts(support_pool);
    std::vector<std::string> query_docs = pool_texts(query_pool);
    std::vector<std::string> all = support_docs;
    all.insert(all.end(), query_docs.begin(), query_docs.end());
    TfidfIndex tfidf = TfidfIndex::build(all);
    SimilarityIndex index;
    index.cross_ = true;
    for (const std::string& d : support_docs) index.support_vecs_.push_back(tfidf.encode(d));
    for (const std::string& d : query_docs) index.query_vecs_.push_back(tfidf.encode(d));
    return index;
}

double SimilarityIndex::sim(std::size_t a, std::size_t b) const {
    if (cross_) throw ContractError("similarity index: sim() on a cross-pool index");
    return cosine(vectors_.at(a), vectors_.at(b));
}

double SimilarityIndex::cross_sim(std::size_t query_idx, std::size_t support_idx) const {
    if (!cross_) throw ContractError("similarity index: cross_sim() on a single-pool index");
    return cosine(query_vecs_.at(query_idx), support_vecs_.at(support_idx));
}

double similarity(const QATriplet& a, const QATriplet& b, const TextEncoderFn& encoder) {
    return cosine(encoder(triplet_text(a)), encoder(triplet_text(b)));
}

namespace {

// Pool positions per intent class, in pool order; class names sorted.
std::map<std::string, std::vector<std::size_t>> by_class(const Pool& pool) {
    if (!pool.corpus || pool.corpus->schema != Schema::Mtod)
        throw ContractError("mtod sampler: pool must reference an MTOD corpus");
    std::map<std::string, std::vector<std::size_t>> classes;
    for (std::size_t i = 0; i < pool.size(); ++i)
        classes[pool.corpus->utterances[pool.indices[i]].intent].push_back(i);
    return classes;
}

// k draws from `candidates` (pool positions), excluding `taken` refs;
// without replacement unless allowed.
std::vector<std::size_t> draw_class_shots(const Pool& pool, const std::string& cls,
                                          const std::vector<std::size_t>& candidates,
                                          const std::set<ExampleRef>& taken, std::size_t want,
                                          bool allow_replacement, Rng& rng) {
    std::vector<std::size_t> usable;
    usable.reserve(candidates.size());
    for (std::size_t pos : candidates)
        if (!taken.count(pool.ref(pos))) usable.push_back(pos);
    std::vector<std::size_t> out;
    if (usable.size() >= want) {
        for (std::size_t pick : rng.sample_indices(usable.size(), want))
            out.push_back(usable[pick]);
        return out;
    }
    if (!allow_replacement)
        throw SamplingError("mtod sampler: class '" + cls + "' has " +
                            std::to_string(usable.size()) + " available examples, need " +
                            std::to_string(want) + " (replacement disabled)");
    if (usable.empty())
        throw SamplingError("mtod sampler: class '" + cls + "' exhausted even with replacement");
    for (std::size_t i = 0; i < want; ++i)
        out.push_back(usable[rng.below(usable.size())]);
    return out;
}

}  // namespace

PseudoTask sample_mtod_task(const Pool& support_pool, const Pool& query_pool,
                            const EpisodeSpec& spec, Rng& rng) {
    spec.validate(Schema::Mtod);
    auto support_classes = by_class(support_pool);
    auto query_classes = by_class(query_pool);

    std::set<std::string> all_classes;
    for (const auto& [cls, _] : support_classes) all_classes.insert(cls);
    for (const auto& [cls, _] : query_classes) all_classes.insert(cls);

    PseudoTask task;
    std::set<ExampleRef> taken;
    for (const std::string& cls : all_classes) {
        auto sup = support_classes.find(cls);
        if (sup == support_classes.end()) {
            task.classes_without_support.push_back(cls);
        } else {
            for (std::size_t pos : draw_class_shots(support_pool, cls, sup->second, taken, spec.k,
                                                    spec.allow_replacement, rng)) {
                task.support.push_back(support_pool.ref(pos));
                taken.insert(support_pool.ref(pos));
            }
        }
        auto qry = query_classes.find(cls);
        if (qry == query_classes.end()) continue;
        for (std::size_t pos : draw_class_shots(query_pool, cls, qry->second, taken, spec.q,
                                                spec.allow_replacement, rng)) {
            task.query.push_back(query_pool.ref(pos));
            taken.insert(query_pool.ref(pos));
        }
    }
    if (task.query.empty())
        throw SamplingError("mtod sampler: task has an empty query set");
    return task;
}

PseudoTask sample_qa_task(const Pool& pool, const EpisodeSpec& spec, const SimilarityIndex& index,
                          Rng& rng) {
    spec.validate(Schema::Qa);
    if (!pool.corpus || pool.corpus->schema != Schema::Qa)
        throw ContractError("qa sampler: pool must reference a QA corpus");
    if (pool.size() < spec.k + spec.q)
        throw SamplingError("qa sampler: pool of " + std::to_string(pool.size()) +
                            " cannot fill k+q=" + std::to_string(spec.k + spec.q));
    if (index.is_cross() || index.size() != pool.size())
        throw ContractError("qa sampler: similarity index does not match the pool");

    PseudoTask task;
    std::vector<std::size_t> anchors = rng.sample_indices(pool.size(), spec.q);
    std::set<std::size_t> blocked(anchors.begin(), anchors.end());
    for (std::size_t a : anchors) task.query.push_back(pool.ref(a));

    const std::size_t per_anchor = spec.k / spec.q;
    for (std::size_t a : anchors) {
        // Most similar first; ties to the lowest pool index.
        std::vector<std::pair<double, std::size_t>> ranked;
        ranked.reserve(pool.size());
        for (std::size_t cand = 0; cand < pool.size(); ++cand) {
            if (blocked.count(cand)) continue;
            ranked.emplace_back(-index.sim(a, cand), cand);
        }
        if (ranked.size() < per_anchor)
            throw SamplingError("qa sampler: pool exhausted while drawing support");
        std::partial_sort(ranked.begin(), ranked.begin() + per_anchor, ranked.end());
        for (std::size_t i = 0; i < per_anchor; ++i) {
            const std::size_t pick = ranked[i].second;
            task.support.push_back(pool.ref(pick));
            blocked.insert(pick);
        }
    }
    return task;
}

PseudoTask sample_qa_task_cross(const Pool& support_pool, const Pool& query_pool,
                                const EpisodeSpec& spec, const SimilarityIndex& index, Rng& rng) {
    spec.validate(Schema::Qa);
    if (!support_pool.corpus || support_pool.corpus->schema != Schema::Qa ||
        !query_pool.corpus || query_pool.corpus->schema != Schema::Qa)
        throw ContractError("qa sampler: pools must reference QA corpora");
    if (query_pool.size() < spec.q)
        throw SamplingError("qa sampler: query pool cannot fill q=" + std::to_string(spec.q));
    if (support_pool.size() < spec.k)
        throw SamplingError("qa sampler: support pool cannot fill k=" + std::to_string(spec.k));
    if (!index.is_cross())
        throw ContractError("qa sampler: cross sampling needs a cross-pool index");

    PseudoTask task;
    std::vector<std::size_t> anchors = rng.sample_indices(query_pool.size(), spec.q);
    std::set<ExampleRef> blocked;
    for (std::size_t a : anchors) {
        task.query.push_back(query_pool.ref(a));
        blocked.insert(query_pool.ref(a));
    }
    const std::size_t per_anchor = spec.k / spec.q;
    for (std::size_t a : anchors) {
        std::vector<std::pair<double, std::size_t>> ranked;
        ranked.reserve(support_pool.size());
        for (std::size_t cand = 0; cand < support_pool.size(); ++cand) {
            if (blocked.count(support_pool.ref(cand))) continue;
            ranked.emplace_back(-index.cross_sim(a, cand), cand);
        }
        if (ranked.size() < per_anchor)
            throw SamplingError("qa sampler: support pool exhausted while drawing support");
        std::partial_sort(ranked.begin(), ranked.begin() + per_anchor, ranked.end());
        for (std::size_t i = 0; i < per_anchor; ++i) {
            task.support.push_back(support_pool.ref(ranked[i].second));
            blocked.insert(support_pool.ref(ranked[i].second));
        }
    }
    return task;
}

std::pair<Pool, Pool> split_dev(const Corpus& dev, double fraction, std::uint64_t seed) {
    if (dev.size() == 0) throw InputError("split_dev: empty dev corpus");
    if (fraction <= 0.0 || fraction > 1.0)
        throw ContractError("split_dev: fraction must be in (0, 1]");
    Pool all = Pool::whole(dev);
    Rng rng = Rng::derive(seed, seed_tag("split_dev"));
    rng.shuffle(all.indices);
    const std::size_t cut = fraction >= 1.0
                                ? all.indices.size()
                                : static_cast<std::size_t>(std::llround(
                                      fraction * static_cast<double>(all.indices.size())));
    Pool head, tail;
    head.corpus = tail.corpus = &dev;
    head.indices.assign(all.indices.begin(), all.indices.begin() + cut);
    tail.indices.assign(all.indices.begin() + cut, all.indices.end());
    return {head, tail};
}

Pool subsample_pool(const Pool& pool, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw ContractError("subsample_pool: fraction must be in (0, 1]");
    if (fraction >= 1.0) return pool;
    const std::size_t keep = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(pool.size())));
    if (keep == 0)
        throw SamplingError("subsample_pool: fraction leaves an empty pool");
    Rng rng = Rng::derive(seed, seed_tag("subsample"));
    std::vector<std::size_t> order = pool.indices;
    rng.shuffle(order);
    order.resize(keep);
    std::sort(order.begin(), order.end());
    Pool out;
    out.corpus = pool.corpus;
    out.indices = std::move(order);
    return out;
}

std::vector<PseudoTask> draw_task_batch(const TaskDistribution& dist, std::size_t batch_size,
                                        Rng& rng) {
    if (batch_size == 0) throw ContractError("draw_task_batch: batch size must be >= 1");
    const std::uint64_t batch_seed = rng.next();
    std::vector<PseudoTask> batch;
    batch.reserve(batch_size);
    const bool shared_pool = dist.support_pool.corpus == dist.query_pool.corpus &&
                             dist.support_pool.indices == dist.query_pool.indices;
    for (std::size_t j = 0; j < batch_size; ++j) {
        Rng task_rng = Rng::derive(batch_seed, j);
        if (dist.schema == Schema::Mtod) {
            batch.push_back(
                sample_mtod_task(dist.support_pool, dist.query_pool, dist.spec, task_rng));
        } else {
            if (!dist.similarity)
                throw ContractError("draw_task_batch: QA distribution needs a similarity index");
            if (shared_pool) {
                batch.push_back(
                    sample_qa_task(dist.support_pool, dist.spec, *dist.similarity, task_rng));
            } else {
                batch.push_back(sample_qa_task_cross(dist.support_pool, dist.query_pool,
                                                     dist.spec, *dist.similarity, task_rng));
            }
        }
    }
    return batch;
}

}  // namespace xmetra
