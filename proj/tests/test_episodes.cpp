#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "xmetra/episodes.hpp"

using namespace xmetra;

namespace {

// count per class, classes labelled intent_<c>
Corpus mtod_corpus(const std::string& lang, std::size_t classes, std::size_t per_class) {
    Corpus c;
    c.schema = Schema::Mtod;
    c.language = lang;
    c.id = lang + "/pool";
    for (std::size_t cls = 0; cls < classes; ++cls)
        for (std::size_t i = 0; i < per_class; ++i) {
            Utterance u;
            u.tokens = {"tok" + std::to_string(cls), "x" + std::to_string(i)};
            u.slots = {"O", "O"};
            u.intent = "intent_" + std::to_string(cls);
            u.language = lang;
            c.utterances.push_back(std::move(u));
        }
    c.rebuild_inventories();
    return c;
}

Corpus qa_corpus(const std::vector<std::string>& contexts) {
    Corpus c;
    c.schema = Schema::Qa;
    c.language = "en";
    c.id = "en/qa_pool";
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        QATriplet t;
        t.question = "what is it";
        t.context = contexts[i];
        t.answer_text = whitespace_tokens(contexts[i]).front();
        t.answer_start = 0;
        t.language = "en";
        c.triplets.push_back(std::move(t));
    }
    return c;
}

std::map<std::string, std::size_t> class_counts(const std::vector<ExampleRef>& refs) {
    std::map<std::string, std::size_t> counts;
    for (const ExampleRef& r : refs) ++counts[r.corpus->utterances[r.index].intent];
    return counts;
}

bool disjoint(const std::vector<ExampleRef>& a, const std::vector<ExampleRef>& b) {
    std::set<ExampleRef> sa(a.begin(), a.end());
    for (const ExampleRef& r : b)
        if (sa.count(r)) return false;
    return true;
}

// Greedy brute-force reconstruction of the QA support selection.
std::vector<std::size_t> oracle_qa_support(const Pool& pool, const SimilarityIndex& index,
                                           const std::vector<std::size_t>& anchor_positions,
                                           std::size_t per_anchor) {
    std::set<std::size_t> blocked(anchor_positions.begin(), anchor_positions.end());
    std::vector<std::size_t> support;
    for (std::size_t a : anchor_positions) {
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t cand = 0; cand < pool.size(); ++cand) {
            if (blocked.count(cand)) continue;
            ranked.emplace_back(index.sim(a, cand), cand);
        }
        std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
            if (x.first != y.first) return x.first > y.first;
            return x.second < y.second;  // ties to the lowest pool index
        });
        for (std::size_t i = 0; i < per_anchor; ++i) {
            support.push_back(ranked[i].second);
            blocked.insert(ranked[i].second);
        }
    }
    return support;
}

}  // namespace

TEST_CASE("episode spec validation") {
    EpisodeSpec spec;
    spec.k = 6;
    spec.q = 4;
    CHECK_NOTHROW(spec.validate(Schema::Mtod));
    CHECK_THROWS_AS(spec.validate(Schema::Qa), ConfigError);  // k must be a multiple of q
    spec.q = 0;
    CHECK_THROWS_AS(spec.validate(Schema::Mtod), ConfigError);
    EpisodeSpec defaults;
    CHECK(defaults.k == 6);
    CHECK(defaults.q == 6);
}

TEST_CASE("mtod task sampling") {
    SUBCASE("3 classes and k=q=2 gives 6 support and 6 query items") {
        Corpus sup = mtod_corpus("en", 3, 10);
        Corpus qry = mtod_corpus("xx", 3, 10);
        EpisodeSpec spec;
        spec.k = spec.q = 2;
        Rng rng(1);
        PseudoTask task = sample_mtod_task(Pool::whole(sup), Pool::whole(qry), spec, rng);
        CHECK(task.support.size() == 6);
        CHECK(task.query.size() == 6);
        CHECK(task.classes_without_support.empty());
        for (const auto& [cls, n] : class_counts(task.support)) CHECK(n == 2);
        for (const auto& [cls, n] : class_counts(task.query)) CHECK(n == 2);
    }
    SUBCASE("insufficient class raises a sampling error naming it") {
        Corpus sup = mtod_corpus("en", 2, 1);  // one example per class
        Corpus qry = mtod_corpus("xx", 2, 5);
        EpisodeSpec spec;
        spec.k = 2;
        spec.q = 1;
        Rng rng(1);
        CHECK_THROWS_WITH_AS(
            sample_mtod_task(Pool::whole(sup), Pool::whole(qry), spec, rng),
            doctest::Contains("intent_0"), SamplingError);
    }
    SUBCASE("replacement fills short classes") {
        Corpus sup = mtod_corpus("en", 2, 1);
        Corpus qry = mtod_corpus("xx", 2, 5);
        EpisodeSpec spec;
        spec.k = 2;
        spec.q = 1;
        spec.allow_replacement = true;
        Rng rng(1);
        PseudoTask task = sample_mtod_task(Pool::whole(sup), Pool::whole(qry), spec, rng);
        CHECK(task.support.size() == 4);
    }
    SUBCASE("classes missing from the support pool are flagged, not fatal") {
        Corpus sup = mtod_corpus("en", 2, 8);   // intent_0, intent_1
        Corpus qry = mtod_corpus("xx", 3, 8);   // adds intent_2
        EpisodeSpec spec;
        spec.k = spec.q = 2;
        Rng rng(9);
        PseudoTask task = sample_mtod_task(Pool::whole(sup), Pool::whole(qry), spec, rng);
        CHECK(task.classes_without_support == std::vector<std::string>{"intent_2"});
        CHECK(task.support.size() == 4);   // 2 classes with support
        CHECK(task.query.size() == 6);     // all 3 classes queried
    }
    SUBCASE("meta-adapt style shared pool keeps support and query disjoint") {
        Corpus pool = mtod_corpus("xx", 3, 12);
        EpisodeSpec spec;
        spec.k = spec.q = 3;
        for (std::uint64_t seed = 0; seed < 300; ++seed) {
            Rng rng(seed);
            PseudoTask task = sample_mtod_task(Pool::whole(pool), Pool::whole(pool), spec, rng);
            CHECK(disjoint(task.support, task.query));
            for (const auto& [cls, n] : class_counts(task.support)) CHECK(n == 3);
            for (const auto& [cls, n] : class_counts(task.query)) CHECK(n == 3);
        }
    }
}

TEST_CASE("qa task sampling") {
    SUBCASE("k=6 q=4 violates the multiple constraint") {
        Corpus pool = qa_corpus({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l"});
        EpisodeSpec spec;
        spec.k = 6;
        spec.q = 4;
        SimilarityIndex index = SimilarityIndex::build(Pool::whole(pool));
        Rng rng(1);
        CHECK_THROWS_AS(sample_qa_task(Pool::whole(pool), spec, index, rng), ConfigError);
    }
    SUBCASE("k=q means one support neighbour per query anchor") {
        std::vector<std::string> contexts;
        for (int i = 0; i < 20; ++i)
            contexts.push_back("doc word" + std::to_string(i) + " word" + std::to_string(i / 2));
        Corpus pool = qa_corpus(contexts);
        EpisodeSpec spec;
        spec.k = spec.q = 6;
        SimilarityIndex index = SimilarityIndex::build(Pool::whole(pool));
        Rng rng(3);
        PseudoTask task = sample_qa_task(Pool::whole(pool), spec, index, rng);
        CHECK(task.support.size() == 6);
        CHECK(task.query.size() == 6);
        CHECK(disjoint(task.support, task.query));
    }
    SUBCASE("duplicates of the anchor are selected, the anchor itself excluded") {
        Corpus pool = qa_corpus({"same text here", "same text here", "same text here"});
        EpisodeSpec spec;
        spec.k = 2;
        spec.q = 1;
        SimilarityIndex index = SimilarityIndex::build(Pool::whole(pool));
        Rng rng(5);
        PseudoTask task = sample_qa_task(Pool::whole(pool), spec, index, rng);
        REQUIRE(task.query.size() == 1);
        REQUIRE(task.support.size() == 2);
        std::set<std::size_t> chosen;
        for (const ExampleRef& r : task.support) {
            CHECK(r.index != task.query[0].index);
            chosen.insert(r.index);
        }
        CHECK(chosen.size() == 2);
    }
    SUBCASE("pool smaller than k+q is a sampling error") {
        Corpus pool = qa_corpus({"a", "b", "c"});
        EpisodeSpec spec;
        spec.k = spec.q = 2;
        SimilarityIndex index = SimilarityIndex::build(Pool::whole(pool));
        Rng rng(1);
        CHECK_THROWS_AS(sample_qa_task(Pool::whole(pool), spec, index, rng), SamplingError);
    }
    SUBCASE("selected supports match the brute-force nearest-neighbour scan") {
        std::vector<std::string> contexts;
        for (int i = 0; i < 30; ++i) {
            std::string doc = "w" + std::to_string(i % 7);
            doc += " w" + std::to_string(i % 5);
            doc += " w" + std::to_string(i % 3);
            contexts.push_back(doc);
        }
        Corpus corpus = qa_corpus(contexts);
        Pool pool = Pool::whole(corpus);
        SimilarityIndex index = SimilarityIndex::build(pool);
        EpisodeSpec spec;
        spec.k = 6;
        spec.q = 3;
        for (std::uint64_t seed = 0; seed < 200; ++seed) {
            Rng rng(seed);
            PseudoTask task = sample_qa_task(pool, spec, index, rng);
            REQUIRE(task.query.size() == 3);
            REQUIRE(task.support.size() == 6);
            CHECK(disjoint(task.support, task.query));
            std::vector<std::size_t> anchors;
            for (const ExampleRef& r : task.query) anchors.push_back(r.index);
            std::vector<std::size_t> expect = oracle_qa_support(pool, index, anchors, 2);
            std::vector<std::size_t> got;
            for (const ExampleRef& r : task.support) got.push_back(r.index);
            CHECK(got == expect);
        }
    }
}

TEST_CASE("similarity function") {
    TfidfIndex tfidf = TfidfIndex::build({"the cat sat", "a dog ran far"});
    TextEncoderFn enc = [&](const std::string& text) { return tfidf.encode(text); };
    QATriplet a{"the", "cat", "sat", 0, "en"};
    a.context = "cat";
    a.answer_text = "cat";
    a.answer_start = 0;
    QATriplet b = a;
    SUBCASE("identical triplets score 1") {
        CHECK(similarity(a, b, enc) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("disjoint vocabulary scores 0") {
        QATriplet c{"a", "dog", "dog", 0, "en"};
        c.context = "dog ran";
        c.answer_text = "dog";
        CHECK(similarity(a, c, enc) == 0.0);
    }
    SUBCASE("symmetric and bounded") {
        Rng rng(12);
        std::vector<std::string> words{"cat", "dog", "sat", "ran", "the", "a", "far"};
        for (int trial = 0; trial < 100; ++trial) {
            auto random_text = [&](std::size_t n) {
                std::string s;
                for (std::size_t i = 0; i < n; ++i)
                    s += (i ? " " : "") + words[rng.below(words.size())];
                return s;
            };
            QATriplet x{random_text(3), random_text(4), "w", 0, "en"};
            x.answer_text = whitespace_tokens(x.context).front();
            QATriplet y{random_text(2), random_text(5), "w", 0, "en"};
            y.answer_text = whitespace_tokens(y.context).front();
            const double sxy = similarity(x, y, enc);
            CHECK(sxy == doctest::Approx(similarity(y, x, enc)).epsilon(1e-12));
            CHECK(sxy >= -1.0 - 1e-12);
            CHECK(sxy <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("dev split") {
    Corpus dev = mtod_corpus("xx", 4, 25);  // 100 examples
    SUBCASE("75/25") {
        auto [head, tail] = split_dev(dev, 0.75, 7);
        CHECK(head.size() == 75);
        CHECK(tail.size() == 25);
        std::set<std::size_t> seen(head.indices.begin(), head.indices.end());
        for (std::size_t i : tail.indices) CHECK(seen.insert(i).second);
        CHECK(seen.size() == 100);
    }
    SUBCASE("60/40") {
        auto [head, tail] = split_dev(dev, 0.60, 7);
        CHECK(head.size() == 60);
        CHECK(tail.size() == 40);
    }
    SUBCASE("fraction 1 keeps everything in the first slice") {
        auto [head, tail] = split_dev(dev, 1.0, 7);
        CHECK(head.size() == 100);
        CHECK(tail.size() == 0);
    }
    SUBCASE("bad inputs") {
        CHECK_THROWS_AS(split_dev(dev, 0.0, 7), ContractError);
        Corpus empty;
        empty.schema = Schema::Mtod;
        CHECK_THROWS_AS(split_dev(empty, 0.5, 7), InputError);
    }
}

TEST_CASE("pool subsampling") {
    Corpus dev = mtod_corpus("xx", 2, 20);
    Pool whole = Pool::whole(dev);
    SUBCASE("fraction 1 is the identity") {
        Pool out = subsample_pool(whole, 1.0, 99);
        CHECK(out.indices == whole.indices);
    }
    SUBCASE("deterministic and sized by rounding") {
        Pool a = subsample_pool(whole, 0.5, 99);
        Pool b = subsample_pool(whole, 0.5, 99);
        CHECK(a.indices == b.indices);
        CHECK(a.size() == 20);
    }
}

TEST_CASE("task batches are reproducible") {
    Corpus sup = mtod_corpus("en", 3, 15);
    Corpus qry = mtod_corpus("xx", 3, 15);
    TaskDistribution dist;
    dist.stage = Stage::MetaTrain;
    dist.support_pool = Pool::whole(sup);
    dist.query_pool = Pool::whole(qry);
    dist.spec.k = dist.spec.q = 2;
    dist.schema = Schema::Mtod;

    Rng r1(42), r2(42);
    std::vector<PseudoTask> a = draw_task_batch(dist, 4, r1);
    std::vector<PseudoTask> b = draw_task_batch(dist, 4, r2);
    REQUIRE(a.size() == 4);
    for (std::size_t j = 0; j < a.size(); ++j) {
        CHECK(a[j].support == b[j].support);
        CHECK(a[j].query == b[j].query);
        CHECK(disjoint(a[j].support, a[j].query));
    }
    Rng r3(43);
    std::vector<PseudoTask> c = draw_task_batch(dist, 4, r3);
    CHECK(a[0].support != c[0].support);  // different seed, different batch
}
