#include <cmath>
#include <set>
#include <tuple>

#include "doctest.h"
#include "xmetra/metrics.hpp"
#include "xmetra/rng.hpp"

using namespace xmetra;

namespace {

// Independent span extraction for the oracle: repair the sequence first
// (I-X without a live X run becomes B-X), then read off maximal runs.
std::vector<std::tuple<std::size_t, std::size_t, std::string>> oracle_spans(
    std::vector<std::string> tags) {
    for (std::size_t i = 0; i < tags.size(); ++i) {
        if (tags[i].size() < 2 || tags[i][0] != 'I') continue;
        const std::string type = tags[i].substr(2);
        const bool live = i > 0 && tags[i - 1] != "O" && tags[i - 1].substr(2) == type;
        if (!live) tags[i][0] = 'B';
    }
    std::vector<std::tuple<std::size_t, std::size_t, std::string>> spans;
    std::size_t i = 0;
    while (i < tags.size()) {
        if (tags[i][0] != 'B') {
            ++i;
            continue;
        }
        const std::string type = tags[i].substr(2);
        std::size_t j = i + 1;
        while (j < tags.size() && tags[j] == "I-" + type) ++j;
        spans.emplace_back(i, j - 1, type);
        i = j;
    }
    return spans;
}

PrF1 oracle_f1(const std::vector<std::vector<std::string>>& pred,
               const std::vector<std::vector<std::string>>& gold) {
    std::size_t np = 0, ng = 0, hit = 0;
    for (std::size_t s = 0; s < pred.size(); ++s) {
        auto ps = oracle_spans(pred[s]);
        auto gs = oracle_spans(gold[s]);
        np += ps.size();
        ng += gs.size();
        std::multiset<std::tuple<std::size_t, std::size_t, std::string>> rest(gs.begin(),
                                                                              gs.end());
        for (const auto& span : ps) {
            auto it = rest.find(span);
            if (it != rest.end()) {
                rest.erase(it);
                ++hit;
            }
        }
    }
    PrF1 out;
    out.precision = np ? double(hit) / np : 0.0;
    out.recall = ng ? double(hit) / ng : 0.0;
    out.f1 = (out.precision + out.recall) > 0
                 ? 2 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    return out;
}

std::vector<std::string> random_tags(Rng& rng, std::size_t len, std::size_t types) {
    static const char* names[] = {"LOC", "PER", "ORG"};
    std::vector<std::string> tags(len);
    for (auto& t : tags) {
        const std::size_t roll = rng.below(types * 2 + 1);
        if (roll == 0) t = "O";
        else t = std::string(roll % 2 ? "B-" : "I-") + names[(roll / 2) % types];
    }
    return tags;
}

}  // namespace

TEST_CASE("intent accuracy") {
    std::vector<std::size_t> gold{1, 2, 3, 4};
    CHECK(intent_accuracy(gold, gold) == 1.0);
    std::vector<std::size_t> wrong{0, 0, 0, 0};
    CHECK(intent_accuracy(wrong, gold) == 0.0);
    std::vector<std::size_t> mixed{1, 2, 3, 0};
    CHECK(intent_accuracy(mixed, gold) == 0.75);
    std::vector<std::size_t> shorter{1};
    CHECK_THROWS_AS(intent_accuracy(shorter, gold), ContractError);
    CHECK_THROWS_AS(intent_accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}),
                    ContractError);
}

TEST_CASE("bio span extraction") {
    SUBCASE("plain spans") {
        auto spans = bio_spans({"O", "B-LOC", "I-LOC", "O", "B-PER"});
        REQUIRE(spans.size() == 2);
        CHECK(spans[0] == TagSpan{1, 2, "LOC"});
        CHECK(spans[1] == TagSpan{4, 4, "PER"});
    }
    SUBCASE("dangling I- is repaired to B-") {
        auto spans = bio_spans({"I-LOC", "I-LOC", "O"});
        REQUIRE(spans.size() == 1);
        CHECK(spans[0] == TagSpan{0, 1, "LOC"});
    }
    SUBCASE("type switch inside a run starts a new span") {
        auto spans = bio_spans({"B-LOC", "I-PER"});
        REQUIRE(spans.size() == 2);
    }
    SUBCASE("malformed tag") {
        CHECK_THROWS_AS(bio_spans({"B_LOC"}), InputError);
        CHECK_THROWS_AS(bio_spans({"Q-LOC"}), InputError);
    }
}

TEST_CASE("slot f1 fixtures") {
    SUBCASE("identical tags give F1=1") {
        std::vector<std::vector<std::string>> tags{{"B-LOC", "I-LOC", "O", "B-PER"}};
        PrF1 r = slot_f1(tags, tags);
        CHECK(r.f1 == 1.0);
    }
    SUBCASE("hand-evaluated half precision case") {
        // gold {(1,2,LOC)}, pred {(1,2,LOC),(4,4,PER)}
        std::vector<std::vector<std::string>> gold{{"O", "B-LOC", "I-LOC", "O", "O"}};
        std::vector<std::vector<std::string>> pred{{"O", "B-LOC", "I-LOC", "O", "B-PER"}};
        PrF1 r = slot_f1(pred, gold);
        CHECK(r.precision == doctest::Approx(0.5));
        CHECK(r.recall == doctest::Approx(1.0));
        CHECK(r.f1 == doctest::Approx(2.0 / 3.0));
    }
    SUBCASE("all-O prediction against non-empty gold gives 0") {
        std::vector<std::vector<std::string>> gold{{"B-LOC", "O"}};
        std::vector<std::vector<std::string>> pred{{"O", "O"}};
        PrF1 r = slot_f1(pred, gold);
        CHECK(r.precision == 0.0);
        CHECK(r.f1 == 0.0);
    }
    SUBCASE("swapping pred and gold swaps precision and recall") {
        std::vector<std::vector<std::string>> a{{"B-LOC", "O", "B-PER", "O"}};
        std::vector<std::vector<std::string>> b{{"B-LOC", "O", "O", "B-ORG"}};
        PrF1 ab = slot_f1(a, b);
        PrF1 ba = slot_f1(b, a);
        CHECK(ab.precision == doctest::Approx(ba.recall));
        CHECK(ab.recall == doctest::Approx(ba.precision));
        CHECK(ab.f1 == doctest::Approx(ba.f1));
    }
}

TEST_CASE("slot f1 matches the brute-force span oracle") {
    Rng rng(2024);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t sentences = 1 + rng.below(3);
        std::vector<std::vector<std::string>> pred, gold;
        for (std::size_t s = 0; s < sentences; ++s) {
            const std::size_t len = 1 + rng.below(10);
            pred.push_back(random_tags(rng, len, 3));
            gold.push_back(random_tags(rng, len, 3));
        }
        PrF1 got = slot_f1(pred, gold);
        PrF1 want = oracle_f1(pred, gold);
        CHECK(got.precision == doctest::Approx(want.precision).epsilon(1e-12));
        CHECK(got.recall == doctest::Approx(want.recall).epsilon(1e-12));
        CHECK(got.f1 == doctest::Approx(want.f1).epsilon(1e-12));
    }
}

TEST_CASE("qa normalization") {
    CHECK(qa_normalize("The  Cat!") == "the cat");
    CHECK(qa_normalize("a,b.c") == "abc");
    CHECK(qa_normalize("  ") == "");
}

TEST_CASE("qa f1 and em fixtures") {
    SUBCASE("exact match") {
        QaScore s = qa_f1_em("The Cat", "the cat!");
        CHECK(s.em == 1);
        CHECK(s.f1 == 1.0);
    }
    SUBCASE("hand-evaluated partial overlap") {
        QaScore s = qa_f1_em("cat", "the cat");
        CHECK(s.em == 0);
        CHECK(s.f1 == doctest::Approx(2.0 / 3.0));
    }
    SUBCASE("disjoint tokens") {
        QaScore s = qa_f1_em("dog", "the cat");
        CHECK(s.em == 0);
        CHECK(s.f1 == 0.0);
    }
    SUBCASE("both empty") {
        QaScore s = qa_f1_em("", "");
        CHECK(s.em == 1);
        CHECK(s.f1 == 1.0);
    }
    SUBCASE("one empty") {
        QaScore s = qa_f1_em("", "cat");
        CHECK(s.em == 0);
        CHECK(s.f1 == 0.0);
    }
    SUBCASE("em implies f1") {
        Rng rng(5);
        for (int trial = 0; trial < 100; ++trial) {
            std::string text;
            const std::size_t words = 1 + rng.below(4);
            for (std::size_t w = 0; w < words; ++w)
                text += (w ? " w" : "w") + std::to_string(rng.below(5));
            QaScore s = qa_f1_em(text, text + (rng.below(2) ? "." : "!"));
            CHECK(s.em == 1);
            CHECK(s.f1 == 1.0);
        }
    }
}

TEST_CASE("seed aggregation") {
    SUBCASE("constant values have zero std") {
        EvalResult r = aggregate_seeds("acc", {0.9, 0.9, 0.9});
        CHECK(r.mean == doctest::Approx(0.9));
        CHECK(r.stddev == 0.0);
    }
    SUBCASE("hand-evaluated sample std") {
        EvalResult r = aggregate_seeds("acc", {0.8, 1.0});
        CHECK(r.mean == doctest::Approx(0.9));
        CHECK(r.stddev == doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));
    }
    SUBCASE("single value") {
        EvalResult r = aggregate_seeds("acc", {0.42});
        CHECK(r.mean == 0.42);
        CHECK(r.stddev == 0.0);
        CHECK(r.support == 1);
    }
    SUBCASE("empty input is a contract error") {
        CHECK_THROWS_AS(aggregate_seeds("acc", {}), ContractError);
    }
    SUBCASE("mean stays within the input range") {
        Rng rng(8);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> vals;
            double lo = 1.0, hi = 0.0;
            for (std::size_t i = 0; i < 1 + rng.below(6); ++i) {
                vals.push_back(rng.uniform());
                lo = std::min(lo, vals.back());
                hi = std::max(hi, vals.back());
            }
            EvalResult r = aggregate_seeds("m", vals);
            CHECK(r.mean >= lo - 1e-12);
            CHECK(r.mean <= hi + 1e-12);
        }
    }
}
