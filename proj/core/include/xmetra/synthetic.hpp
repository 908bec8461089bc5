#pragma once

#include "xmetra/corpus.hpp"
#include "xmetra/rng.hpp"

namespace xmetra {

// Template-grammar corpus generator. A "language" renders a shared token id
// space to surface forms; typological distance between the source and target
// is proxied by (1 - lexical_overlap) plus token noise.
struct SyntheticLanguageSpec {
    std::uint64_t base_seed = 1;
    std::size_t vocab_size = 300;
    std::size_t num_intents = 6;
    std::size_t num_slot_types = 3;
    double lexical_overlap = 1.0;       // fraction of surface forms shared with the source
    std::uint64_t permutation_seed = 7; // token-mapping shuffle
    double label_noise = 0.0;           // per-token replacement rate, labels preserved
    std::size_t min_len = 4;
    std::size_t max_len = 10;
    std::string language = "xx";
    std::size_t train_size = 400;
    std::size_t dev_size = 150;
    std::size_t test_size = 300;

    void validate() const;
};

struct SyntheticPair {
    Corpus source_train, source_dev, source_test;
    Corpus target_train, target_dev, target_test;
};

// Source and target share one grammar (dimensions must agree); the target is
// re-rendered through a vocabulary permutation outside the shared fraction
// and gets label-preserving token noise.
SyntheticPair generate_synthetic_pair(const SyntheticLanguageSpec& source,
                                      const SyntheticLanguageSpec& target);

}  // namespace xmetra
