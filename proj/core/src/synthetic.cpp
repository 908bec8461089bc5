#include "xmetra/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace xmetra {

namespace {

constexpr std::size_t kMarkersPerIntent = 6;
constexpr std::size_t kWordsPerSlotType = 8;
constexpr std::size_t kMinFiller = 10;

std::string pad_num(std::size_t n, std::size_t width = 4) {
    std::string s = std::to_string(n);
    while (s.size() < width) s.insert(s.begin(), '0');
    return s;
}

// Role partition of the token id space, fixed by the grammar dimensions.
struct Grammar {
    std::size_t vocab_size;
    std::size_t num_intents;
    std::size_t num_slot_types;
    std::size_t filler_begin;

    std::size_t marker(std::size_t intent, std::size_t i) const {
        return intent * kMarkersPerIntent + i;
    }
    std::size_t slot_word(std::size_t type, std::size_t i) const {
        return num_intents * kMarkersPerIntent + type * kWordsPerSlotType + i;
    }
    std::size_t filler_count() const { return vocab_size - filler_begin; }
};

Grammar make_grammar(const SyntheticLanguageSpec& spec) {
    Grammar g;
    g.vocab_size = spec.vocab_size;
    g.num_intents = spec.num_intents;
    g.num_slot_types = spec.num_slot_types;
    g.filler_begin =
        spec.num_intents * kMarkersPerIntent + spec.num_slot_types * kWordsPerSlotType;
    return g;
}

// Surface renderer for one language.
struct Renderer {
    std::vector<std::string> surface;  // by token id

    static Renderer source_language(const SyntheticLanguageSpec& spec) {
        Renderer r;
        r.surface.resize(spec.vocab_size);
        for (std::size_t id = 0; id < spec.vocab_size; ++id) r.surface[id] = "w" + pad_num(id);
        return r;
    }

    // Shared ids keep the source surface; the rest are renamed through the
    // permutation_seed shuffle.
    static Renderer target_language(const SyntheticLanguageSpec& spec) {
        Renderer r;
        r.surface.resize(spec.vocab_size);
        std::vector<std::size_t> order(spec.vocab_size);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng perm(spec.permutation_seed);
        perm.shuffle(order);
        const std::size_t shared =
            static_cast<std::size_t>(std::llround(spec.lexical_overlap * spec.vocab_size));
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            const std::size_t id = order[pos];
            r.surface[id] = pos < shared ? "w" + pad_num(id) : "t" + pad_num(pos);
        }
        return r;
    }
};

// One labeled sentence in token-id space.
struct IdSentence {
    std::size_t intent;
    std::vector<std::size_t> ids;
    std::vector<std::string> tags;
};

IdSentence draw_sentence(const Grammar& g, const SyntheticLanguageSpec& spec, Rng& rng) {
    IdSentence s;
    s.intent = static_cast<std::size_t>(rng.below(g.num_intents));

    struct Unit {
        std::vector<std::size_t> ids;
        std::vector<std::string> tags;
    };
    std::vector<Unit> units;

    const std::size_t marker_count = 2 + rng.below(2);  // 2..3
    for (std::size_t i = 0; i < marker_count; ++i) {
        const std::size_t id = g.marker(s.intent, rng.below(kMarkersPerIntent));
        units.push_back(Unit{{id}, {"O"}});
    }
    const std::size_t span_count = rng.below(3);  // 0..2
    for (std::size_t i = 0; i < span_count; ++i) {
        // Each intent favours two slot types.
        const std::size_t type = (s.intent + rng.below(2)) % g.num_slot_types;
        const std::string name = "slot_" + pad_num(type, 2);
        Unit unit;
        const std::size_t span_len = 1 + rng.below(2);
        for (std::size_t j = 0; j < span_len; ++j) {
            unit.ids.push_back(g.slot_word(type, rng.below(kWordsPerSlotType)));
            unit.tags.push_back((j == 0 ? "B-" : "I-") + name);
        }
        units.push_back(std::move(unit));
    }
    const std::size_t target_len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
    std::size_t have = 0;
    for (const Unit& u : units) have += u.ids.size();
    while (have < target_len) {
        const std::size_t id = g.filler_begin + rng.below(g.filler_count());
        units.push_back(Unit{{id}, {"O"}});
        ++have;
    }
    rng.shuffle(units);
    for (const Unit& u : units) {
        s.ids.insert(s.ids.end(), u.ids.begin(), u.ids.end());
        s.tags.insert(s.tags.end(), u.tags.begin(), u.tags.end());
    }
    return s;
}

Corpus make_corpus(const Grammar& g, const SyntheticLanguageSpec& spec, const Renderer& render,
                   Split split, std::size_t count) {
    Corpus corpus;
    corpus.schema = Schema::Mtod;
    corpus.split = split;
    corpus.language = spec.language;
    corpus.id = spec.language + "/" + split_name(split);
    Rng rng = Rng::derive(spec.base_seed, seed_tag(corpus.id));
    corpus.utterances.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        IdSentence s = draw_sentence(g, spec, rng);
        Utterance u;
        u.intent = "intent_" + pad_num(s.intent, 2);
        u.language = spec.language;
        u.slots = s.tags;
        u.tokens.reserve(s.ids.size());
        for (std::size_t id : s.ids) {
            if (spec.label_noise > 0.0 && rng.uniform() < spec.label_noise)
                id = static_cast<std::size_t>(rng.below(spec.vocab_size));
            u.tokens.push_back(render.surface[id]);
        }
        validate_utterance(u);
        corpus.utterances.push_back(std::move(u));
    }
    corpus.rebuild_inventories();
    return corpus;
}

}  // namespace

void SyntheticLanguageSpec::validate() const {
    if (num_intents == 0) throw ConfigError("synthetic: num_intents must be positive");
    if (num_slot_types == 0) throw ConfigError("synthetic: num_slot_types must be positive");
    const std::size_t needed =
        num_intents * kMarkersPerIntent + num_slot_types * kWordsPerSlotType + kMinFiller;
    if (vocab_size < needed)
        throw ConfigError("synthetic: vocab_size " + std::to_string(vocab_size) +
                          " too small for the grammar (needs >= " + std::to_string(needed) + ")");
    if (lexical_overlap < 0.0 || lexical_overlap > 1.0)
        throw ConfigError("synthetic: lexical_overlap must be in [0, 1]");
    if (label_noise < 0.0 || label_noise >= 1.0)
        throw ConfigError("synthetic: label_noise must be in [0, 1)");
    if (min_len == 0 || max_len < min_len)
        throw ConfigError("synthetic: invalid length range");
    if (min_len < 4)
        throw ConfigError("synthetic: min_len must be >= 4 to fit markers and a span");
    if (train_size == 0 || dev_size == 0 || test_size == 0)
        throw ConfigError("synthetic: split sizes must be positive");
    if (language.empty()) throw ConfigError("synthetic: language code required");
}

SyntheticPair generate_synthetic_pair(const SyntheticLanguageSpec& source,
                                      const SyntheticLanguageSpec& target) {
    source.validate();
    target.validate();
    if (source.vocab_size != target.vocab_size || source.num_intents != target.num_intents ||
        source.num_slot_types != target.num_slot_types)
        throw ConfigError("synthetic: source and target grammar dimensions must match");
    if (source.language == target.language)
        throw ConfigError("synthetic: source and target need distinct language codes");

    const Grammar grammar = make_grammar(source);
    const Renderer src_render = Renderer::source_language(source);
    const Renderer tgt_render = Renderer::target_language(target);

    SyntheticPair pair;
    pair.source_train = make_corpus(grammar, source, src_render, Split::Train, source.train_size);
    pair.source_dev = make_corpus(grammar, source, src_render, Split::Dev, source.dev_size);
    pair.source_test = make_corpus(grammar, source, src_render, Split::Test, source.test_size);
    pair.target_train = make_corpus(grammar, target, tgt_render, Split::Train, target.train_size);
    pair.target_dev = make_corpus(grammar, target, tgt_render, Split::Dev, target.dev_size);
    pair.target_test = make_corpus(grammar, target, tgt_render, Split::Test, target.test_size);
    return pair;
}

}  // namespace xmetra
