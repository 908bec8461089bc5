#include "xmetra/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "xmetra/metrics.hpp"

namespace xmetra {

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Dev: return "dev";
        case Split::Test: return "test";
    }
    return "?";
}

std::string schema_name(Schema s) { return s == Schema::Mtod ? "mtod" : "qa"; }

void validate_utterance(const Utterance& u) {
    if (u.tokens.empty()) throw InputError("utterance: empty token list");
    if (u.slots.size() != u.tokens.size())
        throw InputError("utterance: " + std::to_string(u.slots.size()) + " slots for " +
                         std::to_string(u.tokens.size()) + " tokens");
    if (u.intent.empty()) throw InputError("utterance: missing intent");
    for (const std::string& tag : u.slots)
        if (!bio_tag_valid(tag)) throw InputError("utterance: malformed slot tag '" + tag + "'");
}

void validate_triplet(const QATriplet& t) {
    if (t.question.empty()) throw InputError("qa triplet: empty question");
    if (t.context.empty()) throw InputError("qa triplet: empty context");
    if (t.answer_text.empty()) throw InputError("qa triplet: empty answer");
    if (t.answer_start + t.answer_text.size() > t.context.size() ||
        t.context.substr(t.answer_start, t.answer_text.size()) != t.answer_text)
        throw InputError("qa triplet: answer_start offset does not match answer_text");
}

void Corpus::rebuild_inventories() {
    if (schema != Schema::Mtod) {
        intent_labels.clear();
        slot_labels.clear();
        return;
    }
    std::set<std::string> intents, slots;
    for (const Utterance& u : utterances) {
        intents.insert(u.intent);
        for (const std::string& tag : u.slots) slots.insert(tag);
    }
    slots.insert("O");
    intent_labels.assign(intents.begin(), intents.end());
    slot_labels.assign(slots.begin(), slots.end());
}

namespace {

using nlohmann::json;

Utterance parse_utterance(const json& j, std::size_t line) {
    Utterance u;
    try {
        u.tokens = j.at("tokens").get<std::vector<std::string>>();
        u.intent = j.at("intent").get<std::string>();
        u.slots = j.at("slots").get<std::vector<std::string>>();
        u.language = j.value("lang", "");
    } catch (const json::exception& e) {
        throw ParseError(std::string("mtod record: ") + e.what(), line);
    }
    try {
        validate_utterance(u);
    } catch (const InputError& e) {
        throw ParseError(e.what(), line);
    }
    return u;
}

QATriplet parse_triplet(const json& j, std::size_t line) {
    QATriplet t;
    try {
        t.question = j.at("question").get<std::string>();
        t.context = j.at("context").get<std::string>();
        t.answer_text = j.at("answer_text").get<std::string>();
        t.answer_start = j.at("answer_start").get<std::size_t>();
        t.language = j.value("lang", "");
    } catch (const json::exception& e) {
        throw ParseError(std::string("qa record: ") + e.what(), line);
    }
    try {
        validate_triplet(t);
    } catch (const InputError& e) {
        throw ParseError(e.what(), line);
    }
    return t;
}

}  // namespace

Corpus load_corpus(const std::string& path, Schema schema) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus file: " + path);
    Corpus corpus;
    corpus.schema = schema;
    corpus.id = path;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        if (schema == Schema::Mtod) {
            corpus.utterances.push_back(parse_utterance(j, line_no));
        } else {
            corpus.triplets.push_back(parse_triplet(j, line_no));
        }
    }
    if (corpus.size() == 0) throw InputError("corpus is empty: " + path);
    if (schema == Schema::Mtod && !corpus.utterances.empty())
        corpus.language = corpus.utterances.front().language;
    if (schema == Schema::Qa && !corpus.triplets.empty())
        corpus.language = corpus.triplets.front().language;
    corpus.rebuild_inventories();
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open corpus file for writing: " + path);
    if (corpus.schema == Schema::Mtod) {
        for (const Utterance& u : corpus.utterances) {
            json j{{"tokens", u.tokens}, {"intent", u.intent}, {"slots", u.slots},
                   {"lang", u.language}};
            out << j.dump() << '\n';
        }
    } else {
        for (const QATriplet& t : corpus.triplets) {
            json j{{"question", t.question},
                   {"context", t.context},
                   {"answer_text", t.answer_text},
                   {"answer_start", t.answer_start},
                   {"lang", t.language}};
            out << j.dump() << '\n';
        }
    }
    if (!out) throw IoError("failed writing corpus: " + path);
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> tokens;
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

Vocab Vocab::build(const std::vector<const Corpus*>& corpora) {
    std::set<std::string> words;
    for (const Corpus* c : corpora) {
        if (!c) continue;
        for (const Utterance& u : c->utterances)
            words.insert(u.tokens.begin(), u.tokens.end());
        for (const QATriplet& t : c->triplets) {
            for (const std::string& w : whitespace_tokens(t.question)) words.insert(w);
            for (const std::string& w : whitespace_tokens(t.context)) words.insert(w);
            for (const std::string& w : whitespace_tokens(t.answer_text)) words.insert(w);
        }
    }
    Vocab v;
    v.tokens_ = {"[CLS]", "[SEP]", "[UNK]"};
    for (const std::string& w : words) {
        if (w == "[CLS]" || w == "[SEP]" || w == "[UNK]") continue;
        v.tokens_.push_back(w);
    }
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.to_id_.emplace(v.tokens_[i], i);
    return v;
}

std::size_t Vocab::id(const std::string& token) const {
    auto it = to_id_.find(token);
    return it == to_id_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocab::ids(const std::vector<std::string>& tokens) const {
    std::vector<std::size_t> out;
    out.reserve(tokens.size());
    for (const std::string& t : tokens) out.push_back(id(t));
    return out;
}

LabelMap LabelMap::build(const std::vector<std::string>& labels) {
    std::set<std::string> unique(labels.begin(), labels.end());
    LabelMap m;
    m.names_.assign(unique.begin(), unique.end());
    for (std::size_t i = 0; i < m.names_.size(); ++i) m.to_id_.emplace(m.names_[i], i);
    return m;
}

std::size_t LabelMap::id(const std::string& label) const {
    auto it = to_id_.find(label);
    if (it == to_id_.end()) throw InputError("label map: unknown label '" + label + "'");
    return it->second;
}

const std::string& LabelMap::name(std::size_t id) const {
    if (id >= names_.size()) throw InputError("label map: id out of range");
    return names_[id];
}

}  // namespace xmetra
