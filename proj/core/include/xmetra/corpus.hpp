#pragma once

#include <map>
#include <string>
#include <vector>

#include "xmetra/errors.hpp"

namespace xmetra {

struct Utterance {
    std::vector<std::string> tokens;
    std::string intent;
    std::vector<std::string> slots;  // BIO tags aligned to tokens
    std::string language;
};

struct QATriplet {
    std::string question;
    std::string context;
    std::string answer_text;
    std::size_t answer_start = 0;  // character offset into context
    std::string language;
};

enum class Split { Train, Dev, Test };
enum class Schema { Mtod, Qa };

std::string split_name(Split s);
std::string schema_name(Schema s);

// Homogeneous example collection, immutable after load/generation.
struct Corpus {
    Schema schema = Schema::Mtod;
    Split split = Split::Train;
    std::string language;
    std::string id;  // provenance label, e.g. "en/train"

    std::vector<Utterance> utterances;  // MTOD
    std::vector<QATriplet> triplets;    // QA

    std::vector<std::string> intent_labels;  // sorted inventories (MTOD)
    std::vector<std::string> slot_labels;

    std::size_t size() const {
        return schema == Schema::Mtod ? utterances.size() : triplets.size();
    }
    void rebuild_inventories();
};

// One JSON object per line, UTF-8.
//   MTOD: {"tokens": [...], "intent": "...", "slots": [...], "lang": "..."}
//   QA:   {"question": "...", "context": "...", "answer_text": "...",
//          "answer_start": N, "lang": "..."}
Corpus load_corpus(const std::string& path, Schema schema);
void save_corpus(const Corpus& corpus, const std::string& path);

// Validation shared by the loader and the generators; throws InputError.
void validate_utterance(const Utterance& u);
void validate_triplet(const QATriplet& t);

// Whitespace tokenizer used everywhere raw text needs tokens.
std::vector<std::string> whitespace_tokens(const std::string& text);

// ------------------------------------------------------------------- vocab

// Word-level vocabulary over every corpus in play. Ids 0..2 are reserved for
// [CLS], [SEP] and [UNK]; unknown tokens map to [UNK].
class Vocab {
public:
    static constexpr std::size_t kCls = 0;
    static constexpr std::size_t kSep = 1;
    static constexpr std::size_t kUnk = 2;

    static Vocab build(const std::vector<const Corpus*>& corpora);

    std::size_t id(const std::string& token) const;
    std::vector<std::size_t> ids(const std::vector<std::string>& tokens) const;
    std::size_t size() const { return tokens_.size(); }

private:
    std::map<std::string, std::size_t> to_id_;
    std::vector<std::string> tokens_;
};

// Sorted label name <-> id mapping.
class LabelMap {
public:
    static LabelMap build(const std::vector<std::string>& labels);

    std::size_t id(const std::string& label) const;  // InputError when unknown
    const std::string& name(std::size_t id) const;
    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }

private:
    std::map<std::string, std::size_t> to_id_;
    std::vector<std::string> names_;
};

}  // namespace xmetra
