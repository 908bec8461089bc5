#pragma once

#include <span>
#include <string>
#include <vector>

#include "xmetra/errors.hpp"

namespace xmetra {

// ------------------------------------------------------------ BIO utilities

struct TagSpan {
    std::size_t start = 0;
    std::size_t end = 0;  // inclusive
    std::string type;
    bool operator==(const TagSpan&) const = default;
    auto operator<=>(const TagSpan&) const = default;
};

// Typed spans from a BIO tag sequence. An I-X with no live X span behind it
// is repaired to B-X. Malformed tags raise InputError.
std::vector<TagSpan> bio_spans(const std::vector<std::string>& tags);
bool bio_tag_valid(const std::string& tag);

// ----------------------------------------------------------------- metrics

double intent_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> golds);

struct PrF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// CoNLL-style micro span F1 over exact (boundary, type) matches.
PrF1 slot_f1(const std::vector<std::vector<std::string>>& pred_tags,
             const std::vector<std::vector<std::string>>& gold_tags);

// Lowercase ASCII, drop ASCII punctuation, collapse whitespace.
std::string qa_normalize(const std::string& text);

struct QaScore {
    double f1 = 0.0;
    int em = 0;
};

// SQuAD-style token-overlap F1 and exact match on normalized strings.
QaScore qa_f1_em(const std::string& pred_answer, const std::string& gold_answer);

struct EvalResult {
    std::string metric;
    std::vector<double> per_seed;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
    std::size_t support = 0;
};

EvalResult aggregate_seeds(const std::string& metric, const std::vector<double>& values);

}  // namespace xmetra
