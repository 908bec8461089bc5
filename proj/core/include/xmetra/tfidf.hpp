#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xmetra/corpus.hpp"

namespace xmetra {

// Deterministic lexical text encoder: term weights tf * (log((N+1)/(df+1)) + 1)
// over the vocabulary of the pool the index was built from.
class TfidfIndex {
public:
    static TfidfIndex build(const std::vector<std::string>& documents);

    // Dense weight vector over the index vocabulary; terms outside the
    // index contribute nothing. Empty text yields a zero vector.
    std::vector<double> encode(const std::string& text) const;

    std::size_t dim() const { return idf_.size(); }
    std::size_t num_docs() const { return num_docs_; }
    double idf(const std::string& term) const;

private:
    std::map<std::string, std::size_t> term_to_dim_;
    std::vector<double> idf_;
    std::size_t num_docs_ = 0;
};

double cosine(std::span<const double> a, std::span<const double> b);

// Space-delimited concatenation of the triplet elements.
std::string triplet_text(const QATriplet& t);

// Pluggable text encoder for similarity computations.
using TextEncoderFn = std::function<std::vector<double>(const std::string&)>;

}  // namespace xmetra
