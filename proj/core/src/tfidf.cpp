#include "xmetra/tfidf.hpp"

#include <cmath>
#include <set>

namespace xmetra {

TfidfIndex TfidfIndex::build(const std::vector<std::string>& documents) {
    TfidfIndex index;
    index.num_docs_ = documents.size();
    std::map<std::string, std::size_t> df;
    for (const std::string& doc : documents) {
        std::vector<std::string> toks = whitespace_tokens(doc);
        std::set<std::string> unique(toks.begin(), toks.end());
        for (const std::string& t : unique) ++df[t];
    }
    index.idf_.reserve(df.size());
    for (const auto& [term, count] : df) {
        index.term_to_dim_.emplace(term, index.idf_.size());
        // Smoothed idf: the +1 keeps terms present in every document from
        // vanishing, so a single-document index degrades to plain tf.
        index.idf_.push_back(std::log((static_cast<double>(index.num_docs_) + 1.0) /
                                      (static_cast<double>(count) + 1.0)) +
                             1.0);
    }
    return index;
}

std::vector<double> TfidfIndex::encode(const std::string& text) const {
    std::vector<double> vec(idf_.size(), 0.0);
    for (const std::string& tok : whitespace_tokens(text)) {
        auto it = term_to_dim_.find(tok);
        if (it != term_to_dim_.end()) vec[it->second] += idf_[it->second];
    }
    return vec;
}

double TfidfIndex::idf(const std::string& term) const {
    auto it = term_to_dim_.find(term);
    if (it == term_to_dim_.end()) return 0.0;
    return idf_[it->second];
}

double cosine(std::span<const double> a, std::span<const double> b) {
    const std::size_t n = std::min(a.size(), b.size());
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += a[i] * b[i];
    for (double v : a) na += v * v;
    for (double v : b) nb += v * v;
    if (na == 0.0 || nb == 0.0) return 0.0;  // zero vector: similarity defined as 0
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::string triplet_text(const QATriplet& t) {
    return t.question + " " + t.context + " " + t.answer_text;
}

}  // namespace xmetra
