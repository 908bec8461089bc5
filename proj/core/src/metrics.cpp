#include "xmetra/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "xmetra/errors.hpp"

namespace xmetra {

bool bio_tag_valid(const std::string& tag) {
    if (tag == "O") return true;
    return tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-';
}

std::vector<TagSpan> bio_spans(const std::vector<std::string>& tags) {
    std::vector<TagSpan> spans;
    bool open = false;
    TagSpan cur;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const std::string& tag = tags[i];
        if (!bio_tag_valid(tag)) throw InputError("bio_spans: malformed tag '" + tag + "'");
        if (tag == "O") {
            if (open) spans.push_back(cur);
            open = false;
            continue;
        }
        const std::string type = tag.substr(2);
        const bool continues = tag[0] == 'I' && open && cur.type == type;
        if (continues) {
            cur.end = i;
            continue;
        }
        // B-X, or an I-X that cannot continue anything: starts a new span.
        if (open) spans.push_back(cur);
        cur = TagSpan{i, i, type};
        open = true;
    }
    if (open) spans.push_back(cur);
    return spans;
}

double intent_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> golds) {
    if (preds.size() != golds.size())
        throw ContractError("intent_accuracy: size mismatch");
    if (preds.empty()) throw ContractError("intent_accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == golds[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

PrF1 slot_f1(const std::vector<std::vector<std::string>>& pred_tags,
             const std::vector<std::vector<std::string>>& gold_tags) {
    if (pred_tags.size() != gold_tags.size())
        throw ContractError("slot_f1: sentence count mismatch");
    std::size_t pred_total = 0, gold_total = 0, matched = 0;
    for (std::size_t s = 0; s < pred_tags.size(); ++s) {
        if (pred_tags[s].size() != gold_tags[s].size())
            throw ContractError("slot_f1: tag length mismatch in sentence " + std::to_string(s));
        std::vector<TagSpan> pred = bio_spans(pred_tags[s]);
        std::vector<TagSpan> gold = bio_spans(gold_tags[s]);
        pred_total += pred.size();
        gold_total += gold.size();
        std::set<TagSpan> gold_set(gold.begin(), gold.end());
        for (const TagSpan& span : pred)
            if (gold_set.erase(span)) ++matched;
    }
    PrF1 out;
    out.precision = pred_total ? static_cast<double>(matched) / pred_total : 0.0;
    out.recall = gold_total ? static_cast<double>(matched) / gold_total : 0.0;
    out.f1 = (out.precision + out.recall) > 0.0
                 ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    return out;
}

std::string qa_normalize(const std::string& text) {
    std::string lowered;
    lowered.reserve(text.size());
    for (unsigned char c : text) {
        if (std::ispunct(c)) continue;  // ASCII punctuation only; other bytes pass through
        lowered.push_back(static_cast<char>(std::tolower(c)));
    }
    std::istringstream words(lowered);
    std::string word, out;
    while (words >> word) {
        if (!out.empty()) out.push_back(' ');
        out += word;
    }
    return out;
}

QaScore qa_f1_em(const std::string& pred_answer, const std::string& gold_answer) {
    const std::string pred = qa_normalize(pred_answer);
    const std::string gold = qa_normalize(gold_answer);
    QaScore score;
    score.em = pred == gold ? 1 : 0;
    if (pred.empty() && gold.empty()) {
        score.f1 = 1.0;
        return score;
    }
    if (pred.empty() || gold.empty()) return score;

    std::map<std::string, std::size_t> gold_counts;
    std::size_t gold_n = 0, pred_n = 0, common = 0;
    {
        std::istringstream in(gold);
        std::string tok;
        while (in >> tok) {
            ++gold_counts[tok];
            ++gold_n;
        }
    }
    {
        std::istringstream in(pred);
        std::string tok;
        while (in >> tok) {
            ++pred_n;
            auto it = gold_counts.find(tok);
            if (it != gold_counts.end() && it->second > 0) {
                --it->second;
                ++common;
            }
        }
    }
    if (common == 0) return score;
    const double p = static_cast<double>(common) / pred_n;
    const double r = static_cast<double>(common) / gold_n;
    score.f1 = 2.0 * p * r / (p + r);
    return score;
}

EvalResult aggregate_seeds(const std::string& metric, const std::vector<double>& values) {
    if (values.empty()) throw ContractError("aggregate_seeds: no values");
    EvalResult out;
    out.metric = metric;
    out.per_seed = values;
    out.support = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    out.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double sq = 0.0;
        for (double v : values) sq += (v - out.mean) * (v - out.mean);
        out.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
    }
    return out;
}

}  // namespace xmetra
