#include "xmetra/crf.hpp"

#include "xmetra/ops.hpp"

namespace xmetra {

namespace {

std::size_t check_emissions(const Tensor& emissions, const CrfParams& crf) {
    if (!emissions.defined() || emissions.rank() != 2)
        throw InputError("crf: emissions must be [len, num_labels]");
    const std::size_t len = emissions.shape()[0];
    const std::size_t k = emissions.shape()[1];
    if (len == 0) throw InputError("crf: empty emission sequence");
    if (crf.transitions.shape() != Shape{k, k})
        throw ShapeError("crf: transitions " + shape_str(crf.transitions.shape()) +
                         " do not match " + std::to_string(k) + " labels");
    return k;
}

}  // namespace

void add_crf_params(ModelState& state, std::size_t num_labels, Rng& rng) {
    if (num_labels == 0) throw ConfigError("crf: num_labels must be positive");
    std::vector<double> trans(num_labels * num_labels);
    for (double& v : trans) v = rng.uniform(-0.1, 0.1);
    state.add("crf.trans", Tensor::from({num_labels, num_labels}, std::move(trans)));
    state.add("crf.start", Tensor::zeros({num_labels}));
    state.add("crf.end", Tensor::zeros({num_labels}));
}

CrfParams crf_view(const BoundParams& params) {
    return CrfParams{params.at("crf.trans"), params.at("crf.start"), params.at("crf.end")};
}

Tensor crf_log_partition(const Tensor& emissions, const CrfParams& crf) {
    const std::size_t k = check_emissions(emissions, crf);
    const std::size_t len = emissions.shape()[0];

    // alpha recursion in log space; alpha is kept as a [K] tensor.
    Tensor alpha = add(reshape(embedding(emissions, {0}), {k}), crf.start);
    if (len > 1) {
        // trans_t[to,from] lets the leading-dim broadcast add alpha over `from`.
        Tensor trans_t = transpose(crf.transitions);
        for (std::size_t t = 1; t < len; ++t) {
            Tensor scores = add(trans_t, alpha);          // [K,K]: trans[from,to] + alpha[from]
            Tensor next = logsumexp(scores);              // [K] over `from`
            alpha = add(next, reshape(embedding(emissions, {t}), {k}));
        }
    }
    return logsumexp(add(alpha, crf.end));  // scalar [1]
}

Tensor crf_gold_score(const Tensor& emissions, const CrfParams& crf,
                      const std::vector<std::size_t>& labels) {
    const std::size_t k = check_emissions(emissions, crf);
    const std::size_t len = emissions.shape()[0];
    if (labels.size() != len)
        throw InputError("crf: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(len) + " emission rows");
    for (std::size_t y : labels)
        if (y >= k) throw InputError("crf: label id " + std::to_string(y) + " out of range");

    // Emission term: nll_pick negates picks, so flip the sign back.
    Tensor score = scale(sum(nll_pick(emissions, labels)), -1.0);
    score = add(score, scale(nll_pick(reshape(crf.start, {1, k}), {labels.front()}), -1.0));
    score = add(score, scale(nll_pick(reshape(crf.end, {1, k}), {labels.back()}), -1.0));
    if (len > 1) {
        std::vector<std::size_t> from(labels.begin(), labels.end() - 1);
        std::vector<std::size_t> to(labels.begin() + 1, labels.end());
        Tensor hops = embedding(crf.transitions, from);  // [len-1, K]
        score = add(score, scale(sum(nll_pick(hops, to)), -1.0));
    }
    return reshape(score, {1});
}

Tensor crf_nll(const Tensor& emissions, const CrfParams& crf,
               const std::vector<std::size_t>& labels) {
    Tensor log_z = crf_log_partition(emissions, crf);
    Tensor gold = crf_gold_score(emissions, crf, labels);
    return add(log_z, scale(gold, -1.0));
}

std::vector<std::size_t> viterbi_decode(const Tensor& emissions, const CrfParams& crf) {
    const std::size_t k = check_emissions(emissions, crf);
    const std::size_t len = emissions.shape()[0];
    const std::vector<double>& em = emissions.values();
    const std::vector<double>& tr = crf.transitions.values();
    const std::vector<double>& st = crf.start.values();
    const std::vector<double>& en = crf.end.values();

    std::vector<double> best(k);
    std::vector<std::vector<std::size_t>> back(len, std::vector<std::size_t>(k, 0));
    for (std::size_t j = 0; j < k; ++j) best[j] = st[j] + em[j];
    for (std::size_t t = 1; t < len; ++t) {
        std::vector<double> next(k);
        for (std::size_t j = 0; j < k; ++j) {
            std::size_t argmax = 0;
            double mx = best[0] + tr[j];  // i = 0
            for (std::size_t i = 1; i < k; ++i) {
                const double s = best[i] + tr[i * k + j];
                if (s > mx) {  // strict: ties keep the lowest i
                    mx = s;
                    argmax = i;
                }
            }
            next[j] = mx + em[t * k + j];
            back[t][j] = argmax;
        }
        best = std::move(next);
    }
    std::size_t last = 0;
    double mx = best[0] + en[0];
    for (std::size_t j = 1; j < k; ++j) {
        const double s = best[j] + en[j];
        if (s > mx) {
            mx = s;
            last = j;
        }
    }
    std::vector<std::size_t> path(len);
    path[len - 1] = last;
    for (std::size_t t = len - 1; t > 0; --t) path[t - 1] = back[t][path[t]];
    return path;
}

}  // namespace xmetra
