#pragma once

#include "xmetra/optim.hpp"
#include "xmetra/rng.hpp"

namespace xmetra {

// Linear-chain CRF scores. A label sequence y over emissions E[len,K] scores
//   start[y0] + sum_t E[t,y_t] + sum_t trans[y_{t-1},y_t] + end[y_last].
struct CrfParams {
    Tensor transitions;  // [K,K], trans[from,to]
    Tensor start;        // [K]
    Tensor end;          // [K]
};

// Parameters live under "crf.*" in the model state.
void add_crf_params(ModelState& state, std::size_t num_labels, Rng& rng);
CrfParams crf_view(const BoundParams& params);

// log sum over all label paths of exp(score); forward algorithm.
Tensor crf_log_partition(const Tensor& emissions, const CrfParams& crf);

Tensor crf_gold_score(const Tensor& emissions, const CrfParams& crf,
                      const std::vector<std::size_t>& labels);

// log_partition - gold path score; non-negative.
Tensor crf_nll(const Tensor& emissions, const CrfParams& crf,
               const std::vector<std::size_t>& labels);

// Max-scoring label sequence; ties broken toward the lowest label index.
// Operates on values only (no tape involvement).
std::vector<std::size_t> viterbi_decode(const Tensor& emissions, const CrfParams& crf);

}  // namespace xmetra
