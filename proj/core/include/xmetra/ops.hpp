#pragma once

#include <vector>

#include "xmetra/tensor.hpp"

namespace xmetra {

// Forward primitives. Each records its local gradient rule when any input is
// attached to a tape; with only detached inputs the result is a plain value.
// add/mul broadcast: shapes equal, or one operand is scalar, or the smaller
// operand's shape is a trailing suffix of the larger's (leading-dim batch).

Tensor matmul(const Tensor& a, const Tensor& b);          // [m,k]x[k,n] -> [m,n]
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor log_softmax(const Tensor& x);                      // last axis
Tensor logsumexp(const Tensor& x);                        // reduces last axis
Tensor nll_pick(const Tensor& log_probs,                  // [B,C] -> [B], -log_probs[b, ids[b]]
                const std::vector<std::size_t>& ids);
Tensor mean(const Tensor& x);                             // all elements -> scalar
Tensor sum(const Tensor& x);                              // all elements -> scalar
Tensor concat(const Tensor& a, const Tensor& b);          // last axis
Tensor embedding(const Tensor& table,                     // [R,C] rows -> [n,C]
                 const std::vector<std::size_t>& ids);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);                        // 2-D
Tensor scale(const Tensor& x, double c);

}  // namespace xmetra
