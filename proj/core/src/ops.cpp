#include "xmetra/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace xmetra {

// Friend of Tensor/Tape: node plumbing shared by every primitive.
struct OpKit {
    using NodePtr = std::shared_ptr<detail::TensorNode>;

    static const NodePtr& node(const Tensor& t) { return t.node_; }

    static Tape* common_tape(const char* op, std::initializer_list<const Tensor*> inputs) {
        Tape* tape = nullptr;
        for (const Tensor* t : inputs) {
            if (!t->defined()) throw UsageError(std::string(op) + ": undefined input tensor");
            Tape* in = t->tape();
            if (!in) continue;
            if (tape && in != tape)
                throw UsageError(std::string(op) + ": inputs recorded on different tapes");
            tape = in;
        }
        return tape;
    }

    static Tensor output(Tape* tape, Shape shape, std::vector<double> values) {
        auto node = std::make_shared<detail::TensorNode>();
        node->shape = std::move(shape);
        node->values = std::move(values);
        node->tape = tape;
        return Tensor(std::move(node));
    }

    static void record(Tape* tape, std::function<void()> backprop) {
        if (tape) tape->record(std::move(backprop));
    }

    // True when the node participates in this tape's backward pass.
    static bool wants_grad(const NodePtr& n, Tape* tape) { return n->tape == tape; }
};

namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                     shape_str(b));
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Elementwise binary op with leading-dim broadcast. Result takes the larger
// operand's shape; the smaller operand's flat index is big_index % inner.
struct Broadcast {
    bool b_is_small = false;  // which operand broadcasts
    bool a_is_small = false;
    std::size_t inner = 0;    // numel of the small operand (1 for scalars)
};

Broadcast resolve_broadcast(const char* op, const Tensor& a, const Tensor& b) {
    Broadcast bc;
    if (a.shape() == b.shape()) {
        bc.inner = a.size();
        return bc;
    }
    if (b.size() == 1) {
        bc.b_is_small = true;
        bc.inner = 1;
        return bc;
    }
    if (a.size() == 1) {
        bc.a_is_small = true;
        bc.inner = 1;
        return bc;
    }
    if (is_suffix(b.shape(), a.shape())) {
        bc.b_is_small = true;
        bc.inner = b.size();
        return bc;
    }
    if (is_suffix(a.shape(), b.shape())) {
        bc.a_is_small = true;
        bc.inner = a.size();
        return bc;
    }
    shape_fail(op, a.shape(), b.shape());
}

template <class Fwd, class BwdA, class BwdB>
Tensor elementwise_binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, BwdA dfa,
                          BwdB dfb) {
    Broadcast bc = resolve_broadcast(op, a, b);
    const Tensor& big = bc.a_is_small ? b : a;
    const std::vector<double>& av = a.values();
    const std::vector<double>& bv = b.values();
    const std::size_t n = big.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = bc.a_is_small ? av[i % bc.inner] : av[i];
        const double y = bc.b_is_small ? bv[i % bc.inner] : bv[i];
        out[i] = fwd(x, y);
    }
    Tape* tape = OpKit::common_tape(op, {&a, &b});
    Tensor result = OpKit::output(tape, big.shape(), std::move(out));
    if (tape) {
        auto an = OpKit::node(a);
        auto bn = OpKit::node(b);
        auto on = OpKit::node(result);
        OpKit::record(tape, [an, bn, on, bc, tape, dfa, dfb]() {
            if (on->grad.empty()) return;
            const bool need_a = OpKit::wants_grad(an, tape);
            const bool need_b = OpKit::wants_grad(bn, tape);
            if (!need_a && !need_b) return;
            if (need_a) an->ensure_grad();
            if (need_b) bn->ensure_grad();
            const std::size_t n = on->values.size();
            for (std::size_t i = 0; i < n; ++i) {
                const double g = on->grad[i];
                if (g == 0.0) continue;
                const std::size_t ia = bc.a_is_small ? i % bc.inner : i;
                const std::size_t ib = bc.b_is_small ? i % bc.inner : i;
                const double x = an->values[ia];
                const double y = bn->values[ib];
                if (need_a) an->grad[ia] += g * dfa(x, y);
                if (need_b) bn->grad[ib] += g * dfb(x, y);
            }
        });
    }
    return result;
}

template <class Fwd, class Bwd>
Tensor elementwise_unary(const char* op, const Tensor& x, Fwd fwd, Bwd dfd) {
    if (!x.defined()) throw UsageError(std::string(op) + ": undefined input tensor");
    const std::vector<double>& xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    Tape* tape = OpKit::common_tape(op, {&x});
    Tensor result = OpKit::output(tape, x.shape(), std::move(out));
    if (tape) {
        auto xn = OpKit::node(x);
        auto on = OpKit::node(result);
        OpKit::record(tape, [xn, on, tape, dfd]() {
            if (on->grad.empty() || !OpKit::wants_grad(xn, tape)) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->values.size(); ++i)
                xn->grad[i] += on->grad[i] * dfd(xn->values[i], on->values[i]);
        });
    }
    return result;
}

// Rows/cols view of the last axis.
void last_axis(const Tensor& t, std::size_t& rows, std::size_t& cols) {
    cols = t.shape().back();
    rows = t.size() / cols;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        shape_fail("matmul", a.shape(), b.shape());
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    const std::vector<double>& av = a.values();
    const std::vector<double>& bv = b.values();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av[i * k + p];
            if (x == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
        }
    Tape* tape = OpKit::common_tape("matmul", {&a, &b});
    Tensor result = OpKit::output(tape, {m, n}, std::move(out));
    if (tape) {
        auto an = OpKit::node(a);
        auto bn = OpKit::node(b);
        auto on = OpKit::node(result);
        OpKit::record(tape, [an, bn, on, m, k, n, tape]() {
            if (on->grad.empty()) return;
            if (OpKit::wants_grad(an, tape)) {
                an->ensure_grad();  // dA = dC * B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j)
                            acc += on->grad[i * n + j] * bn->values[p * n + j];
                        an->grad[i * k + p] += acc;
                    }
            }
            if (OpKit::wants_grad(bn, tape)) {
                bn->ensure_grad();  // dB = A^T * dC
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t i = 0; i < m; ++i) {
                        const double x = an->values[i * k + p];
                        if (x == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j)
                            bn->grad[p * n + j] += x * on->grad[i * n + j];
                    }
            }
        });
    }
    return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor tanh(const Tensor& x) {
    return elementwise_unary(
        "tanh", x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
    return elementwise_unary(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor log_softmax(const Tensor& x) {
    if (!x.defined() || x.rank() == 0) throw ShapeError("log_softmax: needs rank >= 1");
    std::size_t rows, cols;
    last_axis(x, rows, cols);
    const std::vector<double>& xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * cols;
        double mx = row[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
    }
    Tape* tape = OpKit::common_tape("log_softmax", {&x});
    Tensor result = OpKit::output(tape, x.shape(), std::move(out));
    if (tape) {
        auto xn = OpKit::node(x);
        auto on = OpKit::node(result);
        OpKit::record(tape, [xn, on, rows, cols, tape]() {
            if (on->grad.empty() || !OpKit::wants_grad(xn, tape)) return;
            xn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                double gsum = 0.0;
                for (std::size_t c = 0; c < cols; ++c) gsum += on->grad[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    xn->grad[i] += on->grad[i] - std::exp(on->values[i]) * gsum;
                }
            }
        });
    }
    return result;
}

Tensor logsumexp(const Tensor& x) {
    if (!x.defined() || x.rank() == 0) throw ShapeError("logsumexp: needs rank >= 1");
    std::size_t rows, cols;
    last_axis(x, rows, cols);
    const std::vector<double>& xv = x.values();
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * cols;
        double mx = row[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
        out[r] = mx + std::log(s);
    }
    Shape oshape(x.shape().begin(), x.shape().end() - 1);
    if (oshape.empty()) oshape = {1};
    Tape* tape = OpKit::common_tape("logsumexp", {&x});
    Tensor result = OpKit::output(tape, std::move(oshape), std::move(out));
    if (tape) {
        auto xn = OpKit::node(x);
        auto on = OpKit::node(result);
        OpKit::record(tape, [xn, on, rows, cols, tape]() {
            if (on->grad.empty() || !OpKit::wants_grad(xn, tape)) return;
            xn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double g = on->grad[r];
                if (g == 0.0) continue;
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    xn->grad[i] += g * std::exp(xn->values[i] - on->values[r]);
                }
            }
        });
    }
    return result;
}

Tensor nll_pick(const Tensor& log_probs, const std::vector<std::size_t>& ids) {
    if (!log_probs.defined() || log_probs.rank() != 2)
        throw ShapeError("nll_pick: expected rank-2 input, got " +
                         (log_probs.defined() ? shape_str(log_probs.shape()) : std::string("?")));
    const std::size_t rows = log_probs.shape()[0], cols = log_probs.shape()[1];
    if (ids.size() != rows)
        throw ShapeError("nll_pick: " + std::to_string(ids.size()) + " targets for " +
                         std::to_string(rows) + " rows");
    for (std::size_t r = 0; r < rows; ++r)
        if (ids[r] >= cols)
            throw InputError("nll_pick: target id " + std::to_string(ids[r]) +
                             " out of range for " + std::to_string(cols) + " classes");
    const std::vector<double>& xv = log_probs.values();
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = -xv[r * cols + ids[r]];
    Tape* tape = OpKit::common_tape("nll_pick", {&log_probs});
    Tensor result = OpKit::output(tape, {rows}, std::move(out));
    if (tape) {
        auto xn = OpKit::node(log_probs);
        auto on = OpKit::node(result);
        OpKit::record(tape, [xn, on, ids, cols, tape]() {
            if (on->grad.empty() || !OpKit::wants_grad(xn, tape)) return;
            xn->ensure_grad();
            for (std::size_t r = 0; r < ids.size(); ++r)
                xn->grad[r * cols + ids[r]] -= on->grad[r];
        });
    }
    return result;
}

namespace {

Tensor full_reduce(const char* op, const Tensor& x, bool average) {
    if (!x.defined()) throw UsageError(std::string(op) + ": undefined input tensor");
    const std::vector<double>& xv = x.values();
    double acc = 0.0;
    for (double v : xv) acc += v;
    const double denom = average ? static_cast<double>(xv.size()) : 1.0;
    Tape* tape = OpKit::common_tape(op, {&x});
    Tensor result = OpKit::output(tape, {1}, {acc / denom});
    if (tape) {
        auto xn = OpKit::node(x);
        auto on = OpKit::node(result);
        OpKit::record(tape, [xn, on, denom, tape]() {
            if (on->grad.empty() || !OpKit::wants_grad(xn, tape)) return;
            xn->ensure_grad();
            const double g = on->grad[0] / denom;
            for (double& gv : xn->grad) gv += g;
        });
    }
    return result;
}

}  // namespace

Tensor mean(const Tensor& x) { return full_reduce("mean", x, true); }
Tensor sum(const Tensor& x) { return full_reduce("sum", x, false); }

Tensor concat(const Tensor& a, const Tensor& b) {
    if (!a.defined() || !b.defined()) throw UsageError("concat: undefined input tensor");
    if (a.rank() != b.rank() || a.rank() == 0) shape_fail("concat", a.shape(), b.shape());
    for (std::size_t d = 0; d + 1 < a.rank(); ++d)
        if (a.shape()[d] != b.shape()[d]) shape_fail("concat", a.shape(), b.shape());
    const std::size_t la = a.shape().back(), lb = b.shape().back();
    const std::size_t rows = a.size() / la;
    Shape oshape = a.shape();
    oshape.back() = la + lb;
    std::vector<double> out(rows * (la + lb));
    const std::vector<double>& av = a.values();
    const std::vector<double>& bv = b.values();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(av.data() + r * la, la, out.data() + r * (la + lb));
        std::copy_n(bv.data() + r * lb, lb, out.data() + r * (la + lb) + la);
    }
    Tape* tape = OpKit::common_tape("concat", {&a, &b});
    Tensor result = OpKit::output(tape, std::move(oshape), std::move(out));
    if (tape) {
        auto an = OpKit::node(a);
        auto bn = OpKit::node(b);
        auto on = OpKit::node(result);
        OpKit::record(tape, [an, bn, on, rows, la, lb, tape]() {
            if (on->grad.empty()) return;
            const std::size_t lo = la + lb;
            if (OpKit::wants_grad(an, tape)) {
                an->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < la; ++c)
                        an->grad[r * la + c] += on->grad[r * lo + c];
            }
            if (OpKit::wants_grad(bn, tape)) {
                bn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < lb; ++c)
                        bn->grad[r * lb + c] += on->grad[r * lo + la + c];
            }
        });
    }
    return result;
}

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
    if (!table.defined() || table.rank() != 2)
        throw ShapeError("embedding: table must be rank-2, got " +
                         (table.defined() ? shape_str(table.shape()) : std::string("?")));
    const std::size_t rows = table.shape()[0], cols = table.shape()[1];
    for (std::size_t id : ids)
        if (id >= rows)
            throw InputError("embedding: row id " + std::to_string(id) + " out of range for " +
                             std::to_string(rows) + " rows");
    if (ids.empty()) throw ShapeError("embedding: empty id list");
    const std::vector<double>& tv = table.values();
    std::vector<double> out(ids.size() * cols);
    for (std::size_t r = 0; r < ids.size(); ++r)
        std::copy_n(tv.data() + ids[r] * cols, cols, out.data() + r * cols);
    Tape* tape = OpKit::common_tape("embedding", {&table});
    Tensor result = OpKit::output(tape, {ids.size(), cols}, std::move(out));
    if (tape) {
        auto tn = OpKit::node(table);
        auto on = OpKit::node(result);
        OpKit::record(tape, [tn, on, ids, cols, tape]() {
            if (on->grad.empty() || !OpKit::wants_grad(tn, tape)) return;
            tn->ensure_grad();
            for (std::size_t r = 0; r < ids.size(); ++r)
                for (std::size_t c = 0; c < cols; ++c)
                    tn->grad[ids[r] * cols + c] += on->grad[r * cols + c];
        });
    }
    return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (!x.defined()) throw UsageError("reshape: undefined input tensor");
    if (shape_numel(shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    Tape* tape = OpKit::common_tape("reshape", {&x});
    Tensor result = OpKit::output(tape, std::move(shape), x.values());
    if (tape) {
        auto xn = OpKit::node(x);
        auto on = OpKit::node(result);
        OpKit::record(tape, [xn, on, tape]() {
            if (on->grad.empty() || !OpKit::wants_grad(xn, tape)) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        });
    }
    return result;
}

Tensor transpose(const Tensor& x) {
    if (!x.defined() || x.rank() != 2)
        throw ShapeError("transpose: expected rank-2 input, got " +
                         (x.defined() ? shape_str(x.shape()) : std::string("?")));
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    const std::vector<double>& xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
    Tape* tape = OpKit::common_tape("transpose", {&x});
    Tensor result = OpKit::output(tape, {c, r}, std::move(out));
    if (tape) {
        auto xn = OpKit::node(x);
        auto on = OpKit::node(result);
        OpKit::record(tape, [xn, on, r, c, tape]() {
            if (on->grad.empty() || !OpKit::wants_grad(xn, tape)) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) xn->grad[i * c + j] += on->grad[j * r + i];
        });
    }
    return result;
}

Tensor scale(const Tensor& x, double c) {
    return elementwise_unary(
        "scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

}  // namespace xmetra
