#include "xmetra/gradcheck.hpp"

#include <cmath>

namespace xmetra {

namespace {

double eval_loss(const GradcheckLossFn& loss_fn, const ModelState& params) {
    Tape tape;
    BoundParams bound = bind(params, tape);
    return loss_fn(bound, tape).value();
}

ModelState with_element(const ModelState& params, const std::string& name, std::size_t index,
                        double value) {
    ModelState next;
    for (const auto& [pname, t] : params.params()) {
        if (pname != name) {
            next.add(pname, t);
            continue;
        }
        std::vector<double> v = t.values();
        v[index] = value;
        next.add(pname, Tensor::from(t.shape(), std::move(v)));
    }
    return next;
}

}  // namespace

GradcheckReport finite_difference_check(const GradcheckLossFn& loss_fn, const ModelState& params,
                                        double tolerance, double h) {
    // Analytic gradients from one taped pass.
    Tape tape;
    BoundParams bound = bind(params, tape);
    Tensor loss = loss_fn(bound, tape);
    tape.backward(loss);
    GradMap analytic = collect_grads(bound);

    GradcheckReport report;
    for (const auto& [name, t] : params.params()) {
        GradcheckBlock block;
        const std::vector<double>& ag = analytic.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double x = t.at(i);
            const double up = eval_loss(loss_fn, with_element(params, name, i, x + h));
            const double down = eval_loss(loss_fn, with_element(params, name, i, x - h));
            const double fd = (up - down) / (2.0 * h);
            const double denom = std::max({1.0, std::fabs(ag[i]), std::fabs(fd)});
            const double err = std::fabs(ag[i] - fd) / denom;
            if (err > block.max_rel_err) {
                block.max_rel_err = err;
                block.worst_index = i;
            }
        }
        if (block.max_rel_err > report.max_rel_err) {
            report.max_rel_err = block.max_rel_err;
            report.worst_param = name;
        }
        report.blocks.emplace(name, block);
    }
    report.pass = report.max_rel_err < tolerance;
    return report;
}

}  // namespace xmetra
