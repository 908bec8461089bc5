#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "xmetra/ops.hpp"
#include "xmetra/optim.hpp"

using namespace xmetra;

namespace {

ModelState one_param(double v) {
    ModelState s;
    s.add("theta", Tensor::scalar(v));
    return s;
}

GradMap one_grad(double g) {
    GradMap m;
    m["theta"] = {g};
    return m;
}

// Scalar reference evaluation of the Adam recurrence, written independently
// of the library implementation.
double adam_reference(double theta, double g, int steps, double lr, double b1, double b2,
                      double eps, double wd) {
    double m = 0.0, v = 0.0;
    for (int t = 1; t <= steps; ++t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        theta -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * theta);
    }
    return theta;
}

}  // namespace

TEST_CASE("sgd_step basics") {
    SUBCASE("theta=2 grad=3 alpha=0.1 gives 1.7") {
        ModelState next = sgd_step(one_param(2.0), one_grad(3.0), 0.1);
        CHECK(next.at("theta").value() == doctest::Approx(1.7).epsilon(1e-15));
    }
    SUBCASE("alpha=0 is the identity") {
        ModelState next = sgd_step(one_param(2.0), one_grad(123.0), 0.0);
        CHECK(next.at("theta").value() == 2.0);
    }
    SUBCASE("one step on the quadratic gives (1-alpha)*theta") {
        // loss = theta^2 / 2, grad = theta
        const double theta = 1.37, alpha = 0.25;
        ModelState next = sgd_step(one_param(theta), one_grad(theta), alpha);
        CHECK(next.at("theta").value() == doctest::Approx((1 - alpha) * theta).epsilon(1e-15));
    }
    SUBCASE("missing gradient entry is a contract error") {
        GradMap grads;
        CHECK_THROWS_AS(sgd_step(one_param(1.0), grads, 0.1), ContractError);
    }
    SUBCASE("result is detached") {
        ModelState next = sgd_step(one_param(1.0), one_grad(1.0), 0.1);
        CHECK_FALSE(next.at("theta").attached());
    }
}

TEST_CASE("adam_step matches the hand recurrence") {
    SUBCASE("first step moves by about lr*sign(g)") {
        OptimizerState opt = OptimizerState::adam(0.01);
        ModelState next = adam_step(one_param(1.0), one_grad(0.5), opt);
        CHECK(next.at("theta").value() == doctest::Approx(1.0 - 0.01).epsilon(1e-5));
        CHECK(opt.step_count == 1);

        OptimizerState opt2 = OptimizerState::adam(0.01);
        ModelState next2 = adam_step(one_param(1.0), one_grad(-2.0), opt2);
        CHECK(next2.at("theta").value() == doctest::Approx(1.0 + 0.01).epsilon(1e-5));
    }
    SUBCASE("zero gradient leaves parameters unchanged, moments decay") {
        OptimizerState opt = OptimizerState::adam(0.05);
        ModelState cur = one_param(3.0);
        cur = adam_step(cur, one_grad(0.0), opt);
        cur = adam_step(cur, one_grad(0.0), opt);
        CHECK(cur.at("theta").value() == 3.0);
        CHECK(opt.first_moment.at("theta")[0] == 0.0);
        CHECK(opt.step_count == 2);
    }
    SUBCASE("two steps on a constant gradient match the scalar recurrence") {
        OptimizerState opt = OptimizerState::adam(0.01);
        ModelState cur = one_param(0.8);
        cur = adam_step(cur, one_grad(0.3), opt);
        cur = adam_step(cur, one_grad(0.3), opt);
        const double expect = adam_reference(0.8, 0.3, 2, 0.01, 0.9, 0.999, 1e-8, 0.0);
        CHECK(cur.at("theta").value() == doctest::Approx(expect).epsilon(1e-14));
    }
    SUBCASE("weight decay follows the decoupled recurrence") {
        OptimizerState opt = OptimizerState::adam(0.01, 1e-3);
        ModelState cur = one_param(0.8);
        for (int i = 0; i < 3; ++i) cur = adam_step(cur, one_grad(0.3), opt);
        const double expect = adam_reference(0.8, 0.3, 3, 0.01, 0.9, 0.999, 1e-8, 1e-3);
        CHECK(cur.at("theta").value() == doctest::Approx(expect).epsilon(1e-14));
    }
    SUBCASE("sgd state kind rejected") {
        OptimizerState opt = OptimizerState::sgd(0.1);
        CHECK_THROWS_AS(adam_step(one_param(1.0), one_grad(1.0), opt), ContractError);
    }
}

TEST_CASE("frozen parameters are bit-unchanged by updates") {
    ModelState params;
    params.add("encoder.embed", Tensor::from({2, 2}, {1, 2, 3, 4}));
    params.add("head.w", Tensor::from({2}, {5, 6}));
    GradMap grads;
    grads["encoder.embed"] = {1, 1, 1, 1};
    grads["head.w"] = {1, 1};
    FreezeMask frozen{"encoder.embed"};

    SUBCASE("under sgd") {
        ModelState next = sgd_step(params, grads, 0.1, frozen);
        CHECK(next.at("encoder.embed").values() == params.at("encoder.embed").values());
        CHECK(next.at("head.w").values() != params.at("head.w").values());
    }
    SUBCASE("under adam with weight decay") {
        OptimizerState opt = OptimizerState::adam(0.1, 1e-2);
        ModelState next = adam_step(params, grads, opt, frozen);
        CHECK(next.at("encoder.embed").values() == params.at("encoder.embed").values());
        CHECK(next.at("head.w").values() != params.at("head.w").values());
        CHECK(opt.first_moment.count("encoder.embed") == 0);
    }
}

TEST_CASE("bound leaves collect gradients by name") {
    ModelState params;
    params.add("w", Tensor::from({2}, {1.0, 2.0}));
    Tape tape;
    BoundParams bound = bind(params, tape);
    Tensor loss = sum(mul(bound.at("w"), bound.at("w")));
    tape.backward(loss);
    GradMap grads = collect_grads(bound);
    CHECK(grads.at("w") == std::vector<double>{2.0, 4.0});
}

TEST_CASE("checkpoint json round trip is exact") {
    ModelState params;
    params.add("w", Tensor::from({2, 2}, {0.1, -2.5e-7, 3.0, 1.0 / 3.0}));
    params.add("b", Tensor::from({2}, {1e300, -4.2}));
    const std::string path =
        (std::filesystem::temp_directory_path() / "xmetra_ckpt_test.json").string();
    params.save_json(path);
    ModelState loaded = ModelState::load_json(path);
    CHECK(same_values(params, loaded));
    std::filesystem::remove(path);
}
