#include "specenc/gradcheck.hpp"
#include "specenc/gradcheck_suite.hpp"
#include "specenc/ops.hpp"

#include <doctest.h>

#include <cmath>

using namespace specenc;
using namespace specenc::ad;

namespace {

Tensor<double> vec(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor<double>({n}, std::move(v));
}

Tensor<double> random_tensor(Rng& rng, Shape shape) {
    Tensor<double> t(std::move(shape));
    for (auto& x : t.vec()) x = rng.uniform(-1, 1);
    return t;
}

}  // namespace

TEST_SUITE("tensor-autodiff") {

TEST_CASE("relu values and gradient") {
    Tape<double> tape;
    auto x = tape.variable(vec({-1, 2}));
    auto y = relu(x);
    CHECK(y.value().vec() == std::vector<double>{0, 2});
    tape.backward(sum(y));
    CHECK(tape.grad(x).vec() == std::vector<double>{0, 1});
}

TEST_CASE("relu subgradient at zero is zero") {
    Tape<double> tape;
    auto x = tape.variable(vec({0.0}));
    tape.backward(sum(relu(x)));
    CHECK(tape.grad(x)[0] == 0.0);
}

TEST_CASE("softmax and segment_softmax examples") {
    Tape<double> tape;
    CHECK(softmax(tape.constant(vec({0, 0}))).value().vec() == std::vector<double>{0.5, 0.5});
    const auto s = segment_softmax(tape.constant(vec({1, 1, 2})), {0, 0, 1}, 2).value().vec();
    CHECK(s == std::vector<double>{0.5, 0.5, 1.0});
}

TEST_CASE("softmax rows and segments sum to one") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tape<double> tape;
        const std::size_t rows = 1 + rng.uniform_int(0, 6), cols = 1 + rng.uniform_int(0, 7);
        auto x = random_tensor(rng, {rows, cols});
        for (auto& v : x.vec()) v *= 20;
        const auto y = softmax(tape.constant(x)).value();
        for (std::size_t r = 0; r < rows; ++r) {
            double total = 0;
            for (std::size_t c = 0; c < cols; ++c) total += y[r * cols + c];
            CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
        }
        SegmentIds seg;
        const std::size_t nseg = 1 + rng.uniform_int(0, 4);
        for (std::size_t i = 0; i < rows * cols; ++i) seg.push_back(static_cast<std::uint32_t>(i * nseg / (rows * cols)));
        const auto z = segment_softmax(tape.constant(vec(x.vec())), seg, nseg).value();
        std::vector<double> totals(nseg, 0.0);
        for (std::size_t i = 0; i < seg.size(); ++i) totals[seg[i]] += z[i];
        for (std::size_t k = 0; k < nseg; ++k) {
            if (std::find(seg.begin(), seg.end(), k) != seg.end()) CHECK(totals[k] == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("backward examples") {
    {
        // mse(w*x, y) with w=1, x=2, y=0: dL/dw = 2 (wx - y) x = 8
        Tape<double> tape;
        auto w = tape.variable(vec({1.0}));
        auto x = tape.constant(vec({2.0}));
        auto loss = mse_loss(mul(w, x), vec({0.0}));
        tape.backward(loss);
        CHECK(tape.grad(w)[0] == 8.0);
    }
    {
        Tape<double> tape;
        auto x = tape.variable(vec({3.0}));
        tape.backward(sum(add(x, x)));
        CHECK(tape.grad(x)[0] == 2.0);
    }
}

TEST_CASE("backward contract errors") {
    Tape<double> tape;
    auto x = tape.variable(vec({1.0, 2.0}));
    CHECK_THROWS(tape.backward(x));
    auto l = sum(x);
    tape.backward(l);
    CHECK_THROWS(tape.backward(l));
}

TEST_CASE("shape errors name the op") {
    Tape<double> tape;
    auto a = tape.constant(Tensor<double>({2, 3}));
    auto b = tape.constant(Tensor<double>({2, 3}));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    }
    Rng rng(0);
    CHECK_THROWS(dropout(a, 1.0, true, rng));
    CHECK_THROWS(dropout(a, -0.1, true, rng));
}

TEST_CASE("grad_check on closed-form functions") {
    Rng rng(8);
    const auto x = random_tensor(rng, {3, 4});
    const auto squares = grad_check([](Tape<double>&, Var<double> v) { return sum(mul(v, v)); }, x);
    CHECK(squares.max_rel_error < 1e-8);
    CHECK(squares.checked == 12);
    const auto linear = grad_check([](Tape<double>&, Var<double> v) { return sum(scale(v, 3.0)); }, x);
    CHECK(linear.max_rel_error < 1e-8);
}

TEST_CASE("eval-mode dropout is the identity") {
    Rng rng(1);
    const auto x = random_tensor(rng, {4, 5});
    Tape<double> tape;
    Rng drng(2);
    CHECK(dropout(tape.constant(x), 0.5, false, drng).value() == x);
    const auto with = grad_check(
        [](Tape<double>&, Var<double> v) {
            Rng r(4);
            return sum(mul(dropout(v, 0.3, false, r), v));
        },
        x);
    const auto without = grad_check([](Tape<double>&, Var<double> v) { return sum(mul(v, v)); }, x);
    CHECK(with.max_rel_error == without.max_rel_error);
}

TEST_CASE("training-mode dropout is reproducible and unbiased") {
    const std::size_t n = 10000;
    const double p = 0.3;
    Tensor<double> ones({n}, 1.0);
    Tape<double> tape;
    Rng a(77), b(77);
    CHECK(dropout(tape.constant(ones), p, true, a).value() == dropout(tape.constant(ones), p, true, b).value());

    // Mean of 10k independent draws of a unit entry: expectation 1, variance
    // p / (1 - p) per draw.
    Rng rng(5);
    const auto y = dropout(tape.constant(ones), p, true, rng).value();
    double mean = 0;
    for (double v : y.vec()) {
        CHECK((v == 0.0 || v == doctest::Approx(1.0 / (1.0 - p))));
        mean += v;
    }
    mean /= static_cast<double>(n);
    const double sigma = std::sqrt(p / (1.0 - p) / static_cast<double>(n));
    CHECK(std::abs(mean - 1.0) < 3.0 * sigma);
}

TEST_CASE("matmul with the identity") {
    Rng rng(12);
    Tensor<float> x({5, 4});
    for (auto& v : x.vec()) v = static_cast<float>(rng.uniform(-3, 3));
    Tensor<float> eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0f;
    Tape<float> tape;
    CHECK(matmul(tape.constant(x), tape.constant(eye)).value() == x);
}

TEST_CASE("primitive gradient suite passes") {
    for (const auto& check : check_primitives(123, 20)) {
        INFO(check.name);
        CHECK(check.cases == 20);
        CHECK(check.worst.max_rel_error < 1e-6);
    }
}

TEST_CASE("corrupted matmul backward is caught") {
    testing::set_corrupt_matmul_backward(true);
    const auto checks = check_primitives(123, 5);
    testing::set_corrupt_matmul_backward(false);
    const auto it = std::find_if(checks.begin(), checks.end(), [](auto& c) { return c.name == "matmul"; });
    REQUIRE(it != checks.end());
    CHECK(it->worst.max_rel_error > 1e-4);
}

TEST_CASE("relative_error floors the denominator") {
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(2.0, 1.0) == 0.5);
    CHECK(relative_error(0.0, 1e-13) == doctest::Approx(0.1));
}

}  // TEST_SUITE
