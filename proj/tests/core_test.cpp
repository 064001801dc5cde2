// Forward-op semantics, gradient correctness against the finite-difference
// oracle, the optimizer update rule, and initialization determinism.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ticketlab/init.hpp"
#include "ticketlab/optim.hpp"
#include "test_support.hpp"

using namespace ticketlab;
using namespace ticketlab::testing;

TEST_CASE("relu clamps negatives") {
    auto x = make_leaf(Tensor({3}, {-1.f, 0.f, 2.f}));
    auto y = relu(x);
    CHECK(y->value.data == std::vector<float>{0.f, 0.f, 2.f});
}

TEST_CASE("matmul identity returns the operand") {
    Tensor eye({3, 3});
    for (size_t i = 0; i < 3; ++i) eye.data[i * 3 + i] = 1.f;
    const Tensor a = random_tensor<float>({3, 3}, 7);
    auto y = matmul(make_leaf(eye), make_leaf(a));
    for (size_t i = 0; i < 9; ++i) CHECK(y->value.data[i] == doctest::Approx(a.data[i]).epsilon(1e-6));
}

TEST_CASE("matmul rejects mismatched shapes with both shapes in the message") {
    auto a = make_leaf(Tensor({2, 3}));
    auto b = make_leaf(Tensor({2, 4}));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x4]") != std::string::npos);
    }
}

TEST_CASE("conv2d of all-ones 4x4 with 2x2 kernel stride 2 gives all fours") {
    auto x = make_leaf(Tensor::full({1, 1, 4, 4}, 1.f));
    auto w = make_leaf(Tensor::full({1, 1, 2, 2}, 1.f));
    auto y = conv2d(x, w, /*stride=*/2, /*pad=*/0);
    CHECK(y->value.shape == Shape{1, 1, 2, 2});
    for (float v : y->value.data) CHECK(v == doctest::Approx(4.f));
}

TEST_CASE("softmax cross entropy on uniform logits is ln(classes)") {
    auto logits = make_leaf(Tensor::full({2, 4}, 0.37f));
    auto loss = softmax_cross_entropy(logits, {1, 3});
    CHECK(loss->value.data[0] == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("softmax cross entropy approaches zero with a confident margin") {
    Tensor t({1, 3});
    t.data = {30.f, 0.f, 0.f};
    auto loss = softmax_cross_entropy(make_leaf(t), {0});
    CHECK(loss->value.data[0] < 1e-6);
}

TEST_CASE("softmax cross entropy hand value for logits [[1,2]] label 0") {
    Tensor t({1, 2});
    t.data = {1.f, 2.f};
    auto loss = softmax_cross_entropy(make_leaf(t), {0});
    // -ln(e^1 / (e^1 + e^2)) = ln(1 + e) = 1.31326...
    CHECK(loss->value.data[0] == doctest::Approx(1.3133).epsilon(1e-4));
}

TEST_CASE("softmax cross entropy rejects out-of-range labels") {
    auto logits = make_leaf(Tensor({1, 3}));
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {3}), DataError);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {-1}), DataError);
}

TEST_CASE("backward of sum(w*w) yields 2w") {
    Parameter w("w", Tensor({2}, {1.f, 2.f}), true);
    auto leaf = make_param_leaf(w);
    auto loss = sum_all(mul(leaf, leaf));
    backward(loss);
    CHECK(w.grad.data[0] == doctest::Approx(2.f));
    CHECK(w.grad.data[1] == doctest::Approx(4.f));
}

TEST_CASE("parameters not on the graph keep zero gradients") {
    Parameter used("used", Tensor({2}, {1.f, 1.f}), true);
    Parameter unused("unused", Tensor({2}, {1.f, 1.f}), true);
    auto loss = sum_all(make_param_leaf(used));
    backward(loss);
    CHECK(used.grad.data[0] == doctest::Approx(1.f));
    CHECK(unused.grad.data[0] == 0.f);
    CHECK(unused.grad.data[1] == 0.f);
}

TEST_CASE("backward called twice without a fresh forward is an error") {
    Parameter w("w", Tensor({2}, {1.f, 2.f}), true);
    auto loss = sum_all(mul(make_param_leaf(w), make_param_leaf(w)));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), Error);
}

TEST_CASE("non-finite op output raises NumericsError") {
    Tensor big = Tensor::full({1, 2}, 3e38f);
    auto x = make_leaf(big);
    CHECK_THROWS_AS(add(x, x), NumericsError);
}

// ------------------------------------------------------------ gradient oracle

TEST_CASE("gradients match finite differences in double precision") {
    const double h = 1e-5;
    const double tol = 1e-7;

    SUBCASE("matmul") {
        auto a = random_tensor<double>({3, 4}, 1);
        auto b = random_tensor<double>({4, 5}, 2);
        auto rep = grad_check<double>(
            [](const std::vector<VarT<double>>& in) { return matmul(in[0], in[1]); }, {a, b}, h, 99);
        CHECK(rep.max_rel_err < tol);
    }
    SUBCASE("add broadcast") {
        auto a = random_tensor<double>({4, 6}, 3);
        auto b = random_tensor<double>({6}, 4);
        auto rep = grad_check<double>(
            [](const std::vector<VarT<double>>& in) { return add(in[0], in[1]); }, {a, b}, h, 99);
        CHECK(rep.max_rel_err < tol);
    }
    SUBCASE("mul") {
        auto a = random_tensor<double>({5, 3}, 5);
        auto b = random_tensor<double>({5, 3}, 6);
        auto rep = grad_check<double>(
            [](const std::vector<VarT<double>>& in) { return mul(in[0], in[1]); }, {a, b}, h, 99);
        CHECK(rep.max_rel_err < tol);
    }
    SUBCASE("relu") {
        auto x = random_tensor<double>({4, 7}, 7);
        avoid_kinks(x, 10 * h);
        auto rep = grad_check<double>(
            [](const std::vector<VarT<double>>& in) { return relu(in[0]); }, {x}, h, 99);
        CHECK(rep.max_rel_err < tol);
    }
    SUBCASE("conv2d with stride, padding and bias") {
        auto x = random_tensor<double>({2, 3, 5, 5}, 8);
        auto w = random_tensor<double>({4, 3, 3, 3}, 9);
        auto b = random_tensor<double>({4}, 10);
        auto rep = grad_check<double>(
            [](const std::vector<VarT<double>>& in) { return conv2d(in[0], in[1], in[2], 2, 1); },
            {x, w, b}, h, 99);
        CHECK(rep.max_rel_err < tol);
    }
    SUBCASE("avg_pool2d") {
        auto x = random_tensor<double>({2, 2, 6, 6}, 11);
        auto rep = grad_check<double>(
            [](const std::vector<VarT<double>>& in) { return avg_pool2d(in[0], 2, 2, 2, 2); }, {x},
            h, 99);
        CHECK(rep.max_rel_err < tol);
    }
    SUBCASE("flatten") {
        auto x = random_tensor<double>({3, 2, 2, 2}, 12);
        auto rep = grad_check<double>(
            [](const std::vector<VarT<double>>& in) { return flatten(in[0]); }, {x}, h, 99);
        CHECK(rep.max_rel_err < tol);
    }
    SUBCASE("batch_norm training mode") {
        auto x = random_tensor<double>({3, 4, 3, 3}, 13);
        auto g = random_tensor<double>({4}, 14, 0.5, 1.5);
        auto b = random_tensor<double>({4}, 15);
        auto rep = grad_check<double>(
            [](const std::vector<VarT<double>>& in) {
                return batch_norm(in[0], in[1], in[2], nullptr, nullptr, true, 0.9);
            },
            {x, g, b}, h, 99);
        CHECK(rep.max_rel_err < tol);
    }
    SUBCASE("batch_norm inference mode") {
        auto x = random_tensor<double>({2, 3, 4, 4}, 16);
        auto g = random_tensor<double>({3}, 17, 0.5, 1.5);
        auto b = random_tensor<double>({3}, 18);
        auto rm = std::make_shared<TensorT<double>>(random_tensor<double>({3}, 19, -0.2, 0.2));
        auto rv = std::make_shared<TensorT<double>>(random_tensor<double>({3}, 20, 0.5, 1.5));
        auto rep = grad_check<double>(
            [rm, rv](const std::vector<VarT<double>>& in) {
                return batch_norm(in[0], in[1], in[2], rm.get(), rv.get(), false, 0.9);
            },
            {x, g, b}, h, 99);
        CHECK(rep.max_rel_err < tol);
    }
    SUBCASE("softmax cross entropy") {
        auto logits = random_tensor<double>({5, 4}, 21, -2.0, 2.0);
        auto rep = grad_check<double>(
            [](const std::vector<VarT<double>>& in) {
                return softmax_cross_entropy(in[0], {0, 3, 1, 2, 2});
            },
            {logits}, h, 99);
        CHECK(rep.max_rel_err < tol);
    }
    SUBCASE("composite chain") {
        auto x = random_tensor<double>({2, 2, 4, 4}, 22);
        auto w = random_tensor<double>({3, 2, 3, 3}, 23);
        auto fc = random_tensor<double>({3 * 2 * 2, 4}, 24);
        auto rep = grad_check<double>(
            [](const std::vector<VarT<double>>& in) {
                auto y = relu(conv2d(in[0], in[1], 2, 1));
                return matmul(flatten(y), in[2]);
            },
            {x, w, fc}, h, 99);
        CHECK(rep.max_rel_err < tol);
    }
}

// ------------------------------------------------------------------ optimizer

TEST_CASE("plain sgd step with zero momentum and decay") {
    Parameter w("w", Tensor({1}, {1.f}), true);
    w.grad.data[0] = 2.f;
    OptimizerState opt;
    opt.learning_rate = 0.1f;
    opt.momentum = 0.f;
    opt.weight_decay = 0.f;
    opt.sgd_step({&w});
    CHECK(w.value.data[0] == doctest::Approx(0.8f));
}

TEST_CASE("zero gradient and zero decay leave weights unchanged") {
    Parameter w("w", Tensor({3}, {1.f, -2.f, 0.5f}), true);
    OptimizerState opt;
    opt.weight_decay = 0.f;
    opt.sgd_step({&w});
    CHECK(w.value.data == std::vector<float>{1.f, -2.f, 0.5f});
}

TEST_CASE("two nesterov steps on f(w)=w^2/2 match the closed-form recurrence") {
    // Oracle: v' = rho*v - lr*g, w' = w + rho*v' - lr*g with g = w.
    double vw = 1.0, vv = 0.0;
    const double lr = 0.1, rho = 0.9;
    for (int s = 0; s < 2; ++s) {
        const double g = vw;
        vv = rho * vv - lr * g;
        vw = vw + rho * vv - lr * g;
    }

    Parameter w("w", Tensor({1}, {1.f}), true);
    OptimizerState opt;
    opt.learning_rate = 0.1f;
    opt.momentum = 0.9f;
    opt.weight_decay = 0.f;
    for (int s = 0; s < 2; ++s) {
        w.grad.data[0] = w.value.data[0];  // d(w^2/2)/dw = w
        opt.sgd_step({&w});
    }
    CHECK(w.value.data[0] == doctest::Approx(vw).epsilon(1e-6));
    CHECK(vw == doctest::Approx(0.5751).epsilon(1e-4));
}

TEST_CASE("weight decay adds alpha*w to the gradient") {
    Parameter w("w", Tensor({1}, {2.f}), true);
    OptimizerState opt;
    opt.learning_rate = 0.5f;
    opt.momentum = 0.f;
    opt.weight_decay = 0.1f;
    opt.sgd_step({&w});  // g' = 0 + 0.1*2 = 0.2; w = 2 - 0.5*0.2 = 1.9
    CHECK(w.value.data[0] == doctest::Approx(1.9f));
}

// --------------------------------------------------------------------- init

TEST_CASE("xavier draws are bit-identical for identical (scheme, seed, shape)") {
    const auto a = xavier_uniform<float>(1234, {30, 20});
    const auto b = xavier_uniform<float>(1234, {30, 20});
    CHECK(a.data == b.data);
    const auto c = xavier_uniform<float>(1235, {30, 20});
    CHECK(a.data != c.data);
}

TEST_CASE("xavier variance is close to 2/(fan_in+fan_out)") {
    const size_t fan_in = 250, fan_out = 400;  // 100k elements
    const auto t = xavier_uniform<float>(42, {fan_in, fan_out});
    double mean = 0;
    for (float v : t.data) mean += v;
    mean /= static_cast<double>(t.numel());
    double var = 0;
    for (float v : t.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(t.numel());
    const double expect = 2.0 / static_cast<double>(fan_in + fan_out);
    CHECK(var == doctest::Approx(expect).epsilon(0.10));
}
