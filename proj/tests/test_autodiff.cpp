#include "doctest.h"

#include <cmath>

#include "dsrnet/autodiff.hpp"
#include "dsrnet/rng.hpp"
#include "testutil.hpp"

using namespace dsrnet;
using testutil::fd_gradient;
using testutil::max_rel_err;

namespace {

// Checks d(mean of op(x,...))/dx against central differences for each input.
void check_grads(const std::function<Var(const std::vector<Var>&)>& op,
                 const std::vector<Tensor>& inputs, double h = 1e-5, double tol = 1e-7) {
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(leaf(t));
    Var out = mean_all(op(leaves));
    backward(out);
    for (size_t k = 0; k < inputs.size(); ++k) {
        auto f = [&](const Tensor& xk) {
            std::vector<Var> vs;
            for (size_t j = 0; j < inputs.size(); ++j)
                vs.push_back(constant(j == k ? xk : inputs[j]));
            return mean_all(op(vs))->value[0];
        };
        Tensor fd = fd_gradient(f, inputs[k], h);
        REQUIRE(leaves[k]->grad.numel() == fd.numel());
        CHECK(max_rel_err(leaves[k]->grad, fd) < tol);
    }
}

Tensor rnd(Rng& rng, std::vector<int64_t> shape, double lo = -1.0, double hi = 1.0) {
    return rng.uniform_tensor(std::move(shape), lo, hi);
}

} // namespace

TEST_CASE("elementwise ops match finite differences") {
    Rng rng(7);
    Tensor a = rnd(rng, {3, 4, 5}), b = rnd(rng, {3, 4, 5}, 0.5, 2.0);
    check_grads([](const std::vector<Var>& v) { return add(v[0], v[1]); }, {a, b});
    check_grads([](const std::vector<Var>& v) { return sub(v[0], v[1]); }, {a, b});
    check_grads([](const std::vector<Var>& v) { return mul(v[0], v[1]); }, {a, b});
    check_grads([](const std::vector<Var>& v) { return div(v[0], v[1]); }, {a, b});
}

TEST_CASE("unary ops match finite differences") {
    Rng rng(8);
    Tensor a = rnd(rng, {2, 3, 3}, 0.2, 1.5); // positive, away from relu/abs kinks
    Tensor s = rnd(rng, {2, 3, 3}, -1.5, -0.2);
    check_grads([](const std::vector<Var>& v) { return neg(v[0]); }, {a});
    check_grads([](const std::vector<Var>& v) { return scale(v[0], -2.5); }, {a});
    check_grads([](const std::vector<Var>& v) { return add_const(v[0], 3.0); }, {a});
    check_grads([](const std::vector<Var>& v) { return relu(v[0]); }, {a});
    check_grads([](const std::vector<Var>& v) { return relu(v[0]); }, {s});
    check_grads([](const std::vector<Var>& v) { return tanh_of(v[0]); }, {a});
    check_grads([](const std::vector<Var>& v) { return sigmoid(v[0]); }, {a});
    check_grads([](const std::vector<Var>& v) { return silu(v[0]); }, {a});
    check_grads([](const std::vector<Var>& v) { return abs_of(v[0]); }, {s});
    check_grads([](const std::vector<Var>& v) { return square(v[0]); }, {a});
}

TEST_CASE("reductions and scalar scaling") {
    Rng rng(9);
    Tensor a = rnd(rng, {2, 4, 4});
    Tensor s({1}, {0.7});
    check_grads([](const std::vector<Var>& v) { return sum_all(v[0]); }, {a});
    check_grads([](const std::vector<Var>& v) { return scale_by(v[0], v[1]); }, {a, s});
}

TEST_CASE("conv2d matches finite differences") {
    Rng rng(10);
    SUBCASE("1x1") {
        Tensor x = rnd(rng, {4, 5, 5}), w = rnd(rng, {6, 4, 1, 1}), b = rnd(rng, {6});
        check_grads([](const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], 1, 0, 1); },
                    {x, w, b}, 1e-5, 1e-6);
    }
    SUBCASE("3x3 padded") {
        Tensor x = rnd(rng, {3, 6, 7}), w = rnd(rng, {5, 3, 3, 3}), b = rnd(rng, {5});
        check_grads([](const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], 1, 1, 1); },
                    {x, w, b}, 1e-5, 1e-6);
    }
    SUBCASE("3x3 stride 2") {
        Tensor x = rnd(rng, {3, 8, 8}), w = rnd(rng, {4, 3, 3, 3}), b = rnd(rng, {4});
        check_grads([](const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], 2, 1, 1); },
                    {x, w, b}, 1e-5, 1e-6);
    }
    SUBCASE("depthwise") {
        Tensor x = rnd(rng, {6, 5, 5}), w = rnd(rng, {6, 1, 3, 3}), b = rnd(rng, {6});
        check_grads([](const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], 1, 1, 6); },
                    {x, w, b}, 1e-5, 1e-6);
    }
    SUBCASE("grouped") {
        Tensor x = rnd(rng, {4, 5, 5}), w = rnd(rng, {6, 2, 3, 3}), b = rnd(rng, {6});
        check_grads([](const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], 1, 1, 2); },
                    {x, w, b}, 1e-5, 1e-6);
    }
}

TEST_CASE("conv2d validates shapes") {
    Rng rng(11);
    Tensor x = rnd(rng, {4, 5, 5});
    CHECK_THROWS_AS(conv2d(leaf(x), leaf(rnd(rng, {6, 3, 1, 1})), leaf(rnd(rng, {6})), 1, 0, 1),
                    ShapeError);
    CHECK_THROWS_AS(conv2d(leaf(x), leaf(rnd(rng, {6, 4, 1, 1})), leaf(rnd(rng, {5})), 1, 0, 1),
                    ShapeError);
}

TEST_CASE("pooling and upsampling match finite differences") {
    Rng rng(12);
    check_grads([](const std::vector<Var>& v) { return avgpool2_ceil(v[0]); },
                {rnd(rng, {2, 6, 6})});
    check_grads([](const std::vector<Var>& v) { return avgpool2_ceil(v[0]); },
                {rnd(rng, {2, 5, 7})}); // odd sizes hit the clipped windows
    check_grads([](const std::vector<Var>& v) { return upsample_nearest2(v[0]); },
                {rnd(rng, {3, 4, 5})});
    // maxpool: values spread out so the argmax is stable under the fd step
    Tensor x({1, 4, 4});
    for (int64_t i = 0; i < 16; ++i) x[i] = static_cast<double>((i * 7) % 16) * 0.5;
    check_grads([](const std::vector<Var>& v) { return maxpool2(v[0]); }, {x}, 1e-4, 1e-6);
}

TEST_CASE("avgpool2_ceil output sizes") {
    Rng rng(13);
    Var y = avgpool2_ceil(constant(rnd(rng, {1, 5, 5})));
    CHECK(y->value.dim(1) == 3);
    Var z = avgpool2_ceil(y);
    CHECK(z->value.dim(1) == 2); // 5 -> 3 -> 2, matching the 2^(N-1)+1 precondition
}

TEST_CASE("structure ops match finite differences") {
    Rng rng(14);
    Tensor a = rnd(rng, {2, 3, 4}), b = rnd(rng, {3, 3, 4});
    check_grads([](const std::vector<Var>& v) { return concat_channels({v[0], v[1]}); }, {a, b});
    check_grads([](const std::vector<Var>& v) { return slice_channels(v[0], 1, 3); }, {b});
}

TEST_CASE("layer norm matches finite differences") {
    Rng rng(15);
    Tensor x = rnd(rng, {3, 4, 4}), g = rnd(rng, {3}, 0.5, 1.5), b = rnd(rng, {3});
    check_grads([](const std::vector<Var>& v) { return layer_norm_channels(v[0], v[1], v[2]); },
                {x, g, b}, 1e-5, 1e-6);
}

TEST_CASE("channel attention primitives match finite differences") {
    Rng rng(16);
    Tensor x = rnd(rng, {4, 3, 3}), s = rnd(rng, {4, 1, 1}, 0.5, 1.5);
    check_grads([](const std::vector<Var>& v) { return global_avg_pool(v[0]); }, {x});
    check_grads([](const std::vector<Var>& v) { return mul_channel(v[0], v[1]); }, {x, s});
}

TEST_CASE("spatial gradients match finite differences and close cycles") {
    Rng rng(17);
    Tensor x = rnd(rng, {2, 5, 6});
    check_grads([](const std::vector<Var>& v) { return grad_x(v[0]); }, {x});
    check_grads([](const std::vector<Var>& v) { return grad_y(v[0]); }, {x});
    CHECK_THROWS_AS(grad_x(constant(Tensor({1, 3, 1}))), ShapeError);
    CHECK_THROWS_AS(grad_y(constant(Tensor({1, 1, 3}))), ShapeError);
}

TEST_CASE("gradient accumulates through shared subexpressions") {
    // y = mean(x*x + x) hits x twice via different paths
    Rng rng(18);
    Tensor x = rnd(rng, {2, 3, 3}, 0.1, 1.0);
    Var xv = leaf(x);
    Var y = mean_all(add(mul(xv, xv), xv));
    backward(y);
    auto f = [](const Tensor& t) {
        double acc = 0.0;
        for (int64_t i = 0; i < t.numel(); ++i) acc += t[i] * t[i] + t[i];
        return acc / static_cast<double>(t.numel());
    };
    Tensor fd = fd_gradient(f, x, 1e-6);
    CHECK(max_rel_err(xv->grad, fd) < 1e-7);
}

TEST_CASE("backward requires a scalar root") {
    Var v = leaf(Tensor({2, 2, 2}));
    CHECK_THROWS_AS(backward(v), ShapeError);
}
