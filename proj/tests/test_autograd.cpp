#include <doctest.h>

#include "support.hpp"

using namespace plip;
using plip::testing::random_tensor;

namespace {

// loss = sum(f(inputs) * r) with a fixed random r, checked at every input entry
double op_grad_error(const std::vector<Shape>& shapes, const std::function<ag::Var(const std::vector<ag::Var>&)>& f,
                     std::uint64_t seed = 1, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    nn::ParamStore store;
    std::vector<ag::Var> xs;
    for (std::size_t i = 0; i < shapes.size(); ++i)
        xs.push_back(store.add("x" + std::to_string(i), random_tensor(shapes[i], rng, lo, hi)));
    Tensor r;
    auto loss = [&]() {
        auto y = f(xs);
        if (r.empty()) r = random_tensor(y.shape(), rng);
        return ag::sum(ag::mul(y, ag::constant(r)));
    };
    return plip::testing::worst(plip::testing::gradient_probes(store, loss, 1000, seed));
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    t.at({1, 2}) = 5.0;
    CHECK(t[5] == 5.0);
    CHECK(t.reshaped({3, 2}).at({2, 1}) == 5.0);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
    CHECK_THROWS_AS(t.item(), ShapeError);
    CHECK(Tensor::scalar(3.5).item() == 3.5);
}

TEST_CASE("elementwise gradients") {
    CHECK(op_grad_error({{3, 4}, {3, 4}}, [](auto& x) { return ag::add(x[0], x[1]); }) < kTol);
    CHECK(op_grad_error({{3, 4}, {3, 4}}, [](auto& x) { return ag::sub(x[0], x[1]); }) < kTol);
    CHECK(op_grad_error({{3, 4}, {3, 4}}, [](auto& x) { return ag::mul(x[0], x[1]); }) < kTol);
    CHECK(op_grad_error({{5}}, [](auto& x) { return ag::scale(x[0], -2.5); }) < kTol);
    CHECK(op_grad_error({{5}}, [](auto& x) { return ag::add_scalar(ag::neg(x[0]), 1.5); }) < kTol);
    CHECK(op_grad_error({{2, 3}, {3}}, [](auto& x) { return ag::add_bias(x[0], x[1]); }) < kTol);
    CHECK(op_grad_error({{7}}, [](auto& x) { return ag::silu(x[0]); }, 2, -3, 3) < kTol);
    CHECK(op_grad_error({{7}}, [](auto& x) { return ag::sigmoid(x[0]); }, 3, -3, 3) < kTol);
    CHECK(op_grad_error({{7}}, [](auto& x) { return ag::tanh(x[0]); }) < kTol);
    CHECK(op_grad_error({{7}}, [](auto& x) { return ag::exp(x[0]); }) < kTol);
    CHECK(op_grad_error({{7}}, [](auto& x) { return ag::log(x[0]); }, 4, 0.5, 2.0) < kTol);
    CHECK(op_grad_error({{7}}, [](auto& x) { return ag::square(x[0]); }) < kTol);
}

TEST_CASE("reduction and matrix gradients") {
    CHECK(op_grad_error({{3, 4}}, [](auto& x) { return ag::mean(x[0]); }) < kTol);
    CHECK(op_grad_error({{3, 4}, {4, 2}}, [](auto& x) { return ag::matmul(x[0], x[1]); }) < kTol);
    CHECK(op_grad_error({{3, 4}, {4, 2}, {2}}, [](auto& x) { return ag::linear(x[0], x[1], x[2]); }) < kTol);
    CHECK(op_grad_error({{2, 3, 4}, {2, 4, 5}}, [](auto& x) { return ag::bmm(x[0], x[1]); }) < kTol);
    CHECK(op_grad_error({{2, 3, 4}, {2, 5, 4}}, [](auto& x) { return ag::bmm(x[0], x[1], true); }) < kTol);
}

TEST_CASE("shape op gradients") {
    CHECK(op_grad_error({{2, 6}}, [](auto& x) { return ag::reshape(x[0], {3, 4}); }) < kTol);
    CHECK(op_grad_error({{2, 3, 4}}, [](auto& x) { return ag::permute(x[0], {2, 0, 1}); }) < kTol);
    CHECK(op_grad_error({{2, 3}, {2, 2}}, [](auto& x) { return ag::concat({x[0], x[1]}, 1); }) < kTol);
    CHECK(op_grad_error({{2, 3}, {1, 3}}, [](auto& x) { return ag::concat({x[0], x[1]}, 0); }) < kTol);
    CHECK(op_grad_error({{2, 5, 3}}, [](auto& x) { return ag::slice(x[0], 1, 1, 3); }) < kTol);
    const std::vector<std::int64_t> idx{2, 0, 2, 1};
    CHECK(op_grad_error({{3, 4}}, [&](auto& x) { return ag::gather_rows(x[0], idx); }) < kTol);
}

TEST_CASE("softmax, norm and loss gradients") {
    CHECK(op_grad_error({{3, 5}}, [](auto& x) { return ag::softmax_last(x[0]); }) < kTol);
    CHECK(op_grad_error({{3, 5}}, [](auto& x) { return ag::log_softmax_last(x[0]); }) < kTol);
    const std::vector<std::int64_t> targets{4, -1, 0};
    CHECK(op_grad_error({{3, 5}}, [&](auto& x) { return ag::cross_entropy_sum(x[0], targets); }) < kTol);
    CHECK(op_grad_error({{3, 6}, {6}, {6}}, [](auto& x) { return ag::layer_norm_last(x[0], x[1], x[2]); }) < kTol);
    CHECK(op_grad_error({{4, 3}}, [](auto& x) { return ag::normalize_rows(x[0]); }) < kTol);
    std::mt19937_64 rng(9);
    const Tensor target = random_tensor({2, 3}, rng);
    CHECK(op_grad_error({{2, 3}}, [&](auto& x) { return ag::mse(x[0], target); }) < kTol);
}

TEST_CASE("image op gradients") {
    CHECK(op_grad_error({{2, 2, 5, 6}, {3, 2, 3, 3}, {3}}, [](auto& x) { return ag::conv2d(x[0], x[1], x[2], 1, 1); }) <
          kTol);
    CHECK(op_grad_error({{1, 2, 6, 6}, {3, 2, 3, 3}, {3}}, [](auto& x) { return ag::conv2d(x[0], x[1], x[2], 2, 1); }) <
          kTol);
    CHECK(op_grad_error({{1, 3, 3, 2}, {3, 2, 4, 4}, {2}},
                        [](auto& x) { return ag::conv_transpose2d(x[0], x[1], x[2], 2, 1); }) < kTol);
    CHECK(op_grad_error({{1, 2, 3, 4}}, [](auto& x) { return ag::upsample_bilinear(x[0], 6, 8); }) < kTol);
    CHECK(op_grad_error({{1, 2, 8, 6}}, [](auto& x) { return ag::upsample_bilinear(x[0], 3, 4); }) < kTol);
    CHECK(op_grad_error({{2, 3, 4, 4}}, [](auto& x) { return ag::global_avg_pool(x[0]); }) < kTol);
    CHECK(op_grad_error({{2, 3, 2, 2}, {2, 3}}, [](auto& x) { return ag::channel_scale(x[0], x[1]); }) < kTol);
    CHECK(op_grad_error({{1, 2, 3, 4}}, [](auto& x) { return ag::reflect_pad(x[0], 1, 2, 0, 3); }) < kTol);
}

TEST_CASE("conv2d matches a direct loop") {
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor({2, 3, 5, 4}, rng), w = random_tensor({2, 3, 3, 3}, rng), b = random_tensor({2}, rng);
    const int stride = 2, pad = 1;
    const Tensor y = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), stride, pad).value();
    REQUIRE(y.shape() == Shape{2, 2, 3, 2});
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t o = 0; o < 2; ++o)
            for (std::int64_t i = 0; i < 3; ++i)
                for (std::int64_t j = 0; j < 2; ++j) {
                    double s = b[static_cast<std::size_t>(o)];
                    for (std::int64_t c = 0; c < 3; ++c)
                        for (std::int64_t ki = 0; ki < 3; ++ki)
                            for (std::int64_t kj = 0; kj < 3; ++kj) {
                                const auto yy = i * stride - pad + ki, xx = j * stride - pad + kj;
                                if (yy < 0 || yy >= 5 || xx < 0 || xx >= 4) continue;
                                s += w.at({o, c, ki, kj}) * x.at({n, c, yy, xx});
                            }
                    CHECK(y.at({n, o, i, j}) == doctest::Approx(s).epsilon(1e-12));
                }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    // <conv(x; w), y> == <x, convT(y; w)> when the bias is zero
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = random_tensor({1, 2, 8, 6}, rng), w = random_tensor({3, 2, 4, 4}, rng);
        const ag::Var zc = ag::constant(Tensor({3})), zt = ag::constant(Tensor({2}));
        const Tensor cx = ag::conv2d(ag::constant(x), ag::constant(w), zc, 2, 1).value();
        const Tensor y = random_tensor(cx.shape(), rng);
        const Tensor ty = ag::conv_transpose2d(ag::constant(y), ag::constant(w), zt, 2, 1).value();
        REQUIRE(ty.shape() == x.shape());
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < cx.size(); ++i) lhs += cx[i] * y[i];
        for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("reflect padding mirrors without repeating the edge") {
    const Tensor x({1, 1, 1, 3}, {1, 2, 3});
    const Tensor y = ag::reflect_pad(ag::constant(x), 0, 0, 2, 2).value();
    CHECK(y.storage() == std::vector<double>{3, 2, 1, 2, 3, 2, 1});
}

TEST_CASE("bilinear resize to the same size is the identity") {
    std::mt19937_64 rng(7);
    const Tensor x = random_tensor({1, 2, 3, 5}, rng);
    const Tensor y = ag::upsample_bilinear(ag::constant(x), 3, 5).value();
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-14));
}

TEST_CASE("log_softmax is shift invariant and normalized") {
    std::mt19937_64 rng(8);
    const Tensor x = random_tensor({4, 6}, rng, -20, 20);
    const Tensor a = ag::log_softmax_last(ag::constant(x)).value();
    const Tensor b = ag::log_softmax_last(ag::add_scalar(ag::constant(x), 1000.0)).value();
    for (std::int64_t r = 0; r < 4; ++r) {
        double z = 0;
        for (std::int64_t c = 0; c < 6; ++c) {
            z += std::exp(a.at({r, c}));
            CHECK(a.at({r, c}) == doctest::Approx(b.at({r, c})).epsilon(1e-10));
        }
        CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("gradients accumulate over reuse and NoGradGuard records nothing") {
    auto x = ag::parameter(Tensor({2}, {1.0, 2.0}));
    ag::backward(ag::sum(ag::add(x, x)));
    CHECK(x.grad().storage() == std::vector<double>{2.0, 2.0});
    {
        ag::NoGradGuard g;
        CHECK_FALSE(ag::grad_enabled());
        const auto y = ag::sum(ag::square(x));
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(ag::grad_enabled());
}

TEST_CASE("shape errors are raised") {
    const auto a = ag::constant(Tensor({2, 3})), b = ag::constant(Tensor({2, 3}));
    CHECK_THROWS_AS(ag::matmul(a, b), ShapeError);
    CHECK_THROWS_AS(ag::add(a, ag::constant(Tensor({3, 2}))), ShapeError);
    CHECK_THROWS_AS(ag::reflect_pad(a, 1, 1, 1, 1), ShapeError);
}
