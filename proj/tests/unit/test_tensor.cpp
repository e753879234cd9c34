#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ddlm/grad_check.hpp"
#include "ddlm/ops.hpp"
#include "ddlm/random.hpp"
#include "ddlm/tensor.hpp"

using namespace ddlm;

namespace {

Tensor random_tensor(Shape shape, RandomStream& rng, double scale = 1.0, bool requires_grad = true) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = Real(rng.uniform(-scale, scale));
    return t;
}

// Gradient-check tolerance: the 64-bit build verifies the same rules much
// tighter, the 32-bit default is limited by forward rounding.
#ifdef DDLM_REAL_DOUBLE
constexpr double kTol = 1e-8;
constexpr double kEps = 1e-4;
#else
constexpr double kTol = 1e-3;
constexpr double kEps = 2e-2;
#endif

}  // namespace

TEST_CASE("tensor basics and invariants") {
    Tensor t = Tensor::zeros({2, 3});
    REQUIRE(t.numel() == 6);
    REQUIRE(t.shape() == Shape{2, 3});
    REQUIRE_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
    REQUIRE_THROWS_AS(t.item(), UsageError);
    REQUIRE(Tensor::from_data({1}, {Real(2.5)}).item() == Real(2.5));
}

TEST_CASE("matmul identity and hand arithmetic") {
    Tensor id = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {Real(1.5), Real(-2), Real(3), Real(0.25)});
    Tensor out = matmul(id, m);
    for (size_t i = 0; i < 4; ++i) REQUIRE(out.data()[i] == m.data()[i]);

    Tensor a = Tensor::from_data({1, 2}, {1, 2});
    Tensor b = Tensor::from_data({2, 1}, {3, 4});
    REQUIRE(matmul(a, b).item() == Real(11));
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        REQUIRE(msg.find("[2,3]") != std::string::npos);
        REQUIRE(msg.find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradients match finite differences") {
    RandomStream rng(101);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    auto f = [&] { return sum(mul(matmul(a, b), matmul(a, b))); };
    REQUIRE(grad_check(f, {a, b}, kEps) < kTol);
}

TEST_CASE("batched matmul with shared weight accumulates weight grads") {
    RandomStream rng(102);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor w = random_tensor({4, 5}, rng);
    Tensor out = matmul(a, w);
    REQUIRE(out.shape() == Shape{2, 3, 5});
    auto f = [&] { return sum(mul(matmul(a, w), matmul(a, w))); };
    REQUIRE(grad_check(f, {a, w}, kEps) < kTol);
}

TEST_CASE("batched matmul equal batch dims") {
    RandomStream rng(103);
    Tensor a = random_tensor({2, 2, 3, 4}, rng);
    Tensor b = random_tensor({2, 2, 4, 3}, rng);
    REQUIRE(matmul(a, b).shape() == Shape{2, 2, 3, 3});
    auto f = [&] { return sum(matmul(a, b)); };
    REQUIRE(grad_check(f, {a, b}, kEps) < kTol);
}

TEST_CASE("softmax of zeros is uniform") {
    Tensor x = Tensor::zeros({3});
    Tensor y = softmax_lastdim(x);
    for (Real v : y.data()) REQUIRE(std::abs(double(v) - 1.0 / 3.0) < 1e-6);
}

TEST_CASE("softmax is stabilized against overflow") {
    Tensor x = Tensor::from_data({2}, {Real(1000), Real(0)});
    Tensor y = softmax_lastdim(x);
    REQUIRE(std::abs(double(y.data()[0]) - 1.0) < 1e-6);
    REQUIRE(std::abs(double(y.data()[1])) < 1e-6);
}

TEST_CASE("softmax rejects non-finite input") {
    Tensor x = Tensor::from_data({2}, {Real(1), Real(std::numeric_limits<Real>::infinity())});
    REQUIRE_THROWS_AS(softmax_lastdim(x), NumericError);
}

TEST_CASE("softmax rows sum to one and gradient matches finite differences") {
    RandomStream rng(104);
    Tensor x = random_tensor({4, 7}, rng, 3.0);
    Tensor y = softmax_lastdim(x);
    for (int r = 0; r < 4; ++r) {
        double s = 0;
        for (int j = 0; j < 7; ++j) s += double(y.data()[size_t(r) * 7 + j]);
        REQUIRE(std::abs(s - 1.0) < 1e-5);
    }
    Tensor w = random_tensor({4, 7}, rng, 1.0, false);
    auto f = [&] { return sum(mul(softmax_lastdim(x), w)); };
    REQUIRE(grad_check(f, {x}, kEps) < kTol);
}

TEST_CASE("rmsnorm constant input") {
    Tensor x = Tensor::full({2, 4}, Real(1));
    Tensor g = Tensor::full({4}, Real(1));
    Tensor y = rmsnorm(x, g);
    for (Real v : y.data()) REQUIRE(std::abs(double(v) - 1.0 / std::sqrt(1.0 + 1e-6)) < 1e-6);
}

TEST_CASE("rmsnorm is invariant to positive input scaling") {
    RandomStream rng(105);
    Tensor x = random_tensor({3, 8}, rng);
    Tensor g = random_tensor({8}, rng);
    Tensor y1 = rmsnorm(x, g);
    Tensor xs = scale(x, 7.5);
    Tensor y2 = rmsnorm(xs, g);
    for (size_t i = 0; i < y1.numel(); ++i)
        REQUIRE(std::abs(double(y1.data()[i]) - double(y2.data()[i])) < 1e-5);
}

TEST_CASE("rmsnorm gradient matches finite differences") {
    RandomStream rng(106);
    Tensor x = random_tensor({2, 6}, rng);
    Tensor g = random_tensor({6}, rng);
    Tensor w = random_tensor({2, 6}, rng, 1.0, false);
    auto f = [&] { return sum(mul(rmsnorm(x, g), w)); };
    REQUIRE(grad_check(f, {x, g}, kEps) < kTol);
}

TEST_CASE("silu gradient matches finite differences") {
    RandomStream rng(107);
    Tensor x = random_tensor({3, 5}, rng, 2.0);
    auto f = [&] { return sum(mul(silu(x), silu(x))); };
    REQUIRE(grad_check(f, {x}, kEps) < kTol);
}

TEST_CASE("rope preserves pair norms and gradient matches finite differences") {
    RandomStream rng(108);
    Tensor x = random_tensor({1, 2, 5, 4}, rng);
    Tensor y = rope(x, 10000.0);
    // rotation preserves the norm of each (j, j+half) pair
    const int half = 2, dh = 4;
    for (size_t row = 0; row < x.numel() / dh; ++row)
        for (int j = 0; j < half; ++j) {
            double nx = double(x.data()[row * dh + j]) * double(x.data()[row * dh + j]) +
                        double(x.data()[row * dh + j + half]) * double(x.data()[row * dh + j + half]);
            double ny = double(y.data()[row * dh + j]) * double(y.data()[row * dh + j]) +
                        double(y.data()[row * dh + j + half]) * double(y.data()[row * dh + j + half]);
            REQUIRE(std::abs(nx - ny) < 1e-4);
        }
    Tensor w = random_tensor({1, 2, 5, 4}, rng, 1.0, false);
    auto f = [&] { return sum(mul(rope(x, 10000.0), w)); };
    REQUIRE(grad_check(f, {x}, kEps) < kTol);
}

TEST_CASE("embedding rejects out-of-range ids and routes gradients to rows") {
    RandomStream rng(109);
    Tensor table = random_tensor({5, 3}, rng);
    REQUIRE_THROWS_AS(embedding(table, {0, 5}, 1, 2), DataError);
    REQUIRE_THROWS_AS(embedding(table, {-1}, 1, 1), DataError);

    std::vector<int> ids = {1, 3, 1};
    auto f = [&] { return sum(mul(embedding(table, ids, 1, 3), embedding(table, ids, 1, 3))); };
    REQUIRE(grad_check(f, {table}, kEps) < kTol);
    // unused rows get zero gradient
    table.zero_grad();
    Tensor loss = sum(embedding(table, ids, 1, 3));
    loss.backward();
    for (int j = 0; j < 3; ++j) {
        REQUIRE(table.grad()[size_t(0) * 3 + j] == Real(0));
        REQUIRE(table.grad()[size_t(1) * 3 + j] == Real(2));  // id 1 appears twice
        REQUIRE(table.grad()[size_t(4) * 3 + j] == Real(0));
    }
}

TEST_CASE("split/merge heads and transpose round-trip") {
    RandomStream rng(110);
    Tensor x = random_tensor({2, 3, 8}, rng);
    Tensor split = split_heads(x, 4);
    REQUIRE(split.shape() == Shape{2, 4, 3, 2});
    Tensor back = merge_heads(split);
    for (size_t i = 0; i < x.numel(); ++i) REQUIRE(back.data()[i] == x.data()[i]);

    Tensor t = transpose_last2(split);
    REQUIRE(t.shape() == Shape{2, 4, 2, 3});
    Tensor tt = transpose_last2(t);
    for (size_t i = 0; i < split.numel(); ++i) REQUIRE(tt.data()[i] == split.data()[i]);

    auto f = [&] { return sum(mul(merge_heads(split_heads(x, 4)), merge_heads(split_heads(x, 4)))); };
    REQUIRE(grad_check(f, {x}, kEps) < kTol);
}

TEST_CASE("causal mask zeroes future attention weights") {
    RandomStream rng(111);
    Tensor scores = random_tensor({1, 1, 4, 4}, rng);
    Tensor att = softmax_lastdim(add_causal_mask(scores));
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) REQUIRE(att.data()[size_t(i) * 4 + j] == Real(0));
    for (int i = 0; i < 4; ++i) {
        double s = 0;
        for (int j = 0; j <= i; ++j) s += double(att.data()[size_t(i) * 4 + j]);
        REQUIRE(std::abs(s - 1.0) < 1e-5);
    }
}

TEST_CASE("masked_cross_entropy all-zero weights gives exactly zero") {
    RandomStream rng(112);
    Tensor logits = random_tensor({3, 5}, rng);
    Tensor loss = masked_cross_entropy(logits, {0, 1, 2}, {0.0, 0.0, 0.0});
    REQUIRE(loss.item() == Real(0));
    loss.backward();
    for (Real g : logits.grad()) REQUIRE(g == Real(0));
}

TEST_CASE("masked_cross_entropy uniform logits gives ln V") {
    Tensor logits = Tensor::zeros({1, 4});
    Tensor loss = masked_cross_entropy(logits, {2}, {1.0});
    REQUIRE(std::abs(loss.item_f64() - std::log(4.0)) < 1e-6);
}

TEST_CASE("masked_cross_entropy rejects out-of-range targets") {
    Tensor logits = Tensor::zeros({1, 4});
    REQUIRE_THROWS_AS(masked_cross_entropy(logits, {4}, {1.0}), DataError);
    REQUIRE_THROWS_AS(masked_cross_entropy(logits, {-1}, {1.0}), DataError);
}

TEST_CASE("masked_cross_entropy matches an independent scalar-loop oracle") {
    RandomStream rng(113);
    const int n = 6, v = 9;
    Tensor logits = random_tensor({n, v}, rng, 2.0);
    std::vector<int> targets;
    std::vector<double> weights;
    for (int i = 0; i < n; ++i) {
        targets.push_back(int(rng.randint(v)));
        weights.push_back(i % 2 == 0 ? rng.uniform(0.0, 3.0) : 0.0);
    }
    // independent scalar-loop evaluation
    double expect = 0;
    for (int i = 0; i < n; ++i) {
        if (weights[size_t(i)] == 0.0) continue;
        double z = 0;
        for (int j = 0; j < v; ++j) z += std::exp(double(logits.data()[size_t(i) * v + j]));
        double p = std::exp(double(logits.data()[size_t(i) * v + targets[size_t(i)]])) / z;
        expect += weights[size_t(i)] * (-std::log(p));
    }
    Tensor loss = masked_cross_entropy(logits, targets, weights);
    REQUIRE(std::abs(loss.item_f64() - expect) < 1e-5 * std::max(1.0, std::abs(expect)));

    auto f = [&] { return masked_cross_entropy(logits, targets, weights); };
    REQUIRE(grad_check(f, {logits}, kEps) < kTol);
}

TEST_CASE("masked_cross_entropy is exactly linear in the weights") {
    RandomStream rng(114);
    Tensor logits = random_tensor({4, 6}, rng, 2.0);
    std::vector<int> targets = {1, 2, 3, 0};
    std::vector<double> w1 = {0.5, 0.0, 1.25, 2.0};
    std::vector<double> w2;
    for (double w : w1) w2.push_back(2.0 * w);
    REQUIRE(masked_cross_entropy(logits, targets, w2).item_f64() ==
            2.0 * masked_cross_entropy(logits, targets, w1).item_f64());
}

TEST_CASE("backward of sum is all-ones; backward of sum(x*x) is 2x") {
    RandomStream rng(115);
    Tensor x = random_tensor({3, 3}, rng);
    sum(x).backward();
    for (Real g : x.grad()) REQUIRE(g == Real(1));

    x.zero_grad();
    sum(mul(x, x)).backward();
    for (size_t i = 0; i < x.numel(); ++i)
        REQUIRE(std::abs(double(x.grad()[i]) - 2.0 * double(x.data()[i])) < 1e-6);
}

TEST_CASE("backward accumulates across calls without reset") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    sum(x).backward();
    sum(x).backward();
    for (Real g : x.grad()) REQUIRE(g == Real(2));
}

TEST_CASE("backward requires a scalar") {
    Tensor x = Tensor::zeros({2, 2}, true);
    REQUIRE_THROWS_AS(mul(x, x).backward(), UsageError);
}

TEST_CASE("no-grad scope records no graph") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    autograd::NoGradGuard ng;
    Tensor y = sum(mul(x, x));
    REQUIRE_FALSE(y.requires_grad());
    REQUIRE(y.impl()->parents.empty());
}

TEST_CASE("grad_check on a linear map is near zero") {
    RandomStream rng(116);
    Tensor x = random_tensor({4, 4}, rng);
    auto f = [&] { return sum(x); };
    REQUIRE(grad_check(f, {x}, kEps) < 1e-6);
}

TEST_CASE("grad_check flags a corrupted backward rule") {
    RandomStream rng(117);
    Tensor x = random_tensor({3, 4}, rng, 2.0);
    // silu forward with a deliberately wrong derivative (negative control)
    auto corrupted_silu = [](const Tensor& a) {
        Tensor out = Tensor::zeros(a.shape());
        for (size_t i = 0; i < a.numel(); ++i) {
            Real xv = a.data()[i];
            out.data()[i] = xv / (Real(1) + std::exp(-xv));
        }
        detail::record(out, {a}, [ai = a.impl()](TensorImpl& self) {
            Real* da = ai->ensure_grad().data();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                Real xv = ai->data[i];
                Real s = Real(1) / (Real(1) + std::exp(-xv));
                da[i] += self.grad[i] * s * Real(1.7);  // wrong by construction
            }
        });
        return out;
    };
    auto f = [&] { return sum(mul(corrupted_silu(x), corrupted_silu(x))); };
    REQUIRE(grad_check(f, {x}, kEps) > 1e-1);
}
