#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "icdlaat/autodiff.hpp"
#include "icdlaat/util.hpp"

using namespace icdlaat;
using ad::Tensor;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -1.0,
                                  double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform_real();
    return v;
}

Tensor<double> random_leaf(Rng& rng, ad::Shape shape, bool requires_grad = true) {
    return Tensor<double>::leaf(shape, random_values(rng, ad::shape_numel(shape)),
                                requires_grad);
}

} // namespace

TEST_CASE("softmax of a uniform row is uniform") {
    auto x = Tensor<double>::leaf({1, 2}, {0.0, 0.0});
    auto y = ad::softmax_axis(x, 1);
    CHECK(y.values()[0] == doctest::Approx(0.5));
    CHECK(y.values()[1] == doctest::Approx(0.5));
}

TEST_CASE("tanh of a zero tensor is zero") {
    auto x = Tensor<double>::zeros({2, 3});
    auto y = ad::tanh(x);
    for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("matmul shape rule") {
    Rng rng(1);
    auto a = random_leaf(rng, {2, 3});
    auto b = random_leaf(rng, {3, 4});
    auto c = ad::matmul(a, b);
    CHECK(c.shape() == ad::Shape{2, 4});

    auto bad = random_leaf(rng, {2, 3});
    try {
        ad::matmul(a, bad);
        FAIL("expected ShapeMismatch");
    } catch (const ad::ShapeMismatch& e) {
        // both operand shapes must appear in the message
        std::string msg = e.what();
        CHECK(msg.find("(2x3)") != std::string::npos);
        CHECK(msg.find("(2x3)", msg.find("(2x3)") + 1) != std::string::npos);
    }
    try {
        ad::matmul(random_leaf(rng, {4, 5}), random_leaf(rng, {3, 2}));
        FAIL("expected ShapeMismatch");
    } catch (const ad::ShapeMismatch& e) {
        std::string msg = e.what();
        CHECK(msg.find("(4x5)") != std::string::npos);
        CHECK(msg.find("(3x2)") != std::string::npos);
    }
}

TEST_CASE("matmul forward values against a hand loop") {
    Rng rng(2);
    auto a = random_leaf(rng, {3, 5});
    auto b = random_leaf(rng, {5, 4});
    auto c = ad::matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 5; ++k) {
                acc += a.values()[i * 5 + k] * b.values()[k * 4 + j];
            }
            CHECK(c.values()[i * 4 + j] == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("backward of sum gives all-ones gradient") {
    Rng rng(3);
    auto x = random_leaf(rng, {3, 4});
    auto y = ad::sum_all(x);
    ad::backward(y);
    REQUIRE(x.grad().size() == 12);
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum of squares gives 2x") {
    Rng rng(4);
    auto x = random_leaf(rng, {2, 3});
    auto y = ad::sum_all(ad::mul(x, x));
    ad::backward(y);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(x.grad()[i] == doctest::Approx(2.0 * x.values()[i]).epsilon(1e-12));
    }
}

TEST_CASE("backward requires a scalar root") {
    Rng rng(5);
    auto x = random_leaf(rng, {2, 2});
    auto y = ad::tanh(x);
    CHECK_THROWS_AS(ad::backward(y), ad::NonScalarRoot);
}

TEST_CASE("fan-out accumulates additively") {
    Rng rng(6);
    auto x = random_leaf(rng, {4});
    auto y = ad::add(x, x); // y = 2x
    auto z = ad::sum_all(y);
    ad::backward(z);
    for (double g : x.grad()) CHECK(g == 2.0);

    // reuse through two different ops as well
    auto a = random_leaf(rng, {3});
    auto s = ad::sum_all(ad::add(ad::mul(a, a), a)); // d/da = 2a + 1
    ad::backward(s);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.grad()[i] == doctest::Approx(2.0 * a.values()[i] + 1.0).epsilon(1e-12));
    }
}

TEST_CASE("random three-layer composition matches finite differences") {
    Rng rng(7);
    auto w1 = random_leaf(rng, {4, 4});
    auto w2 = random_leaf(rng, {4, 4});
    auto w3 = random_leaf(rng, {1, 4});
    auto x = random_leaf(rng, {4, 1}, /*requires_grad=*/false);
    auto f = [&]() {
        auto h1 = ad::tanh(ad::matmul(w1, x));
        auto h2 = ad::relu(ad::matmul(w2, h1));
        return ad::sum_all(ad::sigmoid(ad::matmul(w3, h2)));
    };
    std::vector<Tensor<double>> params = {w1, w2, w3};
    double err = ad::grad_check<double>(f, params, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("grad_check tight on sum tanh Vx") {
    Rng rng(8);
    auto v = random_leaf(rng, {3, 3});
    auto x = random_leaf(rng, {3, 1}, /*requires_grad=*/false);
    auto f = [&]() { return ad::sum_all(ad::tanh(ad::matmul(v, x))); };
    std::vector<Tensor<double>> params = {v};
    CHECK(ad::grad_check<double>(f, params, 1e-6) < 1e-6);
}

TEST_CASE("grad_check on a constant function is zero") {
    auto p = Tensor<double>::leaf({2}, {1.0, 2.0}, true);
    auto f = [] { return Tensor<double>::leaf({1}, {3.5}, true); };
    std::vector<Tensor<double>> params = {p};
    CHECK(ad::grad_check<double>(f, params, 1e-6) == 0.0);
}

TEST_CASE("grad_check flags a deliberately wrong backward rule") {
    Rng rng(9);
    auto x = random_leaf(rng, {3});
    auto f = [&]() {
        // forward x^2, backward wrongly claims 3x
        std::vector<double> sq(x.numel());
        for (std::size_t i = 0; i < sq.size(); ++i) {
            sq[i] = x.values()[i] * x.values()[i];
        }
        auto bad = ad::custom_op<double>(
            x.shape(), std::move(sq), {x}, [](ad::Node<double>& self) {
                auto& p = *self.parents[0];
                p.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    p.grad[i] += self.grad[i] * 3.0 * p.values[i];
                }
            });
        return ad::sum_all(bad);
    };
    std::vector<Tensor<double>> params = {x};
    CHECK(ad::grad_check<double>(f, params, 1e-5) > 1e-2);
}

TEST_CASE("softmax rows are non-negative and sum to one") {
    Rng rng(10);
    for (int axis : {0, 1}) {
        for (int rep = 0; rep < 20; ++rep) {
            std::size_t m = 1 + rng.uniform(8), n = 1 + rng.uniform(8);
            auto x = Tensor<double>::leaf({m, n}, random_values(rng, m * n, -30, 30));
            auto y = ad::softmax_axis(x, axis);
            const std::size_t slices = axis == 1 ? m : n;
            const std::size_t len = axis == 1 ? n : m;
            for (std::size_t s = 0; s < slices; ++s) {
                double sum = 0.0;
                for (std::size_t i = 0; i < len; ++i) {
                    double v = axis == 1 ? y.values()[s * n + i] : y.values()[i * n + s];
                    CHECK(v >= 0.0);
                    sum += v;
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("softmax survives large logits") {
    auto x = Tensor<double>::leaf({1, 3}, {1000.0, 1000.0, -1000.0});
    auto y = ad::softmax_axis(x, 1);
    CHECK(y.values()[0] == doctest::Approx(0.5));
    CHECK(y.values()[1] == doctest::Approx(0.5));
    CHECK(y.values()[2] == doctest::Approx(0.0));
}

TEST_CASE("layer_norm output has zero mean and unit variance before gain and bias") {
    Rng rng(11);
    const std::size_t rows = 5, d = 8;
    auto x = Tensor<double>::leaf({rows, d}, random_values(rng, rows * d, -3, 3));
    auto gain = Tensor<double>::leaf({d}, std::vector<double>(d, 1.0));
    auto bias = Tensor<double>::zeros({d});
    auto y = ad::layer_norm(x, gain, bias, 1e-12);
    for (std::size_t r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += y.values()[r * d + i];
        mean /= d;
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double c = y.values()[r * d + i] - mean;
            var += c * c;
        }
        var /= d;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("broadcast add covers bias rows and reverses correctly") {
    auto m = Tensor<double>::leaf({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    auto b = Tensor<double>::leaf({3}, {10, 20, 30}, true);
    auto y = ad::add(m, b);
    CHECK(y.values() == std::vector<double>{11, 22, 33, 14, 25, 36});
    // argument order must not matter
    auto y2 = ad::add(b, m);
    CHECK(y2.values() == y.values());

    ad::backward(ad::sum_all(y));
    CHECK(b.grad() == std::vector<double>{2, 2, 2}); // summed over broadcast rows
    CHECK(m.grad() == std::vector<double>(6, 1.0));

    auto bad = Tensor<double>::leaf({4}, {1, 2, 3, 4});
    CHECK_THROWS_AS(ad::add(m, bad), ad::ShapeMismatch);
}

TEST_CASE("embedding_lookup gathers rows and scatter-adds gradients") {
    auto table = Tensor<double>::leaf({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    auto y = ad::embedding_lookup(table, {2, 0, 2});
    CHECK(y.shape() == ad::Shape{3, 2});
    CHECK(y.values() == std::vector<double>{5, 6, 1, 2, 5, 6});

    ad::backward(ad::sum_all(y));
    // row 2 hit twice, row 0 once, row 1 never
    CHECK(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2});

    CHECK_THROWS_AS(ad::embedding_lookup(table, {3}), ad::ShapeMismatch);
    CHECK_THROWS_AS(ad::embedding_lookup(table, {-1}), ad::ShapeMismatch);
}

TEST_CASE("concat splits gradients back to its pieces") {
    auto a = Tensor<double>::leaf({1, 2}, {1, 2}, true);
    auto b = Tensor<double>::leaf({2, 2}, {3, 4, 5, 6}, true);
    std::vector<Tensor<double>> parts = {a, b};
    auto rows = ad::concat<double>(parts, 0);
    CHECK(rows.shape() == ad::Shape{3, 2});
    CHECK(rows.values() == std::vector<double>{1, 2, 3, 4, 5, 6});

    auto w = Tensor<double>::leaf({3, 2}, {1, 10, 100, 1000, 2, 20});
    ad::backward(ad::sum_all(ad::mul(rows, w)));
    CHECK(a.grad() == std::vector<double>{1, 10});
    CHECK(b.grad() == std::vector<double>{100, 1000, 2, 20});

    auto c = Tensor<double>::leaf({1, 3}, {7, 8, 9}, true);
    auto d = Tensor<double>::leaf({1, 1}, {5.0}, true);
    std::vector<Tensor<double>> cols_in = {c, d};
    auto cols = ad::concat<double>(cols_in, 1);
    CHECK(cols.shape() == ad::Shape{1, 4});
    CHECK(cols.values() == std::vector<double>{7, 8, 9, 5});

    std::vector<Tensor<double>> bad = {a, c};
    CHECK_THROWS_AS(ad::concat<double>(bad, 0), ad::ShapeMismatch);
}

TEST_CASE("slice and transpose route gradients to source positions") {
    Rng rng(12);
    auto x = Tensor<double>::leaf({3, 4}, random_values(rng, 12), true);
    auto rows = ad::slice(x, 0, 1, 2);
    CHECK(rows.shape() == ad::Shape{2, 4});
    auto cols = ad::slice(x, 1, 2, 2);
    CHECK(cols.shape() == ad::Shape{3, 2});

    x.zero_grad();
    ad::backward(ad::sum_all(rows));
    for (std::size_t i = 0; i < 12; ++i) {
        double expect = (i >= 4 && i < 12) ? 1.0 : 0.0; // rows 1..2
        CHECK(x.grad()[i] == expect);
    }

    auto t = ad::transpose(x);
    CHECK(t.shape() == ad::Shape{4, 3});
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(t.values()[j * 3 + i] == x.values()[i * 4 + j]);
        }
    }
    CHECK_THROWS_AS(ad::slice(x, 0, 2, 5), ad::ShapeMismatch);
}

TEST_CASE("reduce_max ties route the gradient to the first maximum") {
    auto x = Tensor<double>::leaf({2, 3}, {5, 5, 1, 0, 2, 2}, true);
    auto y = ad::reduce_max(x, 1);
    CHECK(y.values() == std::vector<double>{5, 2});
    ad::backward(ad::sum_all(ad::reshape(y, {1, 2})));
    CHECK(x.grad() == std::vector<double>{1, 0, 0, 0, 1, 0});
}

TEST_CASE("reduce_sum and reduce_mean agree with hand loops") {
    Rng rng(13);
    auto x = random_leaf(rng, {3, 5});
    auto s0 = ad::reduce_sum(x, 0);
    auto m1 = ad::reduce_mean(x, 1);
    for (std::size_t j = 0; j < 5; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 3; ++i) acc += x.values()[i * 5 + j];
        CHECK(s0.values()[j] == doctest::Approx(acc).epsilon(1e-12));
    }
    for (std::size_t i = 0; i < 3; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < 5; ++j) acc += x.values()[i * 5 + j];
        CHECK(m1.values()[i] == doctest::Approx(acc / 5.0).epsilon(1e-12));
    }
}

TEST_CASE("every primitive passes a randomized finite-difference check") {
    Rng rng(14);
    // the readout weight must stay fixed across the repeated forward passes
    // of grad_check, so it is drawn once per primitive here
    auto check = [&](const std::string& name,
                     const std::function<Tensor<double>()>& produce,
                     std::vector<Tensor<double>> params) {
        Tensor<double> w = random_leaf(rng, produce().shape(), /*requires_grad=*/false);
        auto f = [&produce, w] { return ad::sum_all(ad::mul(produce(), w)); };
        INFO("primitive: ", name);
        double err = ad::grad_check<double>(f, params, 1e-5);
        CHECK(err < 1e-4);
    };

    for (int rep = 0; rep < 3; ++rep) {
        const std::size_t m = 2 + rng.uniform(7); // 2..8
        const std::size_t k = 2 + rng.uniform(7);
        const std::size_t n = 2 + rng.uniform(7);

        {
            auto a = random_leaf(rng, {m, k});
            auto b = random_leaf(rng, {k, n});
            check("matmul", [a, b] { return ad::matmul(a, b); }, {a, b});
        }
        {
            auto a = random_leaf(rng, {m, n});
            auto b = random_leaf(rng, {n});
            check("add-broadcast", [a, b] { return ad::add(a, b); }, {a, b});
        }
        {
            auto a = random_leaf(rng, {m, n});
            auto b = random_leaf(rng, {m, n});
            check("mul", [a, b] { return ad::mul(a, b); }, {a, b});
        }
        {
            auto a = random_leaf(rng, {m, n});
            check("mul_scalar", [a] { return ad::mul_scalar(a, 2.7); }, {a});
            check("tanh", [a] { return ad::tanh(a); }, {a});
            check("sigmoid", [a] { return ad::sigmoid(a); }, {a});
            check("transpose", [a] { return ad::transpose(a); }, {a});
            check("reshape", [a, m, n] { return ad::reshape(a, {n, m}); }, {a});
            check("slice", [a, m] { return ad::slice(a, 0, 1, m - 1); }, {a});
        }
        {
            // keep relu inputs away from the kink so finite differences are valid
            std::vector<double> v(m * n);
            for (auto& x : v) {
                double r = rng.uniform_real() * 2.0 - 1.0;
                x = r + (r >= 0 ? 0.1 : -0.1);
            }
            auto a = Tensor<double>::leaf({m, n}, std::move(v), true);
            check("relu", [a] { return ad::relu(a); }, {a});
        }
        for (int axis : {0, 1}) {
            auto a = random_leaf(rng, {m, n});
            check("softmax_axis", [a, axis] { return ad::softmax_axis(a, axis); }, {a});
            check("reduce_sum", [a, axis] { return ad::reduce_sum(a, axis); }, {a});
            check("reduce_mean", [a, axis] { return ad::reduce_mean(a, axis); }, {a});
            check("reduce_max", [a, axis] { return ad::reduce_max(a, axis); }, {a});
        }
        {
            auto a = random_leaf(rng, {m, n});
            auto gain = random_leaf(rng, {n});
            auto bias = random_leaf(rng, {n});
            check("layer_norm",
                  [a, gain, bias] { return ad::layer_norm(a, gain, bias, 1e-5); },
                  {a, gain, bias});
        }
        {
            auto table = random_leaf(rng, {m, n});
            std::vector<int> ids;
            for (std::size_t i = 0; i < k; ++i) {
                ids.push_back(static_cast<int>(rng.uniform(m)));
            }
            check("embedding_lookup",
                  [table, ids] { return ad::embedding_lookup(table, ids); }, {table});
        }
        {
            auto a = random_leaf(rng, {m, n});
            auto b = random_leaf(rng, {k, n});
            check("concat-rows",
                  [a, b] {
                      std::vector<Tensor<double>> parts = {a, b};
                      return ad::concat<double>(parts, 0);
                  },
                  {a, b});
        }
        {
            auto r1 = random_leaf(rng, {n});
            auto r2 = random_leaf(rng, {n});
            check("stack_rows",
                  [r1, r2] {
                      std::vector<Tensor<double>> rows = {r1, r2};
                      return ad::stack_rows<double>(rows);
                  },
                  {r1, r2});
        }
    }
}

TEST_CASE("identical graphs produce bit-identical values") {
    auto run = [] {
        Rng rng(15);
        auto a = Tensor<double>::leaf({4, 4}, random_values(rng, 16), true);
        auto b = Tensor<double>::leaf({4, 4}, random_values(rng, 16), true);
        auto y = ad::sum_all(ad::softmax_axis(ad::matmul(ad::tanh(a), b), 1));
        ad::backward(y);
        std::vector<double> out = y.values();
        out.insert(out.end(), a.grad().begin(), a.grad().end());
        out.insert(out.end(), b.grad().begin(), b.grad().end());
        return out;
    };
    CHECK(run() == run());
}
