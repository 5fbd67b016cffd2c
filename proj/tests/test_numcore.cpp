#include <doctest.h>

#include <cmath>
#include <random>

#include "psvma/numcore.hpp"
#include "test_util.hpp"

using namespace psvma;
using testutil::random_tensor;

namespace {

// Central finite difference of a scalar-valued function of one tensor.
template <typename Fn>
std::vector<double> fd_grad(Fn&& f, Tensor x, double h = 1e-5) {
    std::vector<double> g(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double saved = x.data[i];
        x.data[i] = saved + h;
        double up = f(x);
        x.data[i] = saved - h;
        double down = f(x);
        x.data[i] = saved;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

}  // namespace

TEST_CASE("matmul identity and forced example") {
    Tape tape;
    Tensor a(2, 2, {1, 2, 3, 4});
    Tensor out = tape.matmul(tape.leaf(a), Tape::constant(Tensor::identity(2)));
    CHECK(out.data == std::vector<double>{1, 2, 3, 4});

    Tape t2;
    Tensor b = t2.matmul(Tape::constant(Tensor(1, 2, {1, 2})),
                         Tape::constant(Tensor(2, 1, {3, 4})));
    CHECK(b.scalar() == doctest::Approx(11).epsilon(1e-14));
}

TEST_CASE("matmul shape error names both shapes") {
    Tape tape;
    Tensor a(2, 3), b(2, 2);
    CHECK_THROWS_WITH_AS(tape.matmul(a, b),
                         doctest::Contains("2x3"), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
    std::mt19937_64 rng(7);
    Tensor a = random_tensor(rng, 3, 4), b = random_tensor(rng, 4, 2);

    Tape tape;
    Tensor ta = tape.leaf(a), tb = tape.leaf(b);
    Tensor loss = tape.sum_all(tape.matmul(ta, tb));
    tape.backward(loss);

    auto fa = fd_grad([&](const Tensor& x) {
        Tape t;
        return t.sum_all(t.matmul(t.leaf(x), Tape::constant(b))).scalar();
    }, a);
    auto fb = fd_grad([&](const Tensor& x) {
        Tape t;
        return t.sum_all(t.matmul(Tape::constant(a), t.leaf(x))).scalar();
    }, b);
    for (std::size_t i = 0; i < fa.size(); ++i)
        CHECK(testutil::rel_err(tape.grad(ta)[i], fa[i]) < 1e-6);
    for (std::size_t i = 0; i < fb.size(); ++i)
        CHECK(testutil::rel_err(tape.grad(tb)[i], fb[i]) < 1e-6);
}

TEST_CASE("layer_norm trivial rows") {
    Tape tape;
    Tensor gamma(1, 3, {1, 1, 1}), beta(1, 3);
    Tensor out = tape.layer_norm(Tape::constant(Tensor(1, 3, {5, 5, 5})),
                                 gamma, beta);
    for (double v : out.data) CHECK(std::abs(v) < 1e-12);

    Tensor g2(1, 2, {1, 1}), b2(1, 2);
    Tensor two = tape.layer_norm(Tape::constant(Tensor(1, 2, {1, -1})), g2, b2, 1e-12);
    CHECK(two.data[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(two.data[1] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm matches naive per-row oracle") {
    std::mt19937_64 rng(11);
    Tensor x = random_tensor(rng, 3, 4);
    Tensor gamma = random_tensor(rng, 1, 4), beta = random_tensor(rng, 1, 4);
    Tape tape;
    Tensor out = tape.layer_norm(x, gamma, beta);
    auto ref = psvma::oracle::layer_norm(testutil::to_mat(x), gamma.data, beta.data);
    CHECK(testutil::max_abs_diff(out, ref) < 1e-12);
}

TEST_CASE("layer_norm rows have zero mean unit variance with unit affine") {
    std::mt19937_64 rng(13);
    Tensor x = random_tensor(rng, 5, 8, 3.0);
    Tensor gamma(1, 8);
    for (double& v : gamma.data) v = 1.0;
    Tape tape;
    Tensor out = tape.layer_norm(x, gamma, Tensor(1, 8), 1e-12);
    for (std::size_t i = 0; i < out.rows; ++i) {
        double mu = 0, var = 0;
        for (std::size_t j = 0; j < out.cols; ++j) mu += out.at(i, j);
        mu /= 8.0;
        for (std::size_t j = 0; j < out.cols; ++j)
            var += (out.at(i, j) - mu) * (out.at(i, j) - mu);
        var /= 8.0;
        CHECK(std::abs(mu) < 1e-9);
        CHECK(std::abs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("softmax_rows values and stability") {
    Tape tape;
    Tensor a = tape.softmax_rows(Tape::constant(Tensor(1, 2, {0, 0})));
    CHECK(a.data[0] == doctest::Approx(0.5).epsilon(1e-12));

    Tensor b = tape.softmax_rows(Tape::constant(Tensor(1, 2, {std::log(2.0), 0})));
    CHECK(b.data[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(b.data[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    Tensor c = tape.softmax_rows(Tape::constant(Tensor(1, 2, {1000, 0})));
    CHECK(std::isfinite(c.data[0]));
    CHECK(c.data[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and stay non-negative") {
    std::mt19937_64 rng(3);
    Tensor x = random_tensor(rng, 6, 9, 10.0);
    Tape tape;
    Tensor y = tape.softmax_rows(x);
    for (std::size_t i = 0; i < y.rows; ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < y.cols; ++j) {
            CHECK(y.at(i, j) >= 0.0);
            sum += y.at(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("gmp values, tie-break, and oracle agreement") {
    Tape tape;
    Tensor out = tape.gmp(Tape::constant(Tensor(2, 3, {1, 5, 3, 2, 2, 2})), 1);
    CHECK(out.data == std::vector<double>{5, 2});

    // Tied row: gradient goes to index 0 only.
    Tape t2;
    Tensor tied = t2.leaf(Tensor(1, 3, {4, 4, 4}));
    Tensor loss = t2.sum_all(t2.gmp(tied, 1));
    t2.backward(loss);
    CHECK(t2.grad(tied) == std::vector<double>{1, 0, 0});

    std::mt19937_64 rng(17);
    Tensor x = random_tensor(rng, 4, 7);
    Tape t3;
    Tensor rows = t3.gmp(x, 1);
    Tensor cols = t3.gmp(x, 0);
    auto ref_rows = psvma::oracle::gmp_rows(testutil::to_mat(x));
    auto ref_cols = psvma::oracle::gmp_cols(testutil::to_mat(x));
    CHECK(testutil::max_abs_diff(rows.data, ref_rows) == 0.0);
    CHECK(testutil::max_abs_diff(cols.data, ref_cols) == 0.0);
}

TEST_CASE("activation origin values and saturation") {
    Tape tape;
    CHECK(tape.gelu(Tape::constant(Tensor::scalar_of(0))).scalar() == 0.0);
    CHECK(tape.sigmoid(Tape::constant(Tensor::scalar_of(0))).scalar() == 0.5);
    double sat = tape.sigmoid(Tape::constant(Tensor::scalar_of(50))).scalar();
    CHECK(1.0 - sat < 1e-20);
}

TEST_CASE("activation gradients vs finite differences") {
    for (double x0 : {-2.0, -0.5, 0.3, 4.0}) {
        Tensor x = Tensor::scalar_of(x0);
        Tape tg;
        Tensor xl = tg.leaf(x);
        tg.backward(tg.gelu(xl));
        auto fd = fd_grad([](const Tensor& t) {
            Tape tt;
            return tt.gelu(tt.leaf(t)).scalar();
        }, x);
        CHECK(testutil::rel_err(tg.grad(xl)[0], fd[0]) < 1e-6);

        Tape ts;
        Tensor xs = ts.leaf(x);
        ts.backward(ts.sigmoid(xs));
        auto fds = fd_grad([](const Tensor& t) {
            Tape tt;
            return tt.sigmoid(tt.leaf(t)).scalar();
        }, x);
        CHECK(testutil::rel_err(ts.grad(xs)[0], fds[0]) < 1e-6);
    }
}

TEST_CASE("backward on linear loss gives all-ones; softmax sum conserves") {
    std::mt19937_64 rng(5);
    Tensor w = random_tensor(rng, 3, 5);
    Tape tape;
    Tensor tw = tape.leaf(w);
    tape.backward(tape.sum_all(tw));
    for (double g : tape.grad(tw)) CHECK(g == 1.0);

    Tape t2;
    Tensor x = t2.leaf(random_tensor(rng, 4, 6));
    t2.backward(t2.sum_all(t2.softmax_rows(x)));
    for (double g : t2.grad(x)) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("backward contract errors") {
    Tape tape;
    Tensor x = tape.leaf(Tensor(2, 2, {1, 2, 3, 4}));
    CHECK_THROWS_AS(tape.backward(x), ContractError);   // not scalar

    Tape t2;
    Tensor y = t2.leaf(Tensor::scalar_of(1.0));
    Tensor detached = Tensor::scalar_of(2.0);
    Tensor loss = t2.mul(y, Tape::constant(detached));
    t2.backward(loss);
    CHECK_THROWS_AS(t2.grad(detached), ContractError);  // absent entry
}

TEST_CASE("backward determinism: identical tapes yield identical gradients") {
    std::mt19937_64 rng(23);
    Tensor a = random_tensor(rng, 4, 4), b = random_tensor(rng, 4, 4);
    auto run = [&]() {
        Tape tape;
        Tensor ta = tape.leaf(a), tb = tape.leaf(b);
        Tensor y = tape.softmax_rows(tape.matmul(tape.gelu(ta), tb));
        tape.backward(tape.sum_all(tape.mul(y, y)));
        return std::pair{tape.grad(ta), tape.grad(tb)};
    };
    auto [ga1, gb1] = run();
    auto [ga2, gb2] = run();
    CHECK(ga1 == ga2);
    CHECK(gb1 == gb2);
}

TEST_CASE("composite op gradients vs finite differences at random points") {
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor x = random_tensor(rng, 3, 4);
        auto f = [](Tape& t, const Tensor& xt) {
            Tensor g(1, 4), b(1, 4);
            for (double& v : g.data) v = 1.3;
            Tensor ln = t.layer_norm(xt, Tape::constant(g), Tape::constant(b));
            Tensor s = t.sigmoid(t.gelu(ln));
            Tensor sm = t.softmax_rows(t.matmul(s, t.transpose(s)));
            Tensor pooled = t.gmp(sm, 1);
            return t.sum_all(t.mul(pooled, pooled));
        };
        Tape tape;
        Tensor xl = tape.leaf(x);
        tape.backward(f(tape, xl));
        auto fd = fd_grad([&](const Tensor& t) {
            Tape tt;
            Tensor tl = tt.leaf(t);
            return f(tt, tl).scalar();
        }, x);
        for (std::size_t i = 0; i < fd.size(); ++i)
            CHECK(testutil::rel_err(tape.grad(xl)[i], fd[i]) < 1e-4);
    }
}

TEST_CASE("scalar helpers: gather, pick, log_sum_exp, div and sub scalar") {
    Tape tape;
    Tensor x = tape.leaf(Tensor(1, 4, {1, 2, 3, 4}));
    Tensor sel = tape.gather_cols(x, {3, 1});
    CHECK(sel.data == std::vector<double>{4, 2});
    CHECK(tape.pick(sel, 0).scalar() == 4.0);

    Tensor lse = tape.log_sum_exp_row(Tape::constant(Tensor(1, 2, {0, 0})));
    CHECK(lse.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-14));

    Tensor halves = tape.div_scalar(Tape::constant(Tensor(1, 2, {4, 6})),
                                    Tape::constant(Tensor::scalar_of(2)));
    CHECK(halves.data == std::vector<double>{2, 3});

    Tensor shifted = tape.sub_scalar(Tape::constant(Tensor(1, 2, {4, 6})),
                                     Tape::constant(Tensor::scalar_of(5)));
    CHECK(shifted.data == std::vector<double>{-1, 1});
}
