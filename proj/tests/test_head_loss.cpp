#include <doctest.h>

#include <cmath>
#include <random>

#include "psvma/head_loss.hpp"
#include "psvma/oracle.hpp"
#include "test_util.hpp"

using namespace psvma;
using testutil::random_tensor;
using testutil::to_mat;

TEST_CASE("class_head pools patches then projects") {
    Tape tape;
    // Two patches, D=2; column-wise max is [3, 4].
    Tensor f_hat(2, 2, {3, -1, 0, 4});
    Tensor w = Tensor::identity(2);
    Tensor out = class_head(tape, Tape::constant(f_hat), Tape::constant(w));
    CHECK(out.rows == 1);
    CHECK(out.cols == 2);
    CHECK(out.data[0] == 3.0);
    CHECK(out.data[1] == 4.0);

    std::mt19937_64 rng(1);
    Tensor f = random_tensor(rng, 5, 4), wp = random_tensor(rng, 4, 6);
    Tensor got = class_head(tape, Tape::constant(f), Tape::constant(wp));
    auto ref = oracle::class_head(to_mat(f), to_mat(wp));
    CHECK(testutil::max_abs_diff(got.data, ref) < 1e-12);
}

TEST_CASE("cosine scores: colinear, orthogonal, scale invariance") {
    Tape tape;
    Tensor protos(3, 2, {1, 0, 0, 1, -2, 0});
    double tau = 20.0;

    Tensor pred = Tape::constant(Tensor(1, 2, {3, 0}));
    Tensor s = cosine_scores(tape, pred, protos, tau);
    CHECK(s.cols == 3);
    CHECK(s.data[0] == doctest::Approx(tau).epsilon(1e-12));     // colinear
    CHECK(s.data[1] == doctest::Approx(0.0).epsilon(1e-12));     // orthogonal
    CHECK(s.data[2] == doctest::Approx(-tau).epsilon(1e-12));    // anti-colinear

    // Scaling the prediction leaves cosine scores unchanged.
    std::mt19937_64 rng(2);
    Tensor p1 = random_tensor(rng, 1, 4);
    Tensor p2 = p1;
    for (double& v : p2.data) v *= 7.5;
    Tensor pr = random_tensor(rng, 5, 4);
    Tensor a = cosine_scores(tape, Tape::constant(p1), pr, tau);
    Tensor b = cosine_scores(tape, Tape::constant(p2), pr, tau);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-10));

    // Oracle agreement on random inputs.
    auto ref = oracle::cosine_scores(p1.data, to_mat(pr), tau);
    CHECK(testutil::max_abs_diff(a.data, ref) < 1e-10);
}

TEST_CASE("cosine_scores rejects a zero prototype row") {
    Tape tape;
    Tensor protos(2, 2, {1, 0, 0, 0});
    CHECK_THROWS_AS(
        cosine_scores(tape, Tape::constant(Tensor(1, 2, {1, 1})), protos, 20.0),
        ContractError);
}

TEST_CASE("cosine_scores_checked flags zero norms instead of throwing") {
    Tensor protos(2, 2, {1, 0, 0, 0});
    std::vector<bool> seen{true, true};
    ScoreVector sv = cosine_scores_checked({1, 1}, protos, 20.0, seen);
    CHECK(sv.scores[0] == doctest::Approx(20.0 / std::sqrt(2.0)));
    CHECK(sv.scores[1] == 0.0);
    CHECK_FALSE(sv.zero_norm_flag[0]);
    CHECK(sv.zero_norm_flag[1]);

    // A zero prediction zeroes every score and flags them all.
    Tensor ok(2, 2, {1, 0, 0, 1});
    ScoreVector zv = cosine_scores_checked({0, 0}, ok, 20.0, seen);
    CHECK(zv.scores[0] == 0.0);
    CHECK(zv.scores[1] == 0.0);
    CHECK(zv.zero_norm_flag[0]);
    CHECK(zv.zero_norm_flag[1]);
}

TEST_CASE("classification_loss closed-form cases") {
    Tape tape;
    // Two equal seen scores: loss = ln 2 regardless of the unseen column.
    Tensor sc1 = Tape::constant(Tensor(1, 3, {1.0, 1.0, 99.0}));
    CHECK(classification_loss(tape, sc1, {0, 1}, 0).scalar() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // Probabilities 0.9 / 0.1 -> loss = -ln 0.9.
    double d = std::log(9.0);
    Tensor sc2 = Tape::constant(Tensor(1, 2, {d, 0.0}));
    CHECK(classification_loss(tape, sc2, {0, 1}, 0).scalar() ==
          doctest::Approx(-std::log(0.9)).epsilon(1e-10));

    // Shift invariance of the seen-score softmax.
    std::mt19937_64 rng(3);
    Tensor sc = random_tensor(rng, 1, 5);
    Tensor shifted = sc;
    for (double& v : shifted.data) v += 123.0;
    std::vector<std::size_t> seen{0, 2, 4};
    double a = classification_loss(tape, Tape::constant(sc), seen, 2).scalar();
    double b = classification_loss(tape, Tape::constant(shifted), seen, 2).scalar();
    CHECK(a == doctest::Approx(b).epsilon(1e-9));

    // Oracle agreement.
    CHECK(a == doctest::Approx(oracle::classification_loss(sc.data, seen, 2))
                   .epsilon(1e-12));

    // The label must be a seen class.
    CHECK_THROWS_AS(classification_loss(tape, Tape::constant(sc), seen, 1),
                    ContractError);
}

TEST_CASE("classification_loss is finite for extreme scores") {
    Tape tape;
    Tensor sc = Tape::constant(Tensor(1, 2, {1000.0, -1000.0}));
    double loss = classification_loss(tape, sc, {0, 1}, 0).scalar();
    CHECK(std::isfinite(loss));
    CHECK(loss >= 0.0);
}

TEST_CASE("debias_loss hand-computed and invariance cases") {
    Tape tape;
    // seen {1,3}: mean 2, var 1. unseen {0,4}: mean 2, var 4. -> 0 + 9 = 9.
    Tensor sc = Tape::constant(Tensor(1, 4, {1, 3, 0, 4}));
    CHECK(debias_loss(tape, sc, {0, 1}, {2, 3}).scalar() ==
          doctest::Approx(9.0).epsilon(1e-12));

    // Identical groups -> 0.
    Tensor eq = Tape::constant(Tensor(1, 4, {1, 3, 3, 1}));
    CHECK(debias_loss(tape, eq, {0, 1}, {2, 3}).scalar() ==
          doctest::Approx(0.0).epsilon(1e-12));

    // Shifting both groups by the same constant changes only the mean term.
    std::mt19937_64 rng(4);
    Tensor r = random_tensor(rng, 1, 6);
    std::vector<std::size_t> seen{0, 1, 2}, unseen{3, 4, 5};
    double base = debias_loss(tape, Tape::constant(r), seen, unseen).scalar();
    Tensor shifted = r;
    for (std::size_t i : seen) shifted.data[i] += 5.0;
    for (std::size_t i : unseen) shifted.data[i] += 5.0;
    CHECK(debias_loss(tape, Tape::constant(shifted), seen, unseen).scalar() ==
          doctest::Approx(base).epsilon(1e-9));

    // Oracle agreement.
    CHECK(base ==
          doctest::Approx(oracle::debias_loss(r.data, seen, unseen)).epsilon(1e-12));
}

TEST_CASE("debias_loss gradient matches finite differences") {
    std::mt19937_64 rng(5);
    Tensor sc = random_tensor(rng, 1, 6);
    std::vector<std::size_t> seen{0, 2, 4}, unseen{1, 3, 5};

    Tape tape;
    Tensor leafed = tape.leaf(sc);
    tape.backward(debias_loss(tape, leafed, seen, unseen));
    const auto& g = tape.grad(leafed);

    for (std::size_t i = 0; i < sc.numel(); ++i) {
        double h = 1e-6, saved = sc.data[i];
        auto eval = [&](double v) {
            sc.data[i] = v;
            Tape t;
            return debias_loss(t, Tape::constant(sc), seen, unseen).scalar();
        };
        double fd = (eval(saved + h) - eval(saved - h)) / (2 * h);
        sc.data[i] = saved;
        CHECK(testutil::rel_err(g[i], fd) < 1e-5);
    }
}

TEST_CASE("total_loss arithmetic and defaults") {
    Tape tape;
    LossWeights w;   // lambda_sem 0.5, lambda_deb 0.1
    CHECK(w.lambda_sem == 0.5);
    CHECK(w.lambda_deb == 0.1);
    CHECK(w.tau == 20.0);

    Tensor cls = Tape::constant(Tensor::scalar_of(1.0));
    std::vector<Tensor> sems{Tape::constant(Tensor::scalar_of(2.0)),
                             Tape::constant(Tensor::scalar_of(0.0))};
    Tensor deb = Tape::constant(Tensor::scalar_of(4.0));
    // 1 + 0.5*(2+0) + 0.1*4 = 2.4
    CHECK(total_loss(tape, cls, sems, 2, deb, w).scalar() ==
          doctest::Approx(2.4).epsilon(1e-12));
    CHECK(oracle::total_loss(1.0, {2.0, 0.0}, 4.0, 0.5, 0.1) ==
          doctest::Approx(2.4).epsilon(1e-12));

    // Term-count contract.
    CHECK_THROWS_AS(total_loss(tape, cls, sems, 3, deb, w), ContractError);

    LossWeights bad;
    bad.lambda_sem = -1;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad = LossWeights{};
    bad.tau = 0;
    CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("cosine_scores gradient flows through the prediction") {
    std::mt19937_64 rng(6);
    Tensor pred = random_tensor(rng, 1, 4);
    Tensor protos = random_tensor(rng, 3, 4);

    Tape tape;
    Tensor leafed = tape.leaf(pred);
    Tensor s = cosine_scores(tape, leafed, protos, 20.0);
    tape.backward(tape.sum_all(s));
    const auto& g = tape.grad(leafed);

    for (std::size_t i = 0; i < pred.numel(); ++i) {
        double h = 1e-6, saved = pred.data[i];
        auto eval = [&](double v) {
            pred.data[i] = v;
            Tape t;
            return t.sum_all(cosine_scores(t, Tape::constant(pred), protos, 20.0))
                .scalar();
        };
        double fd = (eval(saved + h) - eval(saved - h)) / (2 * h);
        pred.data[i] = saved;
        CHECK(testutil::rel_err(g[i], fd) < 1e-5);
    }
}
