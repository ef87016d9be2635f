#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gic/errors.hpp"
#include "gic/mlp.hpp"

using namespace gic;

namespace {

bool same_weights(const MlpModel& a, const MlpModel& b) {
    if (a.layer_count() != b.layer_count()) return false;
    for (int l = 0; l < a.layer_count(); ++l) {
        const auto ul = static_cast<std::size_t>(l);
        if ((a.weights[ul].array() != b.weights[ul].array()).any()) return false;
        if ((a.biases[ul].array() != b.biases[ul].array()).any()) return false;
    }
    return true;
}

// central finite differences over every parameter against analytic grads
template <typename LossFn>
void check_param_grads(const MlpModel& model, const Gradients& analytic, LossFn loss_of) {
    const double h = 1e-5;
    for (int l = 0; l < model.layer_count(); ++l) {
        const auto ul = static_cast<std::size_t>(l);
        for (Eigen::Index r = 0; r < model.weights[ul].rows(); ++r)
            for (Eigen::Index c = 0; c < model.weights[ul].cols(); ++c) {
                MlpModel m = model;
                m.weights[ul](r, c) += h;
                const double up = loss_of(m);
                m.weights[ul](r, c) -= 2 * h;
                const double dn = loss_of(m);
                const double fd = (up - dn) / (2 * h);
                const double an = analytic.weights[ul](r, c);
                REQUIRE(std::abs(an - fd) <= 1e-4 * std::max({std::abs(an), std::abs(fd), 1e-3}));
            }
        for (Eigen::Index r = 0; r < model.biases[ul].size(); ++r) {
            MlpModel m = model;
            m.biases[ul](r) += h;
            const double up = loss_of(m);
            m.biases[ul](r) -= 2 * h;
            const double dn = loss_of(m);
            const double fd = (up - dn) / (2 * h);
            const double an = analytic.biases[ul](r);
            REQUIRE(std::abs(an - fd) <= 1e-4 * std::max({std::abs(an), std::abs(fd), 1e-3}));
        }
    }
}

} // namespace

TEST_CASE("glorot init stays inside its bound and repeats per seed") {
    Rng rng_a = make_rng(7);
    Rng rng_b = make_rng(7);
    const auto a = make_classifier({3, 4, 2}, rng_a);
    const auto b = make_classifier({3, 4, 2}, rng_b);
    CHECK(same_weights(a, b));

    const double bound0 = std::sqrt(6.0 / (3 + 4));
    const double bound1 = std::sqrt(6.0 / (4 + 2));
    CHECK(a.weights[0].cwiseAbs().maxCoeff() <= bound0);
    CHECK(a.weights[1].cwiseAbs().maxCoeff() <= bound1);
    CHECK(a.biases[0].cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.biases[1].cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.activations[0] == Activation::Relu);
    CHECK(a.activations[1] == Activation::Softmax);

    Rng rng_c = make_rng(8);
    const auto c = make_classifier({3, 4, 2}, rng_c);
    CHECK_FALSE(same_weights(a, c));

    CHECK_THROWS_AS(make_classifier({3}, rng_a), ConfigError);
    CHECK_THROWS_AS(make_classifier({3, 0, 2}, rng_a), ConfigError);
}

TEST_CASE("forward matches hand-computed layers") {
    MlpModel m;
    m.dims = {2, 2};
    m.weights = {(Eigen::MatrixXd(2, 2) << 1.0, 2.0, 3.0, 4.0).finished()};
    m.biases = {(Eigen::VectorXd(2) << 0.5, -0.5).finished()};
    m.activations = {Activation::Identity};

    Eigen::MatrixXd x(1, 2);
    x << 1.0, 1.0;
    const auto out = forward(m, x);
    CHECK(out(0, 0) == doctest::Approx(3.5));
    CHECK(out(0, 1) == doctest::Approx(6.5));

    m.activations = {Activation::Relu};
    m.biases[0] << -4.0, -10.0;
    const auto relu_out = forward(m, x);
    CHECK(relu_out(0, 0) == doctest::Approx(0.0));  // 3 - 4
    CHECK(relu_out(0, 1) == doctest::Approx(0.0));  // 7 - 10

    m.activations = {Activation::Softmax};
    m.biases[0] << 0.0, 0.0;
    const auto sm = forward(m, x);
    CHECK(sm.row(0).sum() == doctest::Approx(1.0));
    CHECK(sm(0, 1) / sm(0, 0) == doctest::Approx(std::exp(7.0 - 3.0)));

    // softmax survives huge logits thanks to the row-max subtraction
    Eigen::MatrixXd big(1, 2);
    big << 500.0, 500.0;
    const auto stable = forward(m, big);
    CHECK(std::isfinite(stable(0, 0)));
    CHECK(stable.row(0).sum() == doctest::Approx(1.0));

    Eigen::MatrixXd wrong(1, 3);
    wrong.setZero();
    CHECK_THROWS_AS(forward(m, wrong), ShapeError);
    Eigen::MatrixXd nan(1, 2);
    nan << std::nan(""), 0.0;
    CHECK_THROWS_AS(forward(m, nan), DataError);
}

TEST_CASE("cross entropy value and gradient oracle") {
    Eigen::MatrixXd probs(2, 2);
    probs << 0.9, 0.1, 0.2, 0.8;
    const auto res = cross_entropy(probs, {0, 1});
    CHECK(res.loss == doctest::Approx(-(std::log(0.9) + std::log(0.8)) / 2.0));
    CHECK(res.grad_logits(0, 0) == doctest::Approx(-0.05));  // (0.9 - 1) / 2
    CHECK(res.grad_logits(0, 1) == doctest::Approx(0.05));
    CHECK(res.grad_logits(1, 0) == doctest::Approx(0.10));
    CHECK(res.grad_logits(1, 1) == doctest::Approx(-0.10));

    CHECK_THROWS_AS(cross_entropy(probs, {0}), ShapeError);
    CHECK_THROWS_AS(cross_entropy(probs, {0, 2}), IndexError);

    // weighted version: weights scale rows as given
    Eigen::VectorXd w(2);
    w << 1.0, 3.0;
    const auto wres = weighted_cross_entropy(probs, {0, 1}, w);
    CHECK(wres.loss == doctest::Approx(-std::log(0.9) - 3.0 * std::log(0.8)));
    CHECK(wres.grad_logits(1, 1) == doctest::Approx(3.0 * (0.8 - 1.0)));

    // soft targets
    Eigen::MatrixXd t(2, 2);
    t << 0.5, 0.5, 0.0, 1.0;
    const auto sres = soft_cross_entropy(probs, t);
    const double expect = (-(0.5 * std::log(0.9) + 0.5 * std::log(0.1)) - std::log(0.8)) / 2.0;
    CHECK(sres.loss == doctest::Approx(expect));
    CHECK(sres.grad_logits(0, 0) == doctest::Approx((0.9 - 0.5) / 2.0));
}

TEST_CASE("probability floor keeps logs finite") {
    Eigen::MatrixXd probs(1, 2);
    probs << 0.0, 1.0;
    const auto res = cross_entropy(probs, {0});
    CHECK(std::isfinite(res.loss));
    CHECK(res.loss == doctest::Approx(-std::log(kProbFloor)));
    CHECK(res.clamped == 1);
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng = make_rng(42);
    const auto model = make_classifier({3, 5, 2}, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd x(4, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    const std::vector<int> labels = {0, 1, 1, 0};

    SUBCASE("hard labels") {
        const auto trace = forward_trace(model, x);
        const auto ce = cross_entropy(trace.output(), labels);
        const auto grads = backward(model, trace, ce.grad_logits);
        check_param_grads(model, grads,
                          [&](const MlpModel& m) { return cross_entropy(forward(m, x), labels).loss; });

        // input gradient too
        const double h = 1e-5;
        for (Eigen::Index r = 0; r < x.rows(); ++r)
            for (Eigen::Index c = 0; c < x.cols(); ++c) {
                Eigen::MatrixXd xp = x, xm = x;
                xp(r, c) += h;
                xm(r, c) -= h;
                const double fd =
                    (cross_entropy(forward(model, xp), labels).loss - cross_entropy(forward(model, xm), labels).loss) /
                    (2 * h);
                const double an = grads.input(r, c);
                REQUIRE(std::abs(an - fd) <= 1e-4 * std::max({std::abs(an), std::abs(fd), 1e-3}));
            }
    }

    SUBCASE("soft targets") {
        Eigen::MatrixXd t(4, 2);
        t << 0.3, 0.7, 1.0, 0.0, 0.5, 0.5, 0.9, 0.1;
        const auto trace = forward_trace(model, x);
        const auto ce = soft_cross_entropy(trace.output(), t);
        const auto grads = backward(model, trace, ce.grad_logits);
        check_param_grads(model, grads,
                          [&](const MlpModel& m) { return soft_cross_entropy(forward(m, x), t).loss; });
    }

    SUBCASE("weighted") {
        Eigen::VectorXd w(4);
        w << 0.1, 0.4, 0.2, 0.3;
        const auto trace = forward_trace(model, x);
        const auto ce = weighted_cross_entropy(trace.output(), labels, w);
        const auto grads = backward(model, trace, ce.grad_logits);
        check_param_grads(model, grads,
                          [&](const MlpModel& m) { return weighted_cross_entropy(forward(m, x), labels, w).loss; });
    }
}

TEST_CASE("softmax vjp matches finite differences") {
    Rng rng = make_rng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd logits(3, 4);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = normal(rng);
    Eigen::MatrixXd coef(3, 4);
    for (Eigen::Index i = 0; i < coef.size(); ++i) coef.data()[i] = normal(rng);

    MlpModel sm;
    sm.dims = {4, 4};
    sm.weights = {Eigen::MatrixXd::Identity(4, 4)};
    sm.biases = {Eigen::VectorXd::Zero(4)};
    sm.activations = {Activation::Softmax};

    // f(logits) = sum_ij coef_ij * softmax(logits)_ij
    const auto value = [&](const Eigen::MatrixXd& l) { return (forward(sm, l).array() * coef.array()).sum(); };
    const Eigen::MatrixXd analytic = softmax_vjp(forward(sm, logits), coef);

    const double h = 1e-6;
    for (Eigen::Index r = 0; r < logits.rows(); ++r)
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            Eigen::MatrixXd lp = logits, lm = logits;
            lp(r, c) += h;
            lm(r, c) -= h;
            const double fd = (value(lp) - value(lm)) / (2 * h);
            REQUIRE(std::abs(analytic(r, c) - fd) <=
                    1e-4 * std::max({std::abs(analytic(r, c)), std::abs(fd), 1e-3}));
        }
}

TEST_CASE("sgd momentum unrolls by hand") {
    MlpModel m;
    m.dims = {1, 1};
    m.weights = {Eigen::MatrixXd::Zero(1, 1)};
    m.biases = {Eigen::VectorXd::Zero(1)};
    m.activations = {Activation::Identity};
    SgdState state = make_sgd_state(m, {1.0, 0.9, 0.0});

    Gradients g;
    g.weights = {Eigen::MatrixXd::Constant(1, 1, 1.0)};
    g.biases = {Eigen::VectorXd::Zero(1)};

    // v1 = 1, p = -1; v2 = 1.9, p = -2.9; v3 = 2.71, p = -5.61
    sgd_step(m, g, state);
    CHECK(m.weights[0](0, 0) == doctest::Approx(-1.0));
    sgd_step(m, g, state);
    CHECK(m.weights[0](0, 0) == doctest::Approx(-2.9));
    sgd_step(m, g, state);
    CHECK(m.weights[0](0, 0) == doctest::Approx(-5.61));
}

TEST_CASE("weight decay touches weights, never biases") {
    MlpModel m;
    m.dims = {1, 1};
    m.weights = {Eigen::MatrixXd::Constant(1, 1, 2.0)};
    m.biases = {Eigen::VectorXd::Constant(1, 1.0)};
    m.activations = {Activation::Identity};
    SgdState state = make_sgd_state(m, {1.0, 0.0, 0.1});

    Gradients g;
    g.weights = {Eigen::MatrixXd::Zero(1, 1)};
    g.biases = {Eigen::VectorXd::Zero(1)};
    sgd_step(m, g, state);
    CHECK(m.weights[0](0, 0) == doctest::Approx(1.8));  // 2 - 1 * (0.1 * 2)
    CHECK(m.biases[0](0) == doctest::Approx(1.0));

    Gradients bad;
    bad.weights = {Eigen::MatrixXd::Constant(1, 1, std::nan(""))};
    bad.biases = {Eigen::VectorXd::Zero(1)};
    CHECK_THROWS_AS(sgd_step(m, bad, state), TrainingError);
}

TEST_CASE("argmax ties pick the lowest index and accuracy counts them") {
    Eigen::MatrixXd scores(3, 3);
    scores << 0.5, 0.5, 0.0, 0.1, 0.2, 0.7, 0.3, 0.3, 0.3;
    const auto idx = argmax_rows(scores);
    CHECK(idx == std::vector<int>{0, 2, 0});
    CHECK(accuracy(scores, {0, 2, 1}) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("checkpoint round trip is exact and corrupt files are named") {
    Rng rng = make_rng(11);
    const auto model = make_classifier({4, 6, 3}, rng);
    const auto path = std::filesystem::temp_directory_path() / "gic_test_model.gicm";
    save_model(model, path.string());

    const auto back = load_model(path.string());
    CHECK(same_weights(model, back));
    CHECK(back.dims == model.dims);
    CHECK(back.activations == model.activations);

    // truncated checkpoint
    std::filesystem::resize_file(path, 16);
    CHECK_THROWS_AS(load_model(path.string()), FormatError);

    // wrong magic
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "NOPE";
    }
    CHECK_THROWS_AS(load_model(path.string()), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("backward rejects stale traces") {
    Rng rng = make_rng(5);
    const auto a = make_classifier({2, 3, 2}, rng);
    const auto b = make_classifier({2, 4, 2}, rng);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 2);
    const auto trace = forward_trace(a, x);
    CHECK_THROWS_AS(backward(b, trace, Eigen::MatrixXd::Zero(3, 2)), StateError);
    CHECK_THROWS_AS(backward(a, trace, Eigen::MatrixXd::Zero(2, 2)), ShapeError);
    CHECK_THROWS_AS(backward(a, ForwardTrace{}, Eigen::MatrixXd::Zero(3, 2)), StateError);
}

TEST_CASE("gradient sums check shapes before adding") {
    Rng rng = make_rng(6);
    const auto a = make_classifier({2, 3, 2}, rng);
    const auto b = make_classifier({2, 4, 2}, rng);
    auto grads_for = [](const MlpModel& m, Eigen::Index rows) {
        Eigen::MatrixXd x = Eigen::MatrixXd::Random(rows, 2);
        const auto trace = forward_trace(m, x);
        return backward(m, trace, Eigen::MatrixXd::Ones(rows, 2));
    };

    auto ga = grads_for(a, 3);
    CHECK_THROWS_AS(ga += grads_for(b, 3), ShapeError);        // layer widths differ
    CHECK_THROWS_AS(ga += grads_for(a, 5), ShapeError);        // input grads differ in rows
    const auto one = grads_for(a, 3);
    auto sum = one;
    sum += one;
    CHECK(sum.weights[0](0, 0) == doctest::Approx(2.0 * one.weights[0](0, 0)));

    auto no_input = grads_for(a, 3);
    no_input.input.resize(0, 0);
    no_input += grads_for(a, 5);                               // fine: one side carries no input grad
    CHECK(no_input.input.size() == 0);
}
