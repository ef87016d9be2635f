#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "gic/erm.hpp"
#include "gic/errors.hpp"
#include "gic/rng.hpp"

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

// two well-separated blobs in 2d
LabeledDataset blobs(int per_class, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 0.5);
    LabeledDataset ds;
    ds.features.resize(2 * per_class, 2);
    ds.labels.resize(static_cast<std::size_t>(2 * per_class));
    for (int i = 0; i < 2 * per_class; ++i) {
        const int y = i % 2;
        const double cx = y == 0 ? -3.0 : 3.0;
        ds.features(i, 0) = cx + normal(rng);
        ds.features(i, 1) = normal(rng);
        ds.labels[static_cast<std::size_t>(i)] = y;
    }
    ds.class_count = 2;
    ds.name = "blobs";
    return ds;
}

} // namespace

TEST_CASE("zero epochs returns the untouched init from the derived seed") {
    const auto data = blobs(20, 1);
    ErmConfig cfg;
    cfg.arch = {2, 4, 2};
    cfg.epochs = 0;
    cfg.seed = 99;
    const auto art = train_erm(data, cfg);
    CHECK(art.curve.empty());
    CHECK(art.feature_layer_index == 0);

    Rng rng = make_rng(derive_seed(99, "erm"));
    const auto expect = make_classifier({2, 4, 2}, rng);
    CHECK(same_weights(art.model, expect));
}

TEST_CASE("one epoch replays the exact minibatch recipe") {
    const auto data = blobs(13, 2);  // 26 rows, batch 8 -> 3 full + 1 partial
    ErmConfig cfg;
    cfg.arch = {2, 2};
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.sgd = {0.1, 0.9, 1e-4};
    cfg.seed = 7;
    const auto art = train_erm(data, cfg);

    // manual replication from the same rng stream
    Rng rng = make_rng(derive_seed(7, "erm"));
    MlpModel model = make_classifier({2, 2}, rng);
    SgdState state = make_sgd_state(model, cfg.sgd);
    const int n = data.size();
    const auto order = shuffled_indices(n, rng);
    for (int start = 0; start < n; start += cfg.batch_size) {
        const int stop = std::min(n, start + cfg.batch_size);
        Eigen::MatrixXd batch(stop - start, 2);
        std::vector<int> labels(static_cast<std::size_t>(stop - start));
        for (int i = start; i < stop; ++i) {
            batch.row(i - start) = data.features.row(order[static_cast<std::size_t>(i)]);
            labels[static_cast<std::size_t>(i - start)] =
                data.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        }
        const auto trace = forward_trace(model, batch);
        const auto ce = cross_entropy(trace.output(), labels);
        const auto grads = backward(model, trace, ce.grad_logits);
        sgd_step(model, grads, state);
    }
    CHECK(same_weights(art.model, model));

    REQUIRE(art.curve.size() == 1);
    const Eigen::MatrixXd probs = forward(model, data.features);
    CHECK(art.curve[0].loss == cross_entropy(probs, data.labels).loss);
    CHECK(art.curve[0].accuracy == accuracy(probs, data.labels));
}

TEST_CASE("separable blobs are learned to perfection") {
    const auto data = blobs(50, 3);
    ErmConfig cfg;
    cfg.arch = {2, 2};
    cfg.epochs = 30;
    cfg.batch_size = 16;
    cfg.sgd = {0.5, 0.9, 0.0};
    cfg.seed = 5;
    const auto art = train_erm(data, cfg);
    REQUIRE(art.curve.size() == 30);
    CHECK(art.curve.back().accuracy == doctest::Approx(1.0));
    CHECK(art.curve.back().loss < art.curve.front().loss);
}

TEST_CASE("training is deterministic") {
    const auto data = blobs(30, 4);
    ErmConfig cfg;
    cfg.arch = {2, 8, 2};
    cfg.epochs = 3;
    cfg.seed = 11;
    const auto a = train_erm(data, cfg);
    const auto b = train_erm(data, cfg);
    CHECK(same_weights(a.model, b.model));
    CHECK(a.curve.back().loss == b.curve.back().loss);
}

TEST_CASE("error split matches hand-set weights") {
    LabeledDataset ds;
    ds.features = (Eigen::MatrixXd(4, 1) << -2.0, -1.0, 1.0, 2.0).finished();
    ds.labels = {0, 1, 1, 0};  // rows 1 and 3 will be misclassified
    ds.class_count = 2;

    MlpModel m;  // logit_1 - logit_0 = 2x: predicts 1 iff x > 0
    m.dims = {1, 2};
    m.weights = {(Eigen::MatrixXd(2, 1) << -1.0, 1.0).finished()};
    m.biases = {Eigen::VectorXd::Zero(2)};
    m.activations = {Activation::Softmax};

    const auto split = error_set(m, ds);
    CHECK(split.errors == std::vector<int>{1, 3});
    CHECK(split.correct == std::vector<int>{0, 2});

    auto bare = ds;
    bare.labels.clear();
    bare.class_count = 0;
    CHECK_THROWS_AS(error_set(m, bare), DataError);
}

TEST_CASE("feature extraction takes the penultimate activation") {
    const auto data = blobs(10, 6);
    ErmConfig cfg;
    cfg.arch = {2, 3, 2};
    cfg.epochs = 1;
    cfg.seed = 13;
    const auto art = train_erm(data, cfg);
    const auto feats = extract_features(art, data);
    CHECK(feats.rows() == data.size());
    CHECK(feats.cols() == 3);
    const auto trace = forward_trace(art.model, data.features);
    CHECK((feats.array() == trace.post[0].array()).all());

    // a single linear layer hands back the inputs unchanged
    ErmConfig lin = cfg;
    lin.arch = {2, 2};
    const auto lart = train_erm(data, lin);
    const auto lfeats = extract_features(lart, data);
    CHECK((lfeats.array() == data.features.array()).all());
}

TEST_CASE("config validation") {
    const auto data = blobs(5, 8);
    ErmConfig cfg;
    cfg.arch = {2, 2};

    ErmConfig bad = cfg;
    bad.arch = {3, 2};
    CHECK_THROWS_AS(train_erm(data, bad), ConfigError);
    bad.arch = {2, 3};
    CHECK_THROWS_AS(train_erm(data, bad), ConfigError);
    bad.arch = {2};
    CHECK_THROWS_AS(train_erm(data, bad), ConfigError);
    bad = cfg;
    bad.epochs = -1;
    CHECK_THROWS_AS(train_erm(data, bad), ConfigError);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(train_erm(data, bad), ConfigError);

    auto bare = data;
    bare.labels.clear();
    bare.class_count = 0;
    CHECK_THROWS_AS(train_erm(bare, cfg), DataError);
}
