#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "gic/errors.hpp"
#include "gic/evaluation.hpp"
#include "gic/invariant.hpp"
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

// dataset with oracle groups of the given sizes; feature x1 tags the row,
// x0 separates the classes so training has something to learn
LabeledDataset sized_groups(const std::vector<int>& sizes) {
    LabeledDataset ds;
    int n = 0;
    for (int s : sizes) n += s;
    ds.features.resize(n, 2);
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.spurious.resize(static_cast<std::size_t>(n));
    int row = 0;
    for (std::size_t g = 0; g < sizes.size(); ++g) {
        const int y = static_cast<int>(g) / 2;
        const int a = static_cast<int>(g) % 2;
        for (int k = 0; k < sizes[g]; ++k) {
            ds.features(row, 0) = y == 0 ? -1.0 - 0.01 * k : 1.0 + 0.01 * k;
            ds.features(row, 1) = static_cast<double>(row);
            ds.labels[static_cast<std::size_t>(row)] = y;
            ds.spurious[static_cast<std::size_t>(row)] = a;
            ++row;
        }
    }
    ds.class_count = 2;
    ds.spurious_arity = 2;
    derive_group_ids(ds);
    ds.name = "sized";
    return ds;
}

// multiset of row tags per group id
std::map<int, std::multiset<double>> tags_by_group(const LabeledDataset& ds) {
    std::map<int, std::multiset<double>> out;
    for (int i = 0; i < ds.size(); ++i) out[ds.group_ids[static_cast<std::size_t>(i)]].insert(ds.features(i, 1));
    return out;
}

} // namespace

TEST_CASE("subsampling cuts every group to the smallest size") {
    const auto data = sized_groups({4, 2, 3, 2});
    const auto groups = oracle_groups(data);
    const auto balanced = subsample_balanced(data, groups, 3);
    CHECK(balanced.size() == 8);

    const auto by_group = tags_by_group(balanced);
    const auto original = tags_by_group(data);
    for (int g = 0; g < 4; ++g) {
        REQUIRE(by_group.count(g) == 1);
        CHECK(by_group.at(g).size() == 2);
        // drawn without replacement from the original members
        for (double tag : by_group.at(g)) CHECK(original.at(g).count(tag) == 1);
        const std::set<double> dedup(by_group.at(g).begin(), by_group.at(g).end());
        CHECK(dedup.size() == 2);  // no duplicates
    }

    const auto again = subsample_balanced(data, groups, 3);
    CHECK((again.features.array() == balanced.features.array()).all());
}

TEST_CASE("upsampling pads every group to the largest size, keeping originals") {
    const auto data = sized_groups({4, 2, 3, 2});
    const auto groups = oracle_groups(data);
    const auto padded = upsample_to_majority(data, groups, 3);
    CHECK(padded.size() == 16);

    const auto by_group = tags_by_group(padded);
    const auto original = tags_by_group(data);
    for (int g = 0; g < 4; ++g) {
        CHECK(by_group.at(g).size() == 4);
        // every original row still present at least once
        for (double tag : original.at(g)) CHECK(by_group.at(g).count(tag) >= 1);
        // and nothing from outside the group
        for (double tag : by_group.at(g)) CHECK(original.at(g).count(tag) == 1);
    }

    // an already balanced dataset comes back as the same row multiset
    const auto flat = sized_groups({3, 3, 3, 3});
    const auto same = upsample_to_majority(flat, oracle_groups(flat), 5);
    CHECK(tags_by_group(same) == tags_by_group(flat));
}

TEST_CASE("resampling refuses empty groups, naming them") {
    const auto data = sized_groups({4, 0, 3, 2});
    const auto groups = oracle_groups(data);
    try {
        subsample_balanced(data, groups, 1);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
    CHECK_THROWS_AS(upsample_to_majority(data, groups, 1), DataError);

    auto short_groups = groups;
    short_groups.group_ids.pop_back();
    short_groups.labels.pop_back();
    short_groups.spurious_hard.pop_back();
    CHECK_THROWS_AS(subsample_balanced(data, short_groups, 1), ShapeError);
}

TEST_CASE("groupdro reweights groups by exponentiated loss") {
    const auto data = sized_groups({6, 3, 4, 2});
    const auto groups = oracle_groups(data);

    RobustConfig cfg;
    cfg.method = RobustMethod::GroupDro;
    cfg.arch = {2, 2};
    cfg.epochs = 3;
    cfg.groupdro_eta = 0.5;
    cfg.sgd = {0.1, 0.0, 0.0};
    cfg.early_stop = false;
    cfg.seed = 19;
    const auto art = train_robust(data, groups, cfg, nullptr);
    REQUIRE(art.q_curve.size() == 3);
    REQUIRE(art.q_curve[0].size() == 4);

    // replicate the first update from the same freshly initialized model
    Rng rng = make_rng(derive_seed(19, "robust"));
    const auto init = make_classifier({2, 2}, rng);
    const Eigen::MatrixXd probs = forward(init, data.features);
    const auto members = assignment_members(groups);
    std::vector<double> expect(4, 0.25);
    double z = 0.0;
    for (int g = 0; g < 4; ++g) {
        double sum = 0.0;
        for (int i : members[static_cast<std::size_t>(g)])
            sum += -std::log(std::max(probs(i, data.labels[static_cast<std::size_t>(i)]), kProbFloor));
        expect[static_cast<std::size_t>(g)] *=
            std::exp(0.5 * sum / static_cast<double>(members[static_cast<std::size_t>(g)].size()));
        z += expect[static_cast<std::size_t>(g)];
    }
    for (int g = 0; g < 4; ++g)
        CHECK(std::abs(art.q_curve[0][static_cast<std::size_t>(g)] - expect[static_cast<std::size_t>(g)] / z) <=
              1e-12);

    // weights stay a distribution the whole way
    for (const auto& q : art.q_curve) {
        double total = 0.0;
        for (double v : q) total += v;
        CHECK(total == doctest::Approx(1.0));
    }
}

TEST_CASE("groupdro with a single populated group pins its weight at one") {
    auto data = sized_groups({5, 0, 0, 0});
    const auto groups = oracle_groups(data);
    RobustConfig cfg;
    cfg.method = RobustMethod::GroupDro;
    cfg.arch = {2, 2};
    cfg.epochs = 2;
    cfg.early_stop = false;
    const auto art = train_robust(data, groups, cfg, nullptr);
    REQUIRE(art.q_curve.size() == 2);
    for (const auto& q : art.q_curve) {
        REQUIRE(q.size() == 1);
        CHECK(q[0] == doctest::Approx(1.0));
    }
}

TEST_CASE("mixup emits the documented warnings in degenerate partitions") {
    RobustConfig cfg;
    cfg.method = RobustMethod::Mixup;
    cfg.arch = {2, 2};
    cfg.epochs = 2;
    cfg.early_stop = false;

    SUBCASE("one attribute value: intra-label impossible") {
        const auto data = sized_groups({4, 0, 4, 0});
        const auto art = train_robust(data, oracle_groups(data), cfg, nullptr);
        REQUIRE(art.warnings.size() == 1);
        CHECK(art.warnings[0] == "mixup: no intra-label pairs exist; strategy skipped");
    }
    SUBCASE("one class: intra-domain impossible") {
        const auto data = sized_groups({4, 4, 0, 0});
        const auto art = train_robust(data, oracle_groups(data), cfg, nullptr);
        REQUIRE(art.warnings.size() == 1);
        CHECK(art.warnings[0] == "mixup: no intra-domain pairs exist; strategy skipped");
    }
    SUBCASE("single cell: no pairs at all") {
        const auto data = sized_groups({6, 0, 0, 0});
        const auto art = train_robust(data, oracle_groups(data), cfg, nullptr);
        REQUIRE(art.warnings.size() == 3);
        CHECK(art.warnings[2] == "mixup: no valid pairs at all; training degenerates to plain ERM");
    }
}

TEST_CASE("mixup learns a separable problem and is deterministic") {
    const auto data = sized_groups({8, 6, 7, 9});
    const auto groups = oracle_groups(data);
    RobustConfig cfg;
    cfg.method = RobustMethod::Mixup;
    cfg.arch = {2, 2};
    cfg.epochs = 25;
    cfg.batch_size = 8;
    cfg.sgd = {0.3, 0.9, 0.0};
    cfg.mixup_alpha = 2.0;
    cfg.mixup_strategy_prob = 0.5;
    cfg.early_stop = false;
    cfg.seed = 2;
    const auto art = train_robust(data, groups, cfg, nullptr);
    CHECK(art.warnings.empty());
    CHECK(evaluate_model(art.model, data).average_accuracy >= 0.95);

    const auto again = train_robust(data, groups, cfg, nullptr);
    CHECK(same_weights(art.model, again.model));
}

TEST_CASE("early stopping returns the best validation snapshot") {
    const auto train = sized_groups({10, 4, 5, 8});
    const auto val = sized_groups({4, 4, 4, 4});
    const auto groups = oracle_groups(train);

    RobustConfig cfg;
    cfg.method = RobustMethod::Subsample;
    cfg.arch = {2, 2};
    cfg.epochs = 12;
    cfg.batch_size = 4;
    cfg.sgd = {0.4, 0.9, 0.0};
    cfg.early_stop = true;
    cfg.seed = 23;
    const auto art = train_robust(train, groups, cfg, &val);

    REQUIRE(art.val_worst_curve.size() == 12);
    REQUIRE(art.best_epoch >= 0);
    REQUIRE(art.best_epoch < 12);
    const double best = *std::max_element(art.val_worst_curve.begin(), art.val_worst_curve.end());
    // the snapshot is the first epoch attaining the maximum
    CHECK(art.val_worst_curve[static_cast<std::size_t>(art.best_epoch)] == best);
    for (int e = 0; e < art.best_epoch; ++e)
        CHECK(art.val_worst_curve[static_cast<std::size_t>(e)] < best);
    CHECK(evaluate_model(art.model, val).worst_group_accuracy == best);

    // with early stopping off the curve is still recorded but the final
    // model is returned
    RobustConfig off = cfg;
    off.early_stop = false;
    const auto tail = train_robust(train, groups, off, &val);
    CHECK(tail.val_worst_curve.size() == 12);
    CHECK(evaluate_model(tail.model, val).worst_group_accuracy == tail.val_worst_curve.back());
}

TEST_CASE("early stopping without usable validation groups is rejected") {
    const auto train = sized_groups({4, 3, 3, 2});
    const auto groups = oracle_groups(train);
    RobustConfig cfg;
    cfg.method = RobustMethod::Subsample;
    cfg.arch = {2, 2};
    cfg.early_stop = true;
    CHECK_THROWS_AS(train_robust(train, groups, cfg, nullptr), ConfigError);

    auto bare = strip_labels(train);
    CHECK_THROWS_AS(train_robust(train, groups, cfg, &bare), ConfigError);
}

TEST_CASE("robust config validation") {
    const auto train = sized_groups({3, 3, 3, 3});
    const auto groups = oracle_groups(train);
    RobustConfig cfg;
    cfg.arch = {2, 2};
    cfg.early_stop = false;

    RobustConfig bad = cfg;
    bad.arch = {3, 2};
    CHECK_THROWS_AS(train_robust(train, groups, bad, nullptr), ConfigError);
    bad = cfg;
    bad.epochs = 0;
    CHECK_THROWS_AS(train_robust(train, groups, bad, nullptr), ConfigError);
    bad = cfg;
    bad.mixup_strategy_prob = 1.5;
    CHECK_THROWS_AS(train_robust(train, groups, bad, nullptr), ConfigError);
    bad = cfg;
    bad.groupdro_eta = 0.0;
    CHECK_THROWS_AS(train_robust(train, groups, bad, nullptr), ConfigError);
}

TEST_CASE("method names round trip") {
    for (const char* name : {"subsample", "upsample", "groupdro", "mixup"})
        CHECK(std::string(robust_method_name(robust_method_from_name(name))) == name);
    CHECK_THROWS_AS(robust_method_from_name("dro"), ConfigError);
}
