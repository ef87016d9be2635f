#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gic/errors.hpp"
#include "gic/evaluation.hpp"

using namespace gic;

namespace {

LabeledDataset with_groups(const std::vector<int>& labels, const std::vector<int>& spurious) {
    LabeledDataset ds;
    const int n = static_cast<int>(labels.size());
    ds.features = Eigen::MatrixXd::Zero(n, 2);
    for (int i = 0; i < n; ++i) ds.features(i, 0) = static_cast<double>(i);
    ds.labels = labels;
    ds.spurious = spurious;
    ds.class_count = 2;
    ds.spurious_arity = 2;
    derive_group_ids(ds);
    return ds;
}

GroupAssignment assignment_of(const std::vector<int>& ghat) {
    GroupAssignment a;
    a.group_ids = ghat;
    a.class_count = 2;
    a.spurious_arity = 2;
    for (int g : ghat) {
        a.labels.push_back(g / 2);
        a.spurious_hard.push_back(g % 2);
    }
    return a;
}

} // namespace

TEST_CASE("group accuracy table by hand") {
    // oracle groups: rows {0,1} in g0, row 2 in g1, row 3 in g2, g3 empty
    const auto data = with_groups({0, 0, 0, 1}, {0, 0, 1, 0});
    REQUIRE(data.group_ids == std::vector<int>{0, 0, 1, 2});

    const auto report = evaluate_predictions({0, 1, 0, 0}, data);
    CHECK(report.per_group_count == std::vector<long>{2, 1, 1, 0});
    CHECK(report.per_group_accuracy[0] == doctest::Approx(0.5));
    CHECK(report.per_group_accuracy[1] == doctest::Approx(1.0));
    CHECK(report.per_group_accuracy[2] == doctest::Approx(0.0));
    CHECK(report.per_group_accuracy[3] == -1.0);
    CHECK(report.excluded_groups == std::vector<int>{3});
    CHECK(report.average_accuracy == doctest::Approx(0.5));
    CHECK(report.worst_group_accuracy == doctest::Approx(0.0));

    CHECK_THROWS_AS(evaluate_predictions({0, 1}, data), ShapeError);
    auto bare = strip_labels(data);
    CHECK_THROWS_AS(evaluate_predictions({0, 0, 0, 0}, bare), DataError);
}

TEST_CASE("evaluate_model scores argmax predictions") {
    const auto data = with_groups({0, 0, 1, 1}, {0, 1, 0, 1});
    MlpModel m;  // predicts 1 iff x0 > 1.5: rows 2 and 3
    m.dims = {2, 2};
    m.weights = {(Eigen::MatrixXd(2, 2) << 0.0, 0.0, 1.0, 0.0).finished()};
    m.biases = {(Eigen::VectorXd(2) << 0.0, -1.5).finished()};
    m.activations = {Activation::Softmax};
    const auto report = evaluate_model(m, data);
    CHECK(report.average_accuracy == doctest::Approx(1.0));
    CHECK(report.worst_group_accuracy == doctest::Approx(1.0));
}

TEST_CASE("minority precision and recall by hand") {
    // oracle sizes: g0=4, g1=1, g2=2, g3=3 -> minority = {1, 2}
    const std::vector<int> g = {0, 0, 0, 0, 1, 2, 2, 3, 3, 3};
    std::vector<int> labels, spurious;
    for (int v : g) {
        labels.push_back(v / 2);
        spurious.push_back(v % 2);
    }
    const auto data = with_groups(labels, spurious);
    REQUIRE(data.group_ids == g);

    const auto ghat = assignment_of({0, 1, 0, 0, 1, 2, 3, 3, 3, 2});
    const auto score = minority_precision_recall(ghat, data);
    CHECK(score.minority_groups == std::vector<int>{1, 2});
    // inferred minority rows: 1 (wrong), 4 (right), 5 (right), 9 (wrong) -> 2/4
    CHECK(score.precision == doctest::Approx(0.5));
    // oracle minority rows: 4 (hit), 5 (hit), 6 (miss) -> 2/3
    CHECK(score.recall == doctest::Approx(2.0 / 3.0));
    CHECK(score.precision_defined);

    // explicit minority set (must be sorted) overrides the default
    const auto custom = minority_precision_recall(ghat, data, {3});
    CHECK(custom.minority_groups == std::vector<int>{3});
    // inferred rows in {3}: 6 (g=2, miss), 7 (hit), 8 (hit) -> 2/3
    CHECK(custom.precision == doctest::Approx(2.0 / 3.0));

    CHECK_THROWS_AS(minority_precision_recall(assignment_of({0}), data), ShapeError);
}

TEST_CASE("minority defaults break size ties toward the lower group id") {
    // sizes: g0=2, g1=2, g2=3, g3 empty -> one minority slot, tie g0 vs g1
    const std::vector<int> g = {0, 0, 1, 1, 2, 2, 2};
    std::vector<int> labels, spurious;
    for (int v : g) {
        labels.push_back(v / 2);
        spurious.push_back(v % 2);
    }
    const auto data = with_groups(labels, spurious);
    const auto score = minority_precision_recall(assignment_of(g), data);
    CHECK(score.minority_groups == std::vector<int>{0});
    CHECK(score.precision == doctest::Approx(1.0));
    CHECK(score.recall == doctest::Approx(1.0));
}

TEST_CASE("precision is undefined when nothing lands in an inferred minority group") {
    const std::vector<int> g = {0, 0, 0, 1, 2, 2, 3, 3, 3};
    std::vector<int> labels, spurious;
    for (int v : g) {
        labels.push_back(v / 2);
        spurious.push_back(v % 2);
    }
    const auto data = with_groups(labels, spurious);
    const auto ghat = assignment_of(std::vector<int>(9, 3));  // everything inferred majority
    const auto score = minority_precision_recall(ghat, data);
    CHECK_FALSE(score.precision_defined);
    CHECK(score.precision == 0.0);
    CHECK(score.recall < 1.0);
}

TEST_CASE("attribute agreement aligns arbitrary encodings") {
    const auto data = with_groups({0, 0, 1, 1}, {0, 0, 1, 1});

    auto flipped = assignment_of({1, 1, 2, 2});  // spurious_hard = {1,1,0,0}
    REQUIRE(flipped.spurious_hard == std::vector<int>{1, 1, 0, 0});
    const auto flip_score = attribute_accuracy(flipped, data);
    CHECK(flip_score.raw == doctest::Approx(0.0));
    CHECK(flip_score.aligned == doctest::Approx(1.0));

    auto partial = assignment_of({0, 1, 3, 3});  // spurious_hard = {0,1,1,1}
    const auto part_score = attribute_accuracy(partial, data);
    CHECK(part_score.raw == doctest::Approx(0.75));
    CHECK(part_score.aligned == doctest::Approx(0.75));

    auto wide = flipped;
    wide.spurious_arity = 9;
    CHECK_THROWS_AS(attribute_accuracy(wide, data), ConfigError);

    auto bare = data;
    bare.spurious.clear();
    bare.spurious_arity = 0;
    bare.group_ids.clear();
    CHECK_THROWS_AS(attribute_accuracy(flipped, bare), DataError);
}

TEST_CASE("relabeling repairs a flipped encoding before minority scoring") {
    // oracle: g0 x2, g1 x1, g2 x1, g3 x2 -> minority {1, 2}
    const auto data = with_groups({0, 0, 0, 1, 1, 1}, {0, 0, 1, 0, 1, 1});
    REQUIRE(data.group_ids == std::vector<int>{0, 0, 1, 2, 3, 3});

    // a perfect head whose output indices happen to be swapped
    const auto flipped = assignment_of({1, 1, 0, 3, 2, 2});
    CHECK(minority_precision_recall(flipped, data).recall == doctest::Approx(0.0));

    const auto perm = best_attribute_relabeling(flipped, data);
    CHECK(perm == std::vector<int>{1, 0});
    const auto aligned = relabel_attribute(flipped, perm);
    CHECK(aligned.group_ids == data.group_ids);
    const auto score = minority_precision_recall(aligned, data);
    CHECK(score.precision == doctest::Approx(1.0));
    CHECK(score.recall == doctest::Approx(1.0));

    // soft columns move with their values
    auto soft = flipped;
    soft.spurious_soft = Eigen::MatrixXd::Zero(6, 2);
    soft.spurious_soft.col(0).setConstant(0.25);
    soft.spurious_soft.col(1).setConstant(0.75);
    const auto soft_aligned = relabel_attribute(soft, perm);
    CHECK(soft_aligned.spurious_soft(0, 1) == doctest::Approx(0.25));
    CHECK(soft_aligned.spurious_soft(0, 0) == doctest::Approx(0.75));

    CHECK_THROWS_AS(relabel_attribute(flipped, {0}), ShapeError);
    CHECK_THROWS_AS(relabel_attribute(flipped, {1, 1}), DataError);
    CHECK_THROWS_AS(relabel_attribute(flipped, {0, 2}), DataError);

    // identity stays identity when it is already the best alignment
    const auto id = best_attribute_relabeling(assignment_of({0, 0, 1, 2, 3, 3}), data);
    CHECK(id == std::vector<int>{0, 1});
}

TEST_CASE("spearman rank correlation") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {8, 6, 4, 2}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 3}, {3, 1, 2}) == doctest::Approx(-0.5));
    // monotone but nonlinear is still a perfect rank match
    CHECK(spearman({1, 2, 3, 4}, {1, 10, 100, 1000}) == doctest::Approx(1.0));
    // ties get average ranks
    CHECK(spearman({1, 1, 2, 3}, {1, 2, 3, 4}) == doctest::Approx(std::sqrt(0.9)));

    CHECK_THROWS_AS(spearman({1, 2}, {1}), ShapeError);
    CHECK_THROWS_AS(spearman({1}, {1}), DataError);
    CHECK_THROWS_AS(spearman({1, 1, 1}, {1, 2, 3}), DataError);
}

TEST_CASE("boundary tracing finds the zero set of the logit difference") {
    LabeledDataset data;
    data.features.resize(4, 2);
    data.features << -2, 0, 2, 0, -2, 1, 2, 1;

    MlpModel m;  // logit_1 - logit_0 = 2 x0: vertical boundary at x0 = 0
    m.dims = {2, 2};
    m.weights = {(Eigen::MatrixXd(2, 2) << -1.0, 0.0, 1.0, 0.0).finished()};
    m.biases = {Eigen::VectorXd::Zero(2)};
    m.activations = {Activation::Softmax};

    const auto segments = trace_boundary_2d(m, data, 5);
    REQUIRE_FALSE(segments.empty());
    for (const auto& s : segments) {
        CHECK(std::abs(s.x0) <= 1e-9);
        CHECK(std::abs(s.x1) <= 1e-9);
    }

    MlpModel wide;
    wide.dims = {3, 2};
    wide.weights = {Eigen::MatrixXd::Zero(2, 3)};
    wide.biases = {Eigen::VectorXd::Zero(2)};
    wide.activations = {Activation::Softmax};
    CHECK_THROWS_AS(trace_boundary_2d(wide, data, 5), ShapeError);
    CHECK_THROWS_AS(trace_boundary_2d(m, data, 1), ConfigError);
}

TEST_CASE("boundary plot writes a labeled svg") {
    auto data = with_groups({0, 0, 1, 1}, {0, 1, 0, 1});
    data.features << -1, -1, -1, 1, 1, -1, 1, 1;

    MlpModel m;
    m.dims = {2, 2};
    m.weights = {(Eigen::MatrixXd(2, 2) << -1.0, 0.0, 1.0, 0.0).finished()};
    m.biases = {Eigen::VectorXd::Zero(2)};
    m.activations = {Activation::Softmax};

    const auto path = (std::filesystem::temp_directory_path() / "gic_plot.svg").string();
    plot_boundary_2d({{"erm", &m}, {"robust", &m}}, data, path, 16);

    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string svg = ss.str();
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find(">erm</text>") != std::string::npos);
    CHECK(svg.find(">robust</text>") != std::string::npos);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(plot_boundary_2d({}, data, path, 16), ConfigError);
}
