#include "gic/comparison.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gic/errors.hpp"

namespace gic {

namespace {

// Shared tail of both construction recipes: equal draws from the error and
// correct partitions, remainder keeps everything not drawn.
ComparisonSplit draw_balanced(const LabeledDataset& train, const std::vector<int>& errors,
                              const std::vector<int>& correct, double ratio, std::uint64_t seed,
                              const char* what) {
    if (ratio <= 0.0 || ratio >= 1.0) throw ConfigError(std::string(what) + ": ratio must be in (0,1)");
    if (errors.empty())
        throw DataError(std::string(what) +
                        ": error set is empty; the comparison set would match the training distribution");

    const long want_raw = static_cast<long>(std::floor(ratio * static_cast<double>(train.size())));
    if (want_raw < 1)
        throw DataError(std::string(what) + ": floor(ratio*size) is zero, nothing to draw");
    long want = want_raw;
    ComparisonSplit out;
    const long cap = std::min<long>(static_cast<long>(errors.size()), static_cast<long>(correct.size()));
    if (want > cap) {
        out.warning = std::string(what) + ": requested " + std::to_string(want) +
                      " per partition but only " + std::to_string(cap) + " available; shrinking";
        want = cap;
    }

    Rng rng = make_rng(derive_seed(seed, std::string(what)));
    auto picked_err = sample_without_replacement(errors, static_cast<int>(want), rng);
    auto picked_ok = sample_without_replacement(correct, static_cast<int>(want), rng);

    std::vector<int> picked;
    picked.reserve(picked_err.size() + picked_ok.size());
    picked.insert(picked.end(), picked_err.begin(), picked_err.end());
    picked.insert(picked.end(), picked_ok.begin(), picked_ok.end());
    std::sort(picked.begin(), picked.end());

    std::vector<char> taken(static_cast<std::size_t>(train.size()), 0);
    for (int i : picked) taken[static_cast<std::size_t>(i)] = 1;
    std::vector<int> rest;
    rest.reserve(static_cast<std::size_t>(train.size()) - picked.size());
    for (int i = 0; i < train.size(); ++i)
        if (!taken[static_cast<std::size_t>(i)]) rest.push_back(i);

    out.comparison = subset(train, picked);
    out.comparison.name = train.name + "-comparison";
    out.remaining = subset(train, rest);
    out.remaining.name = train.name + "-remaining";
    return out;
}

} // namespace

ComparisonSplit build_comparison_from_train(const LabeledDataset& train, const MlpModel& model, double ratio,
                                            std::uint64_t seed) {
    const auto split = error_set(model, train);
    return draw_balanced(train, split.errors, split.correct, ratio, seed, "build_comparison");
}

ComparisonSplit boost_comparison(const LabeledDataset& train, const GicArtifacts& artifacts,
                                 const Eigen::MatrixXd& features, double ratio, std::uint64_t seed) {
    if (!train.has_labels()) throw DataError("boost_comparison: dataset has no labels");
    if (features.rows() != train.size()) throw ShapeError("boost_comparison: feature rows != dataset size");
    const auto pred = infer_spurious(artifacts, features);

    // majority hard spurious prediction within each class
    const int arity = artifacts.head.output_dim();
    std::vector<std::vector<long>> votes(static_cast<std::size_t>(train.class_count),
                                         std::vector<long>(static_cast<std::size_t>(arity), 0));
    for (int i = 0; i < train.size(); ++i)
        ++votes[static_cast<std::size_t>(train.labels[static_cast<std::size_t>(i)])]
               [static_cast<std::size_t>(pred.hard[static_cast<std::size_t>(i)])];
    std::vector<int> majority(static_cast<std::size_t>(train.class_count), 0);
    for (int y = 0; y < train.class_count; ++y) {
        const auto& v = votes[static_cast<std::size_t>(y)];
        majority[static_cast<std::size_t>(y)] =
            static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    }

    std::vector<int> errors, correct;
    for (int i = 0; i < train.size(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (pred.hard[ui] == majority[static_cast<std::size_t>(train.labels[ui])])
            correct.push_back(i);
        else
            errors.push_back(i);
    }
    return draw_balanced(train, errors, correct, ratio, seed, "boost_comparison");
}

ReadjustResult readjust_comparison(const LabeledDataset& comparison, const GicArtifacts& artifacts,
                                   const Eigen::MatrixXd& features, std::uint64_t seed,
                                   const std::vector<int>* pseudo_labels) {
    if (features.rows() != comparison.size())
        throw ShapeError("readjust_comparison: feature rows != dataset size");

    LabeledDataset working = comparison;
    if (!working.has_labels()) {
        if (pseudo_labels == nullptr)
            throw DataError("readjust_comparison: unlabeled comparison set needs pseudo labels");
        if (static_cast<int>(pseudo_labels->size()) != comparison.size())
            throw ShapeError("readjust_comparison: pseudo label count != dataset size");
        working.labels = *pseudo_labels;
        working.class_count = *std::max_element(pseudo_labels->begin(), pseudo_labels->end()) + 1;
        if (working.class_count < artifacts.class_count) working.class_count = artifacts.class_count;
    }
    const auto groups = infer_groups(artifacts, working, features);
    const auto members = assignment_members(groups);

    // rank nonempty groups by size
    std::vector<std::pair<long, int>> sized;
    for (std::size_t g = 0; g < members.size(); ++g)
        if (!members[g].empty()) sized.push_back({static_cast<long>(members[g].size()), static_cast<int>(g)});
    if (sized.size() < 3)
        throw DataError("readjust_comparison: need at least 3 nonempty inferred groups, found " +
                        std::to_string(sized.size()));
    std::sort(sized.begin(), sized.end());

    const long target = sized[sized.size() - 2].first;  // second-largest size
    Rng rng = make_rng(derive_seed(seed, "readjust"));
    std::vector<int> rows;
    for (int i = 0; i < comparison.size(); ++i) rows.push_back(i);
    ReadjustResult out;
    for (std::size_t rank = 0; rank < 2; ++rank) {  // the two smallest groups
        const auto& member_rows = members[static_cast<std::size_t>(sized[rank].second)];
        const long extra = target - static_cast<long>(member_rows.size());
        if (extra <= 0) continue;
        const auto dup = sample_with_replacement(member_rows, static_cast<int>(extra), rng);
        rows.insert(rows.end(), dup.begin(), dup.end());
    }
    out.comparison = subset(comparison, rows);
    out.comparison.name = comparison.name + "-readjusted";
    return out;
}

} // namespace gic
