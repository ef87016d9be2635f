#pragma once

#include <cstdint>
#include <string>

#include "gic/dataset.hpp"
#include "gic/erm.hpp"
#include "gic/gic_train.hpp"

namespace gic {

/// Comparison data carved out of the training split.
struct ComparisonSplit {
    LabeledDataset comparison;
    LabeledDataset remaining;   // training rows not moved to the comparison set
    std::string warning;        // nonempty when a partition ran short
};

/// Draws floor(ratio * n) rows from the model's error set and the same count
/// from its correct set, uniformly without replacement, and returns them as
/// the comparison set together with the untouched remainder. When either
/// partition is smaller than the request, both draws shrink to the smaller
/// partition size and a warning is set. An empty error set is a DataError:
/// nothing separates the distributions then.
ComparisonSplit build_comparison_from_train(const LabeledDataset& train, const MlpModel& model, double ratio,
                                            std::uint64_t seed);

/// Second-round construction based on a trained spurious head: a sample
/// counts as an "error" when its hard spurious prediction disagrees with the
/// majority prediction of its class. features must align with train rows.
ComparisonSplit boost_comparison(const LabeledDataset& train, const GicArtifacts& artifacts,
                                 const Eigen::MatrixXd& features, double ratio, std::uint64_t seed);

struct ReadjustResult {
    LabeledDataset comparison;
    std::string warning;
};

/// Balances an imbalanced comparison set using inferred groups: the two
/// smallest groups are upsampled with replacement to the size of the
/// second-largest group; other groups stay untouched. Rows are duplicated
/// verbatim. When the comparison set is unlabeled, pseudo_labels (typically
/// a frozen classifier's predictions) supplies the class labels; otherwise
/// it may be null. Fewer than 3 nonempty inferred groups is a DataError.
ReadjustResult readjust_comparison(const LabeledDataset& comparison, const GicArtifacts& artifacts,
                                   const Eigen::MatrixXd& features, std::uint64_t seed,
                                   const std::vector<int>* pseudo_labels = nullptr);

} // namespace gic
