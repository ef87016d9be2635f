#pragma once

#include <string>
#include <vector>

#include "gic/dataset.hpp"
#include "gic/gic_train.hpp"
#include "gic/mlp.hpp"

namespace gic {

/// Accuracy breakdown against oracle groups.
struct EvalReport {
    std::vector<double> per_group_accuracy;  // -1 marks an empty (excluded) group
    std::vector<long> per_group_count;
    std::vector<int> excluded_groups;        // oracle groups with no samples
    double average_accuracy = 0.0;           // sample-weighted
    double worst_group_accuracy = 0.0;       // min over nonempty groups
};

/// Scores hard predictions. Requires oracle groups on the dataset; empty
/// groups are excluded from the minimum and listed in excluded_groups.
EvalReport evaluate_predictions(const std::vector<int>& predictions, const LabeledDataset& data);

/// evaluate_predictions on the model's argmax outputs.
EvalReport evaluate_model(const MlpModel& model, const LabeledDataset& data);

/// Micro-averaged precision/recall of the inferred minority groups against
/// the oracle minority groups:
///   precision = |{i : ghat_i in M and g_i = ghat_i}| / |{i : ghat_i in M}|
///   recall    = |{i : g_i in M and ghat_i = g_i}|   / |{i : g_i in M}|
/// M defaults to the floor(G/2) smallest oracle groups (ties to the lower
/// id). precision_defined is false when no sample lands in an inferred
/// minority group.
struct MinorityScore {
    double precision = 0.0;
    double recall = 0.0;
    bool precision_defined = true;
    std::vector<int> minority_groups;
};

MinorityScore minority_precision_recall(const GroupAssignment& assignment, const LabeledDataset& data,
                                        const std::vector<int>& minority = {});

/// Agreement between hard spurious predictions and the oracle attribute.
/// `aligned` maximizes agreement over relabelings of the predicted values,
/// since the attribute's encoding is arbitrary; `raw` compares as-is.
struct AttributeAgreement {
    double raw = 0.0;
    double aligned = 0.0;
};

AttributeAgreement attribute_accuracy(const GroupAssignment& assignment, const LabeledDataset& data);

/// The relabeling (perm[k] = oracle value credited to predicted value k)
/// that maximizes agreement with the oracle attribute; ties keep the
/// lexicographically first permutation. The head's output indices carry no
/// meaning of their own, so scoring against oracle group ids goes through
/// this first.
std::vector<int> best_attribute_relabeling(const GroupAssignment& assignment, const LabeledDataset& data);

/// The assignment with predicted attribute values renamed through perm:
/// hard values and soft columns move together and group ids are rebuilt as
/// g = y*A + perm[a]. perm must be a permutation of [0, arity).
GroupAssignment relabel_attribute(const GroupAssignment& assignment, const std::vector<int>& perm);

/// Spearman rank correlation (average ranks on ties).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Decision-boundary segments of a binary classifier on a 2-d input grid:
/// zero crossings of logit_1 - logit_0, linearly interpolated on a
/// grid_n x grid_n lattice spanning the dataset's bounding box.
struct Segment {
    double x0, y0, x1, y1;
};

std::vector<Segment> trace_boundary_2d(const MlpModel& model, const LabeledDataset& data, int grid_n = 200);

/// Scatter plot of the four oracle groups plus one boundary polyline per
/// named model, written as a standalone SVG. Models must be binary
/// classifiers over exactly 2 features.
void plot_boundary_2d(const std::vector<std::pair<std::string, const MlpModel*>>& models,
                      const LabeledDataset& data, const std::string& path, int grid_n = 200);

} // namespace gic
