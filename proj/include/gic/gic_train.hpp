#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gic/dataset.hpp"
#include "gic/mine.hpp"
#include "gic/mlp.hpp"

namespace gic {

/// Hyperparameters for spurious-attribute head training. The head minimizes
///   CE(y_tr, head(z_tr)) - gamma * [KL_joint - KL_marginal]
/// with one full-batch step per epoch; the two KL estimators get
/// mine_steps_per_epoch ascent steps per epoch with the head frozen.
struct GicConfig {
    double gamma = 10.0;
    int epochs = 20;              // K
    double learning_rate = 1e-5;
    double momentum = 0.9;
    GicMode mode = GicMode::Labeled;
    int mine_steps_per_epoch = 5;
    std::vector<int> head_hidden = {};  // empty = single linear layer
    MineOptions mine;
    std::uint64_t seed = 0;
};

struct GicCurvePoint {
    double ce = 0.0;
    double kl_joint = 0.0;
    double kl_marginal = 0.0;
    double kl_total = 0.0;  // kl_joint - kl_marginal
};

struct GicArtifacts {
    MlpModel head;
    GicConfig config;  // echo of what was asked
    int class_count = 0;
    std::vector<GicCurvePoint> curve;  // one point per epoch
};

/// Trains the spurious head on training features/labels against a comparison
/// set. labels_c may be empty only in unlabeled mode. The head's output
/// arity equals class_count (the correlation term scores the head's output
/// against the class label). Deterministic for a fixed config: the head and
/// both estimators draw from seed-derived streams, and gamma = 0 skips the
/// estimators entirely so the trajectory matches plain cross-entropy
/// training bit for bit.
GicArtifacts train_gic(const Eigen::MatrixXd& z_tr, const std::vector<int>& labels_tr, int class_count,
                       const Eigen::MatrixXd& z_c, const std::vector<int>& labels_c, const GicConfig& config);

struct SpuriousPrediction {
    std::vector<int> hard;     // argmax, ties toward the lowest index
    Eigen::MatrixXd soft;      // n x A softmax rows
};

SpuriousPrediction infer_spurious(const GicArtifacts& artifacts, const Eigen::MatrixXd& features);

/// Inferred partition of a labeled dataset: g_hat = y * A + ys_hat.
struct GroupAssignment {
    std::vector<int> group_ids;
    std::vector<int> labels;        // the class labels used
    std::vector<int> spurious_hard;
    Eigen::MatrixXd spurious_soft;
    int class_count = 0;
    int spurious_arity = 0;

    int size() const { return static_cast<int>(group_ids.size()); }
    int group_count() const { return class_count * spurious_arity; }
};

/// Assigns every sample of a labeled dataset to an inferred group using the
/// head's hard spurious predictions on the given features (one row per
/// sample). Throws DataError when the dataset lacks labels.
GroupAssignment infer_groups(const GicArtifacts& artifacts, const LabeledDataset& data,
                             const Eigen::MatrixXd& features);

/// Builds the assignment from the dataset's own oracle columns.
GroupAssignment oracle_groups(const LabeledDataset& data);

/// Sample counts per inferred group id.
std::vector<long> assignment_sizes(const GroupAssignment& groups);

/// Rows of each inferred group id.
std::vector<std::vector<int>> assignment_members(const GroupAssignment& groups);

/// CSV round trip: header index,y,ys_hat,g_hat,p0,...,p{A-1}.
void save_groups(const GroupAssignment& groups, const std::string& path);
GroupAssignment load_groups(const std::string& path);

/// Hyperparameter search from App-style grids: walk K downward within each
/// gamma, accept the first point whose cross-entropy curve never rebounds
/// (final CE <= (1+tolerance) * min CE). Every point retrains from scratch
/// with a seed derived from (gamma, K).
struct GridSearchConfig {
    std::vector<double> gamma_grid = {10.0, 5.0, 4.0, 3.0, 2.0, 1.0};
    std::vector<int> k_grid = {20, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1};
    double tolerance = 0.02;
    GicConfig base;  // gamma/epochs overridden per grid point
};

struct GridPoint {
    double gamma = 0.0;
    int epochs = 0;
    bool detected = false;  // CE increase detected
    double final_ce = 0.0;
    double final_kl = 0.0;
};

struct GridSearchResult {
    GicConfig selected;
    std::vector<GridPoint> diagnostics;
    bool exhausted = false;  // no clean point; selected is the grid minimum
};

GridSearchResult grid_search(const Eigen::MatrixXd& z_tr, const std::vector<int>& labels_tr, int class_count,
                             const Eigen::MatrixXd& z_c, const std::vector<int>& labels_c,
                             const GridSearchConfig& config);

/// Writes the diagnostics table: gamma,epochs,detected,final_ce,final_kl.
void save_grid_diagnostics(const std::vector<GridPoint>& rows, const std::string& path);

} // namespace gic
