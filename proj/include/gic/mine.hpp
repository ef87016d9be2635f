#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "gic/mlp.hpp"

namespace gic {

/// Neural KL lower-bound estimator (Donsker-Varadhan form):
///   KL(P || Q) >= E_P[T] - ln E_Q[exp(T)]
/// maximized over a small statistics network T by full-batch gradient ascent.
struct MineOptions {
    std::vector<int> hidden = {64, 64};
    SgdConfig sgd = {1e-2, 0.9, 0.0};
    double output_clip = 50.0;  // T outputs clamped to +-clip before the exponent
};

struct MineEstimator {
    MlpModel stat_net;
    SgdState optimizer;
    double output_clip = 50.0;
    double last_estimate = 0.0;
};

/// Builds the statistics network (relu hidden layers, scalar identity
/// output) for inputs of the given width.
MineEstimator make_mine_estimator(int input_dim, const MineOptions& options, std::uint64_t seed);

struct MineResult {
    double estimate = 0.0;
    Eigen::MatrixXd grad_p;  // d(estimate)/d(samples_p)
    Eigen::MatrixXd grad_q;  // d(estimate)/d(samples_q)
};

/// Runs `steps` ascent steps of the bound on the estimator's network, then
/// evaluates the bound and its gradients with respect to the input samples
/// at the final parameters. steps = 0 evaluates without updating. Throws
/// ShapeError on empty or mismatched sample matrices, TrainingError when the
/// bound turns non-finite.
MineResult mine_estimate(MineEstimator& est, const Eigen::MatrixXd& samples_p, const Eigen::MatrixXd& samples_q,
                         int steps);

/// Whether comparison data carries class labels. Labeled compares the
/// (label, prediction) joint between training and comparison data; unlabeled
/// substitutes the feature representation for the missing labels.
enum class GicMode { Labeled, Unlabeled };

GicMode gic_mode_from_name(const std::string& name);
const char* gic_mode_name(GicMode mode);

/// KL difference driving group inference:
///   labeled:   KL(P_tr(y, p) || P_c(y, p)) - KL(P_tr(p) || P_c(p))
///   unlabeled: KL(P_tr(z, p) || P_c(z, p)) - KL(P_tr(p) || P_c(p))
/// where p are the head's softmax outputs. Labels enter as one-hot rows and
/// features as given; both are constants, so gradients flow into the
/// probability columns only.
struct SpuriousTermResult {
    double value = 0.0;        // kl_joint - kl_marginal
    double kl_joint = 0.0;
    double kl_marginal = 0.0;
    Eigen::MatrixXd grad_probs_tr;  // d(value)/d(probs_tr)
    Eigen::MatrixXd grad_probs_c;   // d(value)/d(probs_c)
};

/// Trains both estimators for `ascent_steps` full-batch steps with the
/// probabilities held fixed, then evaluates the KL difference and its
/// gradients with respect to the probabilities. labels_c may be empty only
/// in unlabeled mode (ConfigError otherwise); class_count sizes the one-hot
/// encoding.
SpuriousTermResult spurious_term(GicMode mode, const std::vector<int>& labels_tr, const Eigen::MatrixXd& probs_tr,
                                 const Eigen::MatrixXd& features_tr, const std::vector<int>& labels_c,
                                 const Eigen::MatrixXd& probs_c, const Eigen::MatrixXd& features_c, int class_count,
                                 MineEstimator& est_joint, MineEstimator& est_marginal, int ascent_steps);

/// One-hot encoding helper, n x class_count.
Eigen::MatrixXd onehot(const std::vector<int>& labels, int class_count);

} // namespace gic
