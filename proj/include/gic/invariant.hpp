#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gic/dataset.hpp"
#include "gic/evaluation.hpp"
#include "gic/gic_train.hpp"
#include "gic/mlp.hpp"

namespace gic {

enum class RobustMethod { Subsample, Upsample, GroupDro, Mixup };

RobustMethod robust_method_from_name(const std::string& name);
const char* robust_method_name(RobustMethod method);

/// Every group cut down to the smallest group's size, drawn uniformly
/// without replacement. Throws DataError listing the empty group ids when
/// any inferred group has no samples.
LabeledDataset subsample_balanced(const LabeledDataset& data, const GroupAssignment& groups, std::uint64_t seed);

/// Every group padded up to the largest group's size: original rows are kept
/// and the shortfall is drawn with replacement, so an already balanced
/// dataset comes back with the same row multiset.
LabeledDataset upsample_to_majority(const LabeledDataset& data, const GroupAssignment& groups, std::uint64_t seed);

struct RobustConfig {
    RobustMethod method = RobustMethod::Subsample;
    std::vector<int> arch;       // trained on raw features; e.g. {d, 16, C}
    int epochs = 20;
    int batch_size = 32;         // minibatch methods (subsample/upsample/mixup)
    SgdConfig sgd = {1e-3, 0.9, 1e-4};
    double groupdro_eta = 0.01;  // exponentiated-gradient step on group weights
    double mixup_alpha = 2.0;    // Beta(alpha, alpha) mixing
    double mixup_strategy_prob = 0.5;  // P(intra-label); otherwise intra-domain
    bool early_stop = true;      // keep the best validation worst-group snapshot
    std::uint64_t seed = 0;
};

struct RobustArtifacts {
    MlpModel model;
    std::vector<double> val_worst_curve;       // per epoch, when validation given
    int best_epoch = -1;                        // epoch of the returned snapshot
    std::vector<std::vector<double>> q_curve;  // GroupDRO group weights per epoch
    std::vector<std::string> warnings;
};

/// Trains a classifier on the dataset under the inferred groups with the
/// chosen method. Early stopping scores validation worst-group accuracy
/// (oracle groups required on the validation set; ConfigError when early
/// stopping is on without one) after every epoch and returns the first
/// snapshot attaining the maximum.
RobustArtifacts train_robust(const LabeledDataset& data, const GroupAssignment& groups, const RobustConfig& config,
                             const LabeledDataset* validation);

} // namespace gic
