#pragma once

#include <cstdint>
#include <vector>

#include "gic/dataset.hpp"
#include "gic/mlp.hpp"

namespace gic {

struct ErmConfig {
    std::vector<int> arch;    // layer widths, e.g. {d, 16, C}
    int epochs = 5;
    int batch_size = 32;
    SgdConfig sgd = {1e-3, 0.9, 1e-4};
    std::uint64_t seed = 0;
};

struct EpochStats {
    double loss = 0.0;      // mean cross-entropy over the full split
    double accuracy = 0.0;
};

struct ErmArtifacts {
    MlpModel model;
    int feature_layer_index = 0;  // activation index whose output is "the features"
    std::vector<EpochStats> curve;
};

/// Minibatch SGD on mean cross-entropy. The dataset is reshuffled once per
/// epoch with the run's RNG; the last partial batch is kept. Zero epochs
/// returns the freshly initialized model. Throws ConfigError on an empty or
/// mismatched arch, TrainingError (naming the epoch) when the loss turns
/// non-finite.
ErmArtifacts train_erm(const LabeledDataset& data, const ErmConfig& config);

/// Penultimate-layer activations, one row per sample. For a single-layer
/// model this is the input itself (identity features).
Eigen::MatrixXd extract_features(const ErmArtifacts& artifacts, const LabeledDataset& data);

/// Splits row indices by argmax-prediction correctness (ties toward the
/// lowest class index). Requires labels.
struct ErrorSplit {
    std::vector<int> errors;
    std::vector<int> correct;
};

ErrorSplit error_set(const MlpModel& model, const LabeledDataset& data);

} // namespace gic
