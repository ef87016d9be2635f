#include "gic/erm.hpp"

#include <cmath>
#include <string>

#include "gic/errors.hpp"

namespace gic {

ErmArtifacts train_erm(const LabeledDataset& data, const ErmConfig& config) {
    if (!data.has_labels()) throw DataError("train_erm: dataset has no labels");
    if (config.arch.size() < 2) throw ConfigError("train_erm: arch needs input and output widths");
    if (config.arch.front() != data.dim())
        throw ConfigError("train_erm: arch input width " + std::to_string(config.arch.front()) +
                          " != feature dim " + std::to_string(data.dim()));
    if (config.arch.back() != data.class_count)
        throw ConfigError("train_erm: arch output width " + std::to_string(config.arch.back()) +
                          " != class count " + std::to_string(data.class_count));
    if (config.epochs < 0) throw ConfigError("train_erm: negative epochs");
    if (config.batch_size <= 0) throw ConfigError("train_erm: batch_size must be positive");

    Rng rng = make_rng(derive_seed(config.seed, "erm"));
    ErmArtifacts art;
    art.model = make_classifier(config.arch, rng);
    // activation feeding the final linear head; -1 marks the identity case
    art.feature_layer_index = art.model.layer_count() - 2;
    SgdState state = make_sgd_state(art.model, config.sgd);

    const int n = data.size();
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = shuffled_indices(n, rng);
        for (int start = 0; start < n; start += config.batch_size) {
            const int stop = std::min(n, start + config.batch_size);
            Eigen::MatrixXd batch(stop - start, data.dim());
            std::vector<int> labels(static_cast<std::size_t>(stop - start));
            for (int i = start; i < stop; ++i) {
                batch.row(i - start) = data.features.row(order[static_cast<std::size_t>(i)]);
                labels[static_cast<std::size_t>(i - start)] =
                    data.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
            }
            const auto trace = forward_trace(art.model, batch);
            const auto ce = cross_entropy(trace.output(), labels);
            if (!std::isfinite(ce.loss))
                throw TrainingError("train_erm: non-finite loss at epoch " + std::to_string(epoch));
            const auto grads = backward(art.model, trace, ce.grad_logits);
            sgd_step(art.model, grads, state);
        }
        // epoch stats on the full split, after the updates
        const Eigen::MatrixXd probs = forward(art.model, data.features);
        EpochStats stats;
        stats.loss = cross_entropy(probs, data.labels).loss;
        stats.accuracy = accuracy(probs, data.labels);
        if (!std::isfinite(stats.loss))
            throw TrainingError("train_erm: non-finite loss at epoch " + std::to_string(epoch));
        art.curve.push_back(stats);
    }
    return art;
}

Eigen::MatrixXd extract_features(const ErmArtifacts& artifacts, const LabeledDataset& data) {
    const MlpModel& model = artifacts.model;
    if (model.layer_count() == 1) return data.features;  // linear model: identity features
    if (artifacts.feature_layer_index < 0 || artifacts.feature_layer_index >= model.layer_count() - 1)
        throw StateError("extract_features: feature_layer_index outside hidden layers");
    const auto trace = forward_trace(model, data.features);
    return trace.post[static_cast<std::size_t>(artifacts.feature_layer_index)];
}

ErrorSplit error_set(const MlpModel& model, const LabeledDataset& data) {
    if (!data.has_labels()) throw DataError("error_set: dataset has no labels");
    const auto pred = argmax_rows(forward(model, data.features));
    ErrorSplit split;
    for (int i = 0; i < data.size(); ++i) {
        if (pred[static_cast<std::size_t>(i)] == data.labels[static_cast<std::size_t>(i)])
            split.correct.push_back(i);
        else
            split.errors.push_back(i);
    }
    return split;
}

} // namespace gic
