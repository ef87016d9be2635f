#include "gic/invariant.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gic/errors.hpp"

namespace gic {

RobustMethod robust_method_from_name(const std::string& name) {
    if (name == "subsample") return RobustMethod::Subsample;
    if (name == "upsample") return RobustMethod::Upsample;
    if (name == "groupdro") return RobustMethod::GroupDro;
    if (name == "mixup") return RobustMethod::Mixup;
    throw ConfigError("unknown robust method '" + name + "', expected subsample|upsample|groupdro|mixup");
}

const char* robust_method_name(RobustMethod method) {
    switch (method) {
        case RobustMethod::Subsample: return "subsample";
        case RobustMethod::Upsample: return "upsample";
        case RobustMethod::GroupDro: return "groupdro";
        case RobustMethod::Mixup: return "mixup";
    }
    return "?";
}

namespace {

std::vector<std::vector<int>> members_or_throw(const LabeledDataset& data, const GroupAssignment& groups,
                                               const char* what, bool require_all) {
    if (groups.size() != data.size())
        throw ShapeError(std::string(what) + ": assignment size != dataset size");
    auto members = assignment_members(groups);
    if (require_all) {
        std::vector<int> empty;
        for (std::size_t g = 0; g < members.size(); ++g)
            if (members[g].empty()) empty.push_back(static_cast<int>(g));
        if (!empty.empty()) {
            std::ostringstream msg;
            msg << what << ": empty inferred group ids:";
            for (int g : empty) msg << ' ' << g;
            throw DataError(msg.str());
        }
    }
    return members;
}

} // namespace

LabeledDataset subsample_balanced(const LabeledDataset& data, const GroupAssignment& groups, std::uint64_t seed) {
    const auto members = members_or_throw(data, groups, "subsample_balanced", true);
    std::size_t smallest = members.front().size();
    for (const auto& m : members) smallest = std::min(smallest, m.size());

    Rng rng = make_rng(derive_seed(seed, "subsample"));
    std::vector<int> rows;
    rows.reserve(smallest * members.size());
    for (const auto& m : members) {
        const auto picked = sample_without_replacement(m, static_cast<int>(smallest), rng);
        rows.insert(rows.end(), picked.begin(), picked.end());
    }
    LabeledDataset out = subset(data, rows);
    out.name = data.name + "-subsampled";
    return out;
}

LabeledDataset upsample_to_majority(const LabeledDataset& data, const GroupAssignment& groups, std::uint64_t seed) {
    const auto members = members_or_throw(data, groups, "upsample_to_majority", true);
    std::size_t largest = 0;
    for (const auto& m : members) largest = std::max(largest, m.size());

    Rng rng = make_rng(derive_seed(seed, "upsample"));
    std::vector<int> rows;
    for (const auto& m : members) {
        rows.insert(rows.end(), m.begin(), m.end());
        const long extra = static_cast<long>(largest - m.size());
        if (extra > 0) {
            const auto dup = sample_with_replacement(m, static_cast<int>(extra), rng);
            rows.insert(rows.end(), dup.begin(), dup.end());
        }
    }
    LabeledDataset out = subset(data, rows);
    out.name = data.name + "-upsampled";
    return out;
}

namespace {

void check_robust_config(const LabeledDataset& data, const RobustConfig& config, const LabeledDataset* validation) {
    if (!data.has_labels()) throw DataError("train_robust: dataset has no labels");
    if (config.arch.size() < 2) throw ConfigError("train_robust: arch needs input and output widths");
    if (config.arch.front() != data.dim() || config.arch.back() != data.class_count)
        throw ConfigError("train_robust: arch endpoints must be (feature dim, class count)");
    if (config.epochs <= 0) throw ConfigError("train_robust: epochs must be positive");
    if (config.batch_size <= 0) throw ConfigError("train_robust: batch_size must be positive");
    if (config.groupdro_eta <= 0.0) throw ConfigError("train_robust: groupdro_eta must be positive");
    if (config.mixup_alpha <= 0.0) throw ConfigError("train_robust: mixup_alpha must be positive");
    if (config.mixup_strategy_prob < 0.0 || config.mixup_strategy_prob > 1.0)
        throw ConfigError("train_robust: mixup_strategy_prob must be in [0,1]");
    if (config.early_stop) {
        if (validation == nullptr || !validation->has_groups())
            throw ConfigError("train_robust: early stopping needs a validation set with oracle groups");
    }
}

// Scores validation worst-group accuracy and keeps the best snapshot.
struct EarlyStopper {
    const LabeledDataset* validation;
    bool enabled;
    double best = -1.0;
    int best_epoch = -1;
    MlpModel snapshot;
    std::vector<double> curve;

    void observe(const MlpModel& model, int epoch) {
        if (validation == nullptr) return;
        const double worst = evaluate_model(model, *validation).worst_group_accuracy;
        curve.push_back(worst);
        if (worst > best) {
            best = worst;
            best_epoch = epoch;
            if (enabled) snapshot = model;
        }
    }
};

// Plain minibatch cross-entropy epochs over a fixed dataset (the resampling
// methods reduce to this after rebuilding the data).
void erm_epochs(MlpModel& model, SgdState& state, const LabeledDataset& data, int epochs, int batch_size, Rng& rng,
                EarlyStopper& stopper) {
    const int n = data.size();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const auto order = shuffled_indices(n, rng);
        for (int start = 0; start < n; start += batch_size) {
            const int stop = std::min(n, start + batch_size);
            Eigen::MatrixXd batch(stop - start, data.dim());
            std::vector<int> labels(static_cast<std::size_t>(stop - start));
            for (int i = start; i < stop; ++i) {
                batch.row(i - start) = data.features.row(order[static_cast<std::size_t>(i)]);
                labels[static_cast<std::size_t>(i - start)] =
                    data.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
            }
            const auto trace = forward_trace(model, batch);
            const auto ce = cross_entropy(trace.output(), labels);
            if (!std::isfinite(ce.loss))
                throw TrainingError("train_robust: non-finite loss at epoch " + std::to_string(epoch));
            sgd_step(model, backward(model, trace, ce.grad_logits), state);
        }
        stopper.observe(model, epoch);
    }
}

void groupdro_epochs(MlpModel& model, SgdState& state, const LabeledDataset& data, const GroupAssignment& groups,
                     const RobustConfig& config, RobustArtifacts& art, EarlyStopper& stopper) {
    const auto members = members_or_throw(data, groups, "train_robust[groupdro]", false);
    std::vector<int> active;  // group ids with samples
    for (std::size_t g = 0; g < members.size(); ++g)
        if (!members[g].empty()) active.push_back(static_cast<int>(g));
    if (active.empty()) throw DataError("train_robust[groupdro]: no samples");

    std::vector<double> q(active.size(), 1.0 / static_cast<double>(active.size()));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto trace = forward_trace(model, data.features);
        const auto& probs = trace.output();

        // per-group mean losses under the current parameters
        std::vector<double> group_loss(active.size(), 0.0);
        for (std::size_t k = 0; k < active.size(); ++k) {
            const auto& m = members[static_cast<std::size_t>(active[k])];
            double sum = 0.0;
            for (int i : m) {
                double p = probs(i, data.labels[static_cast<std::size_t>(i)]);
                sum += -std::log(std::max(p, kProbFloor));
            }
            group_loss[k] = sum / static_cast<double>(m.size());
        }
        // exponentiated-gradient ascent on the group weights, then renormalize
        double z = 0.0;
        for (std::size_t k = 0; k < q.size(); ++k) {
            q[k] *= std::exp(config.groupdro_eta * group_loss[k]);
            z += q[k];
        }
        for (double& v : q) v /= z;
        art.q_curve.push_back(q);

        // model step on sum_g q_g * L_g: per-sample weight q_g / n_g
        Eigen::VectorXd weights = Eigen::VectorXd::Zero(data.size());
        for (std::size_t k = 0; k < active.size(); ++k) {
            const auto& m = members[static_cast<std::size_t>(active[k])];
            const double w = q[k] / static_cast<double>(m.size());
            for (int i : m) weights(i) = w;
        }
        const auto ce = weighted_cross_entropy(probs, data.labels, weights);
        if (!std::isfinite(ce.loss))
            throw TrainingError("train_robust[groupdro]: non-finite loss at epoch " + std::to_string(epoch));
        sgd_step(model, backward(model, trace, ce.grad_logits), state);
        stopper.observe(model, epoch);
    }
}

void mixup_epochs(MlpModel& model, SgdState& state, const LabeledDataset& data, const GroupAssignment& groups,
                  const RobustConfig& config, Rng& rng, RobustArtifacts& art, EarlyStopper& stopper) {
    members_or_throw(data, groups, "train_robust[mixup]", false);
    const int n = data.size();
    const int C = data.class_count;
    const int A = groups.spurious_arity;

    // partner pools by cell (y, s): intra-label partners share y and differ
    // in s, intra-domain partners share s and differ in y
    std::vector<std::vector<int>> cell_rows(static_cast<std::size_t>(C * A));
    for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const int cell = data.labels[ui] * A + groups.spurious_hard[ui];
        cell_rows[static_cast<std::size_t>(cell)].push_back(i);
    }
    std::vector<std::vector<int>> intra_label(static_cast<std::size_t>(C * A));
    std::vector<std::vector<int>> intra_domain(static_cast<std::size_t>(C * A));
    for (int y = 0; y < C; ++y)
        for (int s = 0; s < A; ++s) {
            auto& same_label = intra_label[static_cast<std::size_t>(y * A + s)];
            for (int s2 = 0; s2 < A; ++s2)
                if (s2 != s) {
                    const auto& src = cell_rows[static_cast<std::size_t>(y * A + s2)];
                    same_label.insert(same_label.end(), src.begin(), src.end());
                }
            auto& same_domain = intra_domain[static_cast<std::size_t>(y * A + s)];
            for (int y2 = 0; y2 < C; ++y2)
                if (y2 != y) {
                    const auto& src = cell_rows[static_cast<std::size_t>(y2 * A + s)];
                    same_domain.insert(same_domain.end(), src.begin(), src.end());
                }
        }
    bool label_possible = false, domain_possible = false;
    for (int cell = 0; cell < C * A; ++cell) {
        if (cell_rows[static_cast<std::size_t>(cell)].empty()) continue;
        if (!intra_label[static_cast<std::size_t>(cell)].empty()) label_possible = true;
        if (!intra_domain[static_cast<std::size_t>(cell)].empty()) domain_possible = true;
    }
    if (!label_possible) art.warnings.push_back("mixup: no intra-label pairs exist; strategy skipped");
    if (!domain_possible) art.warnings.push_back("mixup: no intra-domain pairs exist; strategy skipped");
    if (!label_possible && !domain_possible)
        art.warnings.push_back("mixup: no valid pairs at all; training degenerates to plain ERM");

    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::gamma_distribution<double> gamma_dist(config.mixup_alpha, 1.0);
    const auto draw_beta = [&]() {
        const double u = gamma_dist(rng);
        const double v = gamma_dist(rng);
        return u / (u + v);
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = shuffled_indices(n, rng);
        for (int start = 0; start < n; start += config.batch_size) {
            const int stop = std::min(n, start + config.batch_size);
            Eigen::MatrixXd batch(stop - start, data.dim());
            Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(stop - start, C);
            for (int i = start; i < stop; ++i) {
                const int row = order[static_cast<std::size_t>(i)];
                const auto urow = static_cast<std::size_t>(row);
                const int cell = data.labels[urow] * A + groups.spurious_hard[urow];

                bool use_label = coin(rng) < config.mixup_strategy_prob;
                const std::vector<int>* pool = use_label ? &intra_label[static_cast<std::size_t>(cell)]
                                                         : &intra_domain[static_cast<std::size_t>(cell)];
                if (pool->empty()) {  // fall back to the other strategy for this sample
                    use_label = !use_label;
                    pool = use_label ? &intra_label[static_cast<std::size_t>(cell)]
                                     : &intra_domain[static_cast<std::size_t>(cell)];
                }

                const Eigen::Index out_row = i - start;
                if (pool->empty()) {  // no partner anywhere: train unmixed
                    batch.row(out_row) = data.features.row(row);
                    targets(out_row, data.labels[urow]) = 1.0;
                    continue;
                }
                std::uniform_int_distribution<int> pick(0, static_cast<int>(pool->size()) - 1);
                const int partner = (*pool)[static_cast<std::size_t>(pick(rng))];
                const double lambda = draw_beta();
                batch.row(out_row) =
                    lambda * data.features.row(row) + (1.0 - lambda) * data.features.row(partner);
                if (use_label) {
                    // same label on both sides: the target stays one-hot
                    targets(out_row, data.labels[urow]) = 1.0;
                } else {
                    targets(out_row, data.labels[urow]) += lambda;
                    targets(out_row, data.labels[static_cast<std::size_t>(partner)]) += 1.0 - lambda;
                }
            }
            const auto trace = forward_trace(model, batch);
            const auto ce = soft_cross_entropy(trace.output(), targets);
            if (!std::isfinite(ce.loss))
                throw TrainingError("train_robust[mixup]: non-finite loss at epoch " + std::to_string(epoch));
            sgd_step(model, backward(model, trace, ce.grad_logits), state);
        }
        stopper.observe(model, epoch);
    }
}

} // namespace

RobustArtifacts train_robust(const LabeledDataset& data, const GroupAssignment& groups, const RobustConfig& config,
                             const LabeledDataset* validation) {
    check_robust_config(data, config, validation);

    Rng rng = make_rng(derive_seed(config.seed, "robust"));
    RobustArtifacts art;
    art.model = make_classifier(config.arch, rng);
    SgdState state = make_sgd_state(art.model, config.sgd);
    EarlyStopper stopper{validation, config.early_stop};

    switch (config.method) {
        case RobustMethod::Subsample: {
            const auto balanced = subsample_balanced(data, groups, config.seed);
            erm_epochs(art.model, state, balanced, config.epochs, config.batch_size, rng, stopper);
            break;
        }
        case RobustMethod::Upsample: {
            const auto balanced = upsample_to_majority(data, groups, config.seed);
            erm_epochs(art.model, state, balanced, config.epochs, config.batch_size, rng, stopper);
            break;
        }
        case RobustMethod::GroupDro:
            groupdro_epochs(art.model, state, data, groups, config, art, stopper);
            break;
        case RobustMethod::Mixup:
            mixup_epochs(art.model, state, data, groups, config, rng, art, stopper);
            break;
    }

    art.val_worst_curve = std::move(stopper.curve);
    art.best_epoch = stopper.best_epoch;
    if (config.early_stop && stopper.best_epoch >= 0) art.model = std::move(stopper.snapshot);
    return art;
}

} // namespace gic
