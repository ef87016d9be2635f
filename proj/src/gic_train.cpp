#include "gic/gic_train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "gic/errors.hpp"

namespace gic {

namespace {

void check_gic_config(const GicConfig& config) {
    if (config.gamma < 0.0) throw ConfigError("train_gic: gamma must be nonnegative");
    if (config.epochs < 0) throw ConfigError("train_gic: negative epoch count");
    if (config.learning_rate <= 0.0) throw ConfigError("train_gic: learning_rate must be positive");
    if (config.momentum < 0.0 || config.momentum >= 1.0) throw ConfigError("train_gic: momentum must be in [0,1)");
    if (config.mine_steps_per_epoch < 0) throw ConfigError("train_gic: negative mine_steps_per_epoch");
}

} // namespace

GicArtifacts train_gic(const Eigen::MatrixXd& z_tr, const std::vector<int>& labels_tr, int class_count,
                       const Eigen::MatrixXd& z_c, const std::vector<int>& labels_c, const GicConfig& config) {
    check_gic_config(config);
    if (class_count < 2) throw ConfigError("train_gic: class_count must be at least 2");
    if (z_tr.rows() == 0 || z_c.rows() == 0) throw ShapeError("train_gic: empty feature matrix");
    if (z_tr.cols() != z_c.cols()) throw ShapeError("train_gic: train/comparison feature widths disagree");
    if (static_cast<Eigen::Index>(labels_tr.size()) != z_tr.rows())
        throw ShapeError("train_gic: train labels/features disagree");
    if (config.mode == GicMode::Labeled && static_cast<Eigen::Index>(labels_c.size()) != z_c.rows())
        throw ConfigError("train_gic: labeled mode requires comparison labels");

    GicArtifacts art;
    art.config = config;
    art.class_count = class_count;

    std::vector<int> head_dims;
    head_dims.push_back(static_cast<int>(z_tr.cols()));
    for (int h : config.head_hidden) head_dims.push_back(h);
    head_dims.push_back(class_count);
    Rng head_rng = make_rng(derive_seed(config.seed, "gic/head"));
    art.head = make_classifier(head_dims, head_rng);
    SgdState state = make_sgd_state(art.head, {config.learning_rate, config.momentum, 0.0});

    // The estimators are built only when the spurious term participates, so
    // a gamma = 0 run touches nothing but the cross-entropy path.
    MineEstimator est_joint, est_marginal;
    if (config.gamma > 0.0) {
        const int joint_dim = (config.mode == GicMode::Labeled)
                                  ? class_count + class_count
                                  : static_cast<int>(z_tr.cols()) + class_count;
        est_joint = make_mine_estimator(joint_dim, config.mine, derive_seed(config.seed, "gic/mine_joint"));
        est_marginal = make_mine_estimator(class_count, config.mine, derive_seed(config.seed, "gic/mine_marginal"));
    }

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto trace_tr = forward_trace(art.head, z_tr);
        const auto ce = cross_entropy(trace_tr.output(), labels_tr);
        if (!std::isfinite(ce.loss))
            throw TrainingError("train_gic: non-finite cross-entropy at epoch " + std::to_string(epoch));

        GicCurvePoint point;
        point.ce = ce.loss;

        Gradients grads;
        if (config.gamma > 0.0) {
            const auto trace_c = forward_trace(art.head, z_c);
            // estimators first, head frozen; then one descent step on the head
            const auto term =
                spurious_term(config.mode, labels_tr, trace_tr.output(), z_tr, labels_c, trace_c.output(), z_c,
                              class_count, est_joint, est_marginal, config.mine_steps_per_epoch);
            point.kl_joint = term.kl_joint;
            point.kl_marginal = term.kl_marginal;
            point.kl_total = term.value;

            // L = CE - gamma * term; the term reaches the head through the
            // softmax probabilities of both batches
            Eigen::MatrixXd grad_logits_tr =
                ce.grad_logits + softmax_vjp(trace_tr.output(), (-config.gamma) * term.grad_probs_tr);
            Eigen::MatrixXd grad_logits_c = softmax_vjp(trace_c.output(), (-config.gamma) * term.grad_probs_c);
            grads = backward(art.head, trace_tr, grad_logits_tr);
            grads.input.resize(0, 0);  // batches differ in rows; only the head params are stepped
            grads += backward(art.head, trace_c, grad_logits_c);
        } else {
            grads = backward(art.head, trace_tr, ce.grad_logits);
        }
        sgd_step(art.head, grads, state);
        art.curve.push_back(point);
    }
    return art;
}

SpuriousPrediction infer_spurious(const GicArtifacts& artifacts, const Eigen::MatrixXd& features) {
    SpuriousPrediction pred;
    pred.soft = forward(artifacts.head, features);
    pred.hard = argmax_rows(pred.soft);
    return pred;
}

GroupAssignment infer_groups(const GicArtifacts& artifacts, const LabeledDataset& data,
                             const Eigen::MatrixXd& features) {
    if (!data.has_labels()) throw DataError("infer_groups: dataset has no labels");
    if (features.rows() != data.size()) throw ShapeError("infer_groups: feature rows != dataset size");
    const auto pred = infer_spurious(artifacts, features);

    GroupAssignment groups;
    groups.labels = data.labels;
    groups.spurious_hard = pred.hard;
    groups.spurious_soft = pred.soft;
    groups.class_count = data.class_count;
    groups.spurious_arity = artifacts.head.output_dim();
    groups.group_ids.resize(static_cast<std::size_t>(data.size()));
    for (int i = 0; i < data.size(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        groups.group_ids[ui] = data.labels[ui] * groups.spurious_arity + pred.hard[ui];
    }
    return groups;
}

GroupAssignment oracle_groups(const LabeledDataset& data) {
    if (!data.has_groups()) throw DataError("oracle_groups: dataset has no oracle groups");
    GroupAssignment groups;
    groups.labels = data.labels;
    groups.spurious_hard = data.spurious;
    groups.class_count = data.class_count;
    groups.spurious_arity = data.spurious_arity;
    groups.group_ids = data.group_ids;
    // degenerate soft scores: certainty on the oracle attribute
    groups.spurious_soft = Eigen::MatrixXd::Zero(data.size(), data.spurious_arity);
    for (int i = 0; i < data.size(); ++i)
        groups.spurious_soft(i, data.spurious[static_cast<std::size_t>(i)]) = 1.0;
    return groups;
}

std::vector<long> assignment_sizes(const GroupAssignment& groups) {
    std::vector<long> sizes(static_cast<std::size_t>(groups.group_count()), 0);
    for (int g : groups.group_ids) {
        if (g < 0 || g >= groups.group_count())
            throw IndexError("assignment_sizes: group id " + std::to_string(g) + " outside [0," +
                             std::to_string(groups.group_count()) + ")");
        ++sizes[static_cast<std::size_t>(g)];
    }
    return sizes;
}

std::vector<std::vector<int>> assignment_members(const GroupAssignment& groups) {
    std::vector<std::vector<int>> members(static_cast<std::size_t>(groups.group_count()));
    for (int i = 0; i < groups.size(); ++i) {
        const int g = groups.group_ids[static_cast<std::size_t>(i)];
        if (g < 0 || g >= groups.group_count())
            throw IndexError("assignment_members: group id " + std::to_string(g) + " outside [0," +
                             std::to_string(groups.group_count()) + ")");
        members[static_cast<std::size_t>(g)].push_back(i);
    }
    return members;
}

void save_groups(const GroupAssignment& groups, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("save_groups: cannot open '" + path + "'");
    out << "index,y,ys_hat,g_hat";
    for (int a = 0; a < groups.spurious_arity; ++a) out << ",p" << a;
    out << "\n";
    char buf[32];
    for (int i = 0; i < groups.size(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        out << i << ',' << groups.labels[ui] << ',' << groups.spurious_hard[ui] << ',' << groups.group_ids[ui];
        for (int a = 0; a < groups.spurious_arity; ++a) {
            std::snprintf(buf, sizeof buf, "%.17g", groups.spurious_soft(i, a));
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw DataError("save_groups: write to '" + path + "' failed");
}

GroupAssignment load_groups(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("load_groups: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": empty file (line 1)");
    if (line.rfind("index,y,ys_hat,g_hat", 0) != 0)
        throw FormatError(path + ": bad header (line 1), expected index,y,ys_hat,g_hat,p0,...");
    const auto fields_expected = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (fields_expected < 5) throw FormatError(path + ": header has no probability columns (line 1)");
    const std::size_t arity = fields_expected - 4;

    GroupAssignment groups;
    groups.spurious_arity = static_cast<int>(arity);
    std::vector<double> probs;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != fields_expected)
            throw FormatError(path + ": row has " + std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(fields_expected) + " (line " + std::to_string(lineno) + ")");
        try {
            groups.labels.push_back(std::stoi(fields[1]));
            groups.spurious_hard.push_back(std::stoi(fields[2]));
            groups.group_ids.push_back(std::stoi(fields[3]));
            for (std::size_t a = 0; a < arity; ++a) probs.push_back(std::stod(fields[4 + a]));
        } catch (const std::exception&) {
            throw FormatError(path + ": unparsable field (line " + std::to_string(lineno) + ")");
        }
    }
    const auto n = groups.labels.size();
    groups.class_count = n ? *std::max_element(groups.labels.begin(), groups.labels.end()) + 1 : 0;
    groups.spurious_soft.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(arity));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < arity; ++a)
            groups.spurious_soft(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = probs[i * arity + a];
    // class_count must cover every stored group id
    for (std::size_t i = 0; i < n; ++i) {
        const int implied = groups.group_ids[i] / groups.spurious_arity + 1;
        if (implied > groups.class_count) groups.class_count = implied;
    }
    return groups;
}

GridSearchResult grid_search(const Eigen::MatrixXd& z_tr, const std::vector<int>& labels_tr, int class_count,
                             const Eigen::MatrixXd& z_c, const std::vector<int>& labels_c,
                             const GridSearchConfig& config) {
    if (config.gamma_grid.empty() || config.k_grid.empty())
        throw ConfigError("grid_search: empty gamma or K grid");
    if (config.tolerance < 0.0) throw ConfigError("grid_search: negative tolerance");

    GridSearchResult result;
    for (double gamma : config.gamma_grid) {
        for (int k : config.k_grid) {
            GicConfig point_config = config.base;
            point_config.gamma = gamma;
            point_config.epochs = k;
            char tag[64];
            std::snprintf(tag, sizeof tag, "grid/g=%.17g/k=%d", gamma, k);
            point_config.seed = derive_seed(config.base.seed, tag);

            const auto art = train_gic(z_tr, labels_tr, class_count, z_c, labels_c, point_config);
            double min_ce = std::numeric_limits<double>::infinity();
            for (const auto& p : art.curve) min_ce = std::min(min_ce, p.ce);
            const double final_ce = art.curve.empty() ? 0.0 : art.curve.back().ce;
            const double final_kl = art.curve.empty() ? 0.0 : art.curve.back().kl_total;
            const bool detected = !art.curve.empty() && final_ce > (1.0 + config.tolerance) * min_ce;

            result.diagnostics.push_back({gamma, k, detected, final_ce, final_kl});
            if (!detected) {
                result.selected = point_config;
                return result;
            }
        }
    }
    // nothing was clean: fall back to the smallest gamma and K with a warning
    result.exhausted = true;
    result.selected = config.base;
    result.selected.gamma = config.gamma_grid.back();
    result.selected.epochs = config.k_grid.back();
    char tag[64];
    std::snprintf(tag, sizeof tag, "grid/g=%.17g/k=%d", result.selected.gamma, result.selected.epochs);
    result.selected.seed = derive_seed(config.base.seed, tag);
    return result;
}

void save_grid_diagnostics(const std::vector<GridPoint>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("save_grid_diagnostics: cannot open '" + path + "'");
    out << "gamma,epochs,detected,final_ce,final_kl\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%d,%d,%.17g,%.17g", r.gamma, r.epochs, r.detected ? 1 : 0, r.final_ce,
                      r.final_kl);
        out << buf << '\n';
    }
    if (!out) throw DataError("save_grid_diagnostics: write to '" + path + "' failed");
}

} // namespace gic
