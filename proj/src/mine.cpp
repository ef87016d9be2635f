#include "gic/mine.hpp"

#include <cmath>
#include <string>

#include "gic/errors.hpp"
#include "gic/rng.hpp"

namespace gic {

MineEstimator make_mine_estimator(int input_dim, const MineOptions& options, std::uint64_t seed) {
    if (input_dim <= 0) throw ConfigError("make_mine_estimator: input_dim must be positive");
    if (options.output_clip <= 0.0) throw ConfigError("make_mine_estimator: output_clip must be positive");
    std::vector<int> dims;
    dims.push_back(input_dim);
    for (int h : options.hidden) dims.push_back(h);
    dims.push_back(1);
    Rng rng = make_rng(seed);
    MineEstimator est;
    est.stat_net = make_scalar_net(dims, rng);
    est.optimizer = make_sgd_state(est.stat_net, options.sgd);
    est.output_clip = options.output_clip;
    return est;
}

namespace {

struct BoundEval {
    double bound;
    Gradients grads_p;  // of the bound, wrt stat-net params and P inputs
    Gradients grads_q;
};

// Evaluates the DV bound and backpropagates d(bound)/d(everything).
BoundEval eval_bound(const MineEstimator& est, const Eigen::MatrixXd& p, const Eigen::MatrixXd& q) {
    const auto trace_p = forward_trace(est.stat_net, p);
    const auto trace_q = forward_trace(est.stat_net, q);
    const double clip = est.output_clip;

    Eigen::VectorXd tp = trace_p.output().col(0).cwiseMax(-clip).cwiseMin(clip);
    Eigen::VectorXd tq = trace_q.output().col(0).cwiseMax(-clip).cwiseMin(clip);
    const double np = static_cast<double>(tp.size());
    const double nq = static_cast<double>(tq.size());

    // ln mean exp with max subtraction; clamped outputs keep this bounded
    const double mx = tq.maxCoeff();
    const Eigen::VectorXd eq = (tq.array() - mx).exp();
    const double lme = mx + std::log(eq.sum() / nq);

    BoundEval out;
    out.bound = tp.mean() - lme;

    // d(bound)/d(T(p_i)) = 1/np, zero where the clamp is active
    Eigen::MatrixXd up(tp.size(), 1);
    for (Eigen::Index i = 0; i < tp.size(); ++i) {
        const double raw = trace_p.output()(i, 0);
        up(i, 0) = (std::abs(raw) < clip) ? 1.0 / np : 0.0;
    }
    // d(bound)/d(T(q_j)) = -softmax_j over the q batch
    Eigen::MatrixXd uq(tq.size(), 1);
    const double esum = eq.sum();
    for (Eigen::Index j = 0; j < tq.size(); ++j) {
        const double raw = trace_q.output()(j, 0);
        uq(j, 0) = (std::abs(raw) < clip) ? -eq(j) / esum : 0.0;
    }
    out.grads_p = backward(est.stat_net, trace_p, up);
    out.grads_q = backward(est.stat_net, trace_q, uq);
    return out;
}

} // namespace

MineResult mine_estimate(MineEstimator& est, const Eigen::MatrixXd& samples_p, const Eigen::MatrixXd& samples_q,
                         int steps) {
    if (samples_p.rows() == 0 || samples_q.rows() == 0) throw ShapeError("mine_estimate: empty sample set");
    if (samples_p.cols() != samples_q.cols()) throw ShapeError("mine_estimate: sample widths disagree");
    if (steps < 0) throw ConfigError("mine_estimate: negative step count");

    for (int s = 0; s < steps; ++s) {
        BoundEval ev = eval_bound(est, samples_p, samples_q);
        if (!std::isfinite(ev.bound))
            throw TrainingError("mine_estimate: bound became non-finite at step " + std::to_string(s));
        // ascend the bound: step on the negated parameter-gradient sum; the
        // two batches' input gradients differ in shape and are not stepped on
        Gradients ascent = ev.grads_p;
        ascent.input.resize(0, 0);
        ascent += ev.grads_q;
        for (auto& w : ascent.weights) w = -w;
        for (auto& b : ascent.biases) b = -b;
        sgd_step(est.stat_net, ascent, est.optimizer);
    }

    BoundEval ev = eval_bound(est, samples_p, samples_q);
    if (!std::isfinite(ev.bound)) throw TrainingError("mine_estimate: bound became non-finite");
    MineResult res;
    res.estimate = ev.bound;
    res.grad_p = std::move(ev.grads_p.input);
    res.grad_q = std::move(ev.grads_q.input);
    est.last_estimate = res.estimate;
    return res;
}

GicMode gic_mode_from_name(const std::string& name) {
    if (name == "labeled") return GicMode::Labeled;
    if (name == "unlabeled") return GicMode::Unlabeled;
    throw ConfigError("unknown mode '" + name + "', expected labeled or unlabeled");
}

const char* gic_mode_name(GicMode mode) { return mode == GicMode::Labeled ? "labeled" : "unlabeled"; }

Eigen::MatrixXd onehot(const std::vector<int>& labels, int class_count) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), class_count);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= class_count)
            throw IndexError("onehot: label " + std::to_string(labels[i]) + " outside [0," +
                             std::to_string(class_count) + ")");
        out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return out;
}

SpuriousTermResult spurious_term(GicMode mode, const std::vector<int>& labels_tr, const Eigen::MatrixXd& probs_tr,
                                 const Eigen::MatrixXd& features_tr, const std::vector<int>& labels_c,
                                 const Eigen::MatrixXd& probs_c, const Eigen::MatrixXd& features_c, int class_count,
                                 MineEstimator& est_joint, MineEstimator& est_marginal, int ascent_steps) {
    if (probs_tr.cols() != probs_c.cols()) throw ShapeError("spurious_term: probability widths disagree");
    if (static_cast<Eigen::Index>(labels_tr.size()) != probs_tr.rows())
        throw ShapeError("spurious_term: train labels/probs disagree");

    Eigen::MatrixXd joint_p, joint_q;
    Eigen::Index probs_offset = 0;
    if (mode == GicMode::Labeled) {
        if (static_cast<Eigen::Index>(labels_c.size()) != probs_c.rows())
            throw ConfigError("spurious_term: labeled mode requires comparison labels");
        probs_offset = class_count;
        joint_p.resize(probs_tr.rows(), class_count + probs_tr.cols());
        joint_p << onehot(labels_tr, class_count), probs_tr;
        joint_q.resize(probs_c.rows(), class_count + probs_c.cols());
        joint_q << onehot(labels_c, class_count), probs_c;
    } else {
        if (features_tr.cols() != features_c.cols()) throw ShapeError("spurious_term: feature widths disagree");
        if (features_tr.rows() != probs_tr.rows() || features_c.rows() != probs_c.rows())
            throw ShapeError("spurious_term: feature/prob row counts disagree");
        probs_offset = features_tr.cols();
        joint_p.resize(probs_tr.rows(), features_tr.cols() + probs_tr.cols());
        joint_p << features_tr, probs_tr;
        joint_q.resize(probs_c.rows(), features_c.cols() + probs_c.cols());
        joint_q << features_c, probs_c;
    }

    const MineResult joint = mine_estimate(est_joint, joint_p, joint_q, ascent_steps);
    const MineResult marg = mine_estimate(est_marginal, probs_tr, probs_c, ascent_steps);

    SpuriousTermResult res;
    res.kl_joint = joint.estimate;
    res.kl_marginal = marg.estimate;
    res.value = joint.estimate - marg.estimate;
    const auto width = probs_tr.cols();
    res.grad_probs_tr = joint.grad_p.middleCols(probs_offset, width) - marg.grad_p;
    res.grad_probs_c = joint.grad_q.middleCols(probs_offset, width) - marg.grad_q;
    return res;
}

} // namespace gic
