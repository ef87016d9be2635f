#include "gic/kl.hpp"

#include <cmath>
#include <string>

#include "gic/errors.hpp"

namespace gic {

double kl_discrete(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size())
        throw ShapeError("kl_discrete: length mismatch " + std::to_string(p.size()) + " vs " +
                         std::to_string(q.size()));
    if (p.empty()) throw ShapeError("kl_discrete: empty distributions");
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0 || q[i] < 0.0) throw DomainError("kl_discrete: negative mass at index " + std::to_string(i));
        sp += p[i];
        sq += q[i];
    }
    if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9)
        throw DomainError("kl_discrete: distributions must sum to 1 (got " + std::to_string(sp) + ", " +
                          std::to_string(sq) + ")");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0)
            throw DomainError("kl_discrete: q is zero where p is positive at index " + std::to_string(i));
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return kl;
}

ConditionalKl kl_conditional_discrete(const DiscreteJoint& p, const DiscreteJoint& q) {
    if (p.counts.rows() != q.counts.rows() || p.counts.cols() != q.counts.cols())
        throw ShapeError("kl_conditional_discrete: table shapes disagree");
    if (p.counts.minCoeff() < 0.0 || q.counts.minCoeff() < 0.0)
        throw DomainError("kl_conditional_discrete: negative count");
    if (p.total() <= 0.0 || q.total() <= 0.0) throw DomainError("kl_conditional_discrete: empty table");

    const Eigen::MatrixXd P = p.probs();
    const Eigen::MatrixXd Q = q.probs();
    const auto rows = P.rows();
    const auto cols = P.cols();

    ConditionalKl out;
    for (Eigen::Index s = 0; s < cols; ++s) {
        const double ps = P.col(s).sum();
        const double qs = Q.col(s).sum();
        if (ps == 0.0) continue;
        if (qs == 0.0)
            throw DomainError("kl_conditional_discrete: q marginal is zero at column " + std::to_string(s));
        // direct: P(s) * sum_y P(y|s) ln(P(y|s)/Q(y|s))
        for (Eigen::Index y = 0; y < rows; ++y) {
            const double pys = P(y, s);
            if (pys == 0.0) continue;
            if (Q(y, s) == 0.0)
                throw DomainError("kl_conditional_discrete: q is zero where p is positive at cell (" +
                                  std::to_string(y) + "," + std::to_string(s) + ")");
            out.direct += pys * std::log((pys / ps) / (Q(y, s) / qs));
            out.joint += pys * std::log(pys / Q(y, s));
        }
        out.marginal += ps * std::log(ps / qs);
    }
    return out;
}

double kl_gaussian(double mean0, double var0, double mean1, double var1) {
    if (var0 <= 0.0 || var1 <= 0.0) throw DomainError("kl_gaussian: variances must be positive");
    const double dm = mean0 - mean1;
    return 0.5 * std::log(var1 / var0) + (var0 + dm * dm) / (2.0 * var1) - 0.5;
}

double entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p) {
        if (v < 0.0) throw DomainError("entropy: negative mass");
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

double mutual_information(const DiscreteJoint& joint) {
    const Eigen::MatrixXd P = joint.probs();
    const Eigen::VectorXd py = P.rowwise().sum();
    const Eigen::VectorXd ps = P.colwise().sum().transpose();
    double mi = 0.0;
    for (Eigen::Index y = 0; y < P.rows(); ++y)
        for (Eigen::Index s = 0; s < P.cols(); ++s)
            if (P(y, s) > 0.0) mi += P(y, s) * std::log(P(y, s) / (py(y) * ps(s)));
    return mi;
}

} // namespace gic
