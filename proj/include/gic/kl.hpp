#pragma once

#include <Eigen/Dense>
#include <vector>

namespace gic {

/// KL(p || q) in nats for discrete distributions given as probability
/// vectors. Zero p entries contribute zero; a zero q entry under positive p
/// violates absolute continuity and throws DomainError naming the index.
/// Both vectors must have the same length and sum to 1 within 1e-9.
double kl_discrete(const std::vector<double>& p, const std::vector<double>& q);

/// Joint counts over (y, s) pairs: rows index y, columns index s. Counts are
/// nonnegative; normalization happens inside the KL routines.
struct DiscreteJoint {
    Eigen::MatrixXd counts;

    double total() const { return counts.sum(); }
    Eigen::MatrixXd probs() const { return counts / counts.sum(); }
};

/// Conditional KL between two joints over the shared (y, s) table, computed
/// two independent ways:
///   direct          = sum_s P(s) * KL(P(y|s) || Q(y|s))
///   joint, marginal = KL of the flattened joints and of the s-marginals,
///                     whose difference equals `direct` by the chain rule.
/// Throws DomainError when Q fails to dominate P (naming the cell) and
/// ShapeError on table size mismatch.
struct ConditionalKl {
    double direct = 0.0;
    double joint = 0.0;
    double marginal = 0.0;

    double difference() const { return joint - marginal; }
};

ConditionalKl kl_conditional_discrete(const DiscreteJoint& p, const DiscreteJoint& q);

/// Closed-form KL between one-dimensional Gaussians:
/// ln(s1/s0) + (s0^2 + (m0-m1)^2) / (2 s1^2) - 1/2. Variances must be
/// positive (DomainError otherwise).
double kl_gaussian(double mean0, double var0, double mean1, double var1);

/// Entropy of a discrete distribution in nats.
double entropy(const std::vector<double>& p);

/// Mutual information of a joint table in nats, brute force.
double mutual_information(const DiscreteJoint& joint);

} // namespace gic
