#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "gic/rng.hpp"

namespace gic {

/// Probabilities below this floor are clamped before any log().
inline constexpr double kProbFloor = 1e-12;

enum class Activation : std::uint8_t {
    Identity = 0,
    Relu = 1,
    Sigmoid = 2,
    Softmax = 3,
};

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

/// Fully connected network. weights[l] is (dims[l+1] x dims[l]), applied as
/// pre = W * x + b on column-vector convention; batches are row-major
/// (n x d), so forward computes X * W^T + b^T row-wise.
struct MlpModel {
    std::vector<int> dims;                  // [d_in, h1, ..., d_out]
    std::vector<Eigen::MatrixXd> weights;   // one per layer, out x in
    std::vector<Eigen::VectorXd> biases;    // one per layer
    std::vector<Activation> activations;    // one per layer

    int layer_count() const { return static_cast<int>(weights.size()); }
    int input_dim() const { return dims.front(); }
    int output_dim() const { return dims.back(); }
    bool finite() const;
};

/// Builds a network with Glorot-uniform weights in
/// [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))] and zero biases.
/// dims and activations must describe the same number of layers; dims must
/// all be positive. Throws ConfigError otherwise.
MlpModel make_mlp(const std::vector<int>& dims, const std::vector<Activation>& activations, Rng& rng);

/// Classifier: relu hidden layers, softmax output.
MlpModel make_classifier(const std::vector<int>& dims, Rng& rng);

/// Scalar-valued network: relu hidden layers, identity output of width 1.
MlpModel make_scalar_net(const std::vector<int>& dims, Rng& rng);

/// Per-layer intermediate values kept by forward_trace so backward can run.
struct ForwardTrace {
    Eigen::MatrixXd input;              // n x d_in
    std::vector<Eigen::MatrixXd> pre;   // pre-activations, one per layer
    std::vector<Eigen::MatrixXd> post;  // post-activations, one per layer

    const Eigen::MatrixXd& output() const { return post.back(); }
    bool empty() const { return post.empty(); }
};

/// Runs the network on a batch (n x d_in) and returns the output (n x d_out).
/// Throws ShapeError on a column-count mismatch, DataError on non-finite
/// inputs.
Eigen::MatrixXd forward(const MlpModel& model, const Eigen::MatrixXd& batch);

/// forward() that also records per-layer values for a later backward().
ForwardTrace forward_trace(const MlpModel& model, const Eigen::MatrixXd& batch);

struct Gradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    Eigen::MatrixXd input;  // d(loss)/d(batch), n x d_in

    bool finite() const;
    Gradients& operator+=(const Gradients& other);
};

/// Backpropagates grad_output, the loss gradient at the final layer's
/// PRE-activation (the losses below all hand back gradients at the logits,
/// folding the output activation's derivative into the loss). Hidden-layer
/// activation derivatives are applied as usual. Throws StateError when the
/// trace is empty or does not match the model, ShapeError when grad_output
/// does not match the traced batch.
Gradients backward(const MlpModel& model, const ForwardTrace& trace, const Eigen::MatrixXd& grad_output);

/// Pulls a gradient with respect to softmax outputs back to the logits:
/// g_logit = p .* (g - <g, p>) per row.
Eigen::MatrixXd softmax_vjp(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& grad_probs);

struct SgdConfig {
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

/// Heavy-ball SGD: v <- momentum*v + grad + weight_decay*param;
/// param <- param - learning_rate*v.
struct SgdState {
    SgdConfig config;
    std::vector<Eigen::MatrixXd> weight_velocity;
    std::vector<Eigen::VectorXd> bias_velocity;
};

SgdState make_sgd_state(const MlpModel& model, const SgdConfig& config);

/// One update step, in place. Throws TrainingError (naming the layer) when a
/// gradient is non-finite, ShapeError when grads do not match the model.
void sgd_step(MlpModel& model, const Gradients& grads, SgdState& state);

/// Loss value plus its gradient at the logits (final pre-activation).
struct LossResult {
    double loss = 0.0;
    Eigen::MatrixXd grad_logits;
    long clamped = 0;  // rows whose probability hit kProbFloor
};

/// Mean cross-entropy in nats of softmax outputs against integer labels.
/// grad_logits = (probs - onehot) / n. Throws ShapeError on a row-count
/// mismatch, IndexError on labels outside [0, cols).
LossResult cross_entropy(const Eigen::MatrixXd& probs, const std::vector<int>& labels);

/// Weighted cross-entropy: loss = sum_i w_i * (-ln p_i[y_i]), gradient
/// w_i * (probs_i - onehot_i). Weights are used as given (callers normalize).
LossResult weighted_cross_entropy(const Eigen::MatrixXd& probs, const std::vector<int>& labels,
                                  const Eigen::VectorXd& weights);

/// Cross-entropy against soft target rows: mean over rows of -sum_k t*ln p,
/// gradient (probs - targets) / n. Targets must be row-normalized.
LossResult soft_cross_entropy(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& targets);

/// Fraction of rows whose argmax (ties to the lowest index) equals the label.
double accuracy(const Eigen::MatrixXd& probs, const std::vector<int>& labels);

/// Row-wise argmax with ties resolved toward the lowest index.
std::vector<int> argmax_rows(const Eigen::MatrixXd& scores);

/// Binary checkpoint, magic "GICM": little-endian u32 version and layer
/// count, per-layer dims and activation tags, then row-major f64 weights and
/// biases. load_model rejects unknown magic/version/activation with
/// FormatError naming the byte offset.
void save_model(const MlpModel& model, const std::string& path);
MlpModel load_model(const std::string& path);

} // namespace gic
