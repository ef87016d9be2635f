#include "gic/mlp.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "gic/errors.hpp"

namespace gic {

namespace {

constexpr char kModelMagic[4] = {'G', 'I', 'C', 'M'};
constexpr std::uint32_t kModelVersion = 1;

void apply_activation(Activation act, Eigen::MatrixXd& m) {
    switch (act) {
        case Activation::Identity:
            break;
        case Activation::Relu:
            m = m.cwiseMax(0.0);
            break;
        case Activation::Sigmoid:
            m = m.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
            break;
        case Activation::Softmax:
            // subtract the row max before exponentiating for stability
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                const double mx = m.row(r).maxCoeff();
                m.row(r) = (m.row(r).array() - mx).exp();
                m.row(r) /= m.row(r).sum();
            }
            break;
    }
}

// Derivative of the activation at a pre-activation value, expressed through
// the post-activation where that is cheaper (sigmoid). Softmax is handled by
// the callers via softmax_vjp and never appears on a hidden layer.
Eigen::MatrixXd activation_grad(Activation act, const Eigen::MatrixXd& pre, const Eigen::MatrixXd& post,
                                const Eigen::MatrixXd& upstream) {
    switch (act) {
        case Activation::Identity:
            return upstream;
        case Activation::Relu:
            return ((pre.array() > 0.0).cast<double>() * upstream.array()).matrix();
        case Activation::Sigmoid:
            return ((post.array() * (1.0 - post.array())) * upstream.array()).matrix();
        case Activation::Softmax: {
            Eigen::MatrixXd out(post.rows(), post.cols());
            for (Eigen::Index r = 0; r < post.rows(); ++r) {
                const double dot = post.row(r).dot(upstream.row(r));
                out.row(r) = post.row(r).array() * (upstream.row(r).array() - dot);
            }
            return out;
        }
    }
    throw StateError("activation_grad: unreachable");
}

void check_model_layout(const MlpModel& model) {
    const auto layers = model.weights.size();
    if (layers == 0 || model.dims.size() != layers + 1 || model.biases.size() != layers ||
        model.activations.size() != layers)
        throw StateError("model layout is inconsistent");
}

} // namespace

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Relu: return "relu";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Softmax: return "softmax";
    }
    return "?";
}

Activation activation_from_name(const std::string& name) {
    if (name == "identity") return Activation::Identity;
    if (name == "relu") return Activation::Relu;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "softmax") return Activation::Softmax;
    throw ConfigError("unknown activation '" + name + "'");
}

bool MlpModel::finite() const {
    for (const auto& w : weights)
        if (!w.allFinite()) return false;
    for (const auto& b : biases)
        if (!b.allFinite()) return false;
    return true;
}

MlpModel make_mlp(const std::vector<int>& dims, const std::vector<Activation>& activations, Rng& rng) {
    if (dims.size() < 2) throw ConfigError("make_mlp: need at least input and output dims");
    if (activations.size() != dims.size() - 1)
        throw ConfigError("make_mlp: " + std::to_string(dims.size() - 1) + " layers but " +
                          std::to_string(activations.size()) + " activation tags");
    for (int d : dims)
        if (d <= 0) throw ConfigError("make_mlp: nonpositive layer width");

    MlpModel model;
    model.dims = dims;
    model.activations = activations;
    model.weights.reserve(dims.size() - 1);
    model.biases.reserve(dims.size() - 1);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int fan_in = dims[l];
        const int fan_out = dims[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> uni(-bound, bound);
        Eigen::MatrixXd w(fan_out, fan_in);
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = uni(rng);
        model.weights.push_back(std::move(w));
        model.biases.push_back(Eigen::VectorXd::Zero(fan_out));
    }
    return model;
}

MlpModel make_classifier(const std::vector<int>& dims, Rng& rng) {
    if (dims.size() < 2) throw ConfigError("make_mlp: need at least input and output dims");
    std::vector<Activation> acts(dims.size() - 1, Activation::Relu);
    acts.back() = Activation::Softmax;
    return make_mlp(dims, acts, rng);
}

MlpModel make_scalar_net(const std::vector<int>& dims, Rng& rng) {
    if (dims.size() < 2) throw ConfigError("make_mlp: need at least input and output dims");
    if (dims.back() != 1) throw ConfigError("make_scalar_net: output width must be 1");
    std::vector<Activation> acts(dims.size() - 1, Activation::Relu);
    acts.back() = Activation::Identity;
    return make_mlp(dims, acts, rng);
}

Eigen::MatrixXd forward(const MlpModel& model, const Eigen::MatrixXd& batch) {
    return forward_trace(model, batch).post.back();
}

ForwardTrace forward_trace(const MlpModel& model, const Eigen::MatrixXd& batch) {
    check_model_layout(model);
    if (batch.cols() != model.input_dim())
        throw ShapeError("forward: batch has " + std::to_string(batch.cols()) + " columns, model expects " +
                         std::to_string(model.input_dim()));
    if (!batch.allFinite()) throw DataError("forward: non-finite value in input batch");

    ForwardTrace trace;
    trace.input = batch;
    const Eigen::MatrixXd* cur = &trace.input;
    for (int l = 0; l < model.layer_count(); ++l) {
        Eigen::MatrixXd pre = (*cur) * model.weights[static_cast<std::size_t>(l)].transpose();
        pre.rowwise() += model.biases[static_cast<std::size_t>(l)].transpose();
        trace.pre.push_back(pre);
        apply_activation(model.activations[static_cast<std::size_t>(l)], pre);
        trace.post.push_back(std::move(pre));
        cur = &trace.post.back();
    }
    return trace;
}

bool Gradients::finite() const {
    for (const auto& w : weights)
        if (!w.allFinite()) return false;
    for (const auto& b : biases)
        if (!b.allFinite()) return false;
    return true;
}

Gradients& Gradients::operator+=(const Gradients& other) {
    if (weights.size() != other.weights.size())
        throw ShapeError("Gradients::operator+=: layer count mismatch");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].rows() != other.weights[l].rows() || weights[l].cols() != other.weights[l].cols())
            throw ShapeError("Gradients::operator+=: layer " + std::to_string(l) + " shape mismatch");
        weights[l] += other.weights[l];
        biases[l] += other.biases[l];
    }
    if (input.size() > 0 && other.input.size() > 0) {
        if (input.rows() != other.input.rows() || input.cols() != other.input.cols())
            throw ShapeError("Gradients::operator+=: input gradient shapes disagree");
        input += other.input;
    }
    return *this;
}

Gradients backward(const MlpModel& model, const ForwardTrace& trace, const Eigen::MatrixXd& grad_output) {
    check_model_layout(model);
    if (trace.empty() || static_cast<int>(trace.post.size()) != model.layer_count() ||
        trace.input.cols() != model.input_dim())
        throw StateError("backward: trace is missing or does not match the model");
    for (int l = 0; l < model.layer_count(); ++l)
        if (trace.post[static_cast<std::size_t>(l)].cols() != model.dims[static_cast<std::size_t>(l) + 1])
            throw StateError("backward: trace is missing or does not match the model");
    if (grad_output.rows() != trace.input.rows() || grad_output.cols() != model.output_dim())
        throw ShapeError("backward: grad_output is " + std::to_string(grad_output.rows()) + "x" +
                         std::to_string(grad_output.cols()) + ", expected " + std::to_string(trace.input.rows()) +
                         "x" + std::to_string(model.output_dim()));

    const int L = model.layer_count();
    Gradients grads;
    grads.weights.resize(static_cast<std::size_t>(L));
    grads.biases.resize(static_cast<std::size_t>(L));

    // delta enters at the final pre-activation; the loss already folded in
    // the output activation's derivative.
    Eigen::MatrixXd delta = grad_output;
    for (int l = L - 1; l >= 0; --l) {
        const auto ul = static_cast<std::size_t>(l);
        const Eigen::MatrixXd& below = (l == 0) ? trace.input : trace.post[ul - 1];
        grads.weights[ul] = delta.transpose() * below;
        grads.biases[ul] = delta.colwise().sum().transpose();
        // propagate to the layer below, through its activation
        Eigen::MatrixXd upstream = delta * model.weights[ul];
        if (l > 0)
            delta = activation_grad(model.activations[ul - 1], trace.pre[ul - 1], trace.post[ul - 1], upstream);
        else
            grads.input = std::move(upstream);
    }
    return grads;
}

Eigen::MatrixXd softmax_vjp(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& grad_probs) {
    if (probs.rows() != grad_probs.rows() || probs.cols() != grad_probs.cols())
        throw ShapeError("softmax_vjp: shape mismatch");
    Eigen::MatrixXd out(probs.rows(), probs.cols());
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const double dot = probs.row(r).dot(grad_probs.row(r));
        out.row(r) = probs.row(r).array() * (grad_probs.row(r).array() - dot);
    }
    return out;
}

SgdState make_sgd_state(const MlpModel& model, const SgdConfig& config) {
    if (config.learning_rate <= 0.0) throw ConfigError("sgd: learning_rate must be positive");
    if (config.momentum < 0.0 || config.momentum >= 1.0) throw ConfigError("sgd: momentum must be in [0,1)");
    if (config.weight_decay < 0.0) throw ConfigError("sgd: weight_decay must be nonnegative");
    SgdState state;
    state.config = config;
    for (const auto& w : model.weights) state.weight_velocity.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    for (const auto& b : model.biases) state.bias_velocity.emplace_back(Eigen::VectorXd::Zero(b.size()));
    return state;
}

void sgd_step(MlpModel& model, const Gradients& grads, SgdState& state) {
    const auto layers = model.weights.size();
    if (grads.weights.size() != layers || state.weight_velocity.size() != layers)
        throw ShapeError("sgd_step: gradient/state layer count mismatch");
    for (std::size_t l = 0; l < layers; ++l) {
        if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite())
            throw TrainingError("sgd_step: non-finite gradient at layer " + std::to_string(l));
        auto& vw = state.weight_velocity[l];
        vw = state.config.momentum * vw + grads.weights[l] + state.config.weight_decay * model.weights[l];
        model.weights[l] -= state.config.learning_rate * vw;
        auto& vb = state.bias_velocity[l];
        // weight decay is applied to weights only, the usual convention
        vb = state.config.momentum * vb + grads.biases[l];
        model.biases[l] -= state.config.learning_rate * vb;
    }
}

LossResult cross_entropy(const Eigen::MatrixXd& probs, const std::vector<int>& labels) {
    const auto n = probs.rows();
    if (static_cast<Eigen::Index>(labels.size()) != n)
        throw ShapeError("cross_entropy: " + std::to_string(n) + " rows vs " + std::to_string(labels.size()) +
                         " labels");
    if (n == 0) throw ShapeError("cross_entropy: empty batch");
    Eigen::VectorXd weights = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    return weighted_cross_entropy(probs, labels, weights);
}

LossResult weighted_cross_entropy(const Eigen::MatrixXd& probs, const std::vector<int>& labels,
                                  const Eigen::VectorXd& weights) {
    const auto n = probs.rows();
    const auto k = probs.cols();
    if (static_cast<Eigen::Index>(labels.size()) != n || weights.size() != n)
        throw ShapeError("weighted_cross_entropy: rows/labels/weights disagree");
    LossResult res;
    res.grad_logits = Eigen::MatrixXd::Zero(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= k)
            throw IndexError("weighted_cross_entropy: label " + std::to_string(y) + " outside [0," +
                             std::to_string(k) + ") at row " + std::to_string(i));
        double p = probs(i, y);
        if (p < kProbFloor) {
            p = kProbFloor;
            ++res.clamped;
        }
        const double w = weights(i);
        res.loss += w * -std::log(p);
        res.grad_logits.row(i) = w * probs.row(i);
        res.grad_logits(i, y) -= w;
    }
    return res;
}

LossResult soft_cross_entropy(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& targets) {
    if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
        throw ShapeError("soft_cross_entropy: shape mismatch");
    if (probs.rows() == 0) throw ShapeError("soft_cross_entropy: empty batch");
    const double n = static_cast<double>(probs.rows());
    LossResult res;
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        for (Eigen::Index c = 0; c < probs.cols(); ++c) {
            const double t = targets(i, c);
            if (t == 0.0) continue;
            double p = probs(i, c);
            if (p < kProbFloor) {
                p = kProbFloor;
                ++res.clamped;
            }
            res.loss += -t * std::log(p) / n;
        }
    res.grad_logits = (probs - targets) / n;
    return res;
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& scores) {
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        int best = 0;
        for (Eigen::Index c = 1; c < scores.cols(); ++c)
            if (scores(i, c) > scores(i, best)) best = static_cast<int>(c);
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

double accuracy(const Eigen::MatrixXd& probs, const std::vector<int>& labels) {
    if (static_cast<Eigen::Index>(labels.size()) != probs.rows())
        throw ShapeError("accuracy: rows/labels disagree");
    if (labels.empty()) throw ShapeError("accuracy: empty batch");
    const auto pred = argmax_rows(probs);
    long hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (pred[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace {

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in, const std::string& path, long& offset) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in)
        throw FormatError(path + ": truncated at byte " + std::to_string(offset));
    offset += static_cast<long>(sizeof(T));
    return v;
}

} // namespace

void save_model(const MlpModel& model, const std::string& path) {
    check_model_layout(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_model: cannot open '" + path + "'");
    out.write(kModelMagic, 4);
    write_raw(out, kModelVersion);
    write_raw(out, static_cast<std::uint32_t>(model.layer_count()));
    for (int d : model.dims) write_raw(out, static_cast<std::uint32_t>(d));
    for (Activation a : model.activations) write_raw(out, static_cast<std::uint8_t>(a));
    for (int l = 0; l < model.layer_count(); ++l) {
        const auto& w = model.weights[static_cast<std::size_t>(l)];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) write_raw(out, w(r, c));
        const auto& b = model.biases[static_cast<std::size_t>(l)];
        for (Eigen::Index r = 0; r < b.size(); ++r) write_raw(out, b(r));
    }
    if (!out) throw DataError("save_model: write to '" + path + "' failed");
}

MlpModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_model: cannot open '" + path + "'");
    long offset = 0;
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0)
        throw FormatError(path + ": bad magic at byte 0, expected GICM");
    offset = 4;
    const auto version = read_raw<std::uint32_t>(in, path, offset);
    if (version != kModelVersion)
        throw FormatError(path + ": unsupported version " + std::to_string(version) + " at byte 4");
    const auto layers = read_raw<std::uint32_t>(in, path, offset);
    if (layers == 0 || layers > 64) throw FormatError(path + ": implausible layer count at byte 8");

    MlpModel model;
    for (std::uint32_t l = 0; l <= layers; ++l) {
        const auto d = read_raw<std::uint32_t>(in, path, offset);
        if (d == 0) throw FormatError(path + ": zero layer width at byte " + std::to_string(offset - 4));
        model.dims.push_back(static_cast<int>(d));
    }
    for (std::uint32_t l = 0; l < layers; ++l) {
        const auto tag = read_raw<std::uint8_t>(in, path, offset);
        if (tag > 3) throw FormatError(path + ": unknown activation tag at byte " + std::to_string(offset - 1));
        model.activations.push_back(static_cast<Activation>(tag));
    }
    for (std::uint32_t l = 0; l < layers; ++l) {
        const int rows = model.dims[l + 1];
        const int cols = model.dims[l];
        Eigen::MatrixXd w(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) w(r, c) = read_raw<double>(in, path, offset);
        model.weights.push_back(std::move(w));
        Eigen::VectorXd b(rows);
        for (int r = 0; r < rows; ++r) b(r) = read_raw<double>(in, path, offset);
        model.biases.push_back(std::move(b));
    }
    return model;
}

} // namespace gic
