#pragma once

// Dense ReLU classifier with exact backpropagation to both parameters and
// inputs. Everything runs in double precision.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "drme/errors.hpp"

namespace drme {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Labelled examples, one per row of `inputs`.
///
/// `tasks` carries the latent task id of each row when known. It is empty once
/// erased and nothing on the training path reads it.
struct Batch {
    Matrix inputs;
    std::vector<int> labels;
    std::vector<int> tasks;

    Index size() const { return inputs.rows(); }
    Index dim() const { return inputs.cols(); }
    bool empty() const { return inputs.rows() == 0; }
};

inline Batch erase_tasks(Batch batch) {
    batch.tasks.clear();
    return batch;
}

struct Layer {
    Matrix weight;  // out x in
    Vector bias;    // out
};

class Mlp {
public:
    Mlp() = default;

    explicit Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
        if (layers_.empty()) throw ShapeError("Mlp needs at least one layer");
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const auto& l = layers_[i];
            if (l.bias.size() != l.weight.rows())
                throw ShapeError("layer " + std::to_string(i) + ": bias length does not match weight rows");
            if (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows())
                throw ShapeError("layer " + std::to_string(i) + ": input dim does not chain");
            if (!l.weight.allFinite() || !l.bias.allFinite())
                throw ShapeError("layer " + std::to_string(i) + ": non-finite parameters");
        }
    }

    /// Glorot-uniform weights, zero biases. `sizes` = {input, hidden..., classes}.
    static Mlp random(std::span<const int> sizes, std::uint64_t seed) {
        if (sizes.size() < 2) throw ShapeError("Mlp needs at least input and output sizes");
        std::mt19937_64 rng(seed);
        std::vector<Layer> layers;
        for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
            const int in = sizes[i], out = sizes[i + 1];
            if (in <= 0 || out <= 0) throw ShapeError("layer sizes must be positive");
            const double limit = std::sqrt(6.0 / double(in + out));
            std::uniform_real_distribution<double> u(-limit, limit);
            Layer l{Matrix(out, in), Vector::Zero(out)};
            for (Index c = 0; c < in; ++c)
                for (Index r = 0; r < out; ++r) l.weight(r, c) = u(rng);
            layers.push_back(std::move(l));
        }
        return Mlp(std::move(layers));
    }

    static Mlp zeros(std::span<const int> sizes) {
        if (sizes.size() < 2) throw ShapeError("Mlp needs at least input and output sizes");
        std::vector<Layer> layers;
        for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
            layers.push_back({Matrix::Zero(sizes[i + 1], sizes[i]), Vector::Zero(sizes[i + 1])});
        return Mlp(std::move(layers));
    }

    const std::vector<Layer>& layers() const { return layers_; }
    Index input_dim() const { return layers_.front().weight.cols(); }
    Index num_classes() const { return layers_.back().weight.rows(); }

    Index param_count() const {
        Index n = 0;
        for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
        return n;
    }

    /// Parameters flattened layer by layer: weight (column-major), then bias.
    Vector flat() const {
        Vector out(param_count());
        Index at = 0;
        for (const auto& l : layers_) {
            out.segment(at, l.weight.size()) = l.weight.reshaped();
            at += l.weight.size();
            out.segment(at, l.bias.size()) = l.bias;
            at += l.bias.size();
        }
        return out;
    }

    /// Copy with parameters theta + scale * direction.
    Mlp shifted(const Vector& direction, double scale) const {
        check_flat_size(direction);
        Mlp out = *this;
        Index at = 0;
        for (auto& l : out.layers_) {
            l.weight.reshaped() += scale * direction.segment(at, l.weight.size());
            at += l.weight.size();
            l.bias += scale * direction.segment(at, l.bias.size());
            at += l.bias.size();
        }
        return out;
    }

    void check_flat_size(const Vector& v) const {
        if (v.size() != param_count())
            throw ShapeError("parameter vector has length " + std::to_string(v.size()) + ", model has " +
                             std::to_string(param_count()));
    }

    friend bool operator==(const Mlp& a, const Mlp& b) {
        if (a.layers_.size() != b.layers_.size()) return false;
        for (std::size_t i = 0; i < a.layers_.size(); ++i) {
            const auto &x = a.layers_[i], &y = b.layers_[i];
            if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols()) return false;
            if (x.weight != y.weight || x.bias != y.bias) return false;
        }
        return true;
    }

private:
    std::vector<Layer> layers_;
};

namespace detail {

inline void check_inputs(const Mlp& model, const Matrix& inputs) {
    if (inputs.cols() != model.input_dim())
        throw ShapeError("input dim " + std::to_string(inputs.cols()) + " does not match model input dim " +
                         std::to_string(model.input_dim()));
}

inline void check_labels(const Mlp& model, const Matrix& inputs, std::span<const int> labels) {
    if (Index(labels.size()) != inputs.rows())
        throw ShapeError("got " + std::to_string(labels.size()) + " labels for " + std::to_string(inputs.rows()) +
                         " inputs");
    for (int y : labels)
        if (y < 0 || y >= model.num_classes())
            throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(model.num_classes()) +
                             ")");
}

/// Pre-activations of every layer; activations are recomputed from them.
struct Trace {
    std::vector<Matrix> pre;
};

inline Trace run_forward(const Mlp& model, const Matrix& inputs) {
    Trace t;
    const auto& layers = model.layers();
    t.pre.reserve(layers.size());
    Matrix act = inputs;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Matrix z = act * layers[i].weight.transpose();
        z.rowwise() += layers[i].bias.transpose();
        if (i + 1 < layers.size()) act = z.cwiseMax(0.0);
        t.pre.push_back(std::move(z));
    }
    return t;
}

/// Per-example cross-entropy and (softmax - onehot) for each row of logits.
inline std::pair<Vector, Matrix> softmax_xent(const Matrix& logits, std::span<const int> labels) {
    const Index n = logits.rows();
    Vector losses(n);
    Matrix delta(n, logits.cols());
    for (Index i = 0; i < n; ++i) {
        const double m = logits.row(i).maxCoeff();
        const auto e = (logits.row(i).array() - m).exp();
        const double s = e.sum();
        losses(i) = std::log(s) + m - logits(i, labels[i]);
        delta.row(i) = e / s;
        delta(i, labels[i]) -= 1.0;
    }
    return {losses, delta};
}

struct Backward {
    Vector param_grad;  // sum over rows of per-example gradients
    Matrix input_grads;
};

/// Backpropagates per-example output deltas. Parameter gradients are summed
/// over the batch; input gradients stay per example.
inline Backward run_backward(const Mlp& model, const Matrix& inputs, const Trace& t, Matrix delta, bool want_params,
                             bool want_inputs) {
    const auto& layers = model.layers();
    Backward out;
    if (want_params) out.param_grad.resize(model.param_count());
    // flat offset of each layer's block
    std::vector<Index> offset(layers.size() + 1, 0);
    for (std::size_t i = 0; i < layers.size(); ++i)
        offset[i + 1] = offset[i] + layers[i].weight.size() + layers[i].bias.size();

    for (std::size_t k = layers.size(); k-- > 0;) {
        const auto& l = layers[k];
        if (want_params) {
            const Matrix act_prev = k == 0 ? inputs : Matrix(t.pre[k - 1].cwiseMax(0.0));
            const Matrix dw = delta.transpose() * act_prev;
            out.param_grad.segment(offset[k], l.weight.size()) = dw.reshaped();
            out.param_grad.segment(offset[k] + l.weight.size(), l.bias.size()) = delta.colwise().sum().transpose();
        }
        if (k == 0 && !want_inputs) break;
        Matrix dprev = delta * l.weight;
        if (k > 0) dprev = dprev.cwiseProduct((t.pre[k - 1].array() > 0.0).cast<double>().matrix());
        delta = std::move(dprev);
    }
    if (want_inputs) out.input_grads = std::move(delta);
    return out;
}

}  // namespace detail

/// n x C logits.
inline Matrix forward(const Mlp& model, const Matrix& inputs) {
    detail::check_inputs(model, inputs);
    auto t = detail::run_forward(model, inputs);
    return std::move(t.pre.back());
}

/// Loss and gradients for a batch.
///
/// `loss` and `param_grad` refer to the mean cross-entropy over the batch.
/// Row i of `input_grads` is the gradient of example i's own loss with respect
/// to its input (not divided by n), which is what a particle needs.
struct GradBundle {
    double loss = 0.0;
    Vector param_grad;
    Matrix input_grads;
};

inline GradBundle loss_grads(const Mlp& model, const Batch& batch) {
    if (batch.empty()) throw EmptyBatchError("loss_grads called on an empty batch");
    detail::check_inputs(model, batch.inputs);
    detail::check_labels(model, batch.inputs, batch.labels);
    const auto t = detail::run_forward(model, batch.inputs);
    auto [losses, delta] = detail::softmax_xent(t.pre.back(), batch.labels);
    auto back = detail::run_backward(model, batch.inputs, t, std::move(delta), true, true);
    const double n = double(batch.size());
    return {losses.sum() / n, back.param_grad / n, std::move(back.input_grads)};
}

/// Mean loss and its parameter gradient only.
inline std::pair<double, Vector> param_grad(const Mlp& model, const Batch& batch) {
    if (batch.empty()) throw EmptyBatchError("param_grad called on an empty batch");
    detail::check_inputs(model, batch.inputs);
    detail::check_labels(model, batch.inputs, batch.labels);
    const auto t = detail::run_forward(model, batch.inputs);
    auto [losses, delta] = detail::softmax_xent(t.pre.back(), batch.labels);
    auto back = detail::run_backward(model, batch.inputs, t, std::move(delta), true, false);
    const double n = double(batch.size());
    return {losses.sum() / n, back.param_grad / n};
}

/// Per-example input gradients of the cross-entropy, n x d.
inline Matrix input_grads(const Mlp& model, const Matrix& inputs, std::span<const int> labels) {
    detail::check_inputs(model, inputs);
    detail::check_labels(model, inputs, labels);
    if (inputs.rows() == 0) return Matrix(0, inputs.cols());
    const auto t = detail::run_forward(model, inputs);
    auto delta = detail::softmax_xent(t.pre.back(), labels).second;
    return detail::run_backward(model, inputs, t, std::move(delta), false, true).input_grads;
}

inline double mean_loss(const Mlp& model, const Batch& batch) {
    if (batch.empty()) throw EmptyBatchError("mean_loss called on an empty batch");
    detail::check_inputs(model, batch.inputs);
    detail::check_labels(model, batch.inputs, batch.labels);
    const auto t = detail::run_forward(model, batch.inputs);
    return detail::softmax_xent(t.pre.back(), batch.labels).first.mean();
}

inline constexpr double kDefaultFdEps = 1e-3;

/// Row i: gradient w.r.t. x_i of (grad_theta loss(theta, x_i, y_i) . v).
///
/// Central difference along the unit direction v/|v| with parameter-space step
/// fd_eps, rescaled by |v|. Exactly zero when v = 0.
inline Matrix mixed_grad_fd(const Mlp& model, const Matrix& inputs, std::span<const int> labels, const Vector& v,
                            double fd_eps = kDefaultFdEps) {
    model.check_flat_size(v);
    if (!(fd_eps > 0.0)) throw ConfigError("fd_eps must be positive");
    detail::check_inputs(model, inputs);
    detail::check_labels(model, inputs, labels);
    const double norm = v.norm();
    if (norm == 0.0 || inputs.rows() == 0) return Matrix::Zero(inputs.rows(), inputs.cols());
    const Vector unit = v / norm;
    const Matrix plus = input_grads(model.shifted(unit, fd_eps), inputs, labels);
    const Matrix minus = input_grads(model.shifted(unit, -fd_eps), inputs, labels);
    return (plus - minus) * (norm / (2.0 * fd_eps));
}

inline Matrix mixed_grad_fd(const Mlp& model, const Batch& batch, const Vector& v, double fd_eps = kDefaultFdEps) {
    return mixed_grad_fd(model, batch.inputs, batch.labels, v, fd_eps);
}

/// theta - lr * grad.
inline Mlp sgd_step(const Mlp& model, const Vector& grad, double lr) {
    model.check_flat_size(grad);
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
    return model.shifted(grad, -lr);
}

}  // namespace drme
