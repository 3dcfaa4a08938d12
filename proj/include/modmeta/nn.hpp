#pragma once

// Dense multilayer perceptrons with tape-based reverse mode and first-order
// optimizers. Everything is templated on the scalar type; the rest of the
// library instantiates it with double.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "modmeta/errors.hpp"

namespace modmeta {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Activation { Tanh, Relu };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

struct MlpSpec {
    int input_dim = 1;
    std::vector<int> hidden_dims;
    int output_dim = 1;
    Activation activation = Activation::Tanh;

    int layer_count() const { return static_cast<int>(hidden_dims.size()) + 1; }
    int fan_in(int layer) const { return layer == 0 ? input_dim : hidden_dims[layer - 1]; }
    int fan_out(int layer) const {
        return layer + 1 == layer_count() ? output_dim : hidden_dims[layer];
    }
    // Throws std::invalid_argument unless every dimension is >= 1.
    void validate() const;

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

// Weight matrices (fan_out x fan_in) and bias vectors, one pair per layer.
template <typename Scalar>
struct LayerStack {
    std::vector<MatrixX<Scalar>> weights;
    std::vector<VectorX<Scalar>> biases;

    Eigen::Index size() const {
        Eigen::Index n = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
        return n;
    }

    bool all_finite() const {
        for (std::size_t l = 0; l < weights.size(); ++l)
            if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
        return true;
    }

    void set_zero() {
        for (auto& w : weights) w.setZero();
        for (auto& b : biases) b.setZero();
    }

    bool same_shape(const LayerStack& o) const {
        if (weights.size() != o.weights.size() || biases.size() != o.biases.size()) return false;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            if (weights[l].rows() != o.weights[l].rows() || weights[l].cols() != o.weights[l].cols())
                return false;
            if (biases[l].size() != o.biases[l].size()) return false;
        }
        return true;
    }

    bool operator==(const LayerStack& o) const {
        if (!same_shape(o)) return false;
        for (std::size_t l = 0; l < weights.size(); ++l)
            if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
        return true;
    }
};

template <typename Scalar>
struct MlpParams : LayerStack<Scalar> {
    MlpSpec spec;
};

// Partial derivatives of a scalar loss, laid out exactly like MlpParams.
template <typename Scalar>
struct MlpGradients : LayerStack<Scalar> {
    static MlpGradients zeros_like(const MlpParams<Scalar>& p) {
        MlpGradients g;
        for (std::size_t l = 0; l < p.weights.size(); ++l) {
            g.weights.push_back(MatrixX<Scalar>::Zero(p.weights[l].rows(), p.weights[l].cols()));
            g.biases.push_back(VectorX<Scalar>::Zero(p.biases[l].size()));
        }
        return g;
    }

    MlpGradients& operator+=(const MlpGradients& o) {
        if (!this->same_shape(o)) throw std::invalid_argument("gradient shape mismatch");
        for (std::size_t l = 0; l < this->weights.size(); ++l) {
            this->weights[l] += o.weights[l];
            this->biases[l] += o.biases[l];
        }
        return *this;
    }
};

// Row-major per layer: W then b, layer 0 first. This is the checkpoint layout.
template <typename Scalar>
std::vector<Scalar> flatten(const LayerStack<Scalar>& s) {
    std::vector<Scalar> out;
    out.reserve(static_cast<std::size_t>(s.size()));
    for (std::size_t l = 0; l < s.weights.size(); ++l) {
        const auto& w = s.weights[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) out.push_back(w(r, c));
        for (Eigen::Index i = 0; i < s.biases[l].size(); ++i) out.push_back(s.biases[l](i));
    }
    return out;
}

template <typename Scalar>
void unflatten(std::span<const Scalar> flat, LayerStack<Scalar>& s) {
    if (static_cast<Eigen::Index>(flat.size()) != s.size())
        throw std::invalid_argument("flat parameter count " + std::to_string(flat.size()) +
                                    " does not match layout size " + std::to_string(s.size()));
    std::size_t k = 0;
    for (std::size_t l = 0; l < s.weights.size(); ++l) {
        auto& w = s.weights[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat[k++];
        for (Eigen::Index i = 0; i < s.biases[l].size(); ++i) s.biases[l](i) = flat[k++];
    }
}

// Glorot-uniform weights scaled by `gain`, zero biases.
template <typename Scalar, typename Rng>
MlpParams<Scalar> init_params(const MlpSpec& spec, Rng& rng, Scalar gain = Scalar(1)) {
    spec.validate();
    MlpParams<Scalar> p;
    p.spec = spec;
    for (int l = 0; l < spec.layer_count(); ++l) {
        const int in = spec.fan_in(l);
        const int out = spec.fan_out(l);
        const Scalar limit = gain * std::sqrt(Scalar(6) / Scalar(in + out));
        std::uniform_real_distribution<Scalar> dist(-limit, limit);
        MatrixX<Scalar> w(out, in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) w(r, c) = dist(rng);
        p.weights.push_back(std::move(w));
        p.biases.push_back(VectorX<Scalar>::Zero(out));
    }
    return p;
}

template <typename Scalar>
MlpParams<Scalar> init_params(const MlpSpec& spec, std::uint64_t seed, Scalar gain = Scalar(1)) {
    std::mt19937_64 rng(seed);
    return init_params<Scalar>(spec, rng, gain);
}

template <typename Scalar>
MlpParams<Scalar> zero_params(const MlpSpec& spec) {
    spec.validate();
    MlpParams<Scalar> p;
    p.spec = spec;
    for (int l = 0; l < spec.layer_count(); ++l) {
        p.weights.push_back(MatrixX<Scalar>::Zero(spec.fan_out(l), spec.fan_in(l)));
        p.biases.push_back(VectorX<Scalar>::Zero(spec.fan_out(l)));
    }
    return p;
}

// Forward record: the input to every layer (inputs[0] is the network input,
// inputs[l] the post-activation output of hidden layer l-1). Columns are
// batch samples. The tape refers to the params it was recorded with; those
// must outlive it and stay unmodified until the backward pass.
template <typename Scalar>
struct MlpTape {
    const MlpParams<Scalar>* params = nullptr;
    std::vector<MatrixX<Scalar>> inputs;

    Eigen::Index batch() const { return inputs.empty() ? 0 : inputs.front().cols(); }
};

template <typename Scalar>
struct MlpForward {
    MatrixX<Scalar> y;
    MlpTape<Scalar> tape;
};

namespace detail {

template <typename Scalar>
void activate(Activation a, MatrixX<Scalar>& z) {
    if (a == Activation::Tanh)
        z = z.array().tanh().matrix();
    else
        z = z.array().max(Scalar(0)).matrix();
}

// Derivative expressed through the post-activation value.
template <typename Scalar>
MatrixX<Scalar> activation_slope(Activation a, const MatrixX<Scalar>& post) {
    if (a == Activation::Tanh) return (Scalar(1) - post.array().square()).matrix();
    return (post.array() > Scalar(0)).template cast<Scalar>().matrix();
}

template <typename Scalar>
void check_input(const MlpParams<Scalar>& p, Eigen::Index rows) {
    if (rows != p.spec.input_dim)
        throw std::invalid_argument("mlp input has " + std::to_string(rows) + " rows, expected " +
                                    std::to_string(p.spec.input_dim));
}

}  // namespace detail

// Inference only; no tape.
template <typename Scalar>
MatrixX<Scalar> mlp_apply(const MlpParams<Scalar>& p, const std::type_identity_t<MatrixX<Scalar>>& x) {
    detail::check_input(p, x.rows());
    MatrixX<Scalar> a = x;
    const int layers = static_cast<int>(p.weights.size());
    for (int l = 0; l < layers; ++l) {
        MatrixX<Scalar> z = p.weights[l] * a;
        z.colwise() += p.biases[l];
        if (l + 1 < layers) detail::activate(p.spec.activation, z);
        a = std::move(z);
    }
    return a;
}

template <typename Scalar>
MlpForward<Scalar> mlp_forward(const MlpParams<Scalar>& p, const std::type_identity_t<MatrixX<Scalar>>& x) {
    detail::check_input(p, x.rows());
    MlpForward<Scalar> out;
    out.tape.params = &p;
    const int layers = static_cast<int>(p.weights.size());
    out.tape.inputs.reserve(layers);
    out.tape.inputs.push_back(x);
    for (int l = 0; l < layers; ++l) {
        MatrixX<Scalar> z = p.weights[l] * out.tape.inputs.back();
        z.colwise() += p.biases[l];
        if (l + 1 < layers) {
            detail::activate(p.spec.activation, z);
            out.tape.inputs.push_back(std::move(z));
        } else {
            out.y = std::move(z);
        }
    }
    return out;
}

// Accumulates d(sum(y .* dy))/dparams into `grads` and returns d/dx.
template <typename Scalar>
MatrixX<Scalar> mlp_backward_into(const MlpTape<Scalar>& tape, const std::type_identity_t<MatrixX<Scalar>>& dy,
                                  MlpGradients<Scalar>& grads) {
    const MlpParams<Scalar>* p = tape.params;
    if (p == nullptr || tape.inputs.size() != p->weights.size())
        throw std::logic_error("mlp_backward: stale or empty tape");
    if (dy.rows() != p->spec.output_dim || dy.cols() != tape.batch())
        throw std::invalid_argument("mlp_backward: dy is " + std::to_string(dy.rows()) + "x" +
                                    std::to_string(dy.cols()) + ", expected " +
                                    std::to_string(p->spec.output_dim) + "x" +
                                    std::to_string(tape.batch()));
    if (!grads.same_shape(*p)) throw std::invalid_argument("mlp_backward: gradient shape mismatch");

    MatrixX<Scalar> delta = dy;
    for (int l = static_cast<int>(p->weights.size()) - 1; l >= 0; --l) {
        const MatrixX<Scalar>& a = tape.inputs[l];
        grads.weights[l].noalias() += delta * a.transpose();
        grads.biases[l] += delta.rowwise().sum();
        MatrixX<Scalar> da = p->weights[l].transpose() * delta;
        if (l == 0) return da;
        delta = da.cwiseProduct(detail::activation_slope(p->spec.activation, a));
    }
    return delta;  // unreachable: every network has at least one layer
}

template <typename Scalar>
struct MlpBackward {
    MatrixX<Scalar> dx;
    MlpGradients<Scalar> grads;
};

template <typename Scalar>
MlpBackward<Scalar> mlp_backward(const MlpTape<Scalar>& tape, const std::type_identity_t<MatrixX<Scalar>>& dy) {
    if (tape.params == nullptr) throw std::logic_error("mlp_backward: stale or empty tape");
    MlpBackward<Scalar> out{MatrixX<Scalar>(), MlpGradients<Scalar>::zeros_like(*tape.params)};
    out.dx = mlp_backward_into(tape, dy, out.grads);
    return out;
}

// ---------------------------------------------------------------------------
// Optimizers

namespace detail {

template <typename Scalar>
void check_step(const LayerStack<Scalar>& params, const LayerStack<Scalar>& grads) {
    if (!params.same_shape(grads)) throw std::invalid_argument("optimizer: gradient shape mismatch");
    if (!grads.all_finite()) throw NumericError("optimizer: non-finite gradient entries, step rejected");
}

}  // namespace detail

template <typename Scalar>
void sgd_update(MlpParams<Scalar>& params, const MlpGradients<Scalar>& grads, Scalar lr) {
    if (!(lr > Scalar(0))) throw std::invalid_argument("sgd: learning rate must be positive");
    detail::check_step(params, grads);
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        params.weights[l] -= lr * grads.weights[l];
        params.biases[l] -= lr * grads.biases[l];
    }
}

template <typename Scalar>
MlpParams<Scalar> sgd_step(MlpParams<Scalar> params, const MlpGradients<Scalar>& grads, Scalar lr) {
    sgd_update(params, grads, lr);
    return params;
}

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// First and second moment estimates; empty until the first step.
template <typename Scalar>
struct AdamState {
    MlpGradients<Scalar> m;
    MlpGradients<Scalar> v;
    std::int64_t step = 0;

    bool fresh() const { return step == 0; }
    bool operator==(const AdamState&) const = default;
};

template <typename Scalar>
void adam_update(MlpParams<Scalar>& params, const MlpGradients<Scalar>& grads, AdamState<Scalar>& state,
                 const AdamHyper& h) {
    if (!(h.lr > 0)) throw std::invalid_argument("adam: learning rate must be positive");
    detail::check_step(params, grads);
    if (state.fresh() && !state.m.same_shape(params)) {
        state.m = MlpGradients<Scalar>::zeros_like(params);
        state.v = MlpGradients<Scalar>::zeros_like(params);
    }
    if (!state.m.same_shape(params) || !state.v.same_shape(params))
        throw std::invalid_argument("adam: state shape mismatch");

    ++state.step;
    const Scalar b1 = Scalar(h.beta1), b2 = Scalar(h.beta2);
    const Scalar c1 = Scalar(1) - std::pow(b1, Scalar(state.step));
    const Scalar c2 = Scalar(1) - std::pow(b2, Scalar(state.step));
    const Scalar lr = Scalar(h.lr), eps = Scalar(h.epsilon);

    auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
        m = b1 * m + (Scalar(1) - b1) * g;
        v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
        p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        update(params.weights[l], grads.weights[l], state.m.weights[l], state.v.weights[l]);
        update(params.biases[l], grads.biases[l], state.m.biases[l], state.v.biases[l]);
    }
}

template <typename Scalar>
std::pair<MlpParams<Scalar>, AdamState<Scalar>> adam_step(MlpParams<Scalar> params,
                                                          const MlpGradients<Scalar>& grads,
                                                          AdamState<Scalar> state, double lr,
                                                          double beta1 = 0.9, double beta2 = 0.999,
                                                          double epsilon = 1e-8) {
    adam_update(params, grads, state, AdamHyper{lr, beta1, beta2, epsilon});
    return {std::move(params), std::move(state)};
}

}  // namespace modmeta
