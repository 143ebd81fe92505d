#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "tcbm/rng.hpp"
#include "tcbm/types.hpp"

// Clean-data predictor: a small fully connected network on flattened
// sequences with a sinusoidal time embedding, hand-written reverse-mode
// gradients, AdamW, and an EMA of the weights.  Templated on the scalar so
// the float production model and the double gradient-check replay share one
// implementation.
namespace tcbm::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// tanh-form gelu and its derivative.
template <typename T>
T gelu(T x) {
    const T k = T(0.7978845608028654);  // sqrt(2/pi)
    const T u = k * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
    const T k = T(0.7978845608028654);
    const T u = k * (x + T(0.044715) * x * x * x);
    const T th = std::tanh(u);
    const T du = k * (T(1) + T(0.134145) * x * x);
    return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

// Sinusoidal features of t at geometrically spaced frequencies 1..1000,
// sin/cos pairs, bounded in [-1, 1].
template <typename T>
struct TimeEmbedding {
    int width = 16;  // even

    Vec<T> operator()(T t) const {
        const int half = width / 2;
        Vec<T> f(width);
        for (int i = 0; i < half; ++i) {
            const T freq = half > 1 ? T(std::pow(1000.0, double(i) / (half - 1))) : T(1);
            f[2 * i] = std::sin(freq * t);
            f[2 * i + 1] = std::cos(freq * t);
        }
        return f;
    }
};

template <typename T>
struct Gradients {
    std::vector<Mat<T>> weights;
    std::vector<Vec<T>> biases;
};

template <typename T>
struct Mlp {
    std::vector<int> widths;  // [seq_dim + temb, hidden..., seq_dim]
    TimeEmbedding<T> temb;
    std::vector<Mat<T>> weights;  // layer l: widths[l+1] x widths[l]
    std::vector<Vec<T>> biases;

    int input_dim() const { return widths.front(); }
    int seq_dim() const { return widths.back(); }
    std::size_t layer_count() const { return weights.size(); }

    // Fan-in scaled uniform init, biases zero, deterministic per seed.
    static Mlp init(std::vector<int> widths, int temb_width, std::uint64_t seed) {
        if (widths.size() < 2) throw std::invalid_argument("Mlp::init: need at least 2 widths");
        if (temb_width % 2 != 0 || temb_width <= 0)
            throw std::invalid_argument("Mlp::init: temb width must be positive and even");
        if (widths.front() - temb_width < 1)
            throw std::invalid_argument("Mlp::init: input width must exceed temb width");
        Mlp m;
        m.widths = std::move(widths);
        m.temb.width = temb_width;
        Rng rng(seed);
        for (std::size_t l = 0; l + 1 < m.widths.size(); ++l) {
            const int fan_in = m.widths[l];
            const int fan_out = m.widths[l + 1];
            const T bound = T(1) / std::sqrt(T(fan_in));
            Mat<T> w(fan_out, fan_in);
            for (int i = 0; i < fan_out; ++i)
                for (int j = 0; j < fan_in; ++j)
                    w(i, j) = T(2.0 * rng.uniform() - 1.0) * bound;
            m.weights.push_back(std::move(w));
            m.biases.push_back(Vec<T>::Zero(fan_out));
        }
        return m;
    }

    // Stack flattened sequences with their time embeddings, one column per
    // sample.
    Mat<T> assemble_input(const Mat<T>& seq_flat, const Vec<T>& ts) const {
        if (seq_flat.rows() != seq_dim() || seq_flat.cols() != ts.size())
            throw std::invalid_argument("assemble_input: shape mismatch");
        Mat<T> in(input_dim(), seq_flat.cols());
        in.topRows(seq_dim()) = seq_flat;
        for (int j = 0; j < ts.size(); ++j) in.col(j).tail(temb.width) = temb(ts[j]);
        return in;
    }

    // Forward pass on assembled inputs (columns are samples).
    Mat<T> forward(const Mat<T>& input) const {
        if (input.rows() != input_dim()) throw std::invalid_argument("forward: input dim mismatch");
        Mat<T> h = input;
        for (std::size_t l = 0; l < layer_count(); ++l) {
            h = (weights[l] * h).colwise() + biases[l];
            if (l + 1 < layer_count()) h = h.unaryExpr([](T x) { return gelu(x); });
        }
        return h;
    }

    Mat<T> predict(const Mat<T>& seq_flat, const Vec<T>& ts) const {
        return forward(assemble_input(seq_flat, ts));
    }

    // Mean-squared-error loss over all output entries (averaged over the
    // batch) and its reverse-mode gradients.
    T backward(const Mat<T>& input, const Mat<T>& target, Gradients<T>& grads) const {
        if (target.rows() != seq_dim() || target.cols() != input.cols())
            throw std::invalid_argument("backward: target shape mismatch");
        const int batch = static_cast<int>(input.cols());

        std::vector<Mat<T>> pre(layer_count());   // pre-activations
        std::vector<Mat<T>> act(layer_count() + 1);
        act[0] = input;
        for (std::size_t l = 0; l < layer_count(); ++l) {
            pre[l] = (weights[l] * act[l]).colwise() + biases[l];
            act[l + 1] = (l + 1 < layer_count())
                             ? pre[l].unaryExpr([](T x) { return gelu(x); })
                             : pre[l];
        }

        const Mat<T> resid = act.back() - target;
        const T loss = resid.squaredNorm() / (T(seq_dim()) * T(batch));
        if (!std::isfinite(double(loss))) throw DivergedError("backward: non-finite loss");

        grads.weights.resize(layer_count());
        grads.biases.resize(layer_count());
        Mat<T> delta = resid * (T(2) / (T(seq_dim()) * T(batch)));
        for (std::size_t l = layer_count(); l-- > 0;) {
            grads.weights[l] = delta * act[l].transpose();
            grads.biases[l] = delta.rowwise().sum();
            if (l > 0) {
                delta = weights[l].transpose() * delta;
                delta.array() *= pre[l - 1].unaryExpr([](T x) { return gelu_grad(x); }).array();
            }
        }
        return loss;
    }

    T loss(const Mat<T>& input, const Mat<T>& target) const {
        const Mat<T> out = forward(input);
        return (out - target).squaredNorm() / (T(seq_dim()) * T(target.cols()));
    }

    bool finite() const {
        for (const auto& w : weights)
            if (!w.allFinite()) return false;
        for (const auto& b : biases)
            if (!b.allFinite()) return false;
        return true;
    }
};

// Decoupled weight decay, bias-corrected moments.
template <typename T>
struct AdamW {
    T lr = T(3e-5);
    T beta1 = T(0.9);
    T beta2 = T(0.95);
    T weight_decay = T(1e-4);
    T eps = T(1e-8);
    long step = 0;
    std::vector<Mat<T>> m_w, v_w;
    std::vector<Vec<T>> m_b, v_b;

    static AdamW for_model(const Mlp<T>& model, T lr = T(3e-5), T beta1 = T(0.9),
                           T beta2 = T(0.95), T weight_decay = T(1e-4)) {
        AdamW o;
        o.lr = lr;
        o.beta1 = beta1;
        o.beta2 = beta2;
        o.weight_decay = weight_decay;
        for (std::size_t l = 0; l < model.layer_count(); ++l) {
            o.m_w.push_back(Mat<T>::Zero(model.weights[l].rows(), model.weights[l].cols()));
            o.v_w.push_back(Mat<T>::Zero(model.weights[l].rows(), model.weights[l].cols()));
            o.m_b.push_back(Vec<T>::Zero(model.biases[l].size()));
            o.v_b.push_back(Vec<T>::Zero(model.biases[l].size()));
        }
        return o;
    }

    void update(Mlp<T>& model, const Gradients<T>& grads) {
        ++step;
        const T c1 = T(1) - T(std::pow(double(beta1), double(step)));
        const T c2 = T(1) - T(std::pow(double(beta2), double(step)));
        for (std::size_t l = 0; l < model.layer_count(); ++l) {
            auto apply = [&](auto& w, auto& m, auto& v, const auto& g) {
                m = beta1 * m + (T(1) - beta1) * g;
                v = beta2 * v + (T(1) - beta2) * g.cwiseProduct(g);
                w -= lr * weight_decay * w;
                w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
            };
            apply(model.weights[l], m_w[l], v_w[l], grads.weights[l]);
            apply(model.biases[l], m_b[l], v_b[l], grads.biases[l]);
        }
        if (!model.finite()) throw DivergedError("AdamW: non-finite weights after step");
    }
};

// shadow <- rate * shadow + (1 - rate) * weights; the shadow weights are what
// every inference path evaluates.
template <typename T>
struct Ema {
    T rate = T(0.999);
    std::vector<Mat<T>> weights;
    std::vector<Vec<T>> biases;

    static Ema of(const Mlp<T>& model, T rate = T(0.999)) {
        Ema e;
        e.rate = rate;
        e.weights = model.weights;
        e.biases = model.biases;
        return e;
    }

    void update(const Mlp<T>& model) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            weights[l] = rate * weights[l] + (T(1) - rate) * model.weights[l];
            biases[l] = rate * biases[l] + (T(1) - rate) * model.biases[l];
        }
    }

    // The model with shadow weights substituted in.
    Mlp<T> snapshot(const Mlp<T>& model) const {
        Mlp<T> out = model;
        out.weights = weights;
        out.biases = biases;
        return out;
    }
};

}  // namespace tcbm::nn
