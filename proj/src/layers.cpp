#include "flare/layers.hpp"

#include <algorithm>
#include <cmath>

#include "flare/errors.hpp"

namespace flare {

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    throw ConfigError("unknown activation: " + s);
}

std::string activation_to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
    }
    return "relu";
}

static double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec activate(const Vec& x, Activation kind) {
    Vec y(x.size());
    switch (kind) {
        case Activation::relu:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
            break;
        case Activation::tanh:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid_scalar(x[i]);
            break;
    }
    return y;
}

Vec activate_backward(const Vec& x, const Vec& upstream, Activation kind) {
    if (x.size() != upstream.size()) throw ShapeError("activate_backward: dim mismatch");
    Vec g(x.size());
    switch (kind) {
        case Activation::relu:
            for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? upstream[i] : 0.0;
            break;
        case Activation::tanh:
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double t = std::tanh(x[i]);
                g[i] = upstream[i] * (1.0 - t * t);
            }
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double s = sigmoid_scalar(x[i]);
                g[i] = upstream[i] * s * (1.0 - s);
            }
            break;
    }
    return g;
}

Vec linear_forward(const Vec& x, const Matrix& w, const Matrix& b) {
    if (b.cols() != 1 || b.rows() != w.rows())
        throw ShapeError("linear_forward: bias of dim " + std::to_string(b.rows()) +
                         " does not match " + std::to_string(w.rows()) + " output rows");
    Vec y = matvec(w, x, "linear_forward: weight");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b(i, 0);
    return y;
}

Vec linear_backward(const LinearTrace& trace, const Matrix& w, const Vec& upstream,
                    Matrix& grad_w, Matrix& grad_b) {
    if (trace.x.empty() && w.cols() != 0)
        throw ContractViolation("linear_backward: missing forward trace");
    if (upstream.size() != w.rows()) throw ShapeError("linear_backward: upstream dim mismatch");
    add_outer(grad_w, upstream, trace.x);
    for (std::size_t i = 0; i < upstream.size(); ++i) grad_b(i, 0) += upstream[i];
    return matvec_transposed(w, upstream, "linear_backward: weight");
}

Vec softmax(const Vec& logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    Vec p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        z += p[i];
    }
    for (auto& v : p) v /= z;
    return p;
}

CeResult weighted_cross_entropy(const Vec& logits, int label, const Vec& weights) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
        throw ContractViolation("weighted_cross_entropy: label out of range");
    if (weights.size() != logits.size())
        throw ShapeError("weighted_cross_entropy: weights dim mismatch");
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum_exp = 0.0;
    for (double v : logits) sum_exp += std::exp(v - m);
    const double log_z = m + std::log(sum_exp);
    const double w = weights[static_cast<std::size_t>(label)];

    CeResult r;
    r.loss = w * (log_z - logits[static_cast<std::size_t>(label)]);
    r.grad_logits = softmax(logits);
    for (auto& g : r.grad_logits) g *= w;
    r.grad_logits[static_cast<std::size_t>(label)] -= w;
    return r;
}

MseResult mse(const Vec& pred, const Vec& target) {
    if (pred.size() != target.size())
        throw ShapeError("mse: pred dim " + std::to_string(pred.size()) + " vs target dim " +
                         std::to_string(target.size()));
    MseResult r;
    r.grad_pred.resize(pred.size());
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        r.loss += d * d * inv_n;
        r.grad_pred[i] = 2.0 * d * inv_n;
    }
    return r;
}

std::vector<std::pair<std::size_t, std::size_t>> MlpSpec::layer_shapes() const {
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    std::size_t prev = in;
    for (std::size_t h : hidden) {
        shapes.emplace_back(h, prev);
        prev = h;
    }
    shapes.emplace_back(out, prev);
    return shapes;
}

Mlp Mlp::create(ParamSet& params, const std::string& prefix, const MlpSpec& spec, Rng& rng) {
    Mlp mlp;
    mlp.spec_ = spec;
    std::size_t layer = 0;
    for (auto [rows, cols] : spec.layer_shapes()) {
        auto& w = params.add(prefix + "." + std::to_string(layer) + ".W", rows, cols);
        auto& b = params.add(prefix + "." + std::to_string(layer) + ".b", rows, 1);
        const double bound = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(cols, 1)));
        for (auto& v : w.value.data()) v = rng.uniform(-bound, bound);
        for (auto& v : b.value.data()) v = rng.uniform(-bound, bound);
        mlp.weights_.push_back(&w);
        mlp.biases_.push_back(&b);
        ++layer;
    }
    return mlp;
}

Mlp Mlp::bind(ParamSet& params, const std::string& prefix, const MlpSpec& spec) {
    Mlp mlp;
    mlp.spec_ = spec;
    std::size_t layer = 0;
    for (auto [rows, cols] : spec.layer_shapes()) {
        auto& w = params.at(prefix + "." + std::to_string(layer) + ".W");
        auto& b = params.at(prefix + "." + std::to_string(layer) + ".b");
        if (w.value.rows() != rows || w.value.cols() != cols || b.value.rows() != rows)
            throw ShapeError("Mlp::bind: checkpoint shape mismatch at " + w.name);
        mlp.weights_.push_back(&w);
        mlp.biases_.push_back(&b);
        ++layer;
    }
    return mlp;
}

Vec Mlp::forward(const Vec& x, MlpTrace* trace) const {
    Vec cur = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        if (trace) trace->inputs.push_back(cur);
        Vec pre = linear_forward(cur, weights_[l]->value, biases_[l]->value);
        if (trace) trace->preacts.push_back(pre);
        cur = (l + 1 < weights_.size()) ? activate(pre, spec_.act) : std::move(pre);
    }
    return cur;
}

Vec Mlp::backward(const MlpTrace& trace, const Vec& upstream) const {
    if (trace.inputs.size() != weights_.size())
        throw ContractViolation("Mlp::backward: trace does not match layer count");
    Vec g = upstream;
    for (std::size_t l = weights_.size(); l-- > 0;) {
        if (l + 1 < weights_.size()) g = activate_backward(trace.preacts[l], g, spec_.act);
        LinearTrace lt{trace.inputs[l]};
        g = linear_backward(lt, weights_[l]->value, g, weights_[l]->grad, biases_[l]->grad);
    }
    return g;
}

}  // namespace flare
