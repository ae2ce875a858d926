#pragma once

#include <string>
#include <vector>

#include "flare/matrix.hpp"
#include "flare/param.hpp"
#include "flare/rng.hpp"

namespace flare {

enum class Activation { relu, tanh, sigmoid };

Activation activation_from_string(const std::string& s);
std::string activation_to_string(Activation a);

Vec activate(const Vec& x, Activation kind);
// upstream times the elementwise derivative evaluated at the forward input x.
Vec activate_backward(const Vec& x, const Vec& upstream, Activation kind);

// y = W x + b. b is stored as an n x 1 matrix.
Vec linear_forward(const Vec& x, const Matrix& w, const Matrix& b);

struct LinearTrace {
    Vec x;  // forward input
};

// grad_w += upstream (outer) x, grad_b += upstream, returns grad_x = W^T upstream.
Vec linear_backward(const LinearTrace& trace, const Matrix& w, const Vec& upstream,
                    Matrix& grad_w, Matrix& grad_b);

// Shift-by-max stabilized; output sums to 1.
Vec softmax(const Vec& logits);

struct CeResult {
    double loss = 0.0;
    Vec grad_logits;
};

// loss = weights[label] * (-log softmax(logits)[label]), via log-sum-exp.
// grad  = weights[label] * (softmax(logits) - onehot(label)).
CeResult weighted_cross_entropy(const Vec& logits, int label, const Vec& weights);

struct MseResult {
    double loss = 0.0;
    Vec grad_pred;  // 2 (pred - target) / dim
};

MseResult mse(const Vec& pred, const Vec& target);

// Fully-connected stack: hidden layers get the activation, the output layer is
// linear. Parameters live in a ParamSet under "<prefix>.<layer>.{W,b}".
struct MlpSpec {
    std::size_t in = 0;
    std::vector<std::size_t> hidden;
    std::size_t out = 0;
    Activation act = Activation::relu;

    std::vector<std::pair<std::size_t, std::size_t>> layer_shapes() const;
};

struct MlpTrace {
    std::vector<Vec> inputs;   // input to each linear layer
    std::vector<Vec> preacts;  // pre-activation output of each layer
};

class Mlp {
public:
    // Registers the blocks and initializes weights uniform in +-sqrt(1/fan_in).
    static Mlp create(ParamSet& params, const std::string& prefix, const MlpSpec& spec,
                      Rng& rng);
    // Binds to blocks that already exist (e.g. after checkpoint load).
    static Mlp bind(ParamSet& params, const std::string& prefix, const MlpSpec& spec);

    Vec forward(const Vec& x, MlpTrace* trace = nullptr) const;
    // Accumulates parameter grads, returns grad wrt the input.
    Vec backward(const MlpTrace& trace, const Vec& upstream) const;

    const MlpSpec& spec() const { return spec_; }

private:
    MlpSpec spec_;
    std::vector<ParamBlock*> weights_;
    std::vector<ParamBlock*> biases_;
};

}  // namespace flare
