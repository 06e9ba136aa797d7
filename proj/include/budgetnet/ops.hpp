#pragma once

#include <cstdint>
#include <vector>

#include "budgetnet/rng.hpp"
#include "budgetnet/tensor.hpp"

namespace bnet::ops {

enum class Mode { kTrain, kEval };

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no bias: every conv is followed by a batch
// norm that owns the shift). Image layout is [N, C, H, W].
// ---------------------------------------------------------------------------

// im2col/GEMM fast path.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, int64_t stride,
                         int64_t padding);

// Direct nested-loop reference. Same contract as conv2d_forward; used as the
// oracle in tests and for any shape where the fast path is not worth it.
template <typename T>
Tensor<T> conv2d_forward_direct(const Tensor<T>& input, const Tensor<T>& weight, int64_t stride,
                                int64_t padding);

template <typename T>
struct Conv2dGrads {
    Tensor<T> input;
    Tensor<T> weight;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                               const Tensor<T>& weight, int64_t stride, int64_t padding);

// Output side length for one spatial axis.
inline int64_t conv_out_dim(int64_t in, int64_t f, int64_t stride, int64_t padding) {
    return (in + 2 * padding - f) / stride + 1;
}

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel.
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
    Tensor<T> gamma;
    Tensor<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    static BatchNormState make(int64_t channels) {
        BatchNormState s;
        s.gamma = Tensor<T>({channels}, T(1));
        s.beta = Tensor<T>({channels}, T(0));
        s.running_mean = Tensor<T>({channels}, T(0));
        s.running_var = Tensor<T>({channels}, T(1));
        return s;
    }
    int64_t channels() const { return gamma.numel(); }
};

// Saved by the train-mode forward pass for the backward pass.
template <typename T>
struct BatchNormCache {
    Tensor<T> x_hat;             // normalized input, same shape as input
    std::vector<T> inv_std;      // per channel, 1/sqrt(var + eps)
};

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, BatchNormState<T>& state, Mode mode,
                            BatchNormCache<T>* cache = nullptr);

template <typename T>
struct BatchNormGrads {
    Tensor<T> input;
    Tensor<T> gamma;
    Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormState<T>& state,
                                     const BatchNormCache<T>& cache);

// ---------------------------------------------------------------------------
// Linear: out = input[N,D] * weight[D,M] + bias[M].
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct LinearGrads {
    Tensor<T> input;
    Tensor<T> weight;
    Tensor<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                               const Tensor<T>& weight);

// ---------------------------------------------------------------------------
// Average pooling with a P x P window and stride P; backward spreads each
// upstream gradient uniformly (1/P^2) over its window.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> avgpool_forward(const Tensor<T>& input, int64_t pool);

template <typename T>
Tensor<T> avgpool_backward(const Tensor<T>& grad_out, int64_t pool);

// ---------------------------------------------------------------------------
// Activations. relu's subgradient at exactly 0 is taken as 0.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);

// Takes the forward *output* s; grad = grad_out * s * (1 - s).
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& grad_out, const Tensor<T>& output);

// ---------------------------------------------------------------------------
// Inverted dropout: each element is zeroed with probability p at train time,
// survivors scaled by 1/(1-p); eval mode is the identity. p == 0 is an exact
// no-op that draws nothing from the stream. The mask (1 = kept) is returned
// so the backward pass — and finite-difference tests — can replay it.
// ---------------------------------------------------------------------------

template <typename T>
struct DropoutResult {
    Tensor<T> output;
    std::vector<uint8_t> mask;  // empty when the op was an identity
};

template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double p, RngStream* rng, Mode mode);

template <typename T>
Tensor<T> dropout_apply_mask(const Tensor<T>& input, const std::vector<uint8_t>& mask, double p);

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const std::vector<uint8_t>& mask, double p);

// ---------------------------------------------------------------------------
// Mean softmax cross-entropy with max-subtraction; gradient w.r.t. logits is
// (softmax - onehot) / N.
// ---------------------------------------------------------------------------

template <typename T>
struct LossResult {
    double loss;
    Tensor<T> grad_logits;
};

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Squeeze-and-excitation: per-channel gate from a two-layer bottleneck.
//   squeeze z = global average over H x W
//   gate    s = sigmoid(fc2(relu(fc1(z))))
//   output    = input scaled per channel by s
// fc1 weight is [C, C/r], fc2 weight is [C/r, C] (linear layout).
// ---------------------------------------------------------------------------

template <typename T>
struct SECache {
    Tensor<T> squeeze;  // [N, C]
    Tensor<T> hidden;   // [N, C/r], after relu
    Tensor<T> excite;   // [N, C], after sigmoid
};

template <typename T>
Tensor<T> se_forward(const Tensor<T>& input, const Tensor<T>& fc1_w, const Tensor<T>& fc1_b,
                     const Tensor<T>& fc2_w, const Tensor<T>& fc2_b, SECache<T>* cache = nullptr);

template <typename T>
struct SEGrads {
    Tensor<T> input;
    Tensor<T> fc1_w;
    Tensor<T> fc1_b;
    Tensor<T> fc2_w;
    Tensor<T> fc2_b;
};

template <typename T>
SEGrads<T> se_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const Tensor<T>& fc1_w,
                       const Tensor<T>& fc2_w, const SECache<T>& cache);

}  // namespace bnet::ops
