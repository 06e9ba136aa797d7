#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "budgetnet/ops.hpp"
#include "budgetnet/rng.hpp"
#include "budgetnet/tensor.hpp"

namespace bnet {

// Architecture hyperparameters. All per-layer lists have length n_layers.
struct ResNetConfig {
    int64_t n_layers = 3;
    std::vector<int64_t> blocks;        // B[i], residual blocks per layer
    std::vector<int64_t> channels;      // C[i]
    std::vector<int64_t> conv_kernels;  // F[i], odd
    std::vector<int64_t> skip_kernels;  // K[i], odd
    int64_t pool_kernel = 0;            // P; 0 = derive as 32 / 2^(n_layers-1)
    bool se_enabled = false;
    int64_t se_ratio = 16;
    double dropout_p = 0.0;
    int64_t num_classes = 10;

    // Throws ConfigError naming the offending field. Fills pool_kernel when 0.
    void validate();
};

// P = 32 / 2^(n_layers - 1) for 32x32 inputs.
int64_t avgpool_kernel(int64_t n_layers);

// Closed-form trainable-parameter count; equals enumerating the built model.
int64_t count_params(const ResNetConfig& config);

enum class ParamKind { kConvWeight, kLinearWeight, kBias, kBnGamma, kBnBeta, kBnRunning };

struct ParamRef {
    std::string name;
    ParamKind kind;
    TensorF* tensor;
};

// --- layer wrappers (float training graph; they own forward caches) --------

struct Conv2d {
    TensorF weight;  // [Cout, Cin, F, F]
    int64_t stride = 1;
    int64_t padding = 0;
    TensorF cached_input;

    TensorF forward(const TensorF& x, bool keep);
    TensorF backward(const TensorF& grad_out);  // accumulates weight.grad
};

struct BatchNorm2d {
    ops::BatchNormState<float> state;
    ops::BatchNormCache<float> cache;

    TensorF forward(const TensorF& x, ops::Mode mode, bool keep);
    TensorF backward(const TensorF& grad_out);  // accumulates gamma/beta grads
};

struct Linear {
    TensorF weight;  // [D, M]
    TensorF bias;    // [M]
    TensorF cached_input;

    TensorF forward(const TensorF& x, bool keep);
    TensorF backward(const TensorF& grad_out);
};

struct SEBlock {
    TensorF fc1_w, fc1_b;  // [C, C/r], [C/r]
    TensorF fc2_w, fc2_b;  // [C/r, C], [C]
    // Diagnostic bypass: treat the gate as exactly 1 in both directions, which
    // reduces the block to an identity wire (fc gradients stay zero).
    bool force_unit_gate = false;
    ops::SECache<float> cache;
    TensorF cached_input;

    TensorF forward(const TensorF& x, bool keep);
    TensorF backward(const TensorF& grad_out);
};

struct BasicBlock {
    Conv2d conv1;
    BatchNorm2d bn1;
    Conv2d conv2;
    BatchNorm2d bn2;
    std::optional<SEBlock> se;
    double dropout_p = 0.0;
    std::optional<Conv2d> shortcut_conv;
    std::optional<BatchNorm2d> shortcut_bn;

    // conv2.cached_input doubles as the first relu's output (its backward
    // mask); only the final activation needs a cache of its own.
    std::vector<uint8_t> dropout_mask;
    TensorF cached_out;  // post-residual relu output, mask for its backward

    TensorF forward(const TensorF& x, ops::Mode mode, RngStream* rng, bool keep);
    TensorF backward(const TensorF& grad_out);
};

// --- the network ------------------------------------------------------------

struct Model {
    ResNetConfig config;
    Conv2d stem_conv;
    BatchNorm2d stem_bn;
    std::vector<std::vector<BasicBlock>> layers;
    Linear classifier;

    // Forward in the given mode; rng is consulted only by dropout (train mode,
    // p > 0). Train mode retains the caches backward() consumes.
    TensorF forward(const TensorF& x, ops::Mode mode, RngStream* rng = nullptr);

    // Accumulates parameter gradients from a cached train-mode forward.
    void backward(const TensorF& grad_logits);

    // Trainable parameters in the fixed documented order: stem, layers in
    // index order, blocks in index order (conv1, bn1, conv2, bn2, [se fc1,
    // se fc2], [shortcut conv, shortcut bn]), classifier. BN emits gamma then
    // beta; fc layers emit weight then bias.
    std::vector<ParamRef> parameters();

    // parameters() plus BN running statistics (for checkpoints).
    std::vector<ParamRef> state_tensors();

    int64_t total_params();
    void zero_grad();

    // Flip the diagnostic SE bypass on every block.
    void set_force_unit_gate(bool on);
};

// Construct the network (uninitialized weights; use init::initialize or
// build() from init.hpp which seeds them).
Model construct(ResNetConfig config);

}  // namespace bnet
