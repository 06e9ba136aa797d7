#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "budgetnet/config.hpp"
#include "budgetnet/tensor.hpp"

namespace bnet {

// Binary container, little-endian:
//   magic "BNET" | u32 version | u64 config-text length | config text
//   | scalar block (epoch, global step, rng states, optimizer/lookahead
//   counters, best accuracy/epoch)
//   | u64 tensor count | per tensor: u32 name length, name bytes, u32 rank,
//     i64 dims, f32 payload.
// Tensors appear in a fixed order (model parameters in parameter-list order,
// BN running stats, optimizer buffers, lookahead slow weights, normalization
// stats), so save -> load -> save is byte-identical.
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;

    TrainConfig config;
    int64_t epoch = 0;        // completed epochs
    uint64_t global_step = 0;
    uint64_t data_rng_seed = 0;
    uint64_t data_rng_draws = 0;
    uint64_t model_rng_seed = 0;
    uint64_t model_rng_draws = 0;
    int64_t opt_step_count = 0;
    int64_t lookahead_counter = 0;
    double best_acc = 0.0;
    int64_t best_epoch = 0;

    std::vector<std::pair<std::string, TensorF>> tensors;

    const TensorF* find(const std::string& name) const;
};

void checkpoint_save(const std::string& path, const Checkpoint& ckpt);
Checkpoint checkpoint_load(const std::string& path);

}  // namespace bnet
