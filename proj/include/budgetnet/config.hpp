#pragma once

#include <cstdint>
#include <string>

#include "budgetnet/init.hpp"
#include "budgetnet/model.hpp"
#include "budgetnet/optim.hpp"

namespace bnet {

// Everything a training run needs, read from a flat `key = value` file
// (lists in brackets, '#' comments). Key names mirror the hyperparameter
// table; see configs/ for annotated examples.
struct TrainConfig {
    ResNetConfig model;

    OptimizerConfig opt;
    Schedule schedule;
    bool schedule_t_max_set = false;  // t_max defaults to `epochs` when unset

    double grad_clip = 0.0;  // 0 = off
    bool lookahead = false;
    int64_t lookahead_k = 5;
    double lookahead_alpha = 0.5;

    int64_t epochs = 200;
    int64_t batch_size = 128;
    bool augment = true;
    bool normalize = true;
    int64_t workers = 16;

    InitScheme init;
    uint64_t seed = 42;

    std::string data_dir;
    std::string output_dir = ".";

    // Optional published reference count to print next to ours (0 = unset).
    int64_t reference_params = 0;

    static TrainConfig from_string(const std::string& text, const std::string& origin = "<string>");
    static TrainConfig from_file(const std::string& path);

    // Canonical serialization: every key, fixed order, parseable by
    // from_string. Embedded in checkpoints; equality of these strings is
    // equality of configurations.
    std::string to_string() const;

    // Resolve defaults (pool kernel, t_max) and check invariants.
    void validate();
};

}  // namespace bnet
