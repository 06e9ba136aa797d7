#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "budgetnet/config.hpp"

namespace testutil {

// CIFAR-10 binary batches; override with BNET_DATA_DIR.
inline std::string data_dir() {
    if (const char* e = std::getenv("BNET_DATA_DIR")) return e;
    return "/root/data/cifar-10-batches-bin";
}

inline bool have_data() { return std::filesystem::exists(data_dir() + "/test_batch.bin"); }

// A fresh scratch directory under the test working directory.
inline std::string scratch_dir(const std::string& name) {
    const std::string dir = "scratch_" + name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Small 2-stage network that trains in seconds; the full recipe otherwise.
inline bnet::TrainConfig tiny_config() {
    bnet::TrainConfig c = bnet::TrainConfig::from_string(R"(
residual_layers = 2
residual_blocks = [1, 1]
channels = [8, 16]
conv_kernel_sizes = [3, 3]
shortcut_kernel_sizes = [1, 1]
squeeze_and_excitation = true
se_ratio = 4
optimizer = sgd
learning_rate = 0.1
momentum = 0.9
weight_decay = 0.0005
lr_scheduler = cosine
t_max = 2
gradient_clip = 0.1
epochs = 2
batch_size = 64
data_augmentation = true
data_normalization = true
number_of_workers = 0
init = he
seed = 42
)",
                                                         "tiny");
    c.data_dir = data_dir();
    return c;
}

}  // namespace testutil
