#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "budgetnet/rng.hpp"
#include "budgetnet/tensor.hpp"

namespace bnet {

// CIFAR-10 records: 32x32 RGB, channel-planar, 3072 bytes per image.
inline constexpr int64_t kImageBytes = 3 * 32 * 32;
inline constexpr int64_t kRecordBytes = 1 + kImageBytes;

struct Dataset {
    std::vector<uint8_t> pixels;  // count * 3072
    std::vector<uint8_t> labels;  // count

    int64_t count() const { return static_cast<int64_t>(labels.size()); }
    const uint8_t* image(int64_t i) const { return pixels.data() + i * kImageBytes; }

    // First n records (for subset runs); n >= count returns everything.
    Dataset subset(int64_t n) const;
};

struct NormStats {
    std::array<double, 3> mean{};
    std::array<double, 3> std{};
};

// One .bin file of 3073-byte records: label byte, then R/G/B planes.
Dataset load_cifar_file(const std::string& path);

// Standard layout: data_batch_1..5.bin (train) + test_batch.bin (test).
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

// Inverse of load_cifar_file; round-trips byte-identically.
void write_cifar_file(const std::string& path, const Dataset& dataset);

// Per-channel population mean/std of the 0-1 scaled pixels.
NormStats channel_stats(const Dataset& train);

// Pad 4 with zeros, random 32x32 crop, horizontal flip with p = 0.5.
// Draw order: crop dy, crop dx, flip coin. src and dst are 3072 bytes and
// must not alias.
void augment(const uint8_t* src, uint8_t* dst, RngStream& rng);

struct Batch {
    TensorF images;           // [B, 3, 32, 32], normalized floats
    std::vector<int> labels;  // B
};

// One epoch's worth of batches over a dataset. Shuffling (Fisher-Yates)
// happens at construction; augmentation draws happen per image in batch
// order. workers > 0 prefetches on one background thread — the rng draw
// sequence, and therefore every batch, is identical to workers == 0.
class BatchStream {
  public:
    BatchStream(const Dataset& dataset, int64_t batch_size, bool shuffle, bool augment_images,
                const NormStats& stats, RngStream* rng, int64_t workers = 0);
    ~BatchStream();

    BatchStream(const BatchStream&) = delete;
    BatchStream& operator=(const BatchStream&) = delete;

    // False once the epoch is exhausted. The final partial batch is emitted.
    bool next(Batch* out);

    int64_t num_batches() const { return num_batches_; }

  private:
    Batch make_batch(int64_t index);
    void producer_main();

    const Dataset& dataset_;
    int64_t batch_size_;
    bool augment_;
    NormStats stats_;
    std::array<float, 3> mean_f_{};
    std::array<float, 3> inv_std_f_{};
    RngStream* rng_;
    std::vector<int64_t> order_;
    int64_t num_batches_ = 0;
    int64_t next_batch_ = 0;

    // Prefetch state (workers > 0).
    std::thread producer_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Batch> queue_;
    int64_t produced_ = 0;
    bool stop_ = false;
    static constexpr size_t kQueueDepth = 2;
};

}  // namespace bnet
