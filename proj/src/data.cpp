#include "budgetnet/data.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "budgetnet/errors.hpp"

namespace bnet {

Dataset Dataset::subset(int64_t n) const {
    if (n >= count()) return *this;
    if (n < 1) throw UsageError("dataset subset must keep at least 1 record");
    Dataset out;
    out.labels.assign(labels.begin(), labels.begin() + n);
    out.pixels.assign(pixels.begin(), pixels.begin() + n * kImageBytes);
    return out;
}

Dataset load_cifar_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open dataset file: " + path);
    f.seekg(0, std::ios::end);
    const int64_t size = static_cast<int64_t>(f.tellg());
    f.seekg(0);
    if (size == 0) throw FormatError(path + ": empty file");
    if (size % kRecordBytes != 0)
        throw FormatError(path + ": size " + std::to_string(size) +
                          " is not a multiple of the " + std::to_string(kRecordBytes) +
                          "-byte record");
    const int64_t n = size / kRecordBytes;
    std::vector<uint8_t> raw(static_cast<size_t>(size));
    if (!f.read(reinterpret_cast<char*>(raw.data()), size))
        throw FormatError(path + ": short read");

    Dataset ds;
    ds.labels.resize(static_cast<size_t>(n));
    ds.pixels.resize(static_cast<size_t>(n * kImageBytes));
    for (int64_t i = 0; i < n; ++i) {
        const uint8_t label = raw[static_cast<size_t>(i * kRecordBytes)];
        if (label > 9)
            throw FormatError(path + ": record " + std::to_string(i) + " has label " +
                              std::to_string(label) + " (valid labels are 0-9)");
        ds.labels[static_cast<size_t>(i)] = label;
        std::memcpy(ds.pixels.data() + i * kImageBytes, raw.data() + i * kRecordBytes + 1,
                    static_cast<size_t>(kImageBytes));
    }
    return ds;
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset train;
    for (int b = 1; b <= 5; ++b) {
        const std::string path = (fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin")).string();
        Dataset part = load_cifar_file(path);
        train.labels.insert(train.labels.end(), part.labels.begin(), part.labels.end());
        train.pixels.insert(train.pixels.end(), part.pixels.begin(), part.pixels.end());
    }
    Dataset test = load_cifar_file((fs::path(dir) / "test_batch.bin").string());
    return {std::move(train), std::move(test)};
}

void write_cifar_file(const std::string& path, const Dataset& dataset) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write dataset file: " + path);
    for (int64_t i = 0; i < dataset.count(); ++i) {
        const char label = static_cast<char>(dataset.labels[static_cast<size_t>(i)]);
        f.write(&label, 1);
        f.write(reinterpret_cast<const char*>(dataset.image(i)), kImageBytes);
    }
    if (!f) throw DataError("write failed: " + path);
}

NormStats channel_stats(const Dataset& train) {
    if (train.count() < 1) throw DataError("channel_stats: empty dataset");
    NormStats s;
    const int64_t plane = 32 * 32;
    const int64_t per_channel = train.count() * plane;
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0, sumsq = 0.0;
        for (int64_t i = 0; i < train.count(); ++i) {
            const uint8_t* p = train.image(i) + c * plane;
            for (int64_t j = 0; j < plane; ++j) {
                const double v = static_cast<double>(p[j]) / 255.0;
                sum += v;
                sumsq += v * v;
            }
        }
        const double mean = sum / static_cast<double>(per_channel);
        double var = sumsq / static_cast<double>(per_channel) - mean * mean;
        if (var < 0.0) var = 0.0;
        if (var == 0.0)
            throw DataError("channel_stats: channel " + std::to_string(c) +
                            " has zero variance (degenerate data)");
        s.mean[static_cast<size_t>(c)] = mean;
        s.std[static_cast<size_t>(c)] = std::sqrt(var);
    }
    return s;
}

void augment(const uint8_t* src, uint8_t* dst, RngStream& rng) {
    const int64_t dy = rng.uniform_int(9);
    const int64_t dx = rng.uniform_int(9);
    const bool flip = rng.uniform() < 0.5;
    // Crop origin (dy,dx) in the 4-padded 40x40 frame: output pixel (y,x)
    // reads padded (dy+y, dx+x), i.e. source (dy+y-4, dx+x-4) or zero.
    for (int c = 0; c < 3; ++c) {
        const uint8_t* sp = src + c * 1024;
        uint8_t* dp = dst + c * 1024;
        for (int64_t y = 0; y < 32; ++y) {
            const int64_t sy = dy + y - 4;
            if (sy < 0 || sy >= 32) {
                std::memset(dp + y * 32, 0, 32);
                continue;
            }
            for (int64_t x = 0; x < 32; ++x) {
                const int64_t sx = dx + x - 4;
                dp[y * 32 + x] = (sx >= 0 && sx < 32) ? sp[sy * 32 + sx] : 0;
            }
        }
        if (flip) {
            for (int64_t y = 0; y < 32; ++y) {
                uint8_t* row = dp + y * 32;
                for (int64_t x = 0; x < 16; ++x) std::swap(row[x], row[31 - x]);
            }
        }
    }
}

BatchStream::BatchStream(const Dataset& dataset, int64_t batch_size, bool shuffle,
                         bool augment_images, const NormStats& stats, RngStream* rng,
                         int64_t workers)
    : dataset_(dataset), batch_size_(batch_size), augment_(augment_images), stats_(stats),
      rng_(rng) {
    if (dataset.count() == 0) throw UsageError("batches: empty dataset");
    if (batch_size < 1) throw UsageError("batches: batch_size must be >= 1");
    if ((shuffle || augment_) && !rng) throw UsageError("batches: shuffle/augment need an rng");
    for (int c = 0; c < 3; ++c) {
        if (stats_.std[static_cast<size_t>(c)] <= 0.0)
            throw UsageError("batches: normalization std must be positive");
        mean_f_[static_cast<size_t>(c)] = static_cast<float>(stats_.mean[static_cast<size_t>(c)]);
        inv_std_f_[static_cast<size_t>(c)] =
            static_cast<float>(1.0 / stats_.std[static_cast<size_t>(c)]);
    }

    order_.resize(static_cast<size_t>(dataset.count()));
    for (int64_t i = 0; i < dataset.count(); ++i) order_[static_cast<size_t>(i)] = i;
    if (shuffle) {
        for (int64_t i = dataset.count() - 1; i > 0; --i) {
            const int64_t j = rng->uniform_int(static_cast<uint32_t>(i + 1));
            std::swap(order_[static_cast<size_t>(i)], order_[static_cast<size_t>(j)]);
        }
    }
    num_batches_ = (dataset.count() + batch_size - 1) / batch_size;

    if (workers > 0) producer_ = std::thread(&BatchStream::producer_main, this);
}

BatchStream::~BatchStream() {
    if (producer_.joinable()) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        producer_.join();
    }
}

Batch BatchStream::make_batch(int64_t index) {
    const int64_t begin = index * batch_size_;
    const int64_t n = std::min(batch_size_, dataset_.count() - begin);
    Batch b;
    b.images = TensorF({n, 3, 32, 32});
    b.labels.resize(static_cast<size_t>(n));
    uint8_t scratch[kImageBytes];
    for (int64_t k = 0; k < n; ++k) {
        const int64_t rec = order_[static_cast<size_t>(begin + k)];
        const uint8_t* img = dataset_.image(rec);
        if (augment_) {
            augment(img, scratch, *rng_);
            img = scratch;
        }
        float* out = b.images.ptr() + k * kImageBytes;
        for (int c = 0; c < 3; ++c) {
            const float mean = mean_f_[static_cast<size_t>(c)];
            const float inv = inv_std_f_[static_cast<size_t>(c)];
            const uint8_t* plane = img + c * 1024;
            float* dst = out + c * 1024;
            for (int64_t j = 0; j < 1024; ++j)
                dst[j] = (static_cast<float>(plane[j]) * (1.0f / 255.0f) - mean) * inv;
        }
        b.labels[static_cast<size_t>(k)] = dataset_.labels[static_cast<size_t>(rec)];
    }
    return b;
}

void BatchStream::producer_main() {
    for (int64_t i = 0; i < num_batches_; ++i) {
        Batch b = make_batch(i);
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [this] { return stop_ || queue_.size() < kQueueDepth; });
        if (stop_) return;
        queue_.push_back(std::move(b));
        ++produced_;
        cv_.notify_all();
    }
}

bool BatchStream::next(Batch* out) {
    if (next_batch_ >= num_batches_) return false;
    if (producer_.joinable()) {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [this] { return !queue_.empty(); });
        *out = std::move(queue_.front());
        queue_.pop_front();
        cv_.notify_all();
    } else {
        *out = make_batch(next_batch_);
    }
    ++next_batch_;
    return true;
}

}  // namespace bnet
