#include "budgetnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace bnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'B', 'N', 'E', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw FormatError("checkpoint: truncated while reading " + what);
    return v;
}

std::string get_bytes(std::istream& in, size_t n, const std::string& what) {
    std::string s(n, '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(n)))
        throw FormatError("checkpoint: truncated while reading " + what);
    return s;
}

}  // namespace

const TensorF* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void checkpoint_save(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path);

    out.write(kMagic, 4);
    put<uint32_t>(out, Checkpoint::kVersion);
    const std::string cfg = ckpt.config.to_string();
    put<uint64_t>(out, cfg.size());
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    put<int64_t>(out, ckpt.epoch);
    put<uint64_t>(out, ckpt.global_step);
    put<uint64_t>(out, ckpt.data_rng_seed);
    put<uint64_t>(out, ckpt.data_rng_draws);
    put<uint64_t>(out, ckpt.model_rng_seed);
    put<uint64_t>(out, ckpt.model_rng_draws);
    put<int64_t>(out, ckpt.opt_step_count);
    put<int64_t>(out, ckpt.lookahead_counter);
    put<double>(out, ckpt.best_acc);
    put<int64_t>(out, ckpt.best_epoch);

    put<uint64_t>(out, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        put<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<uint32_t>(out, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.shape) put<int64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

Checkpoint checkpoint_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);

    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic bytes (not a checkpoint file): " + path);
    const uint32_t version = get<uint32_t>(in, "version");
    if (version != Checkpoint::kVersion)
        throw FormatError("checkpoint: unsupported format version " + std::to_string(version));

    Checkpoint ckpt;
    const uint64_t cfg_len = get<uint64_t>(in, "config length");
    if (cfg_len > (64u << 20)) throw FormatError("checkpoint: implausible config size");
    const std::string cfg_text = get_bytes(in, cfg_len, "config text");
    ckpt.config = TrainConfig::from_string(cfg_text, path + " (embedded config)");

    ckpt.epoch = get<int64_t>(in, "epoch");
    ckpt.global_step = get<uint64_t>(in, "global step");
    ckpt.data_rng_seed = get<uint64_t>(in, "data rng seed");
    ckpt.data_rng_draws = get<uint64_t>(in, "data rng draws");
    ckpt.model_rng_seed = get<uint64_t>(in, "model rng seed");
    ckpt.model_rng_draws = get<uint64_t>(in, "model rng draws");
    ckpt.opt_step_count = get<int64_t>(in, "optimizer step count");
    ckpt.lookahead_counter = get<int64_t>(in, "lookahead counter");
    ckpt.best_acc = get<double>(in, "best accuracy");
    ckpt.best_epoch = get<int64_t>(in, "best epoch");

    const uint64_t count = get<uint64_t>(in, "tensor count");
    if (count > (1u << 24)) throw FormatError("checkpoint: implausible tensor count");
    ckpt.tensors.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        const uint32_t name_len = get<uint32_t>(in, "tensor name length");
        if (name_len == 0 || name_len > 4096) throw FormatError("checkpoint: bad tensor name length");
        std::string name = get_bytes(in, name_len, "tensor name");
        const uint32_t rank = get<uint32_t>(in, "tensor rank");
        if (rank == 0 || rank > 8) throw FormatError("checkpoint: bad tensor rank for " + name);
        std::vector<int64_t> dims(rank);
        int64_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            dims[d] = get<int64_t>(in, "tensor dims");
            if (dims[d] < 1 || dims[d] > (1ll << 32))
                throw FormatError("checkpoint: bad dimension in " + name);
            numel *= dims[d];
        }
        if (numel > (1ll << 31)) throw FormatError("checkpoint: implausible tensor size in " + name);
        TensorF t(dims);
        if (!in.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(float))))
            throw FormatError("checkpoint: truncated while reading payload of " + name);
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

}  // namespace bnet
