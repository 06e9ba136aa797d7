#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "budgetnet/data.hpp"
#include "budgetnet/errors.hpp"
#include "budgetnet/rng.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace bnet;

namespace {

// Two hand-authored records with recognizable bytes.
std::vector<uint8_t> fixture_bytes() {
    std::vector<uint8_t> bytes;
    bytes.reserve(2 * kRecordBytes);
    bytes.push_back(3);  // label
    for (int64_t i = 0; i < kImageBytes; ++i) bytes.push_back(uint8_t((i * 7 + 1) & 0xff));
    bytes.push_back(7);
    for (int64_t i = 0; i < kImageBytes; ++i) bytes.push_back(uint8_t((i * 13 + 5) & 0xff));
    return bytes;
}

std::string write_fixture(const std::string& dir) {
    const std::string path = dir + "/fixture.bin";
    std::ofstream f(path, std::ios::binary);
    const auto bytes = fixture_bytes();
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    return path;
}

// The padded-crop-flip transform, written out longhand as the reference.
void reference_augment(const uint8_t* src, uint8_t* dst, int64_t dy, int64_t dx, bool flip) {
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < 32; ++y)
            for (int64_t x = 0; x < 32; ++x) {
                const int64_t sy = y + dy - 4;  // position in the unpadded source
                const int64_t sx = x + dx - 4;
                uint8_t v = 0;
                if (sy >= 0 && sy < 32 && sx >= 0 && sx < 32)
                    v = src[c * 1024 + sy * 32 + sx];
                const int64_t ox = flip ? 31 - x : x;
                dst[c * 1024 + y * 32 + ox] = v;
            }
}

}  // namespace

TEST_CASE("fixture file parses byte-exactly and round-trips") {
    const std::string dir = testutil::scratch_dir("data_fixture");
    const std::string path = write_fixture(dir);

    const Dataset d = load_cifar_file(path);
    REQUIRE(d.count() == 2);
    CHECK(d.labels[0] == 3);
    CHECK(d.labels[1] == 7);
    for (int64_t i = 0; i < kImageBytes; ++i) {
        CHECK(d.image(0)[i] == uint8_t((i * 7 + 1) & 0xff));
        CHECK(d.image(1)[i] == uint8_t((i * 13 + 5) & 0xff));
    }

    const std::string out = dir + "/roundtrip.bin";
    write_cifar_file(out, d);
    std::ifstream a(path, std::ios::binary), b(out, std::ios::binary);
    const std::vector<uint8_t> ba((std::istreambuf_iterator<char>(a)), {});
    const std::vector<uint8_t> bb((std::istreambuf_iterator<char>(b)), {});
    CHECK(ba == bb);
}

TEST_CASE("malformed files are rejected") {
    const std::string dir = testutil::scratch_dir("data_bad");
    const std::string path = dir + "/bad.bin";
    {
        std::ofstream f(path, std::ios::binary);
        const auto bytes = fixture_bytes();
        f.write(reinterpret_cast<const char*>(bytes.data()), kRecordBytes + 100);  // torn record
    }
    CHECK_THROWS_AS(load_cifar_file(path), FormatError);
    CHECK_THROWS_AS(load_cifar_file(dir + "/missing.bin"), DataError);
    {
        std::ofstream f(path, std::ios::binary);  // empty file
    }
    CHECK_THROWS_AS(load_cifar_file(path), FormatError);
}

TEST_CASE("two-value dataset has mean and std exactly 1/255") {
    Dataset d;
    d.labels = {0, 1};
    d.pixels.assign(size_t(2 * kImageBytes), 0);
    for (int64_t i = 0; i < kImageBytes; ++i) d.pixels[size_t(kImageBytes + i)] = 2;
    const NormStats s = channel_stats(d);
    for (int c = 0; c < 3; ++c) {
        CHECK(s.mean[size_t(c)] == doctest::Approx(1.0 / 255.0).epsilon(1e-14));
        CHECK(s.std[size_t(c)] == doctest::Approx(1.0 / 255.0).epsilon(1e-14));
    }
}

TEST_CASE("channel stats match a direct double-precision pass") {
    if (!testutil::have_data()) {
        MESSAGE("CIFAR-10 not present; skipping");
        return;
    }
    const Dataset d = load_cifar_file(testutil::data_dir() + "/test_batch.bin");
    const Dataset sub = d.subset(512);
    const NormStats s = channel_stats(sub);
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0, sq = 0.0;
        const int64_t m = sub.count() * 1024;
        for (int64_t i = 0; i < sub.count(); ++i)
            for (int64_t j = 0; j < 1024; ++j) {
                const double v = double(sub.image(i)[c * 1024 + j]) / 255.0;
                sum += v;
                sq += v * v;
            }
        const double mean = sum / double(m);
        const double var = sq / double(m) - mean * mean;
        CHECK(s.mean[size_t(c)] == doctest::Approx(mean).epsilon(1e-12));
        CHECK(s.std[size_t(c)] == doctest::Approx(std::sqrt(var)).epsilon(1e-10));
        CHECK(s.mean[size_t(c)] > 0.3);  // natural images, sane range
        CHECK(s.mean[size_t(c)] < 0.7);
    }
}

TEST_CASE("augment draws dy, dx, flip in that order and matches the reference") {
    RngStream rng(60);
    std::vector<uint8_t> src(size_t(kImageBytes), uint8_t(0));
    RngStream fill(61);
    for (auto& v : src) v = uint8_t(fill.uniform_int(256));

    for (int rep = 0; rep < 200; ++rep) {
        RngStream probe = rng;  // copy: replay the exact draws
        const int64_t dy = int64_t(probe.uniform_int(9));
        const int64_t dx = int64_t(probe.uniform_int(9));
        const bool flip = probe.uniform() < 0.5;

        std::vector<uint8_t> got(size_t(kImageBytes), uint8_t(0)), want(size_t(kImageBytes), uint8_t(0));
        augment(src.data(), got.data(), rng);
        CHECK(rng.draws() == probe.draws());
        reference_augment(src.data(), want.data(), dy, dx, flip);
        REQUIRE(got == want);
    }
}

TEST_CASE("flip frequency is 0.5 within 0.015 over 10000 draws") {
    RngStream rng(62);
    // A horizontal gradient makes flips detectable in any crop window.
    std::vector<uint8_t> src(size_t(kImageBytes), uint8_t(0));
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < 32; ++y)
            for (int64_t x = 0; x < 32; ++x) src[size_t(c * 1024 + y * 32 + x)] = uint8_t(40 + x * 6);

    int flips = 0;
    std::vector<uint8_t> dst(size_t(kImageBytes), uint8_t(0)), plain(size_t(kImageBytes), uint8_t(0)),
        flipped(size_t(kImageBytes), uint8_t(0));
    for (int i = 0; i < 10000; ++i) {
        RngStream probe = rng;
        const int64_t dy = int64_t(probe.uniform_int(9));
        const int64_t dx = int64_t(probe.uniform_int(9));
        augment(src.data(), dst.data(), rng);
        reference_augment(src.data(), plain.data(), dy, dx, false);
        reference_augment(src.data(), flipped.data(), dy, dx, true);
        if (dst == flipped && dst != plain)
            ++flips;
        else
            REQUIRE(dst == plain);
    }
    CHECK(std::abs(double(flips) / 10000.0 - 0.5) < 0.015);
}

TEST_CASE("subset takes the first n records") {
    Dataset d;
    d.labels = {1, 2, 3};
    d.pixels.assign(size_t(3 * kImageBytes), 0);
    d.pixels[0] = 11;
    d.pixels[size_t(kImageBytes)] = 22;
    const Dataset s = d.subset(2);
    CHECK(s.count() == 2);
    CHECK(s.labels == std::vector<uint8_t>{1, 2});
    CHECK(s.image(1)[0] == 22);
    CHECK(d.subset(99).count() == 3);
}

TEST_CASE("batch partition covers the dataset with one final partial batch") {
    Dataset d;
    d.labels.assign(10000, 0);
    for (size_t i = 0; i < d.labels.size(); ++i) d.labels[i] = uint8_t(i % 10);
    d.pixels.assign(size_t(10000 * kImageBytes), 0);

    NormStats identity;
    identity.mean = {0, 0, 0};
    identity.std = {1, 1, 1};
    BatchStream stream(d, 128, false, false, identity, nullptr, 0);
    CHECK(stream.num_batches() == 79);
    Batch b;
    int64_t batches = 0, records = 0;
    int64_t last = -1;
    while (stream.next(&b)) {
        ++batches;
        records += b.images.dim(0);
        last = b.images.dim(0);
        CHECK(b.labels.size() == size_t(b.images.dim(0)));
    }
    CHECK(batches == 79);
    CHECK(records == 10000);
    CHECK(last == 16);
}

TEST_CASE("unshuffled unaugmented batches preserve order and scale by 1/255") {
    Dataset d;
    d.labels = {4, 9};
    d.pixels.assign(size_t(2 * kImageBytes), 0);
    d.pixels[0] = 255;
    d.pixels[size_t(kImageBytes) + 5] = 51;

    NormStats identity;
    identity.mean = {0, 0, 0};
    identity.std = {1, 1, 1};
    BatchStream stream(d, 2, false, false, identity, nullptr, 0);
    Batch b;
    REQUIRE(stream.next(&b));
    CHECK(b.labels == std::vector<int>{4, 9});
    CHECK(b.images.at(0) == 1.0f);
    CHECK(b.images.at(3077) == doctest::Approx(51.0 / 255.0).epsilon(1e-7));
    CHECK(b.images.at(1) == 0.0f);
    CHECK(!stream.next(&b));
}

TEST_CASE("normalization applies (x - mean) / std per channel") {
    Dataset d;
    d.labels = {0};
    d.pixels.assign(size_t(kImageBytes), 0);
    d.pixels[0] = 255;  // channel 0
    NormStats s;
    s.mean = {0.5, 0.25, 0.1};
    s.std = {2.0, 0.5, 0.2};
    BatchStream stream(d, 1, false, false, s, nullptr, 0);
    Batch b;
    REQUIRE(stream.next(&b));
    CHECK(b.images.at(0) == doctest::Approx((1.0 - 0.5) / 2.0).epsilon(1e-6));
    CHECK(b.images.at(1) == doctest::Approx((0.0 - 0.5) / 2.0).epsilon(1e-6));
    CHECK(b.images.at(1024) == doctest::Approx((0.0 - 0.25) / 0.5).epsilon(1e-6));
    CHECK(b.images.at(2048) == doctest::Approx((0.0 - 0.1) / 0.2).epsilon(1e-6));
}

TEST_CASE("shuffle is a seed-deterministic permutation") {
    Dataset d;
    d.labels.assign(257, 0);
    for (size_t i = 0; i < d.labels.size(); ++i) d.labels[i] = uint8_t(i % 251 % 10);
    d.pixels.assign(size_t(257 * kImageBytes), 0);
    for (int64_t i = 0; i < 257; ++i) d.pixels[size_t(i * kImageBytes)] = uint8_t(i & 0xff);

    NormStats identity;
    identity.mean = {0, 0, 0};
    identity.std = {1, 1, 1};

    const auto run = [&](uint64_t seed) {
        RngStream rng(seed);
        BatchStream stream(d, 64, true, false, identity, &rng, 0);
        std::vector<int> firsts;
        Batch b;
        while (stream.next(&b))
            for (int64_t i = 0; i < b.images.dim(0); ++i)
                firsts.push_back(int(std::lround(double(b.images.at(i * 3072)) * 255.0)));
        return firsts;
    };
    const auto a = run(5), b2 = run(5), c = run(6);
    CHECK(a == b2);
    CHECK(a != c);
    auto sa = a, sc = c;
    std::sort(sa.begin(), sa.end());
    std::sort(sc.begin(), sc.end());
    CHECK(sa == sc);  // same multiset: a permutation
    CHECK(a.size() == 257);
}

TEST_CASE("prefetch workers reproduce the single-threaded stream bitwise") {
    Dataset d;
    d.labels.assign(300, 0);
    d.pixels.assign(size_t(300 * kImageBytes), 0);
    RngStream fill(70);
    for (auto& v : d.pixels) v = uint8_t(fill.uniform_int(256));

    NormStats s;
    s.mean = {0.4, 0.5, 0.6};
    s.std = {0.2, 0.25, 0.3};

    const auto collect = [&](int64_t workers) {
        RngStream rng(71);
        BatchStream stream(d, 64, true, true, s, &rng, workers);
        std::vector<std::vector<float>> out;
        std::vector<std::vector<int>> labels;
        Batch b;
        while (stream.next(&b)) {
            out.push_back(b.images.data);
            labels.push_back(b.labels);
        }
        return std::make_pair(out, labels);
    };
    const auto seq = collect(0);
    const auto par = collect(2);
    REQUIRE(seq.first.size() == par.first.size());
    for (size_t i = 0; i < seq.first.size(); ++i) {
        CHECK(seq.first[i] == par.first[i]);
        CHECK(seq.second[i] == par.second[i]);
    }
}

TEST_CASE("batch stream rejects unusable setups") {
    Dataset empty;
    NormStats identity;
    identity.mean = {0, 0, 0};
    identity.std = {1, 1, 1};
    CHECK_THROWS_AS(BatchStream(empty, 4, false, false, identity, nullptr, 0), UsageError);

    Dataset d;
    d.labels = {0};
    d.pixels.assign(size_t(kImageBytes), 0);
    CHECK_THROWS_AS(BatchStream(d, 0, false, false, identity, nullptr, 0), UsageError);
    CHECK_THROWS_AS(BatchStream(d, 4, true, false, identity, nullptr, 0), UsageError);  // no rng
    CHECK_THROWS_AS(BatchStream(d, 4, false, true, identity, nullptr, 0), UsageError);

    NormStats bad;
    bad.mean = {0, 0, 0};
    bad.std = {1, 0, 1};
    CHECK_THROWS_AS(BatchStream(d, 4, false, false, bad, nullptr, 0), UsageError);
}

TEST_CASE("full cifar-10 loads with expected structure") {
    if (!testutil::have_data()) {
        MESSAGE("CIFAR-10 not present; skipping");
        return;
    }
    const auto [train, test] = load_cifar10(testutil::data_dir());
    CHECK(train.count() == 50000);
    CHECK(test.count() == 10000);
    for (int64_t i = 0; i < 1000; ++i) {
        CHECK(train.labels[size_t(i)] < 10);
        CHECK(test.labels[size_t(i)] < 10);
    }
    // All ten classes appear early on.
    std::vector<int> seen(10, 0);
    for (int64_t i = 0; i < 2000; ++i) ++seen[train.labels[size_t(i)]];
    for (int c = 0; c < 10; ++c) CHECK(seen[size_t(c)] > 0);
}
