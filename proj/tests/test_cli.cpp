// Drives the installed CLI end to end: count-params, grad-check, a short
// train run, resume, and eval. The binary path arrives via BNET_CLI (set by
// the test harness); the suite skips if it is absent.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "helpers.hpp"

namespace {

struct CliResult {
    int exit_code;
    std::string output;
};

CliResult run(const std::string& args) {
    const char* cli = std::getenv("BNET_CLI");
    REQUIRE(cli != nullptr);
    const std::string cmd = std::string(cli) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) out += buf;
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

bool ready() { return std::getenv("BNET_CLI") != nullptr && testutil::have_data(); }

std::string repo_root() {
    const char* r = std::getenv("BNET_REPO");
    return r ? r : ".";
}

}  // namespace

TEST_CASE("count-params reports the count and budget verdict") {
    if (!std::getenv("BNET_CLI")) {
        MESSAGE("BNET_CLI not set; skipping");
        return;
    }
    const auto ours = run("count-params --config " + repo_root() + "/configs/our_model.conf");
    CHECK(ours.exit_code == 0);
    CHECK(ours.output.find("parameters: 4733610") != std::string::npos);
    CHECK(ours.output.find("4697742") != std::string::npos);

    const auto r18 = run("count-params --config " + repo_root() + "/configs/resnet18.conf");
    CHECK(r18.exit_code == 1);  // over budget
    CHECK(r18.output.find("parameters: 11173962") != std::string::npos);
}

TEST_CASE("grad-check single op passes and unknown op fails cleanly") {
    if (!std::getenv("BNET_CLI")) {
        MESSAGE("BNET_CLI not set; skipping");
        return;
    }
    const auto ok = run("grad-check --op relu --cases 2 --seed 5");
    CHECK(ok.exit_code == 0);
    CHECK(ok.output.find("PASS") != std::string::npos);

    const auto bad = run("grad-check --op not_an_op");
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("error:") != std::string::npos);
}

TEST_CASE("bad usage exits nonzero with a message") {
    if (!std::getenv("BNET_CLI")) {
        MESSAGE("BNET_CLI not set; skipping");
        return;
    }
    CHECK(run("train").exit_code != 0);                         // missing --config
    CHECK(run("count-params --config /nope.conf").exit_code != 0);
    CHECK(run("frobnicate").exit_code != 0);                    // unknown subcommand
}

TEST_CASE("train, resume, and eval round-trip through the CLI") {
    if (!ready()) {
        MESSAGE("BNET_CLI or dataset missing; skipping");
        return;
    }
    namespace fs = std::filesystem;
    const std::string dir = testutil::scratch_dir("cli_train");
    const std::string conf = dir + "/tiny.conf";
    {
        std::ofstream f(conf);
        f << "residual_layers = 2\nresidual_blocks = [1, 1]\nchannels = [8, 16]\n"
          << "conv_kernel_sizes = [3, 3]\nshortcut_kernel_sizes = [1, 1]\n"
          << "optimizer = sgd\nlearning_rate = 0.05\nmomentum = 0.9\n"
          << "lr_scheduler = cosine\nt_max = 2\nepochs = 2\nbatch_size = 64\n"
          << "number_of_workers = 0\nseed = 11\n";
    }
    const std::string data = testutil::data_dir();

    const auto t = run("train --config " + conf + " --data-dir " + data + " --subset 256 " +
                       "--output-dir " + dir + "/run");
    INFO(t.output);
    CHECK(t.exit_code == 0);
    CHECK(fs::exists(dir + "/run/metrics.csv"));
    CHECK(fs::exists(dir + "/run/last.ckpt"));
    CHECK(fs::exists(dir + "/run/best.ckpt"));

    // Resuming the finished run must refuse.
    const auto again = run("train --config " + conf + " --data-dir " + data + " --subset 256 " +
                           "--resume " + dir + "/run/last.ckpt --output-dir " + dir + "/run2");
    CHECK(again.exit_code == 2);
    CHECK(again.output.find("error:") != std::string::npos);

    // One more epoch via --epochs override, resumed from the checkpoint.
    const auto more = run("train --config " + conf + " --data-dir " + data + " --subset 256 " +
                          "--epochs 3 --resume " + dir + "/run/last.ckpt --output-dir " + dir +
                          "/run3");
    INFO(more.output);
    CHECK(more.exit_code == 0);
    std::ifstream m3(dir + "/run3/metrics.csv");
    std::string line, last;
    while (std::getline(m3, line))
        if (!line.empty()) last = line;
    CHECK(last.substr(0, 2) == "3,");

    const auto ev = run("eval --checkpoint " + dir + "/run/best.ckpt --data-dir " + data +
                        " --subset 512");
    INFO(ev.output);
    CHECK(ev.exit_code == 0);
    CHECK(ev.output.find("test_acc") != std::string::npos);
}
