#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "budgetnet/checkpoint.hpp"
#include "budgetnet/errors.hpp"
#include "budgetnet/init.hpp"
#include "budgetnet/trainer.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace bnet;

namespace {

// metrics.csv text minus the wall-clock column, which is never deterministic.
std::vector<std::string> rows_without_wall(const std::string& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    std::vector<std::string> rows;
    std::string line;
    while (std::getline(f, line)) {
        const auto cut = line.rfind(',');
        rows.push_back(line.substr(0, cut));
    }
    return rows;
}

}  // namespace

TEST_CASE("derived seeds are stable and distinct") {
    const DerivedSeeds a = derive_seeds(42);
    const DerivedSeeds b = derive_seeds(42);
    CHECK(a.init == b.init);
    CHECK(a.data == b.data);
    CHECK(a.model == b.model);
    CHECK(a.init != a.data);
    CHECK(a.data != a.model);
    const DerivedSeeds c = derive_seeds(43);
    CHECK(a.init != c.init);

    // The three seeds are the master stream's first three outputs, in order.
    RngStream master(42);
    CHECK(a.init == master.next_u64());
    CHECK(a.data == master.next_u64());
    CHECK(a.model == master.next_u64());
}

TEST_CASE("hooks fire in the documented order every step") {
    if (!testutil::have_data()) {
        MESSAGE("CIFAR-10 not present; skipping");
        return;
    }
    TrainConfig cfg = testutil::tiny_config();
    cfg.epochs = 1;
    cfg.lookahead = true;
    cfg.output_dir = testutil::scratch_dir("trainer_hooks");

    std::vector<std::pair<StepPhase, int64_t>> events;
    TrainOptions opt;
    opt.subset = 128;  // two batches of 64
    opt.quiet = true;
    opt.hook = [&](StepPhase p, int64_t step) { events.emplace_back(p, step); };
    train(cfg, opt);

    const StepPhase order[] = {StepPhase::kForward,   StepPhase::kLoss,
                               StepPhase::kBackward,  StepPhase::kClip,
                               StepPhase::kOptimStep, StepPhase::kLookahead};
    REQUIRE(events.size() == 12);  // 2 steps x 6 phases
    for (size_t i = 0; i < events.size(); ++i) {
        CHECK(events[i].first == order[i % 6]);
        CHECK(events[i].second == int64_t(i / 6));
    }
}

TEST_CASE("clip and lookahead hooks vanish when those features are off") {
    if (!testutil::have_data()) {
        MESSAGE("CIFAR-10 not present; skipping");
        return;
    }
    TrainConfig cfg = testutil::tiny_config();
    cfg.epochs = 1;
    cfg.grad_clip = 0.0;
    cfg.lookahead = false;
    cfg.output_dir = testutil::scratch_dir("trainer_hooks_off");

    std::vector<StepPhase> phases;
    TrainOptions opt;
    opt.subset = 64;
    opt.quiet = true;
    opt.hook = [&](StepPhase p, int64_t) { phases.push_back(p); };
    train(cfg, opt);
    REQUIRE(phases.size() == 4);
    CHECK(phases[0] == StepPhase::kForward);
    CHECK(phases[1] == StepPhase::kLoss);
    CHECK(phases[2] == StepPhase::kBackward);
    CHECK(phases[3] == StepPhase::kOptimStep);
}

TEST_CASE("training writes metrics, checkpoints, and is seed-deterministic") {
    if (!testutil::have_data()) {
        MESSAGE("CIFAR-10 not present; skipping");
        return;
    }
    TrainConfig cfg = testutil::tiny_config();
    TrainOptions opt;
    opt.subset = 256;
    opt.quiet = true;

    cfg.output_dir = testutil::scratch_dir("trainer_a");
    const TrainResult a = train(cfg, opt);
    cfg.output_dir = testutil::scratch_dir("trainer_b");
    const TrainResult b = train(cfg, opt);

    REQUIRE(a.history.size() == 2);
    CHECK(a.param_count == 5456);  // tiny net, fixed architecture

    const auto ra = rows_without_wall(a.metrics_path);
    const auto rb = rows_without_wall(b.metrics_path);
    REQUIRE(ra.size() == 3);  // header + 2 epochs
    CHECK(ra[0] == "epoch,train_loss,train_acc,test_loss,test_acc,lr");
    CHECK(ra == rb);

    for (size_t i = 0; i < 2; ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].test_acc == b.history[i].test_acc);
        CHECK(a.history[i].lr == b.history[i].lr);
    }
    // Per-epoch lr column carries the cosine value at t = epoch-1.
    CHECK(a.history[0].lr == 0.1);
    CHECK(a.history[1].lr == doctest::Approx(0.05).epsilon(1e-12));

    // A different seed changes the trajectory.
    cfg.seed = 7;
    cfg.output_dir = testutil::scratch_dir("trainer_c");
    const TrainResult c = train(cfg, opt);
    CHECK(c.history[0].train_loss != a.history[0].train_loss);
}

TEST_CASE("resume reproduces the uninterrupted run exactly") {
    if (!testutil::have_data()) {
        MESSAGE("CIFAR-10 not present; skipping");
        return;
    }
    TrainOptions opt;
    opt.subset = 256;
    opt.quiet = true;

    // Uninterrupted two epochs.
    TrainConfig cfg = testutil::tiny_config();
    cfg.output_dir = testutil::scratch_dir("resume_full");
    const TrainResult full = train(cfg, opt);

    // One epoch, then resume into a second directory.
    TrainConfig leg1 = testutil::tiny_config();
    leg1.epochs = 1;
    leg1.output_dir = testutil::scratch_dir("resume_leg1");
    const TrainResult first = train(leg1, opt);

    TrainConfig leg2 = testutil::tiny_config();
    leg2.output_dir = testutil::scratch_dir("resume_leg2");
    TrainOptions ropt = opt;
    ropt.resume_path = first.last_checkpoint;
    const TrainResult second = train(leg2, ropt);

    REQUIRE(second.history.size() == 1);  // only the new epoch
    CHECK(second.history[0].epoch == 2);
    CHECK(second.history[0].train_loss == full.history[1].train_loss);
    CHECK(second.history[0].train_acc == full.history[1].train_acc);
    CHECK(second.history[0].test_loss == full.history[1].test_loss);
    CHECK(second.history[0].test_acc == full.history[1].test_acc);
    CHECK(second.history[0].lr == full.history[1].lr);

    // Resuming a finished run is a usage error.
    TrainOptions again = ropt;
    again.resume_path = second.last_checkpoint;
    TrainConfig done = testutil::tiny_config();
    done.output_dir = testutil::scratch_dir("resume_done");
    CHECK_THROWS_AS(train(done, again), UsageError);

    // Resuming under a different architecture is refused.
    TrainConfig other = testutil::tiny_config();
    other.model.channels = {16, 32};
    other.epochs = 3;
    other.output_dir = testutil::scratch_dir("resume_other");
    TrainOptions wrong = opt;
    wrong.resume_path = first.last_checkpoint;
    CHECK_THROWS_AS(train(other, wrong), ConfigError);
}

TEST_CASE("metrics file keeps completed rows on resume") {
    if (!testutil::have_data()) {
        MESSAGE("CIFAR-10 not present; skipping");
        return;
    }
    TrainOptions opt;
    opt.subset = 128;
    opt.quiet = true;

    TrainConfig leg1 = testutil::tiny_config();
    leg1.epochs = 1;
    const std::string dir = testutil::scratch_dir("resume_csv");
    leg1.output_dir = dir;
    const TrainResult first = train(leg1, opt);

    TrainConfig leg2 = testutil::tiny_config();
    leg2.output_dir = dir;  // same directory: csv gains a row
    TrainOptions ropt = opt;
    ropt.resume_path = first.last_checkpoint;
    train(leg2, ropt);

    const auto rows = rows_without_wall(dir + "/metrics.csv");
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].substr(0, 2) == "1,");
    CHECK(rows[2].substr(0, 2) == "2,");
}

TEST_CASE("checkpoints restore a model that reproduces the logged metrics") {
    if (!testutil::have_data()) {
        MESSAGE("CIFAR-10 not present; skipping");
        return;
    }
    TrainConfig cfg = testutil::tiny_config();
    cfg.output_dir = testutil::scratch_dir("trainer_restore");
    TrainOptions opt;
    opt.subset = 256;
    opt.quiet = true;
    const TrainResult r = train(cfg, opt);

    const Checkpoint ck = checkpoint_load(r.last_checkpoint);
    CHECK(ck.epoch == 2);
    Model m = model_from_checkpoint(ck);
    const NormStats stats = stats_from_checkpoint(ck);
    auto [train_ds, test_ds] = load_cifar10(testutil::data_dir());
    test_ds = test_ds.subset(256);

    const auto [loss1, acc1] = evaluate(m, test_ds, stats, cfg.batch_size);
    const auto [loss2, acc2] = evaluate(m, test_ds, stats, cfg.batch_size);
    CHECK(loss1 == loss2);  // evaluation is draw-free and bitwise repeatable
    CHECK(acc1 == acc2);
    CHECK(loss1 == doctest::Approx(r.history[1].test_loss).epsilon(1e-12));
    CHECK(acc1 == doctest::Approx(r.history[1].test_acc).epsilon(1e-12));

    // best.ckpt tracks the best epoch seen.
    const Checkpoint best = checkpoint_load(r.best_checkpoint);
    CHECK(best.best_epoch == r.best_epoch);
    CHECK(best.best_acc == doctest::Approx(r.best_acc).epsilon(1e-12));
}

TEST_CASE("budget enforcement refuses oversized models") {
    TrainConfig cfg = testutil::tiny_config();
    cfg.model.channels = {512, 1024};  // way past the budget
    TrainOptions opt;
    opt.enforce_budget = true;
    opt.quiet = true;
    CHECK_THROWS_AS(train(cfg, opt), ConfigError);
}

TEST_CASE("empty training data is a usage error") {
    TrainConfig cfg = testutil::tiny_config();
    cfg.data_dir = testutil::scratch_dir("trainer_nodata");
    TrainOptions opt;
    opt.quiet = true;
    CHECK_THROWS_AS(train(cfg, opt), Error);  // missing batches: data error
}
