#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "budgetnet/checkpoint.hpp"
#include "budgetnet/config.hpp"
#include "budgetnet/data.hpp"
#include "budgetnet/model.hpp"

namespace bnet {

struct MetricsRow {
    int64_t epoch;
    double train_loss;
    double train_acc;
    double test_loss;
    double test_acc;
    double lr;
    double wall_seconds;
};

// Instrumentation points inside one training step, fired in this order.
enum class StepPhase { kForward, kLoss, kBackward, kClip, kOptimStep, kLookahead };
using StepHook = std::function<void(StepPhase, int64_t global_step)>;

struct TrainOptions {
    int64_t subset = 0;        // keep only the first N records of each split (0 = all)
    std::string resume_path;   // checkpoint to continue from
    bool enforce_budget = false;  // refuse configs with >= 5,000,000 parameters
    bool quiet = false;        // suppress per-epoch progress on stdout
    StepHook hook;             // test instrumentation; empty = off
};

struct TrainResult {
    std::vector<MetricsRow> history;  // this run's rows (resume: new rows only)
    int64_t param_count = 0;
    std::string metrics_path;
    std::string last_checkpoint;
    std::string best_checkpoint;
    double best_acc = 0.0;
    int64_t best_epoch = 0;
};

// One full training run per the config: per batch forward -> loss ->
// backward -> clip -> optimizer step -> lookahead sync; per epoch a full
// eval-mode pass over the test split, a metrics.csv row, a refreshed
// last.ckpt and (on a new best test accuracy) best.ckpt in output_dir.
TrainResult train(TrainConfig config, const TrainOptions& options = {});

// Mean cross-entropy + top-1 accuracy over the dataset in eval mode
// (running BN stats, no augmentation, no rng draws).
std::pair<double, double> evaluate(Model& model, const Dataset& dataset, const NormStats& stats,
                                   int64_t batch_size);

// The sub-streams a run derives from its master seed, in draw order.
struct DerivedSeeds {
    uint64_t init;
    uint64_t data;
    uint64_t model;
};
DerivedSeeds derive_seeds(uint64_t master_seed);

// Normalization stats used by a run: channel stats of its train split, or
// the identity (mean 0, std 1) when normalization is disabled.
NormStats run_stats(const Dataset& train, bool normalize);

// Rebuild a model (weights, BN running stats) from a checkpoint.
Model model_from_checkpoint(const Checkpoint& ckpt);

// The stats a checkpointed run was normalizing with.
NormStats stats_from_checkpoint(const Checkpoint& ckpt);

}  // namespace bnet
