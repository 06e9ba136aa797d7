#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "CLI11.hpp"
#include "budgetnet/checkpoint.hpp"
#include "budgetnet/config.hpp"
#include "budgetnet/gradcheck.hpp"
#include "budgetnet/model.hpp"
#include "budgetnet/trainer.hpp"

namespace {

constexpr int64_t kBudget = 5000000;

// Precedence: --data-dir flag, then the config file, then BNET_DATA_DIR.
void resolve_data_dir(std::string* target, const std::string& flag) {
    if (!flag.empty()) {
        *target = flag;
        return;
    }
    if (target->empty()) {
        if (const char* env = std::getenv("BNET_DATA_DIR")) *target = env;
    }
}

int cmd_count_params(const std::string& config_path) {
    bnet::TrainConfig cfg = bnet::TrainConfig::from_file(config_path);
    cfg.validate();
    const int64_t n = bnet::count_params(cfg.model);
    printf("parameters: %" PRId64 "\n", n);
    if (n < kBudget)
        printf("budget %" PRId64 ": within budget (%" PRId64 " to spare)\n", kBudget, kBudget - n);
    else
        printf("budget %" PRId64 ": EXCEEDED by %" PRId64 "\n", kBudget, n - kBudget);
    if (cfg.reference_params != 0)
        printf("reference: %" PRId64 " (difference %+" PRId64 ")\n", cfg.reference_params,
               n - cfg.reference_params);
    return n < kBudget ? 0 : 1;
}

int cmd_grad_check(const std::string& op, uint64_t seed, int cases) {
    std::vector<bnet::GradCheckReport> reports;
    if (op.empty())
        reports = bnet::grad_check_all(seed, cases);
    else
        reports.push_back(bnet::grad_check_op(op, seed, cases));
    bool ok = true;
    for (const auto& r : reports) {
        printf("%-12s max rel err %.3e over %" PRId64 " elements\n", r.op.c_str(), r.max_rel_err,
               r.elements);
        ok = ok && r.max_rel_err < bnet::kGradCheckTolerance;
    }
    printf("grad-check: %s (tolerance %.0e)\n", ok ? "PASS" : "FAIL", bnet::kGradCheckTolerance);
    return ok ? 0 : 1;
}

struct TrainArgs {
    std::string config_path;
    std::string data_dir;
    std::string output_dir;
    std::string resume;
    int64_t epochs = -1;
    int64_t subset = 0;
    int64_t seed = -1;
    bool enforce_budget = false;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
    bnet::TrainConfig cfg = bnet::TrainConfig::from_file(a.config_path);
    if (a.epochs >= 0) cfg.epochs = a.epochs;
    if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
    resolve_data_dir(&cfg.data_dir, a.data_dir);
    if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;

    bnet::TrainOptions options;
    options.subset = a.subset;
    options.resume_path = a.resume;
    options.enforce_budget = a.enforce_budget;
    options.quiet = a.quiet;

    const bnet::TrainResult result = bnet::train(cfg, options);
    printf("done: best test_acc %.4f at epoch %" PRId64 "\n", result.best_acc, result.best_epoch);
    printf("metrics: %s\n", result.metrics_path.c_str());
    printf("checkpoints: %s, %s\n", result.last_checkpoint.c_str(),
           result.best_checkpoint.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, int64_t batch_size,
             int64_t subset) {
    const bnet::Checkpoint ckpt = bnet::checkpoint_load(ckpt_path);
    bnet::Model model = bnet::model_from_checkpoint(ckpt);
    const bnet::NormStats stats = bnet::stats_from_checkpoint(ckpt);

    std::string dir = ckpt.config.data_dir;
    resolve_data_dir(&dir, data_dir);
    if (dir.empty()) throw bnet::UsageError("eval: no data directory (use --data-dir or BNET_DATA_DIR)");
    auto [train_ds, test_ds] = bnet::load_cifar10(dir);
    if (subset > 0) test_ds = test_ds.subset(subset);

    const int64_t bs = batch_size > 0 ? batch_size : ckpt.config.batch_size;
    const auto [loss, acc] = bnet::evaluate(model, test_ds, stats, bs);
    printf("checkpoint: epoch %" PRId64 ", best test_acc %.4f at epoch %" PRId64 "\n", ckpt.epoch,
           ckpt.best_acc, ckpt.best_epoch);
    printf("test_loss %.6f test_acc %.4f\n", loss, acc);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"budgetnet: small residual networks under a parameter budget"};
    app.require_subcommand(1);

    std::string config_path, op, ckpt_path, data_dir;
    uint64_t gc_seed = 42;
    int gc_cases = 5;
    int64_t eval_batch = 0, eval_subset = 0;
    TrainArgs targs;

    auto* count = app.add_subcommand("count-params", "Count model parameters for a config");
    count->add_option("--config", config_path, "training config file")->required();

    auto* gc = app.add_subcommand("grad-check",
                                  "Check analytic gradients against finite differences");
    gc->add_option("--op", op, "single op to check (default: all)");
    gc->add_option("--seed", gc_seed, "rng seed");
    gc->add_option("--cases", gc_cases, "random shapes per op")->check(CLI::PositiveNumber);

    auto* tr = app.add_subcommand("train", "Train a model on CIFAR-10");
    tr->add_option("--config", targs.config_path, "training config file")->required();
    tr->add_option("--epochs", targs.epochs, "override the config's epoch count");
    tr->add_option("--subset", targs.subset, "use only the first N records of each split");
    tr->add_option("--seed", targs.seed, "override the config's seed");
    tr->add_option("--resume", targs.resume, "checkpoint to continue from");
    tr->add_option("--data-dir", targs.data_dir, "CIFAR-10 binary batch directory");
    tr->add_option("--output-dir", targs.output_dir, "where metrics.csv and checkpoints go");
    tr->add_flag("--enforce-budget", targs.enforce_budget, "refuse configs over the budget");
    tr->add_flag("--quiet", targs.quiet, "suppress per-epoch progress");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    ev->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    ev->add_option("--data-dir", data_dir, "CIFAR-10 binary batch directory");
    ev->add_option("--batch-size", eval_batch, "eval batch size (default: the checkpoint's)");
    ev->add_option("--subset", eval_subset, "use only the first N test records");

    CLI11_PARSE(app, argc, argv);

    try {
        if (count->parsed()) return cmd_count_params(config_path);
        if (gc->parsed()) return cmd_grad_check(op, gc_seed, gc_cases);
        if (tr->parsed()) return cmd_train(targs);
        if (ev->parsed()) return cmd_eval(ckpt_path, data_dir, eval_batch, eval_subset);
    } catch (const bnet::UsageError& e) {
        fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
