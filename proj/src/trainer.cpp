#include "budgetnet/trainer.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "budgetnet/init.hpp"
#include "budgetnet/ops.hpp"
#include "budgetnet/optim.hpp"

namespace fs = std::filesystem;

namespace bnet {

DerivedSeeds derive_seeds(uint64_t master_seed) {
    RngStream master(master_seed);
    DerivedSeeds s{};
    s.init = master.next_u64();
    s.data = master.next_u64();
    s.model = master.next_u64();
    return s;
}

NormStats run_stats(const Dataset& train, bool normalize) {
    NormStats s;
    if (!normalize) {
        s.mean = {0.0, 0.0, 0.0};
        s.std = {1.0, 1.0, 1.0};
        return s;
    }
    // Round to float precision so the stats survive a checkpoint round-trip
    // bit-exactly (checkpoints store them as float tensors).
    s = channel_stats(train);
    for (int c = 0; c < 3; ++c) {
        s.mean[static_cast<size_t>(c)] = static_cast<double>(static_cast<float>(s.mean[static_cast<size_t>(c)]));
        s.std[static_cast<size_t>(c)] = static_cast<double>(static_cast<float>(s.std[static_cast<size_t>(c)]));
    }
    return s;
}

std::pair<double, double> evaluate(Model& model, const Dataset& dataset, const NormStats& stats,
                                   int64_t batch_size) {
    if (dataset.count() == 0) throw UsageError("evaluate: empty dataset");
    BatchStream stream(dataset, batch_size, /*shuffle=*/false, /*augment=*/false, stats,
                       /*rng=*/nullptr, /*workers=*/0);
    double loss_sum = 0.0;
    int64_t correct = 0, total = 0;
    Batch b;
    while (stream.next(&b)) {
        const TensorF logits = model.forward(b.images, ops::Mode::kEval, nullptr);
        const auto res = ops::softmax_cross_entropy(logits, b.labels);
        const int64_t n = logits.dim(0);
        const int64_t k = logits.dim(1);
        loss_sum += res.loss * static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            const float* row = logits.ptr() + i * k;
            int64_t arg = 0;
            for (int64_t j = 1; j < k; ++j)
                if (row[j] > row[arg]) arg = j;
            if (arg == b.labels[static_cast<size_t>(i)]) ++correct;
        }
        total += n;
    }
    return {loss_sum / static_cast<double>(total),
            static_cast<double>(correct) / static_cast<double>(total)};
}

namespace {

std::string format_row(const MetricsRow& r) {
    char buf[256];
    snprintf(buf, sizeof(buf), "%" PRId64 ",%.10g,%.10g,%.10g,%.10g,%.10g,%.3f", r.epoch,
             r.train_loss, r.train_acc, r.test_loss, r.test_acc, r.lr, r.wall_seconds);
    return buf;
}

constexpr const char* kMetricsHeader = "epoch,train_loss,train_acc,test_loss,test_acc,lr,wall_seconds";

// On resume, keep the header and the rows up to `max_epoch`; otherwise start
// a fresh file.
void prepare_metrics_file(const std::string& path, int64_t max_epoch) {
    std::vector<std::string> keep;
    if (max_epoch > 0) {
        std::ifstream in(path);
        std::string line;
        bool first = true;
        while (in && std::getline(in, line)) {
            if (first) {
                first = false;
                continue;  // header is rewritten below
            }
            if (line.empty()) continue;
            const int64_t ep = std::strtoll(line.c_str(), nullptr, 10);
            if (ep >= 1 && ep <= max_epoch) keep.push_back(line);
        }
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write metrics file: " + path);
    out << kMetricsHeader << "\n";
    for (const auto& l : keep) out << l << "\n";
    if (!out) throw DataError("metrics write failed: " + path);
}

// Configs must agree for a resume to be meaningful; the run length and the
// file-system locations are allowed to differ.
std::string config_identity(const TrainConfig& c) {
    TrainConfig t = c;
    t.epochs = 1;
    t.data_dir.clear();
    t.output_dir = ".";
    return t.to_string();
}

struct NamedBuffers {
    std::vector<std::pair<std::string, TensorF*>> entries;
};

void restore_tensor(const Checkpoint& ckpt, const std::string& name, TensorF* dst) {
    const TensorF* src = ckpt.find(name);
    if (!src) throw FormatError("checkpoint is missing tensor '" + name + "'");
    if (src->shape != dst->shape)
        throw FormatError("checkpoint tensor '" + name + "' has shape " + src->shape_str() +
                          ", expected " + dst->shape_str());
    dst->data = src->data;
}

void save_checkpoint_atomic(const std::string& path, const Checkpoint& ckpt) {
    const std::string tmp = path + ".tmp";
    checkpoint_save(tmp, ckpt);
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw DataError("cannot move checkpoint into place: " + path + ": " + ec.message());
}

}  // namespace

Model model_from_checkpoint(const Checkpoint& ckpt) {
    TrainConfig cfg = ckpt.config;
    cfg.validate();
    Model model = construct(cfg.model);
    for (auto& p : model.state_tensors()) restore_tensor(ckpt, p.name, p.tensor);
    return model;
}

NormStats stats_from_checkpoint(const Checkpoint& ckpt) {
    const TensorF* mean = ckpt.find("norm.mean");
    const TensorF* std_t = ckpt.find("norm.std");
    if (!mean || !std_t || mean->numel() != 3 || std_t->numel() != 3)
        throw FormatError("checkpoint is missing normalization stats");
    NormStats s;
    for (int c = 0; c < 3; ++c) {
        s.mean[static_cast<size_t>(c)] = static_cast<double>(mean->at(c));
        s.std[static_cast<size_t>(c)] = static_cast<double>(std_t->at(c));
    }
    return s;
}

TrainResult train(TrainConfig config, const TrainOptions& options) {
    config.validate();

    TrainResult result;
    result.param_count = count_params(config.model);
    if (!options.quiet) {
        printf("parameters: %" PRId64 " (budget 5000000: %s)\n", result.param_count,
               result.param_count < 5000000 ? "within budget" : "EXCEEDED");
        if (config.reference_params != 0)
            printf("reference count from the configuration: %" PRId64 " (difference %+" PRId64 ")\n",
                   config.reference_params, result.param_count - config.reference_params);
        fflush(stdout);
    }
    if (options.enforce_budget && result.param_count >= 5000000)
        throw ConfigError("model has " + std::to_string(result.param_count) +
                          " parameters, over the 5000000 budget");

    if (config.data_dir.empty())
        throw ConfigError("config field 'data_dir': not set (where are the CIFAR-10 batches?)");
    auto [train_ds, test_ds] = load_cifar10(config.data_dir);
    if (options.subset > 0) {
        train_ds = train_ds.subset(options.subset);
        test_ds = test_ds.subset(options.subset);
    }
    const NormStats stats = run_stats(train_ds, config.normalize);

    const int64_t num_batches = (train_ds.count() + config.batch_size - 1) / config.batch_size;
    if (config.schedule.kind == ScheduleKind::kOneCycle && config.schedule.total_steps == 0)
        config.schedule.total_steps = config.epochs * num_batches;

    // Build the model and the training state from the master seed.
    const DerivedSeeds seeds = derive_seeds(config.seed);
    RngStream init_rng(seeds.init);
    RngStream data_rng(seeds.data);
    RngStream model_rng(seeds.model);

    Model model = build(config.model, config.init, init_rng);
    Optimizer optimizer(config.opt);
    Lookahead lookahead(config.lookahead_k, config.lookahead_alpha);
    auto params = model.parameters();
    if (config.lookahead) lookahead.init_slow(params);

    int64_t start_epoch = 0;
    uint64_t global_step = 0;
    double best_acc = 0.0;
    int64_t best_epoch = 0;

    if (!options.resume_path.empty()) {
        Checkpoint ckpt = checkpoint_load(options.resume_path);
        TrainConfig ck_cfg = ckpt.config;
        ck_cfg.validate();
        if (config_identity(ck_cfg) != config_identity(config))
            throw ConfigError("resume: checkpoint was produced by a different configuration");
        if (ckpt.epoch >= config.epochs)
            throw UsageError("resume: checkpoint already has " + std::to_string(ckpt.epoch) +
                             " epochs, config asks for " + std::to_string(config.epochs));
        for (auto& p : model.state_tensors()) restore_tensor(ckpt, p.name, p.tensor);
        auto& a = optimizer.buf_a();
        auto& b = optimizer.buf_b();
        a.clear();
        b.clear();
        for (auto& p : params) {
            TensorF t(p.tensor->shape);
            restore_tensor(ckpt, "optim.a." + p.name, &t);
            a.push_back(std::move(t));
        }
        if (config.opt.kind == OptKind::kAdam)
            for (auto& p : params) {
                TensorF t(p.tensor->shape);
                restore_tensor(ckpt, "optim.b." + p.name, &t);
                b.push_back(std::move(t));
            }
        if (config.lookahead) {
            auto& slow = lookahead.slow_weights();
            slow.clear();
            for (auto& p : params) {
                TensorF t(p.tensor->shape);
                restore_tensor(ckpt, "lookahead." + p.name, &t);
                slow.push_back(std::move(t));
            }
            lookahead.set_counter(ckpt.lookahead_counter);
        }
        optimizer.set_step_count(ckpt.opt_step_count);
        data_rng.set_state(ckpt.data_rng_seed, ckpt.data_rng_draws);
        model_rng.set_state(ckpt.model_rng_seed, ckpt.model_rng_draws);
        start_epoch = ckpt.epoch;
        global_step = ckpt.global_step;
        best_acc = ckpt.best_acc;
        best_epoch = ckpt.best_epoch;
    }

    fs::create_directories(config.output_dir);
    result.metrics_path = (fs::path(config.output_dir) / "metrics.csv").string();
    result.last_checkpoint = (fs::path(config.output_dir) / "last.ckpt").string();
    result.best_checkpoint = (fs::path(config.output_dir) / "best.ckpt").string();
    prepare_metrics_file(result.metrics_path, start_epoch);
    std::ofstream metrics(result.metrics_path, std::ios::app);
    if (!metrics) throw DataError("cannot append to metrics file: " + result.metrics_path);

    const bool clip_on = config.grad_clip > 0.0;
    const auto fire = [&options](StepPhase phase, int64_t step) {
        if (options.hook) options.hook(phase, step);
    };

    auto snapshot = [&](int64_t epoch) {
        Checkpoint ckpt;
        ckpt.config = config;
        ckpt.epoch = epoch;
        ckpt.global_step = global_step;
        ckpt.data_rng_seed = data_rng.seed();
        ckpt.data_rng_draws = data_rng.draws();
        ckpt.model_rng_seed = model_rng.seed();
        ckpt.model_rng_draws = model_rng.draws();
        ckpt.opt_step_count = optimizer.step_count();
        ckpt.lookahead_counter = lookahead.counter();
        ckpt.best_acc = best_acc;
        ckpt.best_epoch = best_epoch;
        for (auto& p : model.state_tensors()) ckpt.tensors.emplace_back(p.name, *p.tensor);
        for (size_t i = 0; i < params.size(); ++i)
            ckpt.tensors.emplace_back("optim.a." + params[i].name, optimizer.buf_a()[i]);
        if (config.opt.kind == OptKind::kAdam)
            for (size_t i = 0; i < params.size(); ++i)
                ckpt.tensors.emplace_back("optim.b." + params[i].name, optimizer.buf_b()[i]);
        if (config.lookahead)
            for (size_t i = 0; i < params.size(); ++i)
                ckpt.tensors.emplace_back("lookahead." + params[i].name,
                                          lookahead.slow_weights()[i]);
        TensorF mean({3}), std_t({3});
        for (int c = 0; c < 3; ++c) {
            mean.at(c) = static_cast<float>(stats.mean[static_cast<size_t>(c)]);
            std_t.at(c) = static_cast<float>(stats.std[static_cast<size_t>(c)]);
        }
        ckpt.tensors.emplace_back("norm.mean", std::move(mean));
        ckpt.tensors.emplace_back("norm.std", std::move(std_t));
        return ckpt;
    };

    for (int64_t epoch = start_epoch + 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double lr_now = config.opt.lr;
        if (!config.schedule.per_batch()) {
            lr_now = schedule_lr(config.schedule, epoch - 1);
            optimizer.set_lr(lr_now);
        }

        double loss_sum = 0.0;
        int64_t correct = 0, seen = 0, batch_index = 0;
        {
            BatchStream stream(train_ds, config.batch_size, /*shuffle=*/true, config.augment,
                               stats, &data_rng, config.workers);
            Batch batch;
            while (stream.next(&batch)) {
                const int64_t n = batch.images.dim(0);
                fire(StepPhase::kForward, static_cast<int64_t>(global_step));
                TensorF logits = model.forward(batch.images, ops::Mode::kTrain, &model_rng);

                fire(StepPhase::kLoss, static_cast<int64_t>(global_step));
                auto res = ops::softmax_cross_entropy(logits, batch.labels);
                if (!std::isfinite(res.loss))
                    throw NumericError("non-finite training loss at global step " +
                                       std::to_string(global_step) + " (epoch " +
                                       std::to_string(epoch) + ", batch " +
                                       std::to_string(batch_index) + ")");
                loss_sum += res.loss * static_cast<double>(n);
                const int64_t k = logits.dim(1);
                for (int64_t i = 0; i < n; ++i) {
                    const float* row = logits.ptr() + i * k;
                    int64_t arg = 0;
                    for (int64_t j = 1; j < k; ++j)
                        if (row[j] > row[arg]) arg = j;
                    if (arg == batch.labels[static_cast<size_t>(i)]) ++correct;
                }
                seen += n;

                model.zero_grad();
                fire(StepPhase::kBackward, static_cast<int64_t>(global_step));
                model.backward(res.grad_logits);

                if (clip_on) {
                    fire(StepPhase::kClip, static_cast<int64_t>(global_step));
                    clip_grad_norm(params, config.grad_clip);
                }
                if (config.schedule.per_batch()) {
                    lr_now = schedule_lr(config.schedule, static_cast<int64_t>(global_step));
                    optimizer.set_lr(lr_now);
                }
                fire(StepPhase::kOptimStep, static_cast<int64_t>(global_step));
                optimizer.step(params);
                if (config.lookahead) {
                    fire(StepPhase::kLookahead, static_cast<int64_t>(global_step));
                    lookahead.after_step(params);
                }
                ++global_step;
                ++batch_index;
            }
        }

        auto [test_loss, test_acc] = evaluate(model, test_ds, stats, config.batch_size);

        MetricsRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(seen);
        row.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
        row.test_loss = test_loss;
        row.test_acc = test_acc;
        row.lr = lr_now;
        row.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(row);
        metrics << format_row(row) << "\n";
        metrics.flush();
        if (!metrics) throw DataError("metrics write failed: " + result.metrics_path);

        const bool is_best = test_acc > best_acc;
        if (is_best) {
            best_acc = test_acc;
            best_epoch = epoch;
        }
        Checkpoint ckpt = snapshot(epoch);
        save_checkpoint_atomic(result.last_checkpoint, ckpt);
        if (is_best) save_checkpoint_atomic(result.best_checkpoint, ckpt);

        if (!options.quiet) {
            printf("epoch %" PRId64 "/%" PRId64 ": train_loss %.4f train_acc %.4f test_loss %.4f "
                   "test_acc %.4f lr %.5g (%.1fs)\n",
                   epoch, config.epochs, row.train_loss, row.train_acc, row.test_loss,
                   row.test_acc, row.lr, row.wall_seconds);
            fflush(stdout);
        }
    }

    result.best_acc = best_acc;
    result.best_epoch = best_epoch;
    return result;
}

}  // namespace bnet
