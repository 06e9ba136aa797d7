#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "budgetnet/model.hpp"
#include "budgetnet/tensor.hpp"

namespace bnet {

// ---------------------------------------------------------------------------
// Inner optimizers. Buffers are aligned index-for-index with the parameter
// list handed to step().
// ---------------------------------------------------------------------------

enum class OptKind { kSgd, kAdam };

struct OptimizerConfig {
    OptKind kind = OptKind::kSgd;
    double lr = 0.1;
    double momentum = 0.9;       // sgd
    double beta1 = 0.9;          // adam
    double beta2 = 0.999;        // adam
    double eps = 1e-8;           // adam
    double weight_decay = 0.0;   // coupled L2: added to the gradient
};

class Optimizer {
  public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

    // SGD:  g <- grad + wd*p;  v <- momentum*v + g;  p <- p - lr*v
    // Adam: bias-corrected moments on g <- grad + wd*p; p <- p - lr*m^/(sqrt(v^)+eps)
    void step(const std::vector<ParamRef>& params);

    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    const OptimizerConfig& config() const { return cfg_; }
    int64_t step_count() const { return step_count_; }

    // Checkpoint access: buffer i belongs to parameter i. SGD uses buf_a
    // (velocity); Adam uses buf_a (first moment) and buf_b (second moment).
    std::vector<TensorF>& buf_a() { return buf_a_; }
    std::vector<TensorF>& buf_b() { return buf_b_; }
    void set_step_count(int64_t n) { step_count_ = n; }

  private:
    void ensure_buffers(const std::vector<ParamRef>& params);

    OptimizerConfig cfg_;
    std::vector<TensorF> buf_a_;
    std::vector<TensorF> buf_b_;
    int64_t step_count_ = 0;
};

// ---------------------------------------------------------------------------
// Lookahead wrapper: every k inner steps, slow <- slow + alpha*(fast - slow)
// and fast <- slow.
// ---------------------------------------------------------------------------

class Lookahead {
  public:
    Lookahead(int64_t k, double alpha) : k_(k), alpha_(alpha) {
        if (k < 1) throw ConfigError("lookahead: k must be >= 1, got " + std::to_string(k));
        if (alpha <= 0.0 || alpha > 1.0)
            throw ConfigError("lookahead: alpha must be in (0,1], got " + std::to_string(alpha));
    }

    // Snapshot the current parameters as the initial slow weights. Must run
    // before the first after_step().
    void init_slow(const std::vector<ParamRef>& params);

    // Call once after every inner-optimizer step.
    void after_step(const std::vector<ParamRef>& params);

    int64_t k() const { return k_; }
    double alpha() const { return alpha_; }
    int64_t counter() const { return counter_; }
    void set_counter(int64_t n) { counter_ = n; }
    std::vector<TensorF>& slow_weights() { return slow_; }

  private:
    int64_t k_;
    double alpha_;
    int64_t counter_ = 0;
    std::vector<TensorF> slow_;
};

// ---------------------------------------------------------------------------
// Global-norm gradient clipping: if ||g||_2 >= c, scale every gradient by
// c/||g||_2. Returns the pre-clip norm. Non-finite norm -> NumericError.
// ---------------------------------------------------------------------------

double clip_grad_norm(const std::vector<ParamRef>& params, double c);

// ---------------------------------------------------------------------------
// Learning-rate schedules. cosine/step/multistep/exponential/warm-restarts
// step once per epoch (t = epoch index); onecycle steps per batch
// (t = global step, horizon = total_steps).
// ---------------------------------------------------------------------------

enum class ScheduleKind { kNone, kCosine, kStep, kMultiStep, kExponential, kOneCycle, kCosineWarmRestarts };

struct Schedule {
    ScheduleKind kind = ScheduleKind::kNone;
    double base_lr = 0.1;
    // cosine
    int64_t t_max = 200;
    double eta_min = 0.0;
    // step / multistep / exponential
    int64_t step_size = 30;
    std::vector<int64_t> milestones;
    double gamma = 0.1;
    // onecycle
    double max_lr = 0.1;
    int64_t total_steps = 0;
    double pct_start = 0.3;
    // warm restarts
    int64_t t0 = 10;
    int64_t t_mult = 1;

    bool per_batch() const { return kind == ScheduleKind::kOneCycle; }
};

ScheduleKind schedule_kind_from_string(const std::string& name);
const char* schedule_kind_name(ScheduleKind kind);

double schedule_lr(const Schedule& schedule, int64_t t);

}  // namespace bnet
