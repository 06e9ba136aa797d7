#include "budgetnet/optim.hpp"

#include <cmath>
#include <cstring>

namespace bnet {

void Optimizer::ensure_buffers(const std::vector<ParamRef>& params) {
    if (!buf_a_.empty()) {
        if (buf_a_.size() != params.size())
            throw UsageError("optimizer: buffer count " + std::to_string(buf_a_.size()) +
                             " does not match parameter count " + std::to_string(params.size()));
        for (size_t i = 0; i < params.size(); ++i) {
            if (buf_a_[i].shape != params[i].tensor->shape)
                throw UsageError("optimizer: parameter '" + params[i].name +
                                 "' changed shape since the first step");
        }
        return;
    }
    buf_a_.reserve(params.size());
    for (const auto& p : params) buf_a_.emplace_back(p.tensor->shape);
    if (cfg_.kind == OptKind::kAdam) {
        buf_b_.reserve(params.size());
        for (const auto& p : params) buf_b_.emplace_back(p.tensor->shape);
    }
}

void Optimizer::step(const std::vector<ParamRef>& params) {
    for (const auto& p : params)
        if (!p.tensor->has_grad())
            throw UsageError("optimizer: parameter '" + p.name + "' has no gradient");
    ensure_buffers(params);
    ++step_count_;

    const float lr = static_cast<float>(cfg_.lr);
    const float wd = static_cast<float>(cfg_.weight_decay);

    if (cfg_.kind == OptKind::kSgd) {
        const float mu = static_cast<float>(cfg_.momentum);
        for (size_t i = 0; i < params.size(); ++i) {
            TensorF& t = *params[i].tensor;
            TensorF& vel = buf_a_[i];
            for (int64_t j = 0; j < t.numel(); ++j) {
                const float g = t.grad[static_cast<size_t>(j)] + wd * t.data[static_cast<size_t>(j)];
                const float v = mu * vel.at(j) + g;
                vel.at(j) = v;
                t.data[static_cast<size_t>(j)] -= lr * v;
            }
        }
    } else {
        const float b1 = static_cast<float>(cfg_.beta1);
        const float b2 = static_cast<float>(cfg_.beta2);
        const float eps = static_cast<float>(cfg_.eps);
        const double t_d = static_cast<double>(step_count_);
        const float bc1 = static_cast<float>(1.0 / (1.0 - std::pow(cfg_.beta1, t_d)));
        const float bc2 = static_cast<float>(1.0 / (1.0 - std::pow(cfg_.beta2, t_d)));
        for (size_t i = 0; i < params.size(); ++i) {
            TensorF& t = *params[i].tensor;
            TensorF& m = buf_a_[i];
            TensorF& v = buf_b_[i];
            for (int64_t j = 0; j < t.numel(); ++j) {
                const float g = t.grad[static_cast<size_t>(j)] + wd * t.data[static_cast<size_t>(j)];
                const float mj = b1 * m.at(j) + (1.0f - b1) * g;
                const float vj = b2 * v.at(j) + (1.0f - b2) * g * g;
                m.at(j) = mj;
                v.at(j) = vj;
                t.data[static_cast<size_t>(j)] -=
                    lr * (mj * bc1) / (std::sqrt(vj * bc2) + eps);
            }
        }
    }
}

void Lookahead::after_step(const std::vector<ParamRef>& params) {
    if (slow_.empty())
        throw UsageError("lookahead: init_slow() must run before the first inner step");
    if (slow_.size() != params.size())
        throw UsageError("lookahead: slow-weight count mismatch");
    ++counter_;
    if (counter_ % k_ != 0) return;
    for (size_t i = 0; i < params.size(); ++i) {
        TensorF& fast = *params[i].tensor;
        TensorF& slow = slow_[i];
        if (alpha_ == 1.0) {
            slow.data = fast.data;  // exact copy, keeps k=1/alpha=1 bitwise transparent
        } else {
            const float a = static_cast<float>(alpha_);
            for (int64_t j = 0; j < fast.numel(); ++j)
                slow.at(j) += a * (fast.at(j) - slow.at(j));
            fast.data = slow.data;
        }
    }
}

void Lookahead::init_slow(const std::vector<ParamRef>& params) {
    slow_.clear();
    slow_.reserve(params.size());
    for (const auto& p : params) slow_.push_back(*p.tensor);
}

double clip_grad_norm(const std::vector<ParamRef>& params, double c) {
    if (c <= 0.0) throw ConfigError("gradient_clip: threshold must be positive, got " + std::to_string(c));
    double sumsq = 0.0;
    for (const auto& p : params) {
        if (!p.tensor->has_grad())
            throw UsageError("clip_grad_norm: parameter '" + p.name + "' has no gradient");
        for (float g : p.tensor->grad) sumsq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sumsq);
    if (!std::isfinite(norm))
        throw NumericError("clip_grad_norm: gradient norm is not finite");
    if (norm >= c && norm > 0.0) {
        const float scale = static_cast<float>(c / norm);
        for (const auto& p : params)
            for (float& g : p.tensor->grad) g *= scale;
    }
    return norm;
}

ScheduleKind schedule_kind_from_string(const std::string& name) {
    if (name == "none" || name == "constant") return ScheduleKind::kNone;
    if (name == "cosine") return ScheduleKind::kCosine;
    if (name == "step") return ScheduleKind::kStep;
    if (name == "multistep") return ScheduleKind::kMultiStep;
    if (name == "exponential") return ScheduleKind::kExponential;
    if (name == "onecycle") return ScheduleKind::kOneCycle;
    if (name == "cosine_warm_restarts") return ScheduleKind::kCosineWarmRestarts;
    throw ConfigError("lr_scheduler: unknown kind '" + name + "'");
}

const char* schedule_kind_name(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::kNone: return "none";
        case ScheduleKind::kCosine: return "cosine";
        case ScheduleKind::kStep: return "step";
        case ScheduleKind::kMultiStep: return "multistep";
        case ScheduleKind::kExponential: return "exponential";
        case ScheduleKind::kOneCycle: return "onecycle";
        default: return "cosine_warm_restarts";
    }
}

double schedule_lr(const Schedule& s, int64_t t) {
    if (t < 0) throw UsageError("schedule_lr: negative step " + std::to_string(t));
    constexpr double kPi = 3.14159265358979323846;
    switch (s.kind) {
        case ScheduleKind::kNone:
            return s.base_lr;
        case ScheduleKind::kCosine: {
            if (s.t_max < 1) throw ConfigError("cosine schedule: T_max must be >= 1");
            const double x = static_cast<double>(t) / static_cast<double>(s.t_max);
            return s.eta_min + 0.5 * (s.base_lr - s.eta_min) * (1.0 + std::cos(kPi * x));
        }
        case ScheduleKind::kStep: {
            if (s.step_size < 1) throw ConfigError("step schedule: step_size must be >= 1");
            return s.base_lr * std::pow(s.gamma, static_cast<double>(t / s.step_size));
        }
        case ScheduleKind::kMultiStep: {
            int64_t hits = 0;
            for (int64_t m : s.milestones)
                if (m <= t) ++hits;
            return s.base_lr * std::pow(s.gamma, static_cast<double>(hits));
        }
        case ScheduleKind::kExponential:
            return s.base_lr * std::pow(s.gamma, static_cast<double>(t));
        case ScheduleKind::kOneCycle: {
            if (s.total_steps < 1) throw ConfigError("onecycle schedule: total_steps must be >= 1");
            if (t >= s.total_steps)
                throw UsageError("onecycle schedule: step " + std::to_string(t) +
                                 " beyond horizon " + std::to_string(s.total_steps));
            if (s.pct_start < 0.0 || s.pct_start > 1.0)
                throw ConfigError("onecycle schedule: pct_start must be in [0,1]");
            const int64_t warm = static_cast<int64_t>(
                std::llround(s.pct_start * static_cast<double>(s.total_steps)));
            if (t < warm) {
                return s.base_lr + (s.max_lr - s.base_lr) * static_cast<double>(t) /
                                       static_cast<double>(warm);
            }
            const double x =
                static_cast<double>(t - warm) / static_cast<double>(s.total_steps - warm);
            return 0.5 * s.max_lr * (1.0 + std::cos(kPi * x));
        }
        case ScheduleKind::kCosineWarmRestarts: {
            if (s.t0 < 1) throw ConfigError("warm-restart schedule: T_0 must be >= 1");
            if (s.t_mult < 1) throw ConfigError("warm-restart schedule: T_mult must be >= 1");
            int64_t rem = t;
            int64_t period = s.t0;
            if (s.t_mult == 1) {
                rem = t % s.t0;
            } else {
                while (rem >= period) {
                    rem -= period;
                    period *= s.t_mult;
                }
            }
            const double x = static_cast<double>(rem) / static_cast<double>(period);
            return s.eta_min + 0.5 * (s.base_lr - s.eta_min) * (1.0 + std::cos(kPi * x));
        }
    }
    throw UsageError("schedule_lr: unhandled schedule kind");
}

}  // namespace bnet
