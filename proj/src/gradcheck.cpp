#include "budgetnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "budgetnet/errors.hpp"
#include "budgetnet/ops.hpp"
#include "budgetnet/rng.hpp"
#include "budgetnet/tensor.hpp"

namespace bnet {
namespace {

constexpr double kEps = 1e-5;

double rel_err(double a, double f) {
    return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-6});
}

TensorD randu(const std::vector<int64_t>& shape, RngStream& rng, double lo = -1.0,
              double hi = 1.0) {
    TensorD t(shape);
    for (auto& v : t.data) v = lo + rng.uniform() * (hi - lo);
    return t;
}

double wsum(const TensorD& out, const TensorD& w) {
    double s = 0.0;
    for (int64_t i = 0; i < out.numel(); ++i) s += out.data[static_cast<size_t>(i)] * w.data[static_cast<size_t>(i)];
    return s;
}

// One probed tensor: nudge each element, re-evaluate the scalar loss, compare
// the central difference against the analytic gradient.
struct Probe {
    TensorD* tensor;
    const TensorD* grad;
};

void fd_check(const std::vector<Probe>& probes, const std::function<double()>& loss,
              GradCheckReport* report) {
    for (const auto& p : probes) {
        for (size_t i = 0; i < p.tensor->data.size(); ++i) {
            double& x = p.tensor->data[i];
            const double saved = x;
            x = saved + kEps;
            const double lp = loss();
            x = saved - kEps;
            const double lm = loss();
            x = saved;
            const double fd = (lp - lm) / (2.0 * kEps);
            report->max_rel_err = std::max(report->max_rel_err, rel_err(p.grad->data[i], fd));
            ++report->elements;
        }
    }
}

// --------------------------------------------------------------------------
// Per-op cases. Each builds small random tensors, takes loss = sum(w * out)
// for a fixed random w (so dL/dout = w), runs the analytic backward once,
// then sweeps finite differences over every input element.
// --------------------------------------------------------------------------

GradCheckReport check_conv2d(uint64_t seed, int cases) {
    GradCheckReport report{"conv2d"};
    RngStream rng(seed);
    struct Shape { int64_t n, cin, cout, hw, f, stride, pad; };
    const Shape shapes[] = {
        {2, 2, 3, 5, 3, 1, 1}, {1, 3, 2, 6, 3, 2, 1}, {2, 1, 2, 4, 1, 1, 0},
        {1, 2, 4, 5, 5, 1, 2}, {2, 3, 1, 5, 3, 2, 0}, {1, 1, 1, 3, 3, 1, 1},
    };
    for (int c = 0; c < cases; ++c) {
        const Shape& s = shapes[c % std::size(shapes)];
        TensorD x = randu({s.n, s.cin, s.hw, s.hw}, rng);
        TensorD k = randu({s.cout, s.cin, s.f, s.f}, rng);
        const int64_t out = ops::conv_out_dim(s.hw, s.f, s.stride, s.pad);
        TensorD w = randu({s.n, s.cout, out, out}, rng);
        const auto grads = ops::conv2d_backward(w, x, k, s.stride, s.pad);
        const auto loss = [&] { return wsum(ops::conv2d_forward(x, k, s.stride, s.pad), w); };
        fd_check({{&x, &grads.input}, {&k, &grads.weight}}, loss, &report);
    }
    return report;
}

GradCheckReport check_batchnorm(uint64_t seed, int cases) {
    GradCheckReport report{"batchnorm"};
    RngStream rng(seed);
    struct Shape { int64_t n, c, hw; };
    const Shape shapes[] = {{2, 3, 3}, {3, 1, 2}, {2, 5, 2}, {4, 2, 3}, {2, 4, 1}};
    for (int c = 0; c < cases; ++c) {
        const Shape& s = shapes[c % std::size(shapes)];
        TensorD x = randu({s.n, s.c, s.hw, s.hw}, rng);
        auto state = ops::BatchNormState<double>::make(s.c);
        state.gamma = randu({s.c}, rng, 0.5, 1.5);
        state.beta = randu({s.c}, rng, -0.5, 0.5);
        TensorD w = randu(x.shape, rng);
        ops::BatchNormCache<double> cache;
        ops::batchnorm_forward(x, state, ops::Mode::kTrain, &cache);
        const auto grads = ops::batchnorm_backward(w, state, cache);
        const auto loss = [&] {
            return wsum(ops::batchnorm_forward(x, state, ops::Mode::kTrain), w);
        };
        fd_check({{&x, &grads.input}, {&state.gamma, &grads.gamma}, {&state.beta, &grads.beta}},
                 loss, &report);
    }
    return report;
}

GradCheckReport check_linear(uint64_t seed, int cases) {
    GradCheckReport report{"linear"};
    RngStream rng(seed);
    struct Shape { int64_t n, d, m; };
    const Shape shapes[] = {{2, 3, 4}, {1, 5, 2}, {3, 2, 3}, {2, 4, 1}, {4, 1, 5}};
    for (int c = 0; c < cases; ++c) {
        const Shape& s = shapes[c % std::size(shapes)];
        TensorD x = randu({s.n, s.d}, rng);
        TensorD wt = randu({s.d, s.m}, rng);
        TensorD b = randu({s.m}, rng);
        TensorD w = randu({s.n, s.m}, rng);
        const auto grads = ops::linear_backward(w, x, wt);
        const auto loss = [&] { return wsum(ops::linear_forward(x, wt, b), w); };
        fd_check({{&x, &grads.input}, {&wt, &grads.weight}, {&b, &grads.bias}}, loss, &report);
    }
    return report;
}

GradCheckReport check_avgpool(uint64_t seed, int cases) {
    GradCheckReport report{"avgpool"};
    RngStream rng(seed);
    struct Shape { int64_t n, c, hw, pool; };
    const Shape shapes[] = {{1, 2, 4, 2}, {2, 1, 4, 4}, {1, 3, 6, 3}, {2, 2, 2, 2}, {1, 1, 8, 8}};
    for (int c = 0; c < cases; ++c) {
        const Shape& s = shapes[c % std::size(shapes)];
        TensorD x = randu({s.n, s.c, s.hw, s.hw}, rng);
        TensorD w = randu({s.n, s.c, s.hw / s.pool, s.hw / s.pool}, rng);
        const TensorD grad = ops::avgpool_backward(w, s.pool);
        const auto loss = [&] { return wsum(ops::avgpool_forward(x, s.pool), w); };
        fd_check({{&x, &grad}}, loss, &report);
    }
    return report;
}

GradCheckReport check_relu(uint64_t seed, int cases) {
    GradCheckReport report{"relu"};
    RngStream rng(seed);
    const int64_t sizes[] = {7, 16, 24, 10, 33};
    for (int c = 0; c < cases; ++c) {
        TensorD x = randu({sizes[c % std::size(sizes)]}, rng);
        // Keep every element a safe distance from the kink at 0.
        for (auto& v : x.data)
            if (std::abs(v) < 0.05) v += (v >= 0 ? 0.1 : -0.1);
        TensorD w = randu(x.shape, rng);
        const TensorD grad = ops::relu_backward(w, x);
        const auto loss = [&] { return wsum(ops::relu(x), w); };
        fd_check({{&x, &grad}}, loss, &report);
    }
    return report;
}

GradCheckReport check_sigmoid(uint64_t seed, int cases) {
    GradCheckReport report{"sigmoid"};
    RngStream rng(seed);
    const int64_t sizes[] = {7, 16, 24, 10, 33};
    for (int c = 0; c < cases; ++c) {
        TensorD x = randu({sizes[c % std::size(sizes)]}, rng, -3.0, 3.0);
        TensorD w = randu(x.shape, rng);
        const TensorD out = ops::sigmoid(x);
        const TensorD grad = ops::sigmoid_backward(w, out);
        const auto loss = [&] { return wsum(ops::sigmoid(x), w); };
        fd_check({{&x, &grad}}, loss, &report);
    }
    return report;
}

GradCheckReport check_dropout(uint64_t seed, int cases) {
    GradCheckReport report{"dropout"};
    RngStream rng(seed);
    const int64_t sizes[] = {12, 25, 8, 30, 17};
    for (int c = 0; c < cases; ++c) {
        TensorD x = randu({sizes[c % std::size(sizes)]}, rng);
        TensorD w = randu(x.shape, rng);
        const double p = 0.3;
        // Draw the mask once, then differentiate the fixed-mask application.
        const auto drawn = ops::dropout_forward(x, p, &rng, ops::Mode::kTrain);
        const TensorD grad = ops::dropout_backward(w, drawn.mask, p);
        const auto loss = [&] { return wsum(ops::dropout_apply_mask(x, drawn.mask, p), w); };
        fd_check({{&x, &grad}}, loss, &report);
    }
    return report;
}

GradCheckReport check_softmax_ce(uint64_t seed, int cases) {
    GradCheckReport report{"softmax_ce"};
    RngStream rng(seed);
    struct Shape { int64_t n, k; };
    const Shape shapes[] = {{3, 5}, {1, 10}, {4, 3}, {2, 7}, {5, 2}};
    for (int c = 0; c < cases; ++c) {
        const Shape& s = shapes[c % std::size(shapes)];
        TensorD x = randu({s.n, s.k}, rng, -2.0, 2.0);
        std::vector<int> labels(static_cast<size_t>(s.n));
        for (auto& l : labels) l = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(s.k)));
        const auto res = ops::softmax_cross_entropy(x, labels);
        const auto loss = [&] { return ops::softmax_cross_entropy(x, labels).loss; };
        fd_check({{&x, &res.grad_logits}}, loss, &report);
    }
    return report;
}

GradCheckReport check_se(uint64_t seed, int cases) {
    GradCheckReport report{"se"};
    RngStream rng(seed);
    struct Shape { int64_t n, c, r, hw; };
    const Shape shapes[] = {{2, 4, 2, 3}, {1, 8, 4, 2}, {2, 6, 3, 2}, {1, 4, 4, 2}, {3, 8, 2, 1}};
    for (int c = 0; c < cases; ++c) {
        const Shape& s = shapes[c % std::size(shapes)];
        const int64_t h = s.c / s.r;
        TensorD x = randu({s.n, s.c, s.hw, s.hw}, rng);
        TensorD fc1_w = randu({s.c, h}, rng);
        TensorD fc1_b = randu({h}, rng);
        TensorD fc2_w = randu({h, s.c}, rng);
        TensorD fc2_b = randu({s.c}, rng);
        TensorD w = randu(x.shape, rng);
        ops::SECache<double> cache;
        ops::se_forward(x, fc1_w, fc1_b, fc2_w, fc2_b, &cache);
        const auto grads = ops::se_backward(w, x, fc1_w, fc2_w, cache);
        const auto loss = [&] { return wsum(ops::se_forward(x, fc1_w, fc1_b, fc2_w, fc2_b), w); };
        fd_check({{&x, &grads.input},
                  {&fc1_w, &grads.fc1_w},
                  {&fc1_b, &grads.fc1_b},
                  {&fc2_w, &grads.fc2_w},
                  {&fc2_b, &grads.fc2_b}},
                 loss, &report);
    }
    return report;
}

using CheckFn = GradCheckReport (*)(uint64_t, int);

const std::vector<std::pair<std::string, CheckFn>>& registry() {
    static const std::vector<std::pair<std::string, CheckFn>> r = {
        {"conv2d", check_conv2d},   {"batchnorm", check_batchnorm},
        {"linear", check_linear},   {"avgpool", check_avgpool},
        {"relu", check_relu},       {"sigmoid", check_sigmoid},
        {"dropout", check_dropout}, {"softmax_ce", check_softmax_ce},
        {"se", check_se},
    };
    return r;
}

}  // namespace

const std::vector<std::string>& grad_check_ops() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const auto& [name, fn] : registry()) n.push_back(name);
        return n;
    }();
    return names;
}

std::vector<GradCheckReport> grad_check_all(uint64_t seed, int cases) {
    std::vector<GradCheckReport> out;
    for (const auto& [name, fn] : registry()) out.push_back(fn(seed, cases));
    return out;
}

GradCheckReport grad_check_op(const std::string& op, uint64_t seed, int cases) {
    for (const auto& [name, fn] : registry())
        if (name == op) return fn(seed, cases);
    throw UsageError("unknown grad-check op '" + op + "'");
}

}  // namespace bnet
