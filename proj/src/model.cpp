#include "budgetnet/model.hpp"

#include <cmath>

namespace bnet {

namespace {

void fail(const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
}

void check_list(const std::string& field, const std::vector<int64_t>& v, int64_t n, bool odd) {
    if (static_cast<int64_t>(v.size()) != n)
        fail(field, "needs exactly " + std::to_string(n) + " entries, got " +
                        std::to_string(v.size()));
    for (int64_t x : v) {
        if (x < 1) fail(field, "entries must be positive, got " + std::to_string(x));
        if (odd && x % 2 == 0) fail(field, "entries must be odd, got " + std::to_string(x));
    }
}

}  // namespace

int64_t avgpool_kernel(int64_t n_layers) {
    if (n_layers < 1 || n_layers > 5)
        throw ConfigError("avgpool_kernel: n_layers must be in [1,5], got " +
                          std::to_string(n_layers));
    return 32 >> (n_layers - 1);
}

void ResNetConfig::validate() {
    if (n_layers < 1 || n_layers > 4)
        fail("residual_layers", "must be in [1,4], got " + std::to_string(n_layers));
    check_list("residual_blocks", blocks, n_layers, false);
    check_list("channels", channels, n_layers, false);
    check_list("conv_kernel_sizes", conv_kernels, n_layers, true);
    check_list("shortcut_kernel_sizes", skip_kernels, n_layers, true);
    const int64_t want_pool = avgpool_kernel(n_layers);
    if (pool_kernel == 0) pool_kernel = want_pool;
    if (pool_kernel != want_pool)
        fail("avg_pool_kernel_size", "must equal 32/2^(residual_layers-1) = " +
                                         std::to_string(want_pool) + " for 32x32 inputs, got " +
                                         std::to_string(pool_kernel));
    if (se_enabled) {
        if (se_ratio < 1) fail("se_ratio", "must be positive");
        for (int64_t c : channels)
            if (c % se_ratio != 0)
                fail("se_ratio", std::to_string(se_ratio) + " does not divide channel count " +
                                     std::to_string(c));
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0)
        fail("dropout", "must be in [0,1), got " + std::to_string(dropout_p));
    if (num_classes < 1) fail("num_classes", "must be positive");
}

int64_t count_params(const ResNetConfig& config) {
    ResNetConfig cfg = config;
    cfg.validate();
    const auto bn = [](int64_t c) { return 2 * c; };
    int64_t total = 3 * cfg.channels[0] * 3 * 3 + bn(cfg.channels[0]);  // stem
    int64_t in_ch = cfg.channels[0];
    for (int64_t i = 0; i < cfg.n_layers; ++i) {
        const int64_t c = cfg.channels[static_cast<size_t>(i)];
        const int64_t f = cfg.conv_kernels[static_cast<size_t>(i)];
        const int64_t k = cfg.skip_kernels[static_cast<size_t>(i)];
        for (int64_t b = 0; b < cfg.blocks[static_cast<size_t>(i)]; ++b) {
            const int64_t cin = (b == 0) ? in_ch : c;
            const int64_t stride = (b == 0 && i > 0) ? 2 : 1;
            total += cin * c * f * f + bn(c);  // conv1 + bn1
            total += c * c * f * f + bn(c);    // conv2 + bn2
            if (cfg.se_enabled) {
                const int64_t hidden = c / cfg.se_ratio;
                total += c * hidden + hidden + hidden * c + c;
            }
            if (stride != 1 || cin != c) total += cin * c * k * k + bn(c);
        }
        in_ch = c;
    }
    total += in_ch * cfg.num_classes + cfg.num_classes;  // classifier
    return total;
}

// --- layer wrappers ----------------------------------------------------------

TensorF Conv2d::forward(const TensorF& x, bool keep) {
    if (keep) cached_input = x;
    return ops::conv2d_forward(x, weight, stride, padding);
}

TensorF Conv2d::backward(const TensorF& grad_out) {
    auto g = ops::conv2d_backward(grad_out, cached_input, weight, stride, padding);
    weight.ensure_grad();
    for (int64_t i = 0; i < weight.numel(); ++i) weight.grad[static_cast<size_t>(i)] += g.weight.at(i);
    return std::move(g.input);
}

TensorF BatchNorm2d::forward(const TensorF& x, ops::Mode mode, bool keep) {
    return ops::batchnorm_forward(x, state, mode, keep ? &cache : nullptr);
}

TensorF BatchNorm2d::backward(const TensorF& grad_out) {
    auto g = ops::batchnorm_backward(grad_out, state, cache);
    state.gamma.ensure_grad();
    state.beta.ensure_grad();
    for (int64_t c = 0; c < state.channels(); ++c) {
        state.gamma.grad[static_cast<size_t>(c)] += g.gamma.at(c);
        state.beta.grad[static_cast<size_t>(c)] += g.beta.at(c);
    }
    return std::move(g.input);
}

TensorF Linear::forward(const TensorF& x, bool keep) {
    if (keep) cached_input = x;
    return ops::linear_forward(x, weight, bias);
}

TensorF Linear::backward(const TensorF& grad_out) {
    auto g = ops::linear_backward(grad_out, cached_input, weight);
    weight.ensure_grad();
    bias.ensure_grad();
    for (int64_t i = 0; i < weight.numel(); ++i) weight.grad[static_cast<size_t>(i)] += g.weight.at(i);
    for (int64_t i = 0; i < bias.numel(); ++i) bias.grad[static_cast<size_t>(i)] += g.bias.at(i);
    return std::move(g.input);
}

TensorF SEBlock::forward(const TensorF& x, bool keep) {
    if (force_unit_gate) return x;
    if (keep) cached_input = x;
    return ops::se_forward(x, fc1_w, fc1_b, fc2_w, fc2_b, keep ? &cache : nullptr);
}

TensorF SEBlock::backward(const TensorF& grad_out) {
    if (force_unit_gate) return grad_out;
    auto g = ops::se_backward(grad_out, cached_input, fc1_w, fc2_w, cache);
    auto acc = [](TensorF& p, const TensorF& gp) {
        p.ensure_grad();
        for (int64_t i = 0; i < p.numel(); ++i) p.grad[static_cast<size_t>(i)] += gp.at(i);
    };
    acc(fc1_w, g.fc1_w);
    acc(fc1_b, g.fc1_b);
    acc(fc2_w, g.fc2_w);
    acc(fc2_b, g.fc2_b);
    return std::move(g.input);
}

TensorF BasicBlock::forward(const TensorF& x, ops::Mode mode, RngStream* rng, bool keep) {
    TensorF t = conv1.forward(x, keep);
    t = bn1.forward(t, mode, keep);
    t = ops::relu(t);
    t = conv2.forward(t, keep);  // conv2's cached input is also the relu mask
    t = bn2.forward(t, mode, keep);
    if (se) t = se->forward(t, keep);
    if (dropout_p > 0.0) {
        auto d = ops::dropout_forward(t, dropout_p, rng, mode);
        t = std::move(d.output);
        if (keep) dropout_mask = std::move(d.mask);
    }
    TensorF sc = x;
    if (shortcut_conv) {
        sc = shortcut_conv->forward(x, keep);
        sc = shortcut_bn->forward(sc, mode, keep);
    }
    if (t.shape != sc.shape)
        throw UsageError("residual add: body " + t.shape_str() + " vs shortcut " + sc.shape_str());
    for (int64_t i = 0; i < t.numel(); ++i) t.at(i) += sc.at(i);
    t = ops::relu(t);
    if (keep) cached_out = t;
    return t;
}

TensorF BasicBlock::backward(const TensorF& grad_out) {
    // Final relu: cached_out > 0 iff its input was > 0.
    TensorF g_sum = ops::relu_backward(grad_out, cached_out);

    TensorF g_short;
    if (shortcut_conv) {
        TensorF t = shortcut_bn->backward(g_sum);
        g_short = shortcut_conv->backward(t);
    } else {
        g_short = g_sum;
    }

    TensorF g = std::move(g_sum);
    if (dropout_p > 0.0) g = ops::dropout_backward(g, dropout_mask, dropout_p);
    if (se) g = se->backward(g);
    g = bn2.backward(g);
    g = conv2.backward(g);
    g = ops::relu_backward(g, conv2.cached_input);  // conv2's input is the relu output
    g = bn1.backward(g);
    g = conv1.backward(g);

    for (int64_t i = 0; i < g.numel(); ++i) g.at(i) += g_short.at(i);
    return g;
}

// --- model -------------------------------------------------------------------

Model construct(ResNetConfig config) {
    config.validate();
    Model m;
    m.config = config;

    m.stem_conv.weight = TensorF({config.channels[0], 3, 3, 3});
    m.stem_conv.stride = 1;
    m.stem_conv.padding = 1;
    m.stem_bn.state = ops::BatchNormState<float>::make(config.channels[0]);

    int64_t in_ch = config.channels[0];
    for (int64_t i = 0; i < config.n_layers; ++i) {
        const int64_t c = config.channels[static_cast<size_t>(i)];
        const int64_t f = config.conv_kernels[static_cast<size_t>(i)];
        const int64_t k = config.skip_kernels[static_cast<size_t>(i)];
        std::vector<BasicBlock> blocks;
        for (int64_t b = 0; b < config.blocks[static_cast<size_t>(i)]; ++b) {
            const int64_t cin = (b == 0) ? in_ch : c;
            const int64_t stride = (b == 0 && i > 0) ? 2 : 1;
            BasicBlock blk;
            blk.conv1.weight = TensorF({c, cin, f, f});
            blk.conv1.stride = stride;
            blk.conv1.padding = (f - 1) / 2;
            blk.bn1.state = ops::BatchNormState<float>::make(c);
            blk.conv2.weight = TensorF({c, c, f, f});
            blk.conv2.stride = 1;
            blk.conv2.padding = (f - 1) / 2;
            blk.bn2.state = ops::BatchNormState<float>::make(c);
            if (config.se_enabled) {
                const int64_t hidden = c / config.se_ratio;
                SEBlock se;
                se.fc1_w = TensorF({c, hidden});
                se.fc1_b = TensorF({hidden});
                se.fc2_w = TensorF({hidden, c});
                se.fc2_b = TensorF({c});
                blk.se = std::move(se);
            }
            blk.dropout_p = config.dropout_p;
            if (stride != 1 || cin != c) {
                Conv2d sc;
                sc.weight = TensorF({c, cin, k, k});
                sc.stride = stride;
                sc.padding = (k - 1) / 2;
                blk.shortcut_conv = std::move(sc);
                BatchNorm2d sbn;
                sbn.state = ops::BatchNormState<float>::make(c);
                blk.shortcut_bn = std::move(sbn);
            }
            blocks.push_back(std::move(blk));
        }
        m.layers.push_back(std::move(blocks));
        in_ch = c;
    }

    m.classifier.weight = TensorF({in_ch, config.num_classes});
    m.classifier.bias = TensorF({config.num_classes});
    return m;
}

TensorF Model::forward(const TensorF& x, ops::Mode mode, RngStream* rng) {
    const bool keep = (mode == ops::Mode::kTrain);
    TensorF t = stem_conv.forward(x, keep);
    t = stem_bn.forward(t, mode, keep);
    t = ops::relu(t);
    // The first block's conv1 caches this activation; its backward mask comes
    // from there rather than a second copy here.
    for (auto& layer : layers)
        for (auto& blk : layer) t = blk.forward(t, mode, rng, keep);
    t = ops::avgpool_forward(t, config.pool_kernel);
    t.shape = {t.dim(0), t.numel() / t.dim(0)};  // flatten
    return classifier.forward(t, keep);
}

void Model::backward(const TensorF& grad_logits) {
    TensorF g = classifier.backward(grad_logits);
    const int64_t n = g.dim(0);
    const int64_t c = g.dim(1);
    g.shape = {n, c, 1, 1};
    g = ops::avgpool_backward(g, config.pool_kernel);
    for (auto layer = layers.rbegin(); layer != layers.rend(); ++layer)
        for (auto blk = layer->rbegin(); blk != layer->rend(); ++blk) g = blk->backward(g);
    g = ops::relu_backward(g, layers.front().front().conv1.cached_input);
    g = stem_bn.backward(g);
    stem_conv.backward(g);
}

std::vector<ParamRef> Model::parameters() {
    std::vector<ParamRef> out;
    auto add_bn = [&out](const std::string& prefix, BatchNorm2d& bn) {
        out.push_back({prefix + ".gamma", ParamKind::kBnGamma, &bn.state.gamma});
        out.push_back({prefix + ".beta", ParamKind::kBnBeta, &bn.state.beta});
    };
    out.push_back({"stem.conv.weight", ParamKind::kConvWeight, &stem_conv.weight});
    add_bn("stem.bn", stem_bn);
    for (size_t i = 0; i < layers.size(); ++i) {
        for (size_t b = 0; b < layers[i].size(); ++b) {
            const std::string p = "layer" + std::to_string(i + 1) + ".block" + std::to_string(b);
            BasicBlock& blk = layers[i][b];
            out.push_back({p + ".conv1.weight", ParamKind::kConvWeight, &blk.conv1.weight});
            add_bn(p + ".bn1", blk.bn1);
            out.push_back({p + ".conv2.weight", ParamKind::kConvWeight, &blk.conv2.weight});
            add_bn(p + ".bn2", blk.bn2);
            if (blk.se) {
                out.push_back({p + ".se.fc1.weight", ParamKind::kLinearWeight, &blk.se->fc1_w});
                out.push_back({p + ".se.fc1.bias", ParamKind::kBias, &blk.se->fc1_b});
                out.push_back({p + ".se.fc2.weight", ParamKind::kLinearWeight, &blk.se->fc2_w});
                out.push_back({p + ".se.fc2.bias", ParamKind::kBias, &blk.se->fc2_b});
            }
            if (blk.shortcut_conv) {
                out.push_back(
                    {p + ".shortcut.conv.weight", ParamKind::kConvWeight, &blk.shortcut_conv->weight});
                add_bn(p + ".shortcut.bn", *blk.shortcut_bn);
            }
        }
    }
    out.push_back({"classifier.weight", ParamKind::kLinearWeight, &classifier.weight});
    out.push_back({"classifier.bias", ParamKind::kBias, &classifier.bias});
    return out;
}

std::vector<ParamRef> Model::state_tensors() {
    std::vector<ParamRef> out = parameters();
    auto add_running = [&out](const std::string& prefix, BatchNorm2d& bn) {
        out.push_back({prefix + ".running_mean", ParamKind::kBnRunning, &bn.state.running_mean});
        out.push_back({prefix + ".running_var", ParamKind::kBnRunning, &bn.state.running_var});
    };
    add_running("stem.bn", stem_bn);
    for (size_t i = 0; i < layers.size(); ++i)
        for (size_t b = 0; b < layers[i].size(); ++b) {
            const std::string p = "layer" + std::to_string(i + 1) + ".block" + std::to_string(b);
            add_running(p + ".bn1", layers[i][b].bn1);
            add_running(p + ".bn2", layers[i][b].bn2);
            if (layers[i][b].shortcut_bn) add_running(p + ".shortcut.bn", *layers[i][b].shortcut_bn);
        }
    return out;
}

int64_t Model::total_params() {
    int64_t n = 0;
    for (const auto& p : parameters()) n += p.tensor->numel();
    return n;
}

void Model::zero_grad() {
    for (auto& p : parameters()) {
        p.tensor->ensure_grad();
        p.tensor->zero_grad();
    }
}

void Model::set_force_unit_gate(bool on) {
    for (auto& layer : layers)
        for (auto& blk : layer)
            if (blk.se) blk.se->force_unit_gate = on;
}

}  // namespace bnet
