#include "budgetnet/init.hpp"

#include <cmath>

namespace bnet {

InitKind init_kind_from_string(const std::string& name) {
    if (name == "he") return InitKind::kHe;
    if (name == "xavier") return InitKind::kXavier;
    if (name == "normal") return InitKind::kNormal;
    throw ConfigError("init: unknown scheme '" + name + "' (expected he, xavier or normal)");
}

const char* init_kind_name(InitKind kind) {
    switch (kind) {
        case InitKind::kHe: return "he";
        case InitKind::kXavier: return "xavier";
        default: return "normal";
    }
}

namespace {

void fan_in_out(const ParamRef& p, double* fan_in, double* fan_out) {
    const auto& s = p.tensor->shape;
    if (p.kind == ParamKind::kConvWeight) {  // [Cout, Cin, F, F]
        *fan_in = static_cast<double>(s[1] * s[2] * s[3]);
        *fan_out = static_cast<double>(s[0] * s[2] * s[3]);
    } else {  // linear [D, M]
        *fan_in = static_cast<double>(s[0]);
        *fan_out = static_cast<double>(s[1]);
    }
}

}  // namespace

void initialize(Model& model, const InitScheme& scheme, RngStream& rng) {
    if (scheme.kind == InitKind::kNormal && scheme.normal_std <= 0.0)
        throw ConfigError("init: normal_std must be positive, got " +
                          std::to_string(scheme.normal_std));
    for (auto& p : model.parameters()) {
        TensorF& t = *p.tensor;
        switch (p.kind) {
            case ParamKind::kBnGamma:
                std::fill(t.data.begin(), t.data.end(), 1.0f);
                break;
            case ParamKind::kBnBeta:
            case ParamKind::kBias:
                std::fill(t.data.begin(), t.data.end(), 0.0f);
                break;
            case ParamKind::kConvWeight:
            case ParamKind::kLinearWeight: {
                double fan_in = 0, fan_out = 0;
                fan_in_out(p, &fan_in, &fan_out);
                if (scheme.kind == InitKind::kHe) {
                    const double std = std::sqrt(2.0 / fan_in);
                    for (auto& v : t.data) v = static_cast<float>(rng.normal() * std);
                } else if (scheme.kind == InitKind::kXavier) {
                    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
                    for (auto& v : t.data)
                        v = static_cast<float>((rng.uniform() * 2.0 - 1.0) * bound);
                } else {
                    for (auto& v : t.data) v = static_cast<float>(rng.normal() * scheme.normal_std);
                }
                break;
            }
            case ParamKind::kBnRunning:
                break;  // not a trainable parameter; construct() set it
        }
    }
}

Model build(ResNetConfig config, const InitScheme& scheme, RngStream& rng) {
    Model m = construct(std::move(config));
    initialize(m, scheme, rng);
    return m;
}

}  // namespace bnet
