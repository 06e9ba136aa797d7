#pragma once

#include <string>

#include "budgetnet/model.hpp"
#include "budgetnet/rng.hpp"

namespace bnet {

enum class InitKind { kHe, kXavier, kNormal };

struct InitScheme {
    InitKind kind = InitKind::kHe;
    double normal_std = 0.01;  // used by kNormal only
};

InitKind init_kind_from_string(const std::string& name);
const char* init_kind_name(InitKind kind);

// Draws weights in parameter-list order:
//   he:     normal(0, sqrt(2 / fan_in))
//   xavier: uniform on +/- sqrt(6 / (fan_in + fan_out))
//   normal: normal(0, normal_std)
// Conv fan_in = Cin*F*F, fan_out = Cout*F*F; linear (and SE fc) fan_in = D,
// fan_out = M. BN gamma <- 1, beta <- 0, biases <- 0 (no draws).
void initialize(Model& model, const InitScheme& scheme, RngStream& rng);

// construct + initialize in one go.
Model build(ResNetConfig config, const InitScheme& scheme, RngStream& rng);

}  // namespace bnet
