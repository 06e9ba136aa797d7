#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bnet {

struct GradCheckReport {
    std::string op;
    double max_rel_err = 0.0;  // worst element across every case
    int64_t elements = 0;      // gradient elements compared
};

// Names in the order grad_check_all reports them.
const std::vector<std::string>& grad_check_ops();

// Central finite differences (double precision, eps = 1e-5) against each
// op's analytic backward pass, over `cases` random shapes per op. Relative
// error per element is |analytic - fd| / max(|analytic|, |fd|, 1e-6).
std::vector<GradCheckReport> grad_check_all(uint64_t seed, int cases = 5);

// Single op by name; throws UsageError on an unknown name.
GradCheckReport grad_check_op(const std::string& op, uint64_t seed, int cases = 5);

// Everything below this is comfortably passed by correct analytic gradients
// and decisively failed by broken ones.
inline constexpr double kGradCheckTolerance = 1e-4;

}  // namespace bnet
