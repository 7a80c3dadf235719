#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "segloss/field.hpp"
#include "segloss/losses.hpp"
#include "segloss/rng.hpp"

namespace segloss {

struct GradCheckCase {
    ProbField probs;
    LabelField ref;
};

// Random two-class pair on a random small grid. Probabilities stay inside
// [margin, 1-margin] so the difference stencil never leaves the domain and
// the log clamp stays inactive.
inline GradCheckCase random_two_class_case(Rng& rng, double fg_fraction, double margin = 1e-3) {
    const std::size_t h = 6 + rng.uniform_index(15); // grids from 6x8 to 20x22
    const std::size_t w = 8 + rng.uniform_index(15);
    GridShape shape({h, w});
    const std::size_t n = shape.element_count();

    std::vector<std::uint32_t> labels(n, 0);
    std::size_t fg = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (rng.uniform() < fg_fraction) {
            labels[i] = 1;
            ++fg;
        }
    if (fg == 0) labels[rng.uniform_index(n)] = 1; // keep both classes present

    std::vector<double> values(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = rng.uniform_real(margin, 1.0 - margin);
        values[i * 2 + kBackground] = 1.0 - p;
        values[i * 2 + kForeground] = p;
    }
    return {ProbField(shape, 2, std::move(values)), onehot_encode(shape, labels, 2)};
}

// 512 elements with exactly one foreground element: the extreme-imbalance pair.
inline GradCheckCase extreme_imbalance_case(Rng& rng, double margin = 1e-3) {
    GridShape shape({16, 32});
    const std::size_t n = shape.element_count();
    std::vector<std::uint32_t> labels(n, 0);
    labels[rng.uniform_index(n)] = 1;
    std::vector<double> values(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = rng.uniform_real(margin, 1.0 - margin);
        values[i * 2 + kBackground] = 1.0 - p;
        values[i * 2 + kForeground] = p;
    }
    return {ProbField(shape, 2, std::move(values)), onehot_encode(shape, labels, 2)};
}

struct GradCheckReport {
    LossKind loss = LossKind::wce;
    std::size_t pairs = 0;
    std::size_t skipped = 0;  // stencil skips across all pairs; expected 0
    double max_rel_err = 0.0; // worst max-abs deviation over the largest stencil entry
    bool ok = false;
};

// Deviation of the analytic foreground-direction gradient from the central
// stencil, normalized by the largest stencil entry of the pair.
inline double gradient_deviation(LossKind kind, const GradCheckCase& c, const LossConfig& cfg, double h,
                                 std::size_t* skipped = nullptr) {
    const LossOutput out = evaluate_loss(kind, c.probs, c.ref, cfg);
    const std::vector<double> analytic = foreground_direction(out, 2);
    const FiniteDiffResult fd = finite_diff_grad(
        [&](const ProbField& p, const LabelField& r) { return evaluate_loss(kind, p, r, cfg).value; },
        c.probs, c.ref, h);
    if (skipped) *skipped += fd.skipped.size();
    double scale = 0.0, dev = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double f = fd.grad[i * 2 + kForeground];
        scale = std::max(scale, std::abs(f));
        dev = std::max(dev, std::abs(analytic[i] - f));
    }
    return dev / std::max(scale, 1e-300);
}

// Seeded sweep over random pairs; pair 0 is the 1-in-512 extreme case.
inline GradCheckReport gradcheck_loss(LossKind kind, std::size_t pairs, double h, double tol,
                                      std::uint64_t seed, const LossConfig& cfg = LossConfig{}) {
    if (pairs == 0) throw ValidationError("gradcheck_loss: pairs must be >= 1");
    GradCheckReport report;
    report.loss = kind;
    report.pairs = pairs;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(kind)));
    for (std::size_t i = 0; i < pairs; ++i) {
        const GradCheckCase c = i == 0 ? extreme_imbalance_case(rng)
                                       : random_two_class_case(rng, rng.uniform_real(0.02, 0.5));
        report.max_rel_err =
            std::max(report.max_rel_err, gradient_deviation(kind, c, cfg, h, &report.skipped));
    }
    report.ok = report.skipped == 0 && report.max_rel_err < tol;
    return report;
}

} // namespace segloss
