#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "segloss/errors.hpp"
#include "segloss/field.hpp"
#include "segloss/losses.hpp"

namespace segloss {

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline ConfusionCounts confusion(const LabelField& seg, const LabelField& ref) {
    if (!(seg.shape() == ref.shape()))
        throw ValidationError("confusion: shape mismatch, " + seg.shape().to_string() + " vs " +
                              ref.shape().to_string());
    if (seg.classes() != 2 || ref.classes() != 2)
        throw ValidationError("confusion: expects two-class fields");
    ConfusionCounts c;
    for (std::size_t n = 0; n < seg.element_count(); ++n) {
        const bool s = seg.at(n, kForeground) == 1.0;
        const bool r = ref.at(n, kForeground) == 1.0;
        if (s && r) ++c.tp;
        else if (s && !r) ++c.fp;
        else if (!s && r) ++c.fn;
        else ++c.tn;
    }
    return c;
}

// Dice overlap of one class: 2|S∩R| / (|S| + |R|). Two empty sets count as a
// perfect match.
inline double dsc(const LabelField& seg, const LabelField& ref, std::size_t foreground_class = kForeground) {
    if (!(seg.shape() == ref.shape()))
        throw ValidationError("dsc: shape mismatch, " + seg.shape().to_string() + " vs " +
                              ref.shape().to_string());
    if (seg.classes() != ref.classes())
        throw ValidationError("dsc: class count mismatch");
    if (foreground_class >= seg.classes())
        throw ValidationError("dsc: class index out of range");
    std::size_t overlap = 0, s_vol = 0, r_vol = 0;
    for (std::size_t n = 0; n < seg.element_count(); ++n) {
        const bool s = seg.at(n, foreground_class) == 1.0;
        const bool r = ref.at(n, foreground_class) == 1.0;
        if (s) ++s_vol;
        if (r) ++r_vol;
        if (s && r) ++overlap;
    }
    if (s_vol + r_vol == 0) return 1.0;
    return 2.0 * static_cast<double>(overlap) / static_cast<double>(s_vol + r_vol);
}

// Weighted multiclass overlap score; the complement of the generalized dice
// loss evaluated on hard labelings, without smoothing. Per-class sums
// accumulate in element order, mirroring the loss kernel, so the two agree to
// the last rounding of the final subtraction. A zero weighted denominator
// (possible only with zero weights on every populated class) counts as a
// perfect match, consistent with the empty-set convention of dsc.
inline double gds(const LabelField& seg, const LabelField& ref, const GdlWeights& weights) {
    if (!(seg.shape() == ref.shape()))
        throw ValidationError("gds: shape mismatch, " + seg.shape().to_string() + " vs " +
                              ref.shape().to_string());
    if (seg.classes() != ref.classes())
        throw ValidationError("gds: class count mismatch");
    if (weights.w.size() != seg.classes())
        throw ValidationError("gds: weight count does not match class count");
    for (double w : weights.w)
        if (!(w >= 0.0) || !std::isfinite(w))
            throw ValidationError("gds: weights must be finite and non-negative");
    double num = 0.0, den = 0.0;
    for (std::size_t l = 0; l < seg.classes(); ++l) {
        double overlap = 0.0, mass = 0.0;
        for (std::size_t n = 0; n < seg.element_count(); ++n) {
            const double s = seg.at(n, l);
            const double r = ref.at(n, l);
            overlap += r * s;
            mass += r + s;
        }
        num += weights.w[l] * overlap;
        den += weights.w[l] * mass;
    }
    if (den == 0.0) return 1.0;
    return 2.0 * num / den;
}

struct SensSpec {
    double sensitivity = 0.0;
    double specificity = 0.0;
    bool degenerate = false; // an empty reference set forced a 1.0 by convention
};

inline SensSpec sensitivity_specificity(const LabelField& seg, const LabelField& ref) {
    const ConfusionCounts c = confusion(seg, ref);
    SensSpec out;
    if (c.tp + c.fn == 0) {
        out.sensitivity = 1.0;
        out.degenerate = true;
    } else {
        out.sensitivity = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    }
    if (c.tn + c.fp == 0) {
        out.specificity = 1.0;
        out.degenerate = true;
    } else {
        out.specificity = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
    }
    return out;
}

// Linear-interpolation quantile of a sorted sample (the common spreadsheet
// definition): index q * (n - 1), interpolated between neighbors.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw ValidationError("quantile_sorted: empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile_sorted: q must lie in [0,1]");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

struct TraceStats {
    double median = 0.0;
    double iqr = 0.0;
    std::size_t window = 0;
};

// Median and interquartile range over the last `window` entries of a trace.
inline TraceStats trace_stats(const std::vector<double>& trace, std::size_t window) {
    if (window == 0) throw ValidationError("trace_stats: window must be >= 1");
    if (trace.size() < window)
        throw ValidationError("trace_stats: trace has " + std::to_string(trace.size()) +
                              " entries, needs at least " + std::to_string(window));
    std::vector<double> tail(trace.end() - static_cast<std::ptrdiff_t>(window), trace.end());
    std::sort(tail.begin(), tail.end());
    TraceStats out;
    out.window = window;
    out.median = quantile_sorted(tail, 0.5);
    out.iqr = quantile_sorted(tail, 0.75) - quantile_sorted(tail, 0.25);
    return out;
}

} // namespace segloss
