#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "segloss/errors.hpp"
#include "segloss/field.hpp"

namespace segloss {

// Probabilities are clamped to [kLogClamp, 1 - kLogClamp] before logarithms.
// The clamp is treated as the identity when differentiating.
inline constexpr double kLogClamp = 1e-7;

enum class WceWeightSource {
    prediction_sum, // w = (N - sum(p)) / sum(p); the weight depends on p and is differentiated through
    reference_sum,  // w = (N - sum(r)) / sum(r); constant with respect to p
};

struct LossConfig {
    double epsilon = 1e-5;                // smoothing for dice-family ratios
    double lambda = 0.05;                 // sensitivity weight in the sensitivity-specificity loss
    WceWeightSource wce_weight_source = WceWeightSource::prediction_sum;
    double volume_floor = 1.0;            // lower bound on class volume inside gdl_weights

    void validate() const {
        if (!(epsilon > 0.0)) throw ValidationError("LossConfig: epsilon must be > 0");
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("LossConfig: lambda must lie in [0,1]");
        if (!(volume_floor > 0.0)) throw ValidationError("LossConfig: volume_floor must be > 0");
    }
};

// Value plus per-coordinate partial derivatives, laid out like the field
// values (grad[n * classes + l]). For the two-class losses the foreground
// column carries the complete derivative with respect to the foreground
// probability (the background probability being its complement) and the
// background column is zero. The multiclass generalized dice gradient treats
// every p_nl as an independent coordinate.
struct LossOutput {
    double value = 0.0;
    std::vector<double> grad;
};

struct GdlWeights {
    std::vector<double> w; // one weight per class
};

enum class LossKind { wce, dl2, ss, gdl_v, gdl_uniform };

inline std::string_view loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::wce: return "wce";
        case LossKind::dl2: return "dl2";
        case LossKind::ss: return "ss";
        case LossKind::gdl_v: return "gdl_v";
        case LossKind::gdl_uniform: return "gdl_uniform";
    }
    throw ValidationError("loss_kind_name: unknown kind");
}

inline LossKind loss_kind_from_name(std::string_view name) {
    if (name == "wce") return LossKind::wce;
    if (name == "dl2") return LossKind::dl2;
    if (name == "ss") return LossKind::ss;
    if (name == "gdl_v" || name == "gdl") return LossKind::gdl_v; // volume weighting is the default GDL
    if (name == "gdl_uniform") return LossKind::gdl_uniform;
    throw ValidationError("unknown loss name: " + std::string(name) +
                          " (expected wce, dl2, ss, gdl_v or gdl_uniform)");
}

namespace detail {

inline void check_pair(const ProbField& probs, const LabelField& ref, bool two_class, const char* what) {
    if (!(probs.shape() == ref.shape()))
        throw ValidationError(std::string(what) + ": shape mismatch, predictions " + probs.shape().to_string() +
                              " vs reference " + ref.shape().to_string());
    if (probs.classes() != ref.classes())
        throw ValidationError(std::string(what) + ": class count mismatch, " + std::to_string(probs.classes()) +
                              " vs " + std::to_string(ref.classes()));
    if (two_class && probs.classes() != 2)
        throw ValidationError(std::string(what) + ": expects two classes, got " + std::to_string(probs.classes()));
}

inline double clamp_unit(double p) {
    if (p < kLogClamp) return kLogClamp;
    if (p > 1.0 - kLogClamp) return 1.0 - kLogClamp;
    return p;
}

} // namespace detail

// Weighted cross-entropy over a two-class field. The foreground term is
// scaled by w = (N - S) / S with S either sum(p) or sum(r); S = 0 is a
// degenerate weight and is rejected. Sums accumulate in element order.
inline LossOutput wce(const ProbField& probs, const LabelField& ref, const LossConfig& cfg) {
    cfg.validate();
    detail::check_pair(probs, ref, true, "wce");
    const std::size_t n_elems = probs.element_count();
    const double n = static_cast<double>(n_elems);

    double raw_sum = 0.0, clamped_sum = 0.0, ref_sum = 0.0;
    for (std::size_t i = 0; i < n_elems; ++i) {
        const double p = probs.at(i, kForeground);
        raw_sum += p;
        clamped_sum += detail::clamp_unit(p);
        ref_sum += ref.at(i, kForeground);
    }

    const bool from_pred = cfg.wce_weight_source == WceWeightSource::prediction_sum;
    if (from_pred && raw_sum == 0.0)
        throw NumericError("wce: degenerate weight, prediction sum is zero");
    if (!from_pred && ref_sum == 0.0)
        throw NumericError("wce: degenerate weight, reference sum is zero");
    const double t = from_pred ? clamped_sum : ref_sum;
    const double w = (n - t) / t;

    double acc = 0.0, fg_log_sum = 0.0;
    for (std::size_t i = 0; i < n_elems; ++i) {
        const double p = detail::clamp_unit(probs.at(i, kForeground));
        const double r = ref.at(i, kForeground);
        acc += w * r * std::log(p) + (1.0 - r) * std::log(1.0 - p);
        fg_log_sum += r * std::log(p);
    }

    LossOutput out;
    out.value = -acc / n;
    out.grad.assign(n_elems * 2, 0.0);
    for (std::size_t i = 0; i < n_elems; ++i) {
        const double p = detail::clamp_unit(probs.at(i, kForeground));
        const double r = ref.at(i, kForeground);
        double g = -(w * r / p - (1.0 - r) / (1.0 - p)) / n;
        if (from_pred) g += fg_log_sum / (t * t); // through dw/dp_i = -n / t^2
        out.grad[i * 2 + kForeground] = g;
    }
    return out;
}

// Two-class dice loss: one minus the smoothed foreground and background
// overlap ratios. Can dip a hair below zero near a perfect match because of
// the smoothing terms; bounded by [0,1] away from that corner.
inline LossOutput dice_loss2(const ProbField& probs, const LabelField& ref, const LossConfig& cfg) {
    cfg.validate();
    detail::check_pair(probs, ref, true, "dice_loss2");
    const std::size_t n_elems = probs.element_count();
    const double eps = cfg.epsilon;

    double s_rp = 0.0, s = 0.0, s_bb = 0.0;
    for (std::size_t i = 0; i < n_elems; ++i) {
        const double p = probs.at(i, kForeground);
        const double r = ref.at(i, kForeground);
        s_rp += p * r;
        s += p + r;
        s_bb += (1.0 - p) * (1.0 - r);
    }
    const double s2 = 2.0 * static_cast<double>(n_elems) - s;

    LossOutput out;
    out.value = 1.0 - (s_rp + eps) / (s + eps) - (s_bb + eps) / (s2 + eps);
    out.grad.assign(n_elems * 2, 0.0);
    const double d1 = (s + eps) * (s + eps);
    const double d2 = (s2 + eps) * (s2 + eps);
    for (std::size_t i = 0; i < n_elems; ++i) {
        const double r = ref.at(i, kForeground);
        out.grad[i * 2 + kForeground] =
            -(r * (s + eps) - (s_rp + eps)) / d1 - ((s_bb + eps) - (1.0 - r) * (s2 + eps)) / d2;
    }
    return out;
}

// Sensitivity-specificity loss: lambda weights the squared error over the
// foreground set, (1 - lambda) over the background set, each normalized by
// the smoothed set size.
inline LossOutput ss_loss(const ProbField& probs, const LabelField& ref, const LossConfig& cfg) {
    cfg.validate();
    detail::check_pair(probs, ref, true, "ss_loss");
    const std::size_t n_elems = probs.element_count();
    const double eps = cfg.epsilon;
    const double n = static_cast<double>(n_elems);

    double ref_sum = 0.0, num_fg = 0.0, num_bg = 0.0;
    for (std::size_t i = 0; i < n_elems; ++i) {
        const double p = probs.at(i, kForeground);
        const double r = ref.at(i, kForeground);
        const double d = (r - p) * (r - p);
        ref_sum += r;
        num_fg += d * r;
        num_bg += d * (1.0 - r);
    }
    const double fg_den = ref_sum + eps;
    const double bg_den = n - ref_sum + eps;

    LossOutput out;
    out.value = cfg.lambda * num_fg / fg_den + (1.0 - cfg.lambda) * num_bg / bg_den;
    out.grad.assign(n_elems * 2, 0.0);
    for (std::size_t i = 0; i < n_elems; ++i) {
        const double p = probs.at(i, kForeground);
        const double r = ref.at(i, kForeground);
        out.grad[i * 2 + kForeground] =
            -2.0 * (r - p) * (cfg.lambda * r / fg_den + (1.0 - cfg.lambda) * (1.0 - r) / bg_den);
    }
    return out;
}

// Inverse-square-volume class weights. Volumes below the floor are lifted to
// it so empty classes keep the weights finite.
inline GdlWeights gdl_weights(const LabelField& ref, const LossConfig& cfg) {
    cfg.validate();
    GdlWeights out;
    out.w.resize(ref.classes());
    for (std::size_t l = 0; l < ref.classes(); ++l) {
        const double v = std::max(static_cast<double>(ref.class_volume(l)), cfg.volume_floor);
        out.w[l] = 1.0 / (v * v);
    }
    return out;
}

// Generalized dice loss over any number of classes. The weights are treated
// as constants by the gradient even when they were derived from the reference.
inline LossOutput gdl(const ProbField& probs, const LabelField& ref, const GdlWeights& weights,
                      const LossConfig& cfg) {
    cfg.validate();
    detail::check_pair(probs, ref, false, "gdl");
    const std::size_t n_elems = probs.element_count();
    const std::size_t classes = probs.classes();
    if (weights.w.size() != classes)
        throw ValidationError("gdl: weight count " + std::to_string(weights.w.size()) +
                              " does not match class count " + std::to_string(classes));
    for (double w : weights.w)
        if (!(w >= 0.0) || !std::isfinite(w))
            throw ValidationError("gdl: weights must be finite and non-negative");

    double num = 0.0, den = 0.0;
    for (std::size_t l = 0; l < classes; ++l) {
        double overlap = 0.0, mass = 0.0;
        for (std::size_t i = 0; i < n_elems; ++i) {
            const double p = probs.at(i, l);
            const double r = ref.at(i, l);
            overlap += r * p;
            mass += r + p;
        }
        num += weights.w[l] * overlap;
        den += weights.w[l] * mass;
    }
    if (den == 0.0) throw NumericError("gdl: zero denominator, all weighted class masses vanish");

    LossOutput out;
    out.value = 1.0 - 2.0 * num / den;
    out.grad.assign(n_elems * classes, 0.0);
    const double den2 = den * den;
    for (std::size_t l = 0; l < classes; ++l) {
        const double wl = weights.w[l];
        for (std::size_t i = 0; i < n_elems; ++i) {
            const double r = ref.at(i, l);
            out.grad[i * classes + l] = -2.0 * wl * (r * den - num) / den2;
        }
    }
    return out;
}

// Closed-form two-class generalized dice gradient, written in terms of the
// foreground sums only. w_fg and w_bg are the foreground and background class
// weights. Equals the difference of the general gradient's foreground and
// background columns, i.e. the derivative along p_fg with p_bg = 1 - p_fg.
inline std::vector<double> gdl_grad_closed_form(const ProbField& probs, const LabelField& ref, double w_fg,
                                                double w_bg) {
    detail::check_pair(probs, ref, true, "gdl_grad_closed_form");
    const std::size_t n_elems = probs.element_count();
    const double n = static_cast<double>(n_elems);

    double s_rp = 0.0, s = 0.0;
    for (std::size_t i = 0; i < n_elems; ++i) {
        const double p = probs.at(i, kForeground);
        const double r = ref.at(i, kForeground);
        s_rp += p * r;
        s += p + r;
    }
    const double den = (w_fg - w_bg) * s + 2.0 * n * w_bg;
    if (den == 0.0) throw NumericError("gdl_grad_closed_form: zero denominator");
    const double den2 = den * den;

    std::vector<double> grad(n_elems);
    for (std::size_t i = 0; i < n_elems; ++i) {
        const double r = ref.at(i, kForeground);
        grad[i] = 2.0 *
                  ((w_fg * w_fg - w_bg * w_bg) * (s_rp - r * s) + n * w_bg * (w_fg + w_bg) * (1.0 - 2.0 * r)) /
                  den2;
    }
    return grad;
}

inline LossOutput evaluate_loss(LossKind kind, const ProbField& probs, const LabelField& ref,
                                const LossConfig& cfg) {
    switch (kind) {
        case LossKind::wce: return wce(probs, ref, cfg);
        case LossKind::dl2: return dice_loss2(probs, ref, cfg);
        case LossKind::ss: return ss_loss(probs, ref, cfg);
        case LossKind::gdl_v: return gdl(probs, ref, gdl_weights(ref, cfg), cfg);
        case LossKind::gdl_uniform: {
            GdlWeights uniform;
            uniform.w.assign(ref.classes(), 1.0);
            return gdl(probs, ref, uniform, cfg);
        }
    }
    throw ValidationError("evaluate_loss: unknown kind");
}

// Per-element derivative along the foreground coordinate of a two-class
// gradient: foreground column minus background column.
inline std::vector<double> foreground_direction(const LossOutput& out, std::size_t classes) {
    if (classes != 2) throw ValidationError("foreground_direction: expects two classes");
    std::vector<double> dir(out.grad.size() / 2);
    for (std::size_t i = 0; i < dir.size(); ++i)
        dir[i] = out.grad[i * 2 + kForeground] - out.grad[i * 2 + kBackground];
    return dir;
}

struct FdSkip {
    std::size_t element;
    std::size_t cls;
};

// Central-difference gradient estimate. Entries whose stencil would leave the
// domain are skipped (left zero) and reported, never silently clamped.
struct FiniteDiffResult {
    std::vector<double> grad; // same layout as LossOutput::grad
    std::vector<FdSkip> skipped;
};

// For two classes each element has one free coordinate: the foreground
// probability is varied and the background stays its complement, so the
// estimate lands in the foreground column (matching the two-class gradient
// convention above). For more classes the perturbed coordinate moves by h and
// the rest of the row is rescaled to keep the simplex, which measures the
// renormalizing directional derivative; compare against
// renormalizing_projection of an unconstrained gradient.
template <typename LossFn>
FiniteDiffResult finite_diff_grad(LossFn&& loss, const ProbField& probs, const LabelField& ref, double h = 1e-6) {
    if (!(h > 0.0)) throw ValidationError("finite_diff_grad: step must be > 0");
    const std::size_t n_elems = probs.element_count();
    const std::size_t classes = probs.classes();

    FiniteDiffResult result;
    result.grad.assign(n_elems * classes, 0.0);

    std::vector<double> work = probs.values();
    auto eval_at = [&](const std::vector<double>& values) {
        ProbField shifted(probs.shape(), classes, values);
        return loss(shifted, ref);
    };

    if (classes == 2) {
        for (std::size_t i = 0; i < n_elems; ++i) {
            const double p = probs.at(i, kForeground);
            if (p - h < 0.0 || p + h > 1.0) {
                result.skipped.push_back({i, kForeground});
                continue;
            }
            work[i * 2 + kForeground] = p + h;
            work[i * 2 + kBackground] = 1.0 - (p + h);
            const double up = eval_at(work);
            work[i * 2 + kForeground] = p - h;
            work[i * 2 + kBackground] = 1.0 - (p - h);
            const double down = eval_at(work);
            work[i * 2 + kForeground] = p;
            work[i * 2 + kBackground] = probs.at(i, kBackground);
            result.grad[i * 2 + kForeground] = (up - down) / (2.0 * h);
        }
        return result;
    }

    for (std::size_t i = 0; i < n_elems; ++i) {
        for (std::size_t l = 0; l < classes; ++l) {
            const double p = probs.at(i, l);
            if (p - h < 0.0 || p + h > 1.0) {
                result.skipped.push_back({i, l});
                continue;
            }
            const double rest = 1.0 - p;
            auto shift = [&](double delta) {
                const double scale = (rest - delta) / rest;
                for (std::size_t m = 0; m < classes; ++m)
                    work[i * classes + m] = m == l ? p + delta : probs.at(i, m) * scale;
                return eval_at(work);
            };
            const double up = shift(h);
            const double down = shift(-h);
            for (std::size_t m = 0; m < classes; ++m) work[i * classes + m] = probs.at(i, m);
            result.grad[i * classes + l] = (up - down) / (2.0 * h);
        }
    }
    return result;
}

// g_nl minus the renormalization drag of the other coordinates; the analytic
// counterpart of the multiclass finite-difference stencil. For two classes
// the foreground entry reduces to the foreground-minus-background direction.
inline std::vector<double> renormalizing_projection(const std::vector<double>& grad, const ProbField& probs) {
    const std::size_t classes = probs.classes();
    if (grad.size() != probs.element_count() * classes)
        throw ValidationError("renormalizing_projection: gradient size does not match field");
    std::vector<double> out(grad.size(), 0.0);
    for (std::size_t i = 0; i < probs.element_count(); ++i) {
        for (std::size_t l = 0; l < classes; ++l) {
            const double rest = 1.0 - probs.at(i, l);
            if (rest <= 0.0) continue; // the matching stencil is skipped there too
            double drag = 0.0;
            for (std::size_t m = 0; m < classes; ++m)
                if (m != l) drag += grad[i * classes + m] * probs.at(i, m);
            out[i * classes + l] = grad[i * classes + l] - drag / rest;
        }
    }
    return out;
}

} // namespace segloss
