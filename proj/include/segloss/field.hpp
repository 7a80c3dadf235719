#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segloss/errors.hpp"

namespace segloss {

// Class column convention for two-class fields: column 0 background, column 1 foreground.
inline constexpr std::size_t kBackground = 0;
inline constexpr std::size_t kForeground = 1;

// Allowed absolute drift of a probability row sum from 1.
inline constexpr double kSimplexTolerance = 1e-6;

// Dense rectangular grid, rank 2 or 3, extents >= 1.
class GridShape {
public:
    explicit GridShape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
        if (dims_.size() != 2 && dims_.size() != 3)
            throw ValidationError("GridShape: rank must be 2 or 3, got " + std::to_string(dims_.size()));
        count_ = 1;
        for (std::size_t d : dims_) {
            if (d == 0) throw ValidationError("GridShape: extents must be >= 1");
            count_ *= d;
        }
    }

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t element_count() const { return count_; }

    bool operator==(const GridShape&) const = default;

    std::string to_string() const {
        std::string s;
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            if (i) s += 'x';
            s += std::to_string(dims_[i]);
        }
        return s;
    }

private:
    std::vector<std::size_t> dims_;
    std::size_t count_;
};

namespace detail {

// Shared storage layout: element-major, values[n * classes + l].
inline void check_field_args(const GridShape& shape, std::size_t classes, const std::vector<double>& values,
                             const char* what) {
    if (classes < 2)
        throw ValidationError(std::string(what) + ": needs at least 2 classes, got " + std::to_string(classes));
    if (values.size() != shape.element_count() * classes)
        throw ValidationError(std::string(what) + ": value count " + std::to_string(values.size()) +
                              " does not match shape " + shape.to_string() + " with " + std::to_string(classes) +
                              " classes");
}

} // namespace detail

// Hard one-hot reference field: every row has exactly one 1.0, rest 0.0.
class LabelField {
public:
    LabelField(GridShape shape, std::size_t classes, std::vector<double> values)
        : shape_(std::move(shape)), classes_(classes), values_(std::move(values)) {
        detail::check_field_args(shape_, classes_, values_, "LabelField");
        const std::size_t n_elems = shape_.element_count();
        for (std::size_t n = 0; n < n_elems; ++n) {
            std::size_t ones = 0;
            for (std::size_t l = 0; l < classes_; ++l) {
                const double v = values_[n * classes_ + l];
                if (v == 1.0) ++ones;
                else if (v != 0.0)
                    throw ValidationError("LabelField: value at element " + std::to_string(n) +
                                          " is not exactly 0 or 1");
            }
            if (ones != 1)
                throw ValidationError("LabelField: element " + std::to_string(n) + " has " + std::to_string(ones) +
                                      " active classes, expected exactly 1");
        }
    }

    const GridShape& shape() const { return shape_; }
    std::size_t classes() const { return classes_; }
    std::size_t element_count() const { return shape_.element_count(); }
    const std::vector<double>& values() const { return values_; }

    double at(std::size_t n, std::size_t l) const { return values_[n * classes_ + l]; }

    std::uint32_t class_index(std::size_t n) const {
        for (std::size_t l = 0; l < classes_; ++l)
            if (values_[n * classes_ + l] == 1.0) return static_cast<std::uint32_t>(l);
        return 0; // unreachable: construction guarantees one active class
    }

    std::vector<std::uint32_t> decode() const {
        std::vector<std::uint32_t> out(element_count());
        for (std::size_t n = 0; n < out.size(); ++n) out[n] = class_index(n);
        return out;
    }

    // Number of elements assigned to class l.
    std::size_t class_volume(std::size_t l) const {
        if (l >= classes_) throw ValidationError("class_volume: class index out of range");
        std::size_t count = 0;
        for (std::size_t n = 0; n < element_count(); ++n)
            if (values_[n * classes_ + l] == 1.0) ++count;
        return count;
    }

private:
    GridShape shape_;
    std::size_t classes_;
    std::vector<double> values_;
};

// Per-element class probabilities. Rows must lie in [0,1] and sum to 1 within
// kSimplexTolerance; violations are rejected at construction.
class ProbField {
public:
    ProbField(GridShape shape, std::size_t classes, std::vector<double> values)
        : shape_(std::move(shape)), classes_(classes), values_(std::move(values)) {
        detail::check_field_args(shape_, classes_, values_, "ProbField");
        const std::size_t n_elems = shape_.element_count();
        for (std::size_t n = 0; n < n_elems; ++n) {
            double sum = 0.0;
            for (std::size_t l = 0; l < classes_; ++l) {
                const double v = values_[n * classes_ + l];
                if (!(v >= 0.0 && v <= 1.0))
                    throw ValidationError("ProbField: value at element " + std::to_string(n) +
                                          " outside [0,1]");
                sum += v;
            }
            if (std::abs(sum - 1.0) > kSimplexTolerance)
                throw ValidationError("ProbField: row " + std::to_string(n) + " sums to " + std::to_string(sum) +
                                      ", beyond simplex tolerance");
        }
    }

    const GridShape& shape() const { return shape_; }
    std::size_t classes() const { return classes_; }
    std::size_t element_count() const { return shape_.element_count(); }
    const std::vector<double>& values() const { return values_; }

    double at(std::size_t n, std::size_t l) const { return values_[n * classes_ + l]; }

private:
    GridShape shape_;
    std::size_t classes_;
    std::vector<double> values_;
};

inline LabelField onehot_encode(const GridShape& shape, const std::vector<std::uint32_t>& labels,
                                std::size_t classes) {
    if (labels.size() != shape.element_count())
        throw ValidationError("onehot_encode: label count " + std::to_string(labels.size()) +
                              " does not match shape " + shape.to_string());
    std::vector<double> values(shape.element_count() * classes, 0.0);
    for (std::size_t n = 0; n < labels.size(); ++n) {
        if (labels[n] >= classes)
            throw ValidationError("onehot_encode: label " + std::to_string(labels[n]) + " at element " +
                                  std::to_string(n) + " exceeds class count " + std::to_string(classes));
        values[n * classes + labels[n]] = 1.0;
    }
    return LabelField(shape, classes, std::move(values));
}

inline double foreground_fraction(const LabelField& field, std::size_t foreground_class = kForeground) {
    return static_cast<double>(field.class_volume(foreground_class)) /
           static_cast<double>(field.element_count());
}

// Exact probability embedding of a hard labeling (rows of exact 0/1).
inline ProbField prob_embed(const LabelField& field) {
    return ProbField(field.shape(), field.classes(), field.values());
}

// Thresholds a two-class probability field: foreground iff p_fg >= threshold.
inline LabelField binarize(const ProbField& probs, double threshold) {
    if (probs.classes() != 2)
        throw ValidationError("binarize: expects a two-class field, got " + std::to_string(probs.classes()) +
                              " classes");
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ValidationError("binarize: threshold must lie strictly inside (0,1)");
    std::vector<std::uint32_t> labels(probs.element_count());
    for (std::size_t n = 0; n < labels.size(); ++n)
        labels[n] = probs.at(n, kForeground) >= threshold ? 1u : 0u;
    return onehot_encode(probs.shape(), labels, 2);
}

} // namespace segloss
