#pragma once

// Small constructors shared by the test files: one-row grids with a given
// foreground column, so scalar examples stay readable.

#include <cstdint>
#include <vector>

#include "segloss/field.hpp"
#include "segloss/rng.hpp"

namespace th {

inline segloss::GridShape row_shape(std::size_t n) { return segloss::GridShape({1, n}); }

inline segloss::ProbField probs_from_fg(const std::vector<double>& fg) {
    std::vector<double> values(fg.size() * 2);
    for (std::size_t i = 0; i < fg.size(); ++i) {
        values[i * 2 + segloss::kBackground] = 1.0 - fg[i];
        values[i * 2 + segloss::kForeground] = fg[i];
    }
    return segloss::ProbField(row_shape(fg.size()), 2, values);
}

inline segloss::LabelField labels_from_fg(const std::vector<std::uint32_t>& fg) {
    return segloss::onehot_encode(row_shape(fg.size()), fg, 2);
}

inline std::vector<double> fg_column(const std::vector<double>& grad2) {
    std::vector<double> out(grad2.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = grad2[i * 2 + segloss::kForeground];
    return out;
}

// Random two-class pair with probabilities kept away from 0/1.
inline std::pair<std::vector<double>, std::vector<std::uint32_t>> random_pair(segloss::Rng& rng,
                                                                              std::size_t n,
                                                                              double fg_fraction,
                                                                              double margin = 1e-3) {
    std::vector<double> p(n);
    std::vector<std::uint32_t> r(n);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = rng.uniform_real(margin, 1.0 - margin);
        r[i] = rng.uniform() < fg_fraction ? 1u : 0u;
    }
    return {p, r};
}

} // namespace th
