#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segloss/errors.hpp"
#include "segloss/field.hpp"
#include "segloss/rng.hpp"

namespace segloss {

// Spherical-blob volumes with a controlled foreground fraction. Everything is
// a pure function of the config, so identical configs give identical bytes.
struct SynthConfig {
    std::vector<std::size_t> dims{64, 64};
    double fg_fraction = 0.01;  // target foreground fraction
    double radius_min = 2.0;
    double radius_max = 5.0;
    double intensity_fg = 1.0;
    double intensity_bg = 0.0;
    double noise_sigma = 0.0;   // additive gaussian noise on the features
    std::uint64_t seed = 0;

    void validate() const {
        if (!(fg_fraction > 0.0 && fg_fraction <= 0.5))
            throw ValidationError("SynthConfig: fg_fraction must lie in (0, 0.5]");
        if (!(radius_min > 0.0 && radius_max >= radius_min))
            throw ValidationError("SynthConfig: need 0 < radius_min <= radius_max");
        if (!(noise_sigma >= 0.0)) throw ValidationError("SynthConfig: noise_sigma must be >= 0");
        if (!std::isfinite(intensity_fg) || !std::isfinite(intensity_bg))
            throw ValidationError("SynthConfig: intensities must be finite");
    }
};

struct Volume {
    GridShape shape;
    std::vector<double> features; // one channel, flat element order
    LabelField labels;            // two classes
    double achieved_fraction;
};

// The achieved fraction must land within this relative distance of the target.
inline constexpr double kFractionBand = 0.25;
inline constexpr std::size_t kPlacementCap = 1000;
inline constexpr std::size_t kPatchAttemptCap = 10000;

namespace detail {

// Pads dims to rank 3 with leading 1s so placement and extraction can share
// one triple-loop body.
inline std::array<std::size_t, 3> pad3(const std::vector<std::size_t>& dims) {
    std::array<std::size_t, 3> out{1, 1, 1};
    for (std::size_t i = 0; i < dims.size(); ++i) out[3 - dims.size() + i] = dims[i];
    return out;
}

} // namespace detail

// Places random spheres until the foreground fraction lands inside the band
// around the target; proposals that would overshoot the band are discarded.
// Fails (reporting the fraction it reached) when the cap is hit, which means
// the target is unreachable under the radius constraints.
inline Volume generate_volume(const SynthConfig& cfg) {
    cfg.validate();
    GridShape shape(cfg.dims);
    const std::size_t n_elems = shape.element_count();
    const double n = static_cast<double>(n_elems);
    const auto d3 = detail::pad3(cfg.dims);

    std::vector<std::uint8_t> fg(n_elems, 0);
    std::size_t fg_count = 0;
    auto in_band = [&](std::size_t count) {
        return std::abs(static_cast<double>(count) / n - cfg.fg_fraction) <= kFractionBand * cfg.fg_fraction;
    };
    auto overshoots = [&](std::size_t count) {
        return static_cast<double>(count) / n - cfg.fg_fraction > kFractionBand * cfg.fg_fraction;
    };

    Rng place(derive_seed(cfg.seed, 0x706c6163u)); // placement stream
    std::size_t attempts = 0;
    while (!in_band(fg_count)) {
        if (++attempts > kPlacementCap)
            throw ValidationError("generate_volume: target fraction " + std::to_string(cfg.fg_fraction) +
                                  " unreachable under the radius constraints, reached " +
                                  std::to_string(static_cast<double>(fg_count) / n) + " after " +
                                  std::to_string(kPlacementCap) + " placements");
        std::array<std::size_t, 3> center{0, 0, 0};
        for (std::size_t a = 3 - cfg.dims.size(); a < 3; ++a) center[a] = place.uniform_index(d3[a]);
        const double radius = place.uniform_real(cfg.radius_min, cfg.radius_max);
        const double r2 = radius * radius;

        // Bounding box walk; gather the cells this sphere would newly claim.
        std::vector<std::size_t> added;
        const auto lo = [&](std::size_t a) {
            const double edge = static_cast<double>(center[a]) - radius;
            return edge < 0.0 ? std::size_t{0} : static_cast<std::size_t>(edge);
        };
        const auto hi = [&](std::size_t a) {
            const std::size_t bound = static_cast<std::size_t>(static_cast<double>(center[a]) + radius);
            return bound >= d3[a] ? d3[a] - 1 : bound;
        };
        for (std::size_t z = lo(0); z <= hi(0); ++z)
            for (std::size_t y = lo(1); y <= hi(1); ++y)
                for (std::size_t x = lo(2); x <= hi(2); ++x) {
                    const double dz = static_cast<double>(z) - static_cast<double>(center[0]);
                    const double dy = static_cast<double>(y) - static_cast<double>(center[1]);
                    const double dx = static_cast<double>(x) - static_cast<double>(center[2]);
                    if (dz * dz + dy * dy + dx * dx > r2) continue;
                    const std::size_t flat = (z * d3[1] + y) * d3[2] + x;
                    if (!fg[flat]) added.push_back(flat);
                }
        if (overshoots(fg_count + added.size())) continue;
        for (std::size_t flat : added) fg[flat] = 1;
        fg_count += added.size();
    }

    Rng noise(derive_seed(cfg.seed, 0x6e6f6973u)); // feature stream
    std::vector<double> features(n_elems);
    std::vector<std::uint32_t> labels(n_elems);
    for (std::size_t i = 0; i < n_elems; ++i) {
        labels[i] = fg[i];
        double v = fg[i] ? cfg.intensity_fg : cfg.intensity_bg;
        if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * noise.normal();
        features[i] = v;
    }
    return Volume{shape, std::move(features), onehot_encode(shape, labels, 2),
                  static_cast<double>(fg_count) / n};
}

// Z-scores all values using mean and population standard deviation computed
// over the masked subset. A constant subset has no scale and is rejected.
inline std::vector<double> zscore_normalize(const std::vector<double>& values,
                                            const std::vector<std::size_t>& mask) {
    if (mask.empty()) throw ValidationError("zscore_normalize: empty mask");
    double mean = 0.0;
    for (std::size_t i : mask) {
        if (i >= values.size()) throw ValidationError("zscore_normalize: mask index out of range");
        mean += values[i];
    }
    mean /= static_cast<double>(mask.size());
    double var = 0.0;
    for (std::size_t i : mask) var += (values[i] - mean) * (values[i] - mean);
    var /= static_cast<double>(mask.size());
    const double sd = std::sqrt(var);
    if (sd == 0.0) throw NumericError("zscore_normalize: zero variance over the normalization mask");
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean) / sd;
    return out;
}

inline std::vector<double> zscore_normalize(const std::vector<double>& values) {
    std::vector<std::size_t> all(values.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return zscore_normalize(values, all);
}

struct Patch {
    std::vector<double> features;      // flat order within the patch
    std::vector<std::uint32_t> labels; // class indices, same order
    std::vector<std::size_t> origin;   // corner in volume coordinates
};

// Draws patches uniformly at random, rejecting any without foreground. The
// rejection loop is capped; hitting the cap reports the attempt count.
inline std::vector<Patch> sample_patches(const Volume& vol, const std::vector<std::size_t>& patch_dims,
                                         std::size_t count, std::uint64_t seed) {
    const std::vector<std::size_t>& dims = vol.shape.dims();
    if (patch_dims.size() != dims.size())
        throw ValidationError("sample_patches: patch rank " + std::to_string(patch_dims.size()) +
                              " does not match volume rank " + std::to_string(dims.size()));
    for (std::size_t a = 0; a < dims.size(); ++a)
        if (patch_dims[a] == 0 || patch_dims[a] > dims[a])
            throw ValidationError("sample_patches: patch extent " + std::to_string(patch_dims[a]) +
                                  " does not fit axis of extent " + std::to_string(dims[a]));
    if (count == 0) throw ValidationError("sample_patches: count must be >= 1");

    const auto vd = detail::pad3(dims);
    const auto pd = detail::pad3(patch_dims);
    const std::size_t n_patch = pd[0] * pd[1] * pd[2];

    std::vector<std::uint8_t> fg(vol.shape.element_count());
    for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = vol.labels.class_index(i) == kForeground;

    Rng rng(seed);
    std::vector<Patch> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        bool found = false;
        for (std::size_t attempt = 1; attempt <= kPatchAttemptCap; ++attempt) {
            std::array<std::size_t, 3> o{0, 0, 0};
            for (std::size_t a = 3 - dims.size(); a < 3; ++a) o[a] = rng.uniform_index(vd[a] - pd[a] + 1);
            std::size_t fg_in_patch = 0;
            for (std::size_t z = 0; z < pd[0] && fg_in_patch == 0; ++z)
                for (std::size_t y = 0; y < pd[1] && fg_in_patch == 0; ++y)
                    for (std::size_t x = 0; x < pd[2]; ++x)
                        if (fg[((o[0] + z) * vd[1] + o[1] + y) * vd[2] + o[2] + x]) {
                            ++fg_in_patch;
                            break;
                        }
            if (fg_in_patch == 0) continue;

            Patch patch;
            patch.features.resize(n_patch);
            patch.labels.resize(n_patch);
            std::size_t w = 0;
            for (std::size_t z = 0; z < pd[0]; ++z)
                for (std::size_t y = 0; y < pd[1]; ++y)
                    for (std::size_t x = 0; x < pd[2]; ++x, ++w) {
                        const std::size_t flat = ((o[0] + z) * vd[1] + o[1] + y) * vd[2] + o[2] + x;
                        patch.features[w] = vol.features[flat];
                        patch.labels[w] = fg[flat];
                    }
            patch.origin.assign(o.begin() + static_cast<std::ptrdiff_t>(3 - dims.size()), o.end());
            out.push_back(std::move(patch));
            found = true;
            break;
        }
        if (!found)
            throw NumericError("sample_patches: no patch with foreground found after " +
                               std::to_string(kPatchAttemptCap) + " attempts");
    }
    return out;
}

} // namespace segloss
