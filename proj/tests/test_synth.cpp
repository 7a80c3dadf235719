#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "oracles.hpp"
#include "segloss/rng.hpp"
#include "segloss/synth.hpp"

using namespace segloss;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("engine output is the standard-pinned stream", "[rng]") {
    // [rand.predef]: the 10000th value of a default mt19937_64 is fixed by the standard.
    std::mt19937_64 reference;
    for (int i = 0; i < 9999; ++i) reference();
    CHECK(reference() == 9981545732273789042ULL);
}

TEST_CASE("generator conversions stay in range and are deterministic", "[rng]") {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) {
        const double u = a.uniform();
        CHECK(u == b.uniform());
        CHECK((u >= 0.0 && u < 1.0));
    }
    Rng c(7);
    for (int i = 0; i < 1000; ++i) {
        const std::uint64_t k = c.uniform_index(13);
        CHECK(k < 13);
    }
    CHECK_THROWS_AS(c.uniform_index(0), ValidationError);

    SECTION("normal draws have roughly unit spread") {
        Rng d(99);
        double sum = 0.0, sum2 = 0.0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) {
            const double x = d.normal();
            sum += x;
            sum2 += x * x;
        }
        CHECK_THAT(sum / n, WithinAbs(0.0, 0.05));
        CHECK_THAT(sum2 / n, WithinAbs(1.0, 0.05));
    }

    SECTION("derived seeds differ per tag") {
        CHECK(derive_seed(1, 0) != derive_seed(1, 1));
        CHECK(derive_seed(1, 0, 0) != derive_seed(1, 0, 1));
        CHECK(derive_seed(1, 5) == derive_seed(1, 5));
    }
}

TEST_CASE("z-scoring matches the hand calculation", "[synth][zscore]") {
    const std::vector<double> out = zscore_normalize({2.0, 4.0, 6.0});
    CHECK_THAT(out[0], WithinRel(-1.224744871391589, 1e-12));
    CHECK_THAT(out[1], WithinAbs(0.0, 1e-15));
    CHECK_THAT(out[2], WithinRel(1.224744871391589, 1e-12));

    SECTION("agrees with the long-hand version on random data") {
        Rng rng(3);
        std::vector<double> xs(64);
        for (auto& x : xs) x = rng.uniform_real(-5.0, 5.0);
        const std::vector<double> got = zscore_normalize(xs);
        const std::vector<double> want = oracle::zscore(xs);
        for (std::size_t i = 0; i < xs.size(); ++i) CHECK_THAT(got[i], WithinAbs(want[i], 1e-12));
    }

    SECTION("result has zero mean and unit population variance") {
        Rng rng(4);
        std::vector<double> xs(100);
        for (auto& x : xs) x = rng.uniform_real(10.0, 20.0);
        const std::vector<double> z = zscore_normalize(xs);
        const double mean = std::accumulate(z.begin(), z.end(), 0.0) / 100.0;
        double var = 0.0;
        for (double v : z) var += (v - mean) * (v - mean);
        var /= 100.0;
        CHECK_THAT(mean, WithinAbs(0.0, 1e-12));
        CHECK_THAT(var, WithinRel(1.0, 1e-12));
    }

    SECTION("constant input has no scale") {
        CHECK_THROWS_AS(zscore_normalize({3.0, 3.0, 3.0}), NumericError);
    }

    SECTION("masked statistics ignore everything else") {
        // stats from {2, 6}: mean 4, sd 2; outside values transform with the same affine map
        const std::vector<double> out2 = zscore_normalize({2.0, 100.0, 6.0}, {0, 2});
        CHECK_THAT(out2[0], WithinRel(-1.0, 1e-12));
        CHECK_THAT(out2[2], WithinRel(1.0, 1e-12));
        CHECK_THAT(out2[1], WithinRel(48.0, 1e-12));
        CHECK_THROWS_AS(zscore_normalize({1.0, 2.0}, {}), ValidationError);
        CHECK_THROWS_AS(zscore_normalize({1.0, 2.0}, {5}), ValidationError);
    }
}

TEST_CASE("volume generation hits the fraction band deterministically", "[synth]") {
    SynthConfig cfg;
    cfg.dims = {64, 64, 64};
    cfg.fg_fraction = 0.002;
    cfg.radius_min = 2.0;
    cfg.radius_max = 5.0;
    cfg.seed = 11;

    const Volume a = generate_volume(cfg);
    CHECK(std::abs(a.achieved_fraction - cfg.fg_fraction) <= 0.25 * cfg.fg_fraction);
    CHECK_THAT(foreground_fraction(a.labels), WithinRel(a.achieved_fraction, 1e-15));

    SECTION("identical configs give identical volumes") {
        const Volume b = generate_volume(cfg);
        CHECK(a.features == b.features);
        CHECK(a.labels.values() == b.labels.values());
    }
    SECTION("different seeds give different volumes") {
        SynthConfig other = cfg;
        other.seed = 12;
        CHECK(generate_volume(other).labels.values() != a.labels.values());
    }
}

TEST_CASE("noiseless features are exactly the class intensities", "[synth]") {
    SynthConfig cfg;
    cfg.dims = {32, 32};
    cfg.fg_fraction = 0.05;
    cfg.intensity_fg = 2.5;
    cfg.intensity_bg = -1.0;
    cfg.seed = 21;
    const Volume vol = generate_volume(cfg);
    for (std::size_t i = 0; i < vol.features.size(); ++i) {
        const bool fg = vol.labels.class_index(i) == kForeground;
        CHECK(vol.features[i] == (fg ? 2.5 : -1.0));
    }
}

TEST_CASE("noise perturbs features but not labels", "[synth]") {
    SynthConfig clean;
    clean.dims = {24, 24};
    clean.fg_fraction = 0.05;
    clean.seed = 33;
    SynthConfig noisy = clean;
    noisy.noise_sigma = 0.3;
    const Volume a = generate_volume(clean);
    const Volume b = generate_volume(noisy);
    CHECK(a.labels.values() == b.labels.values()); // placement stream is independent of the noise stream
    CHECK(a.features != b.features);
}

TEST_CASE("unreachable targets fail with the achieved fraction", "[synth]") {
    SynthConfig cfg;
    cfg.dims = {16, 16};
    cfg.fg_fraction = 0.002; // band allows no integer cell count
    cfg.seed = 1;
    CHECK_THROWS_AS(generate_volume(cfg), ValidationError);

    SynthConfig invalid;
    invalid.fg_fraction = 0.7;
    CHECK_THROWS_AS(generate_volume(invalid), ValidationError);
    invalid = SynthConfig{};
    invalid.radius_min = 0.0;
    CHECK_THROWS_AS(generate_volume(invalid), ValidationError);
}

TEST_CASE("patch sampling returns foreground-bearing windows", "[synth][patches]") {
    SynthConfig cfg;
    cfg.dims = {48, 48};
    cfg.fg_fraction = 0.03;
    cfg.seed = 5;
    const Volume vol = generate_volume(cfg);

    const auto patches = sample_patches(vol, {16, 16}, 8, 77);
    REQUIRE(patches.size() == 8);
    for (const Patch& patch : patches) {
        REQUIRE(patch.features.size() == 256);
        REQUIRE(patch.labels.size() == 256);
        REQUIRE(patch.origin.size() == 2);
        CHECK(patch.origin[0] <= 32);
        CHECK(patch.origin[1] <= 32);
        CHECK(std::accumulate(patch.labels.begin(), patch.labels.end(), 0u) >= 1u);
        // patch content matches the volume at its origin
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
                const std::size_t flat = (patch.origin[0] + y) * 48 + patch.origin[1] + x;
                CHECK(patch.features[y * 16 + x] == vol.features[flat]);
                CHECK(patch.labels[y * 16 + x] == vol.labels.class_index(flat));
            }
    }

    SECTION("sampling is deterministic in the seed") {
        const auto again = sample_patches(vol, {16, 16}, 8, 77);
        for (std::size_t k = 0; k < patches.size(); ++k) {
            CHECK(patches[k].origin == again[k].origin);
            CHECK(patches[k].features == again[k].features);
        }
        const auto other = sample_patches(vol, {16, 16}, 8, 78);
        bool any_differs = false;
        for (std::size_t k = 0; k < patches.size(); ++k)
            any_differs = any_differs || patches[k].origin != other[k].origin;
        CHECK(any_differs);
    }

    SECTION("full-volume patches are the volume itself") {
        const auto full = sample_patches(vol, {48, 48}, 2, 1);
        for (const Patch& patch : full) {
            CHECK(patch.origin == std::vector<std::size_t>{0, 0});
            CHECK(patch.features == vol.features);
        }
    }

    SECTION("patch foreground density exceeds the volume density on average") {
        const auto many = sample_patches(vol, {12, 12}, 50, 9);
        std::vector<double> fracs;
        for (const Patch& patch : many)
            fracs.push_back(static_cast<double>(std::accumulate(patch.labels.begin(), patch.labels.end(), 0u)) /
                            144.0);
        std::sort(fracs.begin(), fracs.end());
        CHECK(fracs[fracs.size() / 2] > foreground_fraction(vol.labels));
    }

    SECTION("geometry validation") {
        CHECK_THROWS_AS(sample_patches(vol, {16, 16, 16}, 1, 1), ValidationError);
        CHECK_THROWS_AS(sample_patches(vol, {64, 16}, 1, 1), ValidationError);
        CHECK_THROWS_AS(sample_patches(vol, {16, 16}, 0, 1), ValidationError);
    }
}

TEST_CASE("patch sampling caps rejection on hopeless volumes", "[synth][patches]") {
    const GridShape shape({8, 8});
    Volume empty{shape, std::vector<double>(64, 0.0),
                 onehot_encode(shape, std::vector<std::uint32_t>(64, 0), 2), 0.0};
    CHECK_THROWS_AS(sample_patches(empty, {4, 4}, 1, 3), NumericError);
}

TEST_CASE("3d patch sampling matches volume content", "[synth][patches]") {
    SynthConfig cfg;
    cfg.dims = {16, 20, 24};
    cfg.fg_fraction = 0.02;
    cfg.seed = 8;
    const Volume vol = generate_volume(cfg);
    const auto patches = sample_patches(vol, {8, 8, 8}, 4, 13);
    for (const Patch& patch : patches) {
        REQUIRE(patch.origin.size() == 3);
        CHECK(std::accumulate(patch.labels.begin(), patch.labels.end(), 0u) >= 1u);
        std::size_t w = 0;
        for (std::size_t z = 0; z < 8; ++z)
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 8; ++x, ++w) {
                    const std::size_t flat =
                        ((patch.origin[0] + z) * 20 + patch.origin[1] + y) * 24 + patch.origin[2] + x;
                    CHECK(patch.features[w] == vol.features[flat]);
                }
    }
}
