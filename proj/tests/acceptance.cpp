// Acceptance gate: one self-contained check per shipped guarantee, one
// PASS/FAIL line each. `acceptance all` runs everything; a single check runs
// by name. sweep_determinism drives the installed CLI when given its path and
// a config file, and falls back to the built-in defaults in-process.

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "segloss/field.hpp"
#include "segloss/gradcheck.hpp"
#include "segloss/losses.hpp"
#include "segloss/metrics.hpp"
#include "segloss/rng.hpp"
#include "segloss/sweep.hpp"
#include "segloss/synth.hpp"
#include "segloss/tensor_io.hpp"
#include "segloss/trainer.hpp"

namespace {

using namespace segloss;

struct Outcome {
    bool ok = false;
    std::string detail;
};

std::string g_cli_path;
std::string g_sweep_config;

std::string fmt(const char* pattern, ...) {
    char buf[512];
    va_list args;
    va_start(args, pattern);
    std::vsnprintf(buf, sizeof buf, pattern, args);
    va_end(args);
    return buf;
}

// Max absolute deviation over the largest reference entry; the gradcheck
// normalization, reused everywhere a gradient-sized vector is compared.
double norm_rel_dev(const std::vector<double>& got, const std::vector<double>& want) {
    double scale = 0.0, dev = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i) {
        scale = std::max(scale, std::abs(want[i]));
        dev = std::max(dev, std::abs(got[i] - want[i]));
    }
    return dev / std::max(scale, 1e-300);
}

double rel_gap(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

// --- analytic gradients vs central differences, worst pair over five losses ---
Outcome gradient_oracle() {
    constexpr double kTol = 1e-5, kStep = 1e-6;
    constexpr std::size_t kPairs = 20;
    const LossKind kinds[] = {LossKind::wce, LossKind::dl2, LossKind::ss, LossKind::gdl_v,
                              LossKind::gdl_uniform};
    Outcome out;
    out.ok = true;
    double worst = 0.0;
    std::string worst_name = "none";
    for (LossKind kind : kinds) {
        const GradCheckReport r = gradcheck_loss(kind, kPairs, kStep, kTol, 2024);
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_name = std::string(loss_kind_name(kind));
        }
        if (!r.ok) {
            out.ok = false;
            out.detail += fmt("%s rel err %.2e or %zu stencil skips; ",
                              std::string(loss_kind_name(kind)).c_str(), r.max_rel_err, r.skipped);
        }
    }
    if (out.ok)
        out.detail = fmt("5 losses x %zu pairs (first pair 1-in-512 foreground), worst rel err %.2e (%s) < 1e-5",
                         kPairs, worst, worst_name.c_str());
    return out;
}

// --- two-class closed-form generalized dice gradient vs the general one ---
Outcome closed_form() {
    constexpr std::size_t kCases = 24;
    const LossConfig cfg;
    Rng rng(derive_seed(7, 0x636cu));
    double worst_analytic = 0.0, worst_fd = 0.0;
    std::size_t skips = 0;
    for (std::size_t i = 0; i < kCases; ++i) {
        const GradCheckCase c = random_two_class_case(rng, rng.uniform_real(0.05, 0.5));
        GdlWeights w = gdl_weights(c.ref, cfg);
        if (i % 2 == 1) w.w = {rng.uniform_real(0.1, 3.0), rng.uniform_real(0.1, 3.0)};

        const std::vector<double> closed =
            gdl_grad_closed_form(c.probs, c.ref, w.w[kForeground], w.w[kBackground]);
        const std::vector<double> dir = foreground_direction(gdl(c.probs, c.ref, w, cfg), 2);
        worst_analytic = std::max(worst_analytic, norm_rel_dev(closed, dir));

        const FiniteDiffResult fd = finite_diff_grad(
            [&](const ProbField& p, const LabelField& r) { return gdl(p, r, w, cfg).value; }, c.probs,
            c.ref, 1e-6);
        skips += fd.skipped.size();
        std::vector<double> fd_fg(closed.size());
        for (std::size_t n = 0; n < fd_fg.size(); ++n) fd_fg[n] = fd.grad[n * 2 + kForeground];
        worst_fd = std::max(worst_fd, norm_rel_dev(closed, fd_fg));
    }
    Outcome out;
    out.ok = worst_analytic < 1e-10 && worst_fd < 1e-5 && skips == 0;
    out.detail = fmt("%zu instances: vs analytic %.2e (< 1e-10), vs stencil %.2e (< 1e-5), %zu skips",
                     kCases, worst_analytic, worst_fd, skips);
    return out;
}

// --- value ranges stay pinned over random pairs, including empty classes ---
Outcome bounds() {
    constexpr std::size_t kPairs = 1000;
    Rng rng(derive_seed(99, 0xb0u));
    LossConfig cfg;
    std::size_t values_checked = 0;
    Outcome out;
    for (std::size_t i = 0; i < kPairs; ++i) {
        const std::size_t h = 4 + rng.uniform_index(9);
        const std::size_t w = 4 + rng.uniform_index(9);
        GridShape shape({h, w});
        const std::size_t n = shape.element_count();
        std::vector<std::uint32_t> labels(n, 0);
        std::size_t fg = 0;
        if (i % 37 == 1) {
            labels.assign(n, 1);
            fg = n;
        } else if (i % 25 != 0) { // every 25th pair keeps an empty foreground
            const double f = rng.uniform_real(0.02, 0.5);
            for (std::size_t k = 0; k < n; ++k)
                if (rng.uniform() < f) {
                    labels[k] = 1;
                    ++fg;
                }
        }
        std::vector<double> values(n * 2);
        for (std::size_t k = 0; k < n; ++k) {
            const double p = rng.uniform(); // full range, the log clamp included
            values[k * 2 + kBackground] = 1.0 - p;
            values[k * 2 + kForeground] = p;
        }
        const ProbField probs(shape, 2, std::move(values));
        const LabelField ref = onehot_encode(shape, labels, 2);

        auto check = [&](const char* name, double v, double lo, double hi) {
            ++values_checked;
            if (!std::isfinite(v) || v < lo || v > hi) {
                out.detail += fmt("%s=%.17g outside [%g,%g] at pair %zu (fg %zu of %zu); ", name, v, lo,
                                  hi, i, fg, n);
                return false;
            }
            return true;
        };
        bool row_ok = true;
        try {
            row_ok &= check("wce", wce(probs, ref, cfg).value, 0.0, HUGE_VAL);
            if (fg > 0) {
                LossConfig ref_cfg = cfg;
                ref_cfg.wce_weight_source = WceWeightSource::reference_sum;
                row_ok &= check("wce_ref", wce(probs, ref, ref_cfg).value, 0.0, HUGE_VAL);
            }
            row_ok &= check("dl2", dice_loss2(probs, ref, cfg).value, 0.0, 1.0);
            row_ok &= check("ss", ss_loss(probs, ref, cfg).value, 0.0, 1.0);
            row_ok &= check("gdl_v", evaluate_loss(LossKind::gdl_v, probs, ref, cfg).value, 0.0, 1.0);
            row_ok &= check("gdl_uniform", evaluate_loss(LossKind::gdl_uniform, probs, ref, cfg).value,
                            0.0, 1.0);
        } catch (const std::exception& e) {
            out.detail += fmt("pair %zu threw: %s; ", i, e.what());
            row_ok = false;
        }
        if (!row_ok) return out;
    }
    out.ok = true;
    out.detail = fmt("%zu values over %zu random pairs finite and inside their ranges "
                     "(empty- and full-foreground included)",
                     values_checked, kPairs);
    return out;
}

// --- the hard-label score is exactly the complement of the loss ---
Outcome gds_identity() {
    constexpr std::size_t kCases = 100;
    constexpr double kTol = 1e-15; // one rounding in the final subtraction
    Rng rng(derive_seed(4, 0x6764u));
    const LossConfig cfg;
    double worst = 0.0;
    for (std::size_t i = 0; i < kCases; ++i) {
        const std::size_t h = 3 + rng.uniform_index(10);
        const std::size_t w = 3 + rng.uniform_index(10);
        GridShape shape({h, w});
        const std::size_t n = shape.element_count();
        std::vector<std::uint32_t> seg_labels(n), ref_labels(n);
        const double fs = rng.uniform_real(0.0, 1.0);
        const double fr = i % 10 == 0 ? 0.0 : rng.uniform_real(0.0, 1.0); // empty references too
        for (std::size_t k = 0; k < n; ++k) {
            seg_labels[k] = rng.uniform() < fs ? 1u : 0u;
            ref_labels[k] = rng.uniform() < fr ? 1u : 0u;
        }
        const LabelField seg = onehot_encode(shape, seg_labels, 2);
        const LabelField ref = onehot_encode(shape, ref_labels, 2);
        GdlWeights weights = gdl_weights(ref, cfg);
        if (i % 3 == 2) weights.w = {rng.uniform_real(0.1, 5.0), rng.uniform_real(0.1, 5.0)};

        const double score = gds(seg, ref, weights);
        const double loss = gdl(prob_embed(seg), ref, weights, cfg).value;
        worst = std::max(worst, std::abs(score - (1.0 - loss)));
    }
    Outcome out;
    out.ok = worst <= kTol;
    out.detail = fmt("%zu cases, max |gds - (1 - gdl)| = %.3e <= 1e-15", kCases, worst);
    return out;
}

// --- inverse-square-volume weights equalize contributions across scales ---
Outcome volume_rebalancing() {
    const LossConfig cfg;
    Rng rng(derive_seed(12, 0x7265u));
    double worst_contrib = 0.0, worst_value = 0.0;
    std::size_t cases = 0;

    // Foreground of V elements predicted at q, background foreground-leak s;
    // the 10x-scaled field carries 10V foreground at 10q and leak 10s. The
    // squared-volume weights then make both per-class weighted overlaps match.
    auto build = [&](std::size_t rows, std::size_t cols, std::size_t v, double q, double s) {
        GridShape shape({rows, cols});
        const std::size_t n = shape.element_count();
        std::vector<std::uint32_t> labels(n, 0);
        for (std::size_t k = 0; k < v; ++k) labels[k] = 1;
        std::vector<double> values(n * 2);
        for (std::size_t k = 0; k < n; ++k) {
            const double p = labels[k] == 1 ? q : s;
            values[k * 2 + kForeground] = p;
            values[k * 2 + kBackground] = 1.0 - p;
        }
        return GradCheckCase{ProbField(shape, 2, std::move(values)), onehot_encode(shape, labels, 2)};
    };
    auto contributions = [&](const GradCheckCase& c) {
        const GdlWeights w = gdl_weights(c.ref, cfg);
        std::vector<double> contrib(2, 0.0);
        for (std::size_t l = 0; l < 2; ++l) {
            double overlap = 0.0;
            for (std::size_t k = 0; k < c.ref.element_count(); ++k)
                overlap += c.ref.at(k, l) * c.probs.at(k, l);
            contrib[l] = w.w[l] * overlap;
        }
        return contrib;
    };

    for (std::size_t i = 0; i < 12; ++i) {
        const std::size_t rows = 5 + rng.uniform_index(8);
        const std::size_t cols = 10 + rng.uniform_index(20);
        const std::size_t n = rows * cols;
        const std::size_t v = 2 + rng.uniform_index(n / 4);
        const double q = rng.uniform_real(0.01, 0.095);
        const double s = rng.uniform_real(0.005, 0.095);
        const GradCheckCase base = build(rows, cols, v, q, 1.0 - s);
        const GradCheckCase scaled = build(rows * 10, cols, v * 10, 10.0 * q, 1.0 - 10.0 * s);
        const std::vector<double> cb = contributions(base);
        const std::vector<double> cs = contributions(scaled);
        worst_contrib = std::max({worst_contrib, rel_gap(cb[0], cs[0]), rel_gap(cb[1], cs[1])});

        // replicating a field ten times leaves the volume-weighted loss alone
        GradCheckCase tiled = base;
        {
            std::vector<double> values;
            std::vector<std::uint32_t> labels;
            for (int rep = 0; rep < 10; ++rep)
                for (std::size_t k = 0; k < n; ++k) {
                    values.push_back(base.probs.at(k, kBackground));
                    values.push_back(base.probs.at(k, kForeground));
                    labels.push_back(base.ref.at(k, kForeground) == 1.0 ? 1u : 0u);
                }
            GridShape big({rows * 10, cols});
            tiled = {ProbField(big, 2, std::move(values)), onehot_encode(big, labels, 2)};
        }
        const double lv = gdl(base.probs, base.ref, gdl_weights(base.ref, cfg), cfg).value;
        const double lt = gdl(tiled.probs, tiled.ref, gdl_weights(tiled.ref, cfg), cfg).value;
        worst_value = std::max(worst_value, rel_gap(lv, lt));
        ++cases;
    }
    Outcome out;
    out.ok = worst_contrib < 1e-10 && worst_value < 1e-10;
    out.detail = fmt("%zu scaled pairs: contribution gap %.2e, replication gap %.2e (< 1e-10)", cases,
                     worst_contrib, worst_value);
    return out;
}

// --- the pipeline actually learns a separable volume at the pinned settings ---
Outcome trainability() {
    SynthConfig data;
    data.dims = {64, 64};
    data.fg_fraction = 0.05;
    data.radius_min = 2.0;
    data.radius_max = 5.0;
    data.noise_sigma = 0.0;
    data.seed = 17;
    const Volume vol = prepare_volume(data, true);

    // at lr 1e-4 the total logit movement is small, so the knobs favour fast sign
    // alignment: window 1 puts the whole gradient on the one discriminative input
    // and small patches keep the sampled batches foreground-dense
    PixelModel model = PixelModel::init(1, 64, 2, 1);
    TrainConfig tc;
    tc.loss = LossKind::gdl_v;
    tc.learning_rate = 1e-4;
    tc.iterations = 1000;
    tc.batch = 12;
    tc.patch_dims = {12, 12};
    tc.seed = 7;
    const TrainTrace trace = train(model, vol, tc);
    Outcome out;
    if (trace.diverged) {
        out.detail = fmt("diverged at iteration %zu", trace.diverged_at);
        return out;
    }
    std::vector<double> dscs(trace.records.size());
    for (std::size_t i = 0; i < dscs.size(); ++i) dscs[i] = trace.records[i].batch_dsc;
    const TraceStats stats = trace_stats(dscs, 200);
    out.ok = stats.median >= 0.9;
    out.detail = fmt("volume-weighted dice at lr 1e-4, 1000 iterations: median batch DSC %.4f "
                     "(IQR %.4f) over the last 200, needs >= 0.9",
                     stats.median, stats.iqr);
    return out;
}

// --- at 0.2% foreground the volume weighting must not lose to wce or dl2 ---
Outcome imbalance_trend() {
    SweepConfig cfg;
    cfg.data.dims = {32, 32, 32};
    cfg.data.fg_fraction = 0.002;
    cfg.data.radius_min = 2.0;
    cfg.data.radius_max = 3.0;
    // noisy single-voxel features: the adaptive wce weight drives the shared
    // model toward all-background here, while the volume weighting keeps the
    // foreground gradient mass alive at every learning rate
    cfg.data.noise_sigma = 0.5;
    cfg.data.seed = 29;
    cfg.model_window = 1;
    cfg.model_hidden = 16;
    cfg.losses = {LossKind::gdl_v, LossKind::wce, LossKind::dl2};
    cfg.learning_rates = {1e-3, 1e-4, 1e-5};
    cfg.patches = {{"P", {8, 8, 8}, 4}};
    cfg.iterations = 3000;
    cfg.repeats = 5;
    cfg.stats_window = 200;
    cfg.seed = 11;
    const SweepGrid grid = run_sweep(cfg);

    auto cell_median = [&](LossKind kind, double lr) {
        std::vector<double> vals;
        for (const SweepRecord& r : grid.records)
            if (r.loss == kind && r.lr == lr) vals.push_back(r.diverged ? 0.0 : r.median_dsc);
        std::sort(vals.begin(), vals.end());
        return quantile_sorted(vals, 0.5);
    };

    Outcome out;
    out.ok = true;
    std::string medians;
    const double gdl_at_1e3 = cell_median(LossKind::gdl_v, 1e-3);
    const double dl2_at_1e3 = cell_median(LossKind::dl2, 1e-3);
    if (gdl_at_1e3 < dl2_at_1e3) out.ok = false;
    medians += fmt("gdl_v@1e-3 %.3f vs dl2 %.3f; ", gdl_at_1e3, dl2_at_1e3);
    for (double lr : cfg.learning_rates) {
        const double g = cell_median(LossKind::gdl_v, lr);
        const double w = cell_median(LossKind::wce, lr);
        if (g < w) out.ok = false;
        medians += fmt("gdl_v@%.0e %.3f vs wce %.3f; ", lr, g, w);
    }
    out.detail = fmt("median-of-5 final DSC at 0.2%% foreground: %s", medians.c_str());
    return out;
}

// --- the default sweep is reproducible byte for byte ---
Outcome sweep_determinism() {
    namespace fs = std::filesystem;
    Outcome out;
    if (!g_cli_path.empty() && !g_sweep_config.empty()) {
        const std::string a = (fs::temp_directory_path() / "segloss_det_a.csv").string();
        const std::string b = (fs::temp_directory_path() / "segloss_det_b.csv").string();
        for (const std::string& target : {a, b}) {
            const std::string cmd = "\"" + g_cli_path + "\" sweep --config \"" + g_sweep_config +
                                    "\" --out \"" + target + "\" > /dev/null";
            const int rc = std::system(cmd.c_str());
            if (rc != 0) {
                out.detail = fmt("sweep run into %s exited with %d", target.c_str(), rc);
                return out;
            }
        }
        const std::string first = read_text_file(a);
        const std::string second = read_text_file(b);
        std::remove(a.c_str());
        std::remove(b.c_str());
        out.ok = !first.empty() && first == second;
        out.detail = out.ok ? fmt("two cli runs of the default config, %zu identical bytes (%zu rows)",
                                  first.size(), parse_grid_csv(first).records.size())
                            : "cli runs differ";
        return out;
    }
    const SweepConfig cfg; // built-in defaults mirror configs/sweep_default.cfg
    const std::string first = export_grid_csv(run_sweep(cfg));
    const std::string second = export_grid_csv(run_sweep(cfg));
    out.ok = !first.empty() && first == second;
    out.detail = out.ok ? fmt("two in-process runs of the built-in defaults, %zu identical bytes", first.size())
                        : "in-process runs differ";
    return out;
}

// --- on-disk formats survive write -> read -> write untouched ---
Outcome round_trips() {
    Outcome out;
    Rng rng(derive_seed(31, 0x696fu));

    for (int rank = 1; rank <= 4; ++rank) {
        for (TensorDtype dtype : {TensorDtype::f64, TensorDtype::f32}) {
            Tensor t;
            t.dtype = dtype;
            for (int a = 0; a < rank; ++a)
                t.dims.push_back(static_cast<std::uint32_t>(1 + rng.uniform_index(6)));
            t.values.resize(t.element_count());
            for (double& v : t.values) v = rng.uniform_real(-100.0, 100.0);
            const std::string bytes = encode_tensor(t);
            if (encode_tensor(decode_tensor(bytes)) != bytes) {
                out.detail = fmt("tensor rank %d dtype %d re-encode differs", rank, int(dtype));
                return out;
            }
            const std::string path =
                (std::filesystem::temp_directory_path() / "segloss_acceptance.segt").string();
            write_tensor(path, t);
            const Tensor back = read_tensor(path);
            std::remove(path.c_str());
            if (encode_tensor(back) != bytes) {
                out.detail = fmt("tensor rank %d dtype %d disk round trip differs", rank, int(dtype));
                return out;
            }
        }
    }

    // corruption must be named, not tolerated
    Tensor probe;
    probe.dims = {2, 2};
    probe.values = {1.0, 2.0, 3.0, 4.0};
    const std::string good = encode_tensor(probe);
    const std::pair<std::string, std::string> corruptions[] = {
        {std::string("XXXX") + good.substr(4), "magic"},
        {[&] { std::string s = good; s[4] = 9; return s; }(), "version"},
        {[&] { std::string s = good; s[5] = 7; return s; }(), "dtype"},
        {[&] { std::string s = good; s[6] = 6; return s; }(), "rank"},
        {good.substr(0, good.size() - 3), "size mismatch"},
    };
    for (const auto& [bytes, needle] : corruptions) {
        try {
            decode_tensor(bytes);
            out.detail = fmt("corrupted tensor (%s) decoded without an error", needle.c_str());
            return out;
        } catch (const IoError& e) {
            if (std::string(e.what()).find(needle) == std::string::npos) {
                out.detail = fmt("corruption error does not name '%s': %s", needle.c_str(), e.what());
                return out;
            }
        }
    }

    SweepGrid grid;
    for (int i = 0; i < 6; ++i) {
        SweepRecord r;
        r.loss = static_cast<LossKind>(i % 4);
        r.lr = std::pow(10.0, -3.0 - i % 3);
        r.patch = i % 2 ? "L" : "S";
        r.seed = static_cast<std::uint64_t>(i);
        if (i == 3) {
            r.diverged = true;
        } else {
            r.median_dsc = rng.uniform();
            r.iqr_dsc = rng.uniform() * 0.2;
        }
        grid.records.push_back(r);
    }
    const std::string csv = export_grid_csv(grid);
    if (export_grid_csv(parse_grid_csv(csv)) != csv) {
        out.detail = "csv round trip differs";
        return out;
    }
    const std::string json = export_grid_json(grid);
    if (export_grid_json(parse_grid_json(json)) != json) {
        out.detail = "json round trip differs";
        return out;
    }
    try {
        parse_grid_csv("loss,lr\n");
        out.detail = "malformed csv header parsed without an error";
        return out;
    } catch (const IoError&) {
    }

    out.ok = true;
    out.detail = "8 tensor round trips, 5 named corruption errors, csv and json grids byte-stable";
    return out;
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
        {"gradient_oracle", gradient_oracle},
        {"closed_form", closed_form},
        {"bounds", bounds},
        {"gds_identity", gds_identity},
        {"volume_rebalancing", volume_rebalancing},
        {"trainability", trainability},
        {"imbalance_trend", imbalance_trend},
        {"sweep_determinism", sweep_determinism},
        {"round_trips", round_trips},
    };

    const std::string which = argc > 1 ? argv[1] : "all";
    if (which == "sweep_determinism" && argc > 3) {
        g_cli_path = argv[2];
        g_sweep_config = argv[3];
    }

    bool any = false, all_ok = true;
    for (const auto& [name, fn] : checks) {
        if (which != "all" && which != name) continue;
        any = true;
        Outcome result;
        try {
            result = fn();
        } catch (const std::exception& e) {
            result.ok = false;
            result.detail = std::string("unexpected exception: ") + e.what();
        }
        std::printf("%s %s: %s\n", result.ok ? "PASS" : "FAIL", name.c_str(), result.detail.c_str());
        std::fflush(stdout);
        all_ok = all_ok && result.ok;
    }
    if (!any) {
        std::fprintf(stderr, "unknown check '%s'; available:", which.c_str());
        for (const auto& [name, fn] : checks) std::fprintf(stderr, " %s", name.c_str());
        std::fprintf(stderr, " all\n");
        return 1;
    }
    return all_ok ? 0 : 1;
}
