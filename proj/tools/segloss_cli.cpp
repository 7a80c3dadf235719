// Command line front end for the segmentation loss workbench.
// Exit codes: 0 success, 1 validation/usage, 2 numeric (divergence, failed
// gradient check), 3 input/output or format.

#include <cinttypes>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "segloss/config.hpp"
#include "segloss/errors.hpp"
#include "segloss/field.hpp"
#include "segloss/gradcheck.hpp"
#include "segloss/losses.hpp"
#include "segloss/metrics.hpp"
#include "segloss/sweep.hpp"
#include "segloss/synth.hpp"
#include "segloss/tensor_io.hpp"
#include "segloss/trainer.hpp"

namespace {

using namespace segloss;

GridShape shape_from_dims(const std::vector<std::uint32_t>& dims) {
    std::vector<std::size_t> d(dims.begin(), dims.end());
    return GridShape(d);
}

// Foreground-probability tensor plus 0/1 label tensor of the same dims.
std::pair<ProbField, LabelField> load_pair(const std::string& pred_path, const std::string& ref_path) {
    const Tensor pred = read_tensor(pred_path);
    const Tensor ref = read_tensor(ref_path);
    const GridShape pred_shape = shape_from_dims(pred.dims);
    const GridShape ref_shape = shape_from_dims(ref.dims);
    if (!(pred_shape == ref_shape))
        throw ValidationError("prediction shape " + pred_shape.to_string() + " does not match reference shape " +
                              ref_shape.to_string());

    std::vector<double> values(pred.values.size() * 2);
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        values[i * 2 + kBackground] = 1.0 - pred.values[i];
        values[i * 2 + kForeground] = pred.values[i];
    }
    std::vector<std::uint32_t> labels(ref.values.size());
    for (std::size_t i = 0; i < ref.values.size(); ++i) {
        if (ref.values[i] != 0.0 && ref.values[i] != 1.0)
            throw ValidationError("reference tensor holds a non-binary value at element " + std::to_string(i));
        labels[i] = ref.values[i] == 1.0 ? 1u : 0u;
    }
    return {ProbField(pred_shape, 2, std::move(values)), onehot_encode(ref_shape, labels, 2)};
}

SynthConfig synth_from_config(const KeyValueConfig& kv) {
    SynthConfig cfg;
    if (kv.has("data.dims")) cfg.dims = kv.get_sizes("data.dims");
    cfg.fg_fraction = kv.get_double_or("data.fg_fraction", cfg.fg_fraction);
    cfg.radius_min = kv.get_double_or("data.radius_min", cfg.radius_min);
    cfg.radius_max = kv.get_double_or("data.radius_max", cfg.radius_max);
    cfg.intensity_fg = kv.get_double_or("data.intensity_fg", cfg.intensity_fg);
    cfg.intensity_bg = kv.get_double_or("data.intensity_bg", cfg.intensity_bg);
    cfg.noise_sigma = kv.get_double_or("data.noise_sigma", cfg.noise_sigma);
    cfg.seed = kv.get_u64_or("data.seed", cfg.seed);
    cfg.validate();
    return cfg;
}

LossConfig loss_from_config(const KeyValueConfig& kv) {
    LossConfig cfg;
    cfg.epsilon = kv.get_double_or("loss.epsilon", cfg.epsilon);
    cfg.lambda = kv.get_double_or("loss.lambda", cfg.lambda);
    cfg.volume_floor = kv.get_double_or("loss.volume_floor", cfg.volume_floor);
    if (kv.has("loss.wce_weights")) {
        const std::string v = kv.get_string("loss.wce_weights");
        if (v == "prediction")
            cfg.wce_weight_source = WceWeightSource::prediction_sum;
        else if (v == "reference")
            cfg.wce_weight_source = WceWeightSource::reference_sum;
        else
            throw ValidationError("config: loss.wce_weights must be prediction or reference");
    }
    cfg.validate();
    return cfg;
}

int run_loss_eval(const std::string& loss_name, const std::string& pred_path, const std::string& ref_path,
                  const LossConfig& cfg) {
    const LossKind kind = loss_kind_from_name(loss_name);
    auto [probs, ref] = load_pair(pred_path, ref_path);
    const LossOutput out = evaluate_loss(kind, probs, ref, cfg);
    double l2 = 0.0, max_abs = 0.0;
    for (double g : out.grad) {
        l2 += g * g;
        max_abs = std::max(max_abs, std::abs(g));
    }
    nlohmann::json j;
    j["loss"] = std::string(loss_kind_name(kind));
    j["value"] = out.value;
    j["grad_l2_norm"] = std::sqrt(l2);
    j["grad_max_abs"] = max_abs;
    j["elements"] = probs.element_count();
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_gradcheck(const std::string& loss_name, std::size_t pairs, double tol, double h, std::uint64_t seed) {
    std::vector<LossKind> kinds;
    if (loss_name == "all")
        kinds = {LossKind::wce, LossKind::dl2, LossKind::ss, LossKind::gdl_v, LossKind::gdl_uniform};
    else
        kinds = {loss_kind_from_name(loss_name)};

    bool all_ok = true;
    for (LossKind kind : kinds) {
        const GradCheckReport report = gradcheck_loss(kind, pairs, h, tol, seed);
        std::printf("%-12s max rel err %.3e over %zu pairs%s%s\n", std::string(loss_kind_name(kind)).c_str(),
                    report.max_rel_err, report.pairs,
                    report.skipped ? " [stencil skips!]" : "", report.ok ? "" : " [FAIL]");
        all_ok = all_ok && report.ok;
    }
    if (!all_ok) throw NumericError("gradient check failed");
    return 0;
}

int run_synth_gen(const std::string& config_path, const std::string& out_prefix) {
    const KeyValueConfig kv = KeyValueConfig::parse_file(config_path);
    kv.check_known({"data.dims", "data.fg_fraction", "data.radius_min", "data.radius_max", "data.intensity_fg",
                    "data.intensity_bg", "data.noise_sigma", "data.seed", "data.zscore"});
    const SynthConfig cfg = synth_from_config(kv);
    const bool zscore = kv.get_bool_or("data.zscore", false);
    const Volume vol = prepare_volume(cfg, zscore);

    std::vector<std::uint32_t> dims(vol.shape.dims().begin(), vol.shape.dims().end());
    Tensor features{TensorDtype::f64, dims, vol.features};
    Tensor labels{TensorDtype::f64, dims, {}};
    labels.values.resize(vol.shape.element_count());
    for (std::size_t i = 0; i < labels.values.size(); ++i)
        labels.values[i] = static_cast<double>(vol.labels.class_index(i));
    write_tensor(out_prefix + ".features.segt", features);
    write_tensor(out_prefix + ".labels.segt", labels);

    nlohmann::json j;
    j["dims"] = vol.shape.to_string();
    j["elements"] = vol.shape.element_count();
    j["achieved_fraction"] = vol.achieved_fraction;
    j["foreground"] = vol.labels.class_volume(kForeground);
    j["features"] = out_prefix + ".features.segt";
    j["labels"] = out_prefix + ".labels.segt";
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& trace_path) {
    const KeyValueConfig kv = KeyValueConfig::parse_file(config_path);
    kv.check_known({"data.dims", "data.fg_fraction", "data.radius_min", "data.radius_max", "data.intensity_fg",
                    "data.intensity_bg", "data.noise_sigma", "data.seed", "data.zscore", "loss.epsilon",
                    "loss.lambda", "loss.volume_floor", "loss.wce_weights", "model.window", "model.hidden",
                    "model.seed", "train.loss", "train.lr", "train.iterations", "train.batch", "train.patch",
                    "train.seed", "train.stats_window"});
    const SynthConfig data = synth_from_config(kv);
    const Volume vol = prepare_volume(data, kv.get_bool_or("data.zscore", true));

    PixelModel model = PixelModel::init(static_cast<std::size_t>(kv.get_u64_or("model.window", 3)),
                                        static_cast<std::size_t>(kv.get_u64_or("model.hidden", 8)),
                                        vol.shape.rank(), kv.get_u64_or("model.seed", 1));
    TrainConfig tc;
    tc.loss = loss_kind_from_name(kv.get_string_or("train.loss", "gdl_v"));
    tc.learning_rate = kv.get_double_or("train.lr", 1e-4);
    tc.iterations = static_cast<std::size_t>(kv.get_u64_or("train.iterations", vol.shape.rank() == 3 ? 3000 : 1000));
    tc.batch = static_cast<std::size_t>(kv.get_u64_or("train.batch", 2));
    tc.patch_dims = kv.has("train.patch") ? kv.get_sizes("train.patch") : vol.shape.dims();
    tc.seed = kv.get_u64_or("train.seed", 1);
    tc.loss_config = loss_from_config(kv);
    const std::size_t stats_window =
        static_cast<std::size_t>(kv.get_u64_or("train.stats_window", std::min<std::uint64_t>(200, tc.iterations)));

    const TrainTrace trace = train(model, vol, tc);

    if (!trace_path.empty()) {
        std::string csv = "iteration,loss,batch_dsc\n";
        char buf[96];
        for (const TrainRecord& r : trace.records) {
            std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", r.iteration, r.loss_value, r.batch_dsc);
            csv += buf;
        }
        write_text_file(trace_path, csv);
    }

    nlohmann::json j;
    j["diverged"] = trace.diverged;
    j["recorded_iterations"] = trace.records.size();
    if (trace.diverged) {
        j["diverged_at"] = trace.diverged_at;
    } else {
        std::vector<double> dscs(trace.records.size());
        for (std::size_t i = 0; i < dscs.size(); ++i) dscs[i] = trace.records[i].batch_dsc;
        const TraceStats stats = trace_stats(dscs, stats_window);
        j["median_dsc"] = stats.median;
        j["iqr_dsc"] = stats.iqr;
        j["stats_window"] = stats.window;
        j["final_loss"] = trace.records.back().loss_value;
    }
    std::cout << j.dump(2) << "\n";
    if (trace.diverged) {
        std::cerr << "training diverged at iteration " << trace.diverged_at << "\n";
        return 2;
    }
    return 0;
}

int run_sweep_cmd(const std::string& config_path, const std::string& out_path) {
    const SweepConfig cfg = SweepConfig::from_config(KeyValueConfig::parse_file(config_path));
    const SweepGrid grid = run_sweep(cfg);
    if (out_path.size() >= 4 && out_path.substr(out_path.size() - 4) == ".csv") {
        write_text_file(out_path, export_grid_csv(grid));
    } else if (out_path.size() >= 5 && out_path.substr(out_path.size() - 5) == ".json") {
        write_text_file(out_path, export_grid_json(grid));
    } else {
        throw ValidationError("sweep output path must end in .csv or .json");
    }
    std::size_t diverged = 0;
    for (const SweepRecord& r : grid.records) diverged += r.diverged ? 1 : 0;
    nlohmann::json j;
    j["cells"] = grid.records.size();
    j["diverged_cells"] = diverged;
    j["out"] = out_path;
    std::cout << j.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"segmentation loss workbench"};
    app.require_subcommand(1);

    auto* loss_cmd = app.add_subcommand("loss", "loss evaluation");
    loss_cmd->require_subcommand(1);
    auto* eval_cmd = loss_cmd->add_subcommand("eval", "evaluate a loss on tensors from disk");
    std::string eval_loss = "gdl_v", eval_pred, eval_ref, eval_wce_weights = "prediction";
    LossConfig eval_cfg;
    eval_cmd->add_option("--loss", eval_loss, "wce, dl2, ss, gdl_v or gdl_uniform");
    eval_cmd->add_option("--pred", eval_pred, "foreground probability tensor (.segt)")->required();
    eval_cmd->add_option("--ref", eval_ref, "0/1 reference tensor (.segt)")->required();
    eval_cmd->add_option("--epsilon", eval_cfg.epsilon, "smoothing term");
    eval_cmd->add_option("--lambda", eval_cfg.lambda, "sensitivity weight");
    eval_cmd->add_option("--volume-floor", eval_cfg.volume_floor, "class volume floor");
    eval_cmd->add_option("--wce-weights", eval_wce_weights, "prediction or reference");

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
    std::string gc_loss = "all";
    std::size_t gc_pairs = 20;
    double gc_tol = 1e-5, gc_h = 1e-6;
    std::uint64_t gc_seed = 42;
    gradcheck_cmd->add_option("--loss", gc_loss, "loss name or all");
    gradcheck_cmd->add_option("--seeds", gc_pairs, "seeded random pairs per loss");
    gradcheck_cmd->add_option("--tol", gc_tol, "relative error tolerance");
    gradcheck_cmd->add_option("--step", gc_h, "stencil step");
    gradcheck_cmd->add_option("--base-seed", gc_seed, "base seed");

    auto* synth_cmd = app.add_subcommand("synth", "synthetic data");
    synth_cmd->require_subcommand(1);
    auto* gen_cmd = synth_cmd->add_subcommand("gen", "generate a volume and write it as tensors");
    std::string gen_config, gen_out = "volume";
    gen_cmd->add_option("--config", gen_config, "key = value config file")->required();
    gen_cmd->add_option("--out", gen_out, "output path prefix");

    auto* train_cmd = app.add_subcommand("train", "train the per-element model on a synthetic volume");
    std::string train_config, train_trace;
    train_cmd->add_option("--config", train_config, "key = value config file")->required();
    train_cmd->add_option("--trace", train_trace, "write the per-iteration trace CSV here");

    auto* sweep_cmd = app.add_subcommand("sweep", "run the full loss/lr/patch grid");
    std::string sweep_config, sweep_out;
    sweep_cmd->add_option("--config", sweep_config, "key = value config file")->required();
    sweep_cmd->add_option("--out", sweep_out, "grid output, .csv or .json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    }

    try {
        if (eval_cmd->parsed()) {
            if (eval_wce_weights == "reference")
                eval_cfg.wce_weight_source = WceWeightSource::reference_sum;
            else if (eval_wce_weights != "prediction")
                throw segloss::ValidationError("--wce-weights must be prediction or reference");
            eval_cfg.validate();
            return run_loss_eval(eval_loss, eval_pred, eval_ref, eval_cfg);
        }
        if (gradcheck_cmd->parsed()) return run_gradcheck(gc_loss, gc_pairs, gc_tol, gc_h, gc_seed);
        if (gen_cmd->parsed()) return run_synth_gen(gen_config, gen_out);
        if (train_cmd->parsed()) return run_train(train_config, train_trace);
        if (sweep_cmd->parsed()) return run_sweep_cmd(sweep_config, sweep_out);
        std::cerr << app.help() << "\n";
        return 1;
    } catch (const segloss::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const segloss::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const segloss::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
