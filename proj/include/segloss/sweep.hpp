#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "segloss/config.hpp"
#include "segloss/errors.hpp"
#include "segloss/losses.hpp"
#include "segloss/metrics.hpp"
#include "segloss/synth.hpp"
#include "segloss/trainer.hpp"

namespace segloss {

struct PatchSpec {
    std::string label;
    std::vector<std::size_t> dims;
    std::size_t batch = 1;
};

// "label:16x16:8" -> {label, {16,16}, 8}
inline PatchSpec parse_patch_spec(const std::string& text) {
    const std::vector<std::string> parts = KeyValueConfig::split(text, ':');
    if (parts.size() != 3)
        throw ValidationError("patch spec '" + text + "' must look like label:16x16:8");
    PatchSpec spec;
    spec.label = parts[0];
    for (const std::string& d : KeyValueConfig::split(parts[1], 'x')) {
        try {
            spec.dims.push_back(std::stoull(d));
        } catch (const std::exception&) {
            throw ValidationError("patch spec '" + text + "': bad extent " + d);
        }
    }
    try {
        spec.batch = std::stoull(parts[2]);
    } catch (const std::exception&) {
        throw ValidationError("patch spec '" + text + "': bad batch " + parts[2]);
    }
    if (spec.batch == 0) throw ValidationError("patch spec '" + text + "': batch must be >= 1");
    return spec;
}

struct SweepConfig {
    SynthConfig data;
    bool zscore = true;
    std::size_t model_window = 3;
    std::size_t model_hidden = 8;
    std::vector<LossKind> losses{LossKind::wce, LossKind::dl2, LossKind::ss, LossKind::gdl_v};
    std::vector<double> learning_rates{1e-3, 1e-4, 1e-5};
    std::vector<PatchSpec> patches; // empty -> rank-based defaults
    std::size_t iterations = 0;     // 0 -> 1000 for rank 2, 3000 for rank 3
    std::size_t repeats = 3;
    std::size_t stats_window = 200;
    std::size_t workers = 1; // 0 -> hardware concurrency
    std::uint64_t seed = 1;  // base for model init and patch sampling streams
    LossConfig loss_config;

    std::size_t effective_iterations() const {
        if (iterations != 0) return iterations;
        return data.dims.size() == 3 ? 3000 : 1000;
    }

    std::vector<PatchSpec> effective_patches() const {
        if (!patches.empty()) return patches;
        if (data.dims.size() == 3)
            return {{"S", {16, 16, 16}, 16}, {"M", {24, 24, 24}, 8}, {"L", {32, 32, 32}, 2}};
        return {{"S", {16, 16}, 16}, {"M", {32, 32}, 8}, {"L", {64, 64}, 2}};
    }

    void validate() const {
        data.validate();
        loss_config.validate();
        GridShape shape(data.dims);
        if (model_window == 0 || model_window % 2 == 0)
            throw ValidationError("SweepConfig: model_window must be odd");
        if (model_hidden == 0) throw ValidationError("SweepConfig: model_hidden must be >= 1");
        if (losses.empty()) throw ValidationError("SweepConfig: no losses selected");
        if (learning_rates.empty()) throw ValidationError("SweepConfig: no learning rates selected");
        for (double lr : learning_rates)
            if (!(lr > 0.0)) throw ValidationError("SweepConfig: learning rates must be > 0");
        if (repeats == 0) throw ValidationError("SweepConfig: repeats must be >= 1");
        if (stats_window == 0) throw ValidationError("SweepConfig: stats_window must be >= 1");
        if (effective_iterations() < stats_window)
            throw ValidationError("SweepConfig: iterations must be >= stats_window");
        std::set<std::string> labels;
        for (const PatchSpec& p : effective_patches()) {
            if (!labels.insert(p.label).second)
                throw ValidationError("SweepConfig: duplicate patch label " + p.label);
            if (p.dims.size() != shape.rank())
                throw ValidationError("SweepConfig: patch " + p.label + " rank does not match data dims");
            for (std::size_t a = 0; a < p.dims.size(); ++a)
                if (p.dims[a] == 0 || p.dims[a] > shape.dims()[a])
                    throw ValidationError("SweepConfig: patch " + p.label + " does not fit the volume");
        }
    }

    static SweepConfig from_config(const KeyValueConfig& kv) {
        kv.check_known({"data.dims", "data.fg_fraction", "data.radius_min", "data.radius_max",
                        "data.intensity_fg", "data.intensity_bg", "data.noise_sigma", "data.seed",
                        "data.zscore", "loss.epsilon", "loss.lambda", "loss.volume_floor", "loss.wce_weights",
                        "model.window", "model.hidden", "sweep.losses", "sweep.lrs", "sweep.patches",
                        "sweep.iterations", "sweep.repeats", "sweep.stats_window", "sweep.workers",
                        "sweep.seed"});
        SweepConfig cfg;
        if (kv.has("data.dims")) cfg.data.dims = kv.get_sizes("data.dims");
        cfg.data.fg_fraction = kv.get_double_or("data.fg_fraction", cfg.data.fg_fraction);
        cfg.data.radius_min = kv.get_double_or("data.radius_min", cfg.data.radius_min);
        cfg.data.radius_max = kv.get_double_or("data.radius_max", cfg.data.radius_max);
        cfg.data.intensity_fg = kv.get_double_or("data.intensity_fg", cfg.data.intensity_fg);
        cfg.data.intensity_bg = kv.get_double_or("data.intensity_bg", cfg.data.intensity_bg);
        cfg.data.noise_sigma = kv.get_double_or("data.noise_sigma", cfg.data.noise_sigma);
        cfg.data.seed = kv.get_u64_or("data.seed", cfg.data.seed);
        cfg.zscore = kv.get_bool_or("data.zscore", cfg.zscore);
        cfg.loss_config.epsilon = kv.get_double_or("loss.epsilon", cfg.loss_config.epsilon);
        cfg.loss_config.lambda = kv.get_double_or("loss.lambda", cfg.loss_config.lambda);
        cfg.loss_config.volume_floor = kv.get_double_or("loss.volume_floor", cfg.loss_config.volume_floor);
        if (kv.has("loss.wce_weights")) {
            const std::string v = kv.get_string("loss.wce_weights");
            if (v == "prediction")
                cfg.loss_config.wce_weight_source = WceWeightSource::prediction_sum;
            else if (v == "reference")
                cfg.loss_config.wce_weight_source = WceWeightSource::reference_sum;
            else
                throw ValidationError("config: loss.wce_weights must be prediction or reference");
        }
        cfg.model_window = static_cast<std::size_t>(kv.get_u64_or("model.window", cfg.model_window));
        cfg.model_hidden = static_cast<std::size_t>(kv.get_u64_or("model.hidden", cfg.model_hidden));
        if (kv.has("sweep.losses")) {
            cfg.losses.clear();
            for (const std::string& name : kv.get_list("sweep.losses"))
                cfg.losses.push_back(loss_kind_from_name(name));
        }
        if (kv.has("sweep.lrs")) cfg.learning_rates = kv.get_doubles("sweep.lrs");
        if (kv.has("sweep.patches")) {
            cfg.patches.clear();
            for (const std::string& spec : kv.get_list("sweep.patches"))
                cfg.patches.push_back(parse_patch_spec(spec));
        }
        cfg.iterations = static_cast<std::size_t>(kv.get_u64_or("sweep.iterations", cfg.iterations));
        cfg.repeats = static_cast<std::size_t>(kv.get_u64_or("sweep.repeats", cfg.repeats));
        cfg.stats_window = static_cast<std::size_t>(kv.get_u64_or("sweep.stats_window", cfg.stats_window));
        cfg.workers = static_cast<std::size_t>(kv.get_u64_or("sweep.workers", cfg.workers));
        cfg.seed = kv.get_u64_or("sweep.seed", cfg.seed);
        cfg.validate();
        return cfg;
    }
};

struct SweepRecord {
    LossKind loss = LossKind::wce;
    double lr = 0.0;
    std::string patch;
    std::uint64_t seed = 0; // repeat index
    double median_dsc = 0.0;
    double iqr_dsc = 0.0;
    bool diverged = false;
};

struct SweepGrid {
    std::vector<SweepRecord> records;
};

inline Volume prepare_volume(const SynthConfig& cfg, bool zscore) {
    Volume vol = generate_volume(cfg);
    if (zscore) vol.features = zscore_normalize(vol.features);
    return vol;
}

namespace detail {

// Sub-stream tags, arbitrary but fixed: changing them changes every seeded run.
inline constexpr std::uint64_t kVolumeTag = 0x766f6c75u;
inline constexpr std::uint64_t kModelTag = 0x6d6f6465u;
inline constexpr std::uint64_t kSampleTag = 0x73616d70u;

// Volume and model-init seeds depend only on the repeat, the sampling seed
// also on the patch geometry: cells that differ only in loss or learning rate
// see identical data and initialization, so cross-loss comparisons at a fixed
// repeat are paired.
inline SweepRecord run_cell(const SweepConfig& cfg, LossKind loss, double lr, const PatchSpec& patch,
                            std::size_t repeat) {
    SweepRecord rec;
    rec.loss = loss;
    rec.lr = lr;
    rec.patch = patch.label;
    rec.seed = repeat;
    try {
        SynthConfig data = cfg.data;
        data.seed = derive_seed(cfg.data.seed, kVolumeTag, repeat);
        const Volume vol = prepare_volume(data, cfg.zscore);

        PixelModel model = PixelModel::init(cfg.model_window, cfg.model_hidden, vol.shape.rank(),
                                            derive_seed(cfg.seed, kModelTag, repeat));
        TrainConfig tc;
        tc.loss = loss;
        tc.learning_rate = lr;
        tc.iterations = cfg.effective_iterations();
        tc.batch = patch.batch;
        tc.patch_dims = patch.dims;
        std::uint64_t sample_seed = derive_seed(cfg.seed, kSampleTag, repeat);
        for (std::size_t d : patch.dims) sample_seed = derive_seed(sample_seed, d);
        tc.seed = sample_seed;
        tc.loss_config = cfg.loss_config;

        const TrainTrace trace = train(model, vol, tc);
        if (trace.diverged) {
            rec.diverged = true;
            return rec;
        }
        std::vector<double> dscs(trace.records.size());
        for (std::size_t i = 0; i < dscs.size(); ++i) dscs[i] = trace.records[i].batch_dsc;
        const TraceStats stats = trace_stats(dscs, cfg.stats_window);
        rec.median_dsc = stats.median;
        rec.iqr_dsc = stats.iqr;
    } catch (const NumericError&) {
        rec.diverged = true; // cell-level numeric failure, recorded rather than fatal
    }
    return rec;
}

inline double round6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::stod(buf);
}

} // namespace detail

// Full cross product (loss x lr x patch x repeat), rows sorted by loss name,
// learning rate, patch label, repeat. The grid is a pure function of the
// config: worker count only changes the wall time.
inline SweepGrid run_sweep(const SweepConfig& cfg) {
    cfg.validate();
    struct Cell {
        LossKind loss;
        double lr;
        PatchSpec patch;
        std::size_t repeat;
    };
    std::vector<Cell> cells;
    for (LossKind loss : cfg.losses)
        for (double lr : cfg.learning_rates)
            for (const PatchSpec& patch : cfg.effective_patches())
                for (std::size_t rep = 0; rep < cfg.repeats; ++rep) cells.push_back({loss, lr, patch, rep});

    SweepGrid grid;
    grid.records.resize(cells.size());
    std::size_t workers = cfg.workers != 0 ? cfg.workers : std::thread::hardware_concurrency();
    if (workers == 0) workers = 1;
    if (workers > cells.size()) workers = cells.size();

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            try {
                grid.records[i] =
                    detail::run_cell(cfg, cells[i].loss, cells[i].lr, cells[i].patch, cells[i].repeat);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::sort(grid.records.begin(), grid.records.end(), [](const SweepRecord& a, const SweepRecord& b) {
        const auto ka = std::make_tuple(loss_kind_name(a.loss), a.lr, a.patch, a.seed);
        const auto kb = std::make_tuple(loss_kind_name(b.loss), b.lr, b.patch, b.seed);
        return ka < kb;
    });
    return grid;
}

inline const char* kGridCsvHeader = "loss,lr,patch,seed,median_dsc,iqr_dsc,diverged";

inline std::string export_grid_csv(const SweepGrid& grid) {
    std::string out = kGridCsvHeader;
    out += '\n';
    char buf[64];
    for (const SweepRecord& r : grid.records) {
        out += loss_kind_name(r.loss);
        std::snprintf(buf, sizeof buf, ",%.6f,", r.lr);
        out += buf;
        out += r.patch;
        std::snprintf(buf, sizeof buf, ",%llu,", static_cast<unsigned long long>(r.seed));
        out += buf;
        if (r.diverged) {
            out += ",,true";
        } else {
            std::snprintf(buf, sizeof buf, "%.6f,%.6f,false", r.median_dsc, r.iqr_dsc);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

inline SweepGrid parse_grid_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kGridCsvHeader)
        throw IoError("grid csv: missing or malformed header");
    SweepGrid grid;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string field;
        std::istringstream ls(line);
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (!line.empty() && line.back() == ',') fields.push_back("");
        if (fields.size() != 7)
            throw IoError("grid csv line " + std::to_string(line_no) + ": expected 7 fields, got " +
                          std::to_string(fields.size()));
        SweepRecord r;
        try {
            r.loss = loss_kind_from_name(fields[0]);
        } catch (const ValidationError& e) {
            throw IoError("grid csv line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            r.lr = std::stod(fields[1]);
            r.patch = fields[2];
            if (r.patch.empty()) throw std::invalid_argument("empty patch label");
            r.seed = std::stoull(fields[3]);
            if (fields[6] == "true")
                r.diverged = true;
            else if (fields[6] == "false")
                r.diverged = false;
            else
                throw std::invalid_argument("diverged must be true or false");
            if (r.diverged) {
                if (!fields[4].empty() || !fields[5].empty())
                    throw std::invalid_argument("diverged rows must leave the stats empty");
            } else {
                r.median_dsc = std::stod(fields[4]);
                r.iqr_dsc = std::stod(fields[5]);
            }
        } catch (const std::exception& e) {
            throw IoError("grid csv line " + std::to_string(line_no) + ": " + e.what());
        }
        grid.records.push_back(std::move(r));
    }
    return grid;
}

inline std::string export_grid_json(const SweepGrid& grid) {
    nlohmann::json arr = nlohmann::json::array();
    for (const SweepRecord& r : grid.records) {
        nlohmann::json row;
        row["loss"] = std::string(loss_kind_name(r.loss));
        row["lr"] = detail::round6(r.lr);
        row["patch"] = r.patch;
        row["seed"] = r.seed;
        if (r.diverged) {
            row["median_dsc"] = nullptr;
            row["iqr_dsc"] = nullptr;
        } else {
            row["median_dsc"] = detail::round6(r.median_dsc);
            row["iqr_dsc"] = detail::round6(r.iqr_dsc);
        }
        row["diverged"] = r.diverged;
        arr.push_back(std::move(row));
    }
    return arr.dump(2) + "\n";
}

inline SweepGrid parse_grid_json(const std::string& text) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("grid json: ") + e.what());
    }
    if (!arr.is_array()) throw IoError("grid json: top level must be an array");
    SweepGrid grid;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const nlohmann::json& row = arr[i];
        const std::string at = "grid json row " + std::to_string(i) + ": ";
        try {
            SweepRecord r;
            r.loss = loss_kind_from_name(row.at("loss").get<std::string>());
            r.lr = row.at("lr").get<double>();
            r.patch = row.at("patch").get<std::string>();
            r.seed = row.at("seed").get<std::uint64_t>();
            r.diverged = row.at("diverged").get<bool>();
            if (r.diverged) {
                if (!row.at("median_dsc").is_null() || !row.at("iqr_dsc").is_null())
                    throw IoError(at + "diverged rows must carry null stats");
            } else {
                r.median_dsc = row.at("median_dsc").get<double>();
                r.iqr_dsc = row.at("iqr_dsc").get<double>();
            }
            grid.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(at + e.what());
        } catch (const ValidationError& e) {
            throw IoError(at + e.what());
        }
    }
    return grid;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("short write to " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace segloss
