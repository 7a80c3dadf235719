#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segloss/errors.hpp"
#include "segloss/field.hpp"
#include "segloss/losses.hpp"
#include "segloss/metrics.hpp"
#include "segloss/rng.hpp"
#include "segloss/synth.hpp"

namespace segloss {

// Per-element classifier: p = sigmoid(w2 . tanh(W1^T x + b1) + b2), where x is
// the window of features around the element, mirror-padded at the borders.
struct PixelModel {
    std::size_t window; // odd extent of the window along every axis
    std::size_t rank;   // grid rank the window spans (2 or 3)
    std::size_t hidden;
    Eigen::MatrixXd weights_in;  // feature_dim x hidden
    Eigen::VectorXd bias_in;     // hidden
    Eigen::VectorXd weights_out; // hidden
    double bias_out = 0.0;

    std::size_t feature_dim() const {
        std::size_t d = 1;
        for (std::size_t a = 0; a < rank; ++a) d *= window;
        return d;
    }

    // All parameters drawn uniformly from [-0.1, 0.1] in a fixed order, so one
    // seed pins the whole parameter set.
    static PixelModel init(std::size_t window, std::size_t hidden, std::size_t rank, std::uint64_t seed) {
        if (window == 0 || window % 2 == 0)
            throw ValidationError("PixelModel: window must be odd, got " + std::to_string(window));
        if (hidden == 0) throw ValidationError("PixelModel: hidden must be >= 1");
        if (rank != 2 && rank != 3) throw ValidationError("PixelModel: rank must be 2 or 3");
        PixelModel m;
        m.window = window;
        m.rank = rank;
        m.hidden = hidden;
        const std::size_t d = m.feature_dim();
        m.weights_in.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(hidden));
        m.bias_in.resize(static_cast<Eigen::Index>(hidden));
        m.weights_out.resize(static_cast<Eigen::Index>(hidden));
        Rng rng(seed);
        for (Eigen::Index i = 0; i < m.weights_in.rows(); ++i)
            for (Eigen::Index j = 0; j < m.weights_in.cols(); ++j) m.weights_in(i, j) = rng.uniform_real(-0.1, 0.1);
        for (Eigen::Index j = 0; j < m.bias_in.size(); ++j) m.bias_in(j) = rng.uniform_real(-0.1, 0.1);
        for (Eigen::Index j = 0; j < m.weights_out.size(); ++j) m.weights_out(j) = rng.uniform_real(-0.1, 0.1);
        m.bias_out = rng.uniform_real(-0.1, 0.1);
        return m;
    }
};

struct ParamGrads {
    Eigen::MatrixXd weights_in;
    Eigen::VectorXd bias_in;
    Eigen::VectorXd weights_out;
    double bias_out = 0.0;
};

namespace detail {

// Symmetric (mirror) index: ...2,1,0 | 0..n-1 | n-1,n-2,...
inline std::size_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -1 - i;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return static_cast<std::size_t>(i);
}

// One row per element, columns enumerating the window cells in flat order.
inline Eigen::MatrixXd window_matrix(const PixelModel& model, const std::vector<double>& features,
                                     const GridShape& shape) {
    if (shape.rank() != model.rank)
        throw ValidationError("window_matrix: grid rank " + std::to_string(shape.rank()) +
                              " does not match model rank " + std::to_string(model.rank));
    if (features.size() != shape.element_count())
        throw ValidationError("window_matrix: feature count does not match shape " + shape.to_string());

    const auto vd = pad3(shape.dims());
    std::array<std::size_t, 3> wd{1, 1, 1};
    for (std::size_t a = 3 - model.rank; a < 3; ++a) wd[a] = model.window;
    const std::array<std::ptrdiff_t, 3> half{static_cast<std::ptrdiff_t>(wd[0] / 2),
                                             static_cast<std::ptrdiff_t>(wd[1] / 2),
                                             static_cast<std::ptrdiff_t>(wd[2] / 2)};

    Eigen::MatrixXd x(static_cast<Eigen::Index>(shape.element_count()),
                      static_cast<Eigen::Index>(model.feature_dim()));
    Eigen::Index row = 0;
    for (std::size_t z = 0; z < vd[0]; ++z)
        for (std::size_t y = 0; y < vd[1]; ++y)
            for (std::size_t xx = 0; xx < vd[2]; ++xx, ++row) {
                Eigen::Index col = 0;
                for (std::size_t oz = 0; oz < wd[0]; ++oz) {
                    const std::size_t sz =
                        reflect(static_cast<std::ptrdiff_t>(z + oz) - half[0], static_cast<std::ptrdiff_t>(vd[0]));
                    for (std::size_t oy = 0; oy < wd[1]; ++oy) {
                        const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y + oy) - half[1],
                                                       static_cast<std::ptrdiff_t>(vd[1]));
                        for (std::size_t ox = 0; ox < wd[2]; ++ox, ++col) {
                            const std::size_t sx = reflect(static_cast<std::ptrdiff_t>(xx + ox) - half[2],
                                                           static_cast<std::ptrdiff_t>(vd[2]));
                            x(row, col) = features[(sz * vd[1] + sy) * vd[2] + sx];
                        }
                    }
                }
            }
    return x;
}

struct ForwardPass {
    Eigen::MatrixXd x;  // elements x feature_dim
    Eigen::MatrixXd hm; // elements x hidden, tanh activations
    Eigen::VectorXd p;  // foreground probabilities
};

inline ForwardPass forward_pass(const PixelModel& model, const std::vector<double>& features,
                                const GridShape& shape) {
    ForwardPass fp;
    fp.x = window_matrix(model, features, shape);
    if (!fp.x.allFinite()) throw ValidationError("forward: non-finite feature values");
    // checked before tanh: saturation would otherwise mask an exploded weight
    const Eigen::MatrixXd z1 = (fp.x * model.weights_in).rowwise() + model.bias_in.transpose();
    if (!z1.allFinite())
        throw NumericError("forward: non-finite pre-activation in the hidden layer (weights_in/bias_in)");
    fp.hm = z1.array().tanh();
    Eigen::VectorXd z = (fp.hm * model.weights_out).array() + model.bias_out;
    if (!z.allFinite())
        throw NumericError("forward: non-finite activation in the output layer (weights_out/bias_out)");
    fp.p = (1.0 / (1.0 + (-z.array()).exp())).matrix();
    return fp;
}

inline ProbField to_prob_field(const Eigen::VectorXd& p, const GridShape& shape) {
    std::vector<double> values(static_cast<std::size_t>(p.size()) * 2);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        values[static_cast<std::size_t>(i) * 2 + kBackground] = 1.0 - p(i);
        values[static_cast<std::size_t>(i) * 2 + kForeground] = p(i);
    }
    return ProbField(shape, 2, std::move(values));
}

// Backprop through sigmoid, affine, tanh, affine. dz is dLoss/dz per element.
inline ParamGrads backward_pass(const PixelModel& model, const ForwardPass& fp, const Eigen::VectorXd& dz) {
    ParamGrads g;
    g.weights_out = fp.hm.transpose() * dz;
    g.bias_out = dz.sum();
    const Eigen::MatrixXd ga =
        (dz * model.weights_out.transpose()).array() * (1.0 - fp.hm.array().square());
    g.weights_in = fp.x.transpose() * ga;
    g.bias_in = ga.colwise().sum().transpose();
    return g;
}

} // namespace detail

// Exposed for direct probing of the model on a full grid.
inline ProbField predict(const PixelModel& model, const std::vector<double>& features, const GridShape& shape) {
    return detail::to_prob_field(detail::forward_pass(model, features, shape).p, shape);
}

// Parameter gradients for a given per-coordinate loss gradient (LossOutput
// layout). Split out from train so the chain rule can be checked in isolation.
inline ParamGrads model_gradients(const PixelModel& model, const std::vector<double>& features,
                                  const GridShape& shape, const std::vector<double>& loss_grad) {
    const detail::ForwardPass fp = detail::forward_pass(model, features, shape);
    if (loss_grad.size() != shape.element_count() * 2)
        throw ValidationError("model_gradients: loss gradient size does not match a two-class field");
    Eigen::VectorXd dz(fp.p.size());
    for (Eigen::Index i = 0; i < dz.size(); ++i) {
        const std::size_t n = static_cast<std::size_t>(i);
        const double dir = loss_grad[n * 2 + kForeground] - loss_grad[n * 2 + kBackground];
        dz(i) = dir * fp.p(i) * (1.0 - fp.p(i));
    }
    return detail::backward_pass(model, fp, dz);
}

struct TrainConfig {
    LossKind loss = LossKind::gdl_v;
    double learning_rate = 1e-4;
    std::size_t iterations = 1000;
    std::size_t batch = 2;
    std::vector<std::size_t> patch_dims;
    std::uint64_t seed = 0; // patch-sampling stream
    LossConfig loss_config;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw ValidationError("TrainConfig: learning_rate must be finite and >= 0");
        if (iterations == 0) throw ValidationError("TrainConfig: iterations must be >= 1");
        if (batch == 0) throw ValidationError("TrainConfig: batch must be >= 1");
        if (patch_dims.empty()) throw ValidationError("TrainConfig: patch_dims must be set");
        loss_config.validate();
    }
};

struct TrainRecord {
    std::size_t iteration; // 1-based
    double loss_value;
    double batch_dsc; // overlap of the thresholded batch prediction, before the update
};

struct TrainTrace {
    std::vector<TrainRecord> records;
    bool diverged = false;
    std::size_t diverged_at = 0; // iteration that produced a non-finite value, when diverged
};

// Concatenates patches along axis 0 so the stack is itself a valid grid; the
// flat element order of the stack is the patches back to back.
inline GridShape stacked_shape(const std::vector<std::size_t>& patch_dims, std::size_t batch) {
    std::vector<std::size_t> dims = patch_dims;
    dims[0] *= batch;
    return GridShape(dims);
}

// Plain SGD. Each iteration samples a fresh batch, evaluates the loss over the
// stacked patches and applies one update. The per-iteration record is taken
// before the update. A non-finite loss, gradient or activation stops the run
// and flags the trace as diverged instead of throwing.
inline TrainTrace train(PixelModel& model, const Volume& data, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.patch_dims.size() != data.shape.rank())
        throw ValidationError("train: patch rank does not match volume rank");
    const GridShape batch_shape = stacked_shape(cfg.patch_dims, cfg.batch);
    const std::size_t patch_elems = GridShape(cfg.patch_dims).element_count();

    TrainTrace trace;
    trace.records.reserve(cfg.iterations);
    std::vector<double> features(batch_shape.element_count());
    std::vector<std::uint32_t> labels(batch_shape.element_count());

    for (std::size_t t = 1; t <= cfg.iterations; ++t) {
        const auto patches = sample_patches(data, cfg.patch_dims, cfg.batch, derive_seed(cfg.seed, t));
        for (std::size_t k = 0; k < patches.size(); ++k) {
            std::copy(patches[k].features.begin(), patches[k].features.end(),
                      features.begin() + static_cast<std::ptrdiff_t>(k * patch_elems));
            std::copy(patches[k].labels.begin(), patches[k].labels.end(),
                      labels.begin() + static_cast<std::ptrdiff_t>(k * patch_elems));
        }
        const LabelField ref = onehot_encode(batch_shape, labels, 2);

        try {
            const detail::ForwardPass fp = detail::forward_pass(model, features, batch_shape);
            const ProbField probs = detail::to_prob_field(fp.p, batch_shape);
            const LossOutput loss = evaluate_loss(cfg.loss, probs, ref, cfg.loss_config);

            bool finite = std::isfinite(loss.value);
            for (std::size_t i = 0; finite && i < loss.grad.size(); ++i) finite = std::isfinite(loss.grad[i]);
            if (!finite) {
                trace.diverged = true;
                trace.diverged_at = t;
                break;
            }

            trace.records.push_back({t, loss.value, dsc(binarize(probs, 0.5), ref, kForeground)});

            Eigen::VectorXd dz(fp.p.size());
            for (Eigen::Index i = 0; i < dz.size(); ++i) {
                const std::size_t n = static_cast<std::size_t>(i);
                const double dir = loss.grad[n * 2 + kForeground] - loss.grad[n * 2 + kBackground];
                dz(i) = dir * fp.p(i) * (1.0 - fp.p(i));
            }
            const ParamGrads g = detail::backward_pass(model, fp, dz);
            model.weights_in -= cfg.learning_rate * g.weights_in;
            model.bias_in -= cfg.learning_rate * g.bias_in;
            model.weights_out -= cfg.learning_rate * g.weights_out;
            model.bias_out -= cfg.learning_rate * g.bias_out;
        } catch (const NumericError&) {
            trace.diverged = true;
            trace.diverged_at = t;
            break;
        }
    }
    return trace;
}

} // namespace segloss
