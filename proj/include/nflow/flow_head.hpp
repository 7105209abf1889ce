#ifndef NFLOW_FLOW_HEAD_HPP
#define NFLOW_FLOW_HEAD_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nflow/binary_io.hpp"
#include "nflow/encoder.hpp"
#include "nflow/parallel.hpp"
#include "nflow/random.hpp"

namespace nflow {

enum class Activation : std::uint8_t { relu = 0 };
enum class FlowUnits : std::uint8_t { pixels_per_second = 0 };

struct FlowVector {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const FlowVector &, const FlowVector &) = default;
};

/// Two-layer perceptron out = W2 relu(W1 f + b1) + b2 over f = [Re(emb); Im(emb)].
/// Matrices are row-major. Parameters are held in double; the weight file
/// stores f32, see round_to_storage().
struct MlpWeights {
    std::uint32_t dim = 0;
    std::uint32_t hidden = 0;
    Activation activation = Activation::relu;
    FlowUnits units = FlowUnits::pixels_per_second;
    Bases bases;
    std::vector<double> w1;
    std::vector<double> b1;
    std::vector<double> w2;
    std::vector<double> b2;

    [[nodiscard]] std::size_t inputs() const noexcept { return 2 * static_cast<std::size_t>(dim); }

    static MlpWeights zeros(Bases bases, std::uint32_t hidden) {
        MlpWeights w;
        w.dim = static_cast<std::uint32_t>(bases.dim());
        w.hidden = hidden;
        w.bases = std::move(bases);
        w.w1.assign(static_cast<std::size_t>(hidden) * w.inputs(), 0.0);
        w.b1.assign(hidden, 0.0);
        w.w2.assign(2 * static_cast<std::size_t>(hidden), 0.0);
        w.b2.assign(2, 0.0);
        return w;
    }

    void validate() const {
        if (dim == 0 || hidden == 0) {
            throw std::invalid_argument("MlpWeights: D and hidden must be >= 1");
        }
        if (bases.dim() != dim || bases.x.size() != dim || bases.y.size() != dim) {
            throw DimensionMismatch("MlpWeights: embedded bases have D=" + std::to_string(bases.dim()) +
                                    ", weights expect D=" + std::to_string(dim));
        }
        if (w1.size() != static_cast<std::size_t>(hidden) * inputs() || b1.size() != hidden ||
            w2.size() != 2 * static_cast<std::size_t>(hidden) || b2.size() != 2) {
            throw DimensionMismatch("MlpWeights: parameter array sizes inconsistent with D/hidden");
        }
        for (const auto *v : {&w1, &b1, &w2, &b2}) {
            for (double x : *v) {
                if (!std::isfinite(x)) {
                    throw std::invalid_argument("MlpWeights: non-finite parameter");
                }
            }
        }
    }

    /// Rounds every parameter to the nearest f32 so in-memory weights equal
    /// what a save/load round trip produces.
    void round_to_storage() {
        for (auto *v : {&w1, &b1, &w2, &b2}) {
            for (double &x : *v) {
                x = static_cast<double>(static_cast<float>(x));
            }
        }
    }
};

inline constexpr std::string_view kWeightsMagic = "VKMW";
inline constexpr std::uint32_t kWeightsVersion = 1;

inline void write_weights(std::ostream &os, const MlpWeights &w) {
    w.validate();
    le::put_magic(os, kWeightsMagic);
    le::put_u32(os, kWeightsVersion);
    le::put_u32(os, w.dim);
    le::put_u32(os, w.hidden);
    le::put_u8(os, static_cast<std::uint8_t>(w.activation));
    le::put_u8(os, static_cast<std::uint8_t>(w.units));
    write_bases(os, w.bases);
    for (const auto *v : {&w.w1, &w.b1, &w.w2, &w.b2}) {
        for (double x : *v) {
            le::put_f32(os, static_cast<float>(x));
        }
    }
}

inline MlpWeights read_weights(std::istream &is) {
    le::Reader r(is);
    r.expect_magic(kWeightsMagic);
    const auto version = r.u32("version");
    if (version != kWeightsVersion) {
        throw ParseError("weights: unsupported version " + std::to_string(version), r.offset());
    }
    MlpWeights w;
    w.dim = r.u32("D");
    w.hidden = r.u32("hidden");
    const auto act = r.u8("activation");
    const auto units = r.u8("units");
    if (act != static_cast<std::uint8_t>(Activation::relu)) {
        throw ParseError("weights: unknown activation tag " + std::to_string(act), r.offset());
    }
    if (units != static_cast<std::uint8_t>(FlowUnits::pixels_per_second)) {
        throw ParseError("weights: unknown flow units tag " + std::to_string(units), r.offset());
    }
    if (w.dim == 0 || w.hidden == 0) {
        throw ParseError("weights: D and hidden must be >= 1", r.offset());
    }
    w.bases = read_bases(r);
    if (w.bases.dim() != w.dim) {
        throw ParseError("weights: embedded bases D=" + std::to_string(w.bases.dim()) +
                             " differs from header D=" + std::to_string(w.dim),
                         r.offset());
    }
    w.w1.resize(static_cast<std::size_t>(w.hidden) * w.inputs());
    w.b1.resize(w.hidden);
    w.w2.resize(2 * static_cast<std::size_t>(w.hidden));
    w.b2.resize(2);
    for (auto *v : {&w.w1, &w.b1, &w.w2, &w.b2}) {
        for (double &x : *v) {
            x = r.f32("parameter");
        }
    }
    w.validate();
    return w;
}

inline void save_weights(const std::string &path, const MlpWeights &w) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot write weights file: " + path);
    }
    write_weights(os, w);
}

inline MlpWeights load_weights(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open weights file: " + path);
    }
    return read_weights(is);
}

/// [Re(emb); Im(emb)].
template <typename Real> std::vector<double> embed_to_features(const Embedding<Real> &emb) {
    const std::size_t dim = emb.values.size();
    std::vector<double> f(2 * dim);
    for (std::size_t j = 0; j < dim; ++j) {
        f[j] = static_cast<double>(emb.values[j].real());
        f[dim + j] = static_cast<double>(emb.values[j].imag());
    }
    return f;
}

/// Hidden pre-activations and activations from one forward pass.
struct ForwardTrace {
    std::vector<double> pre;
    std::vector<double> act;
};

inline FlowVector mlp_forward(const MlpWeights &w, std::span<const double> features,
                              ForwardTrace *trace = nullptr) {
    if (features.size() != w.inputs()) {
        throw DimensionMismatch("mlp_forward: expected " + std::to_string(w.inputs()) + " features, got " +
                                std::to_string(features.size()));
    }
    const std::size_t in = w.inputs();
    thread_local std::vector<double> hidden;
    hidden.resize(w.hidden);
    for (std::size_t h = 0; h < w.hidden; ++h) {
        const double *row = w.w1.data() + h * in;
        double a = w.b1[h];
        for (std::size_t i = 0; i < in; ++i) {
            a += row[i] * features[i];
        }
        hidden[h] = a;
    }
    if (trace != nullptr) {
        trace->pre.assign(hidden.begin(), hidden.end());
    }
    FlowVector out{w.b2[0], w.b2[1]};
    for (std::size_t h = 0; h < w.hidden; ++h) {
        const double a = hidden[h] > 0.0 ? hidden[h] : 0.0;
        hidden[h] = a;
        out.x += w.w2[h] * a;
        out.y += w.w2[w.hidden + h] * a;
    }
    if (trace != nullptr) {
        trace->act.assign(hidden.begin(), hidden.end());
    }
    return out;
}

/// d out_k / d features for k = 0 (x) and 1 (y); returned as two rows.
inline std::array<std::vector<double>, 2> mlp_input_gradient(const MlpWeights &w, std::span<const double> features) {
    ForwardTrace trace;
    mlp_forward(w, features, &trace);
    const std::size_t in = w.inputs();
    std::array<std::vector<double>, 2> grad{std::vector<double>(in, 0.0), std::vector<double>(in, 0.0)};
    for (std::size_t h = 0; h < w.hidden; ++h) {
        if (!(trace.pre[h] > 0.0)) {
            continue;
        }
        const double *row = w.w1.data() + h * in;
        for (int k = 0; k < 2; ++k) {
            const double scale = w.w2[static_cast<std::size_t>(k) * w.hidden + h];
            for (std::size_t i = 0; i < in; ++i) {
                grad[static_cast<std::size_t>(k)][i] += scale * row[i];
            }
        }
    }
    return grad;
}

/// Same shapes as the MlpWeights parameter arrays.
struct MlpGradients {
    std::vector<double> w1;
    std::vector<double> b1;
    std::vector<double> w2;
    std::vector<double> b2;

    static MlpGradients zeros_like(const MlpWeights &w) {
        return {std::vector<double>(w.w1.size(), 0.0), std::vector<double>(w.b1.size(), 0.0),
                std::vector<double>(w.w2.size(), 0.0), std::vector<double>(w.b2.size(), 0.0)};
    }

    void add(const MlpGradients &o) {
        auto acc = [](std::vector<double> &a, const std::vector<double> &b) {
            for (std::size_t i = 0; i < a.size(); ++i) {
                a[i] += b[i];
            }
        };
        acc(w1, o.w1);
        acc(b1, o.b1);
        acc(w2, o.w2);
        acc(b2, o.b2);
    }
};

/// Accumulates d(loss)/d(params) for one sample given d(loss)/d(out).
inline void mlp_backward(const MlpWeights &w, std::span<const double> features, const ForwardTrace &trace,
                         FlowVector d_out, MlpGradients &grads) {
    const std::size_t in = w.inputs();
    grads.b2[0] += d_out.x;
    grads.b2[1] += d_out.y;
    for (std::size_t h = 0; h < w.hidden; ++h) {
        grads.w2[h] += d_out.x * trace.act[h];
        grads.w2[w.hidden + h] += d_out.y * trace.act[h];
        if (!(trace.pre[h] > 0.0)) {
            continue;
        }
        const double g = w.w2[h] * d_out.x + w.w2[w.hidden + h] * d_out.y;
        grads.b1[h] += g;
        double *row = grads.w1.data() + h * in;
        for (std::size_t i = 0; i < in; ++i) {
            row[i] += g * features[i];
        }
    }
}

/// Constraint-residual loss with an anti-collapse margin:
///   mean[(n.(u-n))^2 / (|u|^2 + eps)] + lambda * mean[max(0, margin - |n|)^2].
/// The first term vanishes on the circle with diameter u, including n = 0;
/// the margin term keeps predictions off the origin.
struct FlowLoss {
    double lambda = 0.1;
    double margin = 0.0;
    double eps = 1e-8;

    /// Per-sample loss (not yet averaged) and its gradient w.r.t. n.
    [[nodiscard]] double sample(FlowVector n, FlowVector u, FlowVector *grad) const {
        const double uu = u.x * u.x + u.y * u.y + eps;
        const double r = n.x * (u.x - n.x) + n.y * (u.y - n.y);
        double loss = r * r / uu;
        FlowVector g{2.0 * r * (u.x - 2.0 * n.x) / uu, 2.0 * r * (u.y - 2.0 * n.y) / uu};
        const double norm = std::hypot(n.x, n.y);
        const double gap = margin - norm;
        if (gap > 0.0) {
            loss += lambda * gap * gap;
            if (norm > 0.0) {
                g.x += -2.0 * lambda * gap * n.x / norm;
                g.y += -2.0 * lambda * gap * n.y / norm;
            }
        }
        if (grad != nullptr) {
            *grad = g;
        }
        return loss;
    }
};

struct TrainingSample {
    std::vector<double> features;
    FlowVector flow;
};

/// Mean loss over `batch` and, when `grads` is given, the gradient of that
/// mean. Per-worker partial gradients are summed in worker order.
inline double batch_loss(const MlpWeights &w, std::span<const TrainingSample *const> batch, const FlowLoss &loss,
                         MlpGradients *grads, unsigned threads = 1) {
    if (batch.empty()) {
        return 0.0;
    }
    const unsigned workers = std::min<unsigned>(std::max(1u, threads), static_cast<unsigned>(batch.size()));
    std::vector<double> partial_loss(workers, 0.0);
    std::vector<MlpGradients> partial;
    if (grads != nullptr) {
        partial.assign(workers, MlpGradients::zeros_like(w));
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    parallel_chunks(batch.size(), workers, [&](std::size_t begin, std::size_t end, unsigned wk) {
        ForwardTrace trace;
        for (std::size_t i = begin; i < end; ++i) {
            const TrainingSample &s = *batch[i];
            const FlowVector n = mlp_forward(w, s.features, grads != nullptr ? &trace : nullptr);
            FlowVector g;
            partial_loss[wk] += loss.sample(n, s.flow, &g) * inv;
            if (grads != nullptr) {
                mlp_backward(w, s.features, trace, {g.x * inv, g.y * inv}, partial[wk]);
            }
        }
    });
    if (grads != nullptr) {
        for (const auto &p : partial) {
            grads->add(p);
        }
    }
    return std::accumulate(partial_loss.begin(), partial_loss.end(), 0.0);
}

/// Ground-truth optical flow for selected events of one slice.
struct LabelledSlice {
    EventSlice slice;
    std::vector<std::size_t> queries;
    std::vector<FlowVector> flows;
};

/// Encodes every labelled query with `bases`; queries whose embedding fails
/// are skipped.
template <typename Real>
std::vector<TrainingSample> make_training_samples(std::span<const LabelledSlice> data, const EncoderConfig &cfg,
                                                  const Bases &bases, unsigned threads = 1) {
    std::vector<TrainingSample> out;
    if (data.empty()) {
        return out;
    }
    Encoder<Real> enc(cfg, bases, data.front().slice.geometry(), threads);
    for (const auto &d : data) {
        if (d.queries.size() != d.flows.size()) {
            throw std::invalid_argument("make_training_samples: queries and flows differ in length");
        }
        enc.build(d.slice);
        const auto embs = enc.embed_many(d.queries);
        for (std::size_t i = 0; i < embs.size(); ++i) {
            out.push_back({embed_to_features(embs[i]), d.flows[i]});
        }
    }
    return out;
}

class TrainingDiverged : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct TrainParams {
    std::uint32_t hidden = 128;
    std::size_t epochs = 60;
    std::size_t batch_size = 128;
    double learning_rate = 2e-3;
    double lambda = 0.1;
    /// Margin as a fraction of the mean ground-truth flow magnitude.
    double margin_fraction = 0.05;
    double validation_fraction = 0.1;
    std::uint64_t seed = 7;
    unsigned threads = 1;
    /// Start from zero weights instead of a random initialisation.
    bool zero_init = false;
    /// The margin starts at warmup_margin_fraction and decays linearly to
    /// margin_fraction over warmup_epochs. n = 0 also zeroes the constraint
    /// term, and the loss along the true normal has a bump between 0 and the
    /// target, so a small margin alone leaves short outputs stuck near zero.
    double warmup_margin_fraction = 1.0;
    std::size_t warmup_epochs = 10;
};

struct TrainReport {
    std::size_t best_epoch = 0;
    double best_validation_loss = std::numeric_limits<double>::infinity();
    std::vector<double> train_loss;
    std::vector<double> validation_loss;
    double flow_scale = 1.0;
};

/// Mini-batch Adam on FlowLoss. Flows are divided by their mean magnitude
/// during optimisation (the loss is scale-equivariant) and the output layer
/// is rescaled afterwards, so the returned head predicts pixels/second.
/// Returns the weights with the lowest validation loss.
inline MlpWeights train_head(std::span<const TrainingSample> samples, const Bases &bases, const TrainParams &p,
                             TrainReport *report = nullptr) {
    if (samples.empty()) {
        throw std::invalid_argument("train_head: empty dataset");
    }
    const std::size_t in = 2 * bases.dim();
    double scale = 0.0;
    for (const auto &s : samples) {
        if (s.features.size() != in) {
            throw DimensionMismatch("train_head: sample feature length differs from 2*D");
        }
        if (!std::isfinite(s.flow.x) || !std::isfinite(s.flow.y)) {
            throw std::invalid_argument("train_head: non-finite ground-truth flow");
        }
        scale += std::hypot(s.flow.x, s.flow.y);
    }
    scale /= static_cast<double>(samples.size());
    if (!(scale > 0.0)) {
        scale = 1.0;
    }

    std::vector<TrainingSample> scaled(samples.begin(), samples.end());
    for (auto &s : scaled) {
        s.flow = {s.flow.x / scale, s.flow.y / scale};
    }
    std::vector<std::size_t> order(scaled.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(p.seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(p.validation_fraction * static_cast<double>(scaled.size()));
    if (scaled.size() > 1) {
        n_val = std::clamp<std::size_t>(n_val, 1, scaled.size() - 1);
    } else {
        n_val = 0;
    }
    std::vector<const TrainingSample *> train;
    std::vector<const TrainingSample *> val;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_val ? val : train).push_back(&scaled[order[i]]);
    }
    if (val.empty()) {
        val = train;
    }

    const FlowLoss loss{p.lambda, p.margin_fraction, 1e-8};
    auto loss_at = [&](std::size_t epoch) {
        if (epoch >= p.warmup_epochs) {
            return loss;
        }
        const double a = static_cast<double>(epoch) / static_cast<double>(p.warmup_epochs);
        return FlowLoss{p.lambda, (1.0 - a) * p.warmup_margin_fraction + a * p.margin_fraction, 1e-8};
    };
    MlpWeights w = MlpWeights::zeros(bases, p.hidden);
    if (!p.zero_init) {
        const auto w1 = box_muller_normals(p.seed + 1, w.w1.size(), 2.0 / static_cast<double>(in));
        const auto w2 = box_muller_normals(p.seed + 2, w.w2.size(), 1.0 / static_cast<double>(p.hidden));
        w.w1 = w1;
        w.w2 = w2;
    }

    // Adam state.
    const double beta1 = 0.9;
    const double beta2 = 0.999;
    const double adam_eps = 1e-8;
    MlpGradients m = MlpGradients::zeros_like(w);
    MlpGradients v = MlpGradients::zeros_like(w);
    std::size_t step = 0;

    TrainReport local;
    local.flow_scale = scale;
    MlpWeights best = w;
    best.w2.clear();
    const std::size_t batch = std::max<std::size_t>(1, p.batch_size);
    for (std::size_t epoch = 0; epoch < p.epochs; ++epoch) {
        std::shuffle(train.begin(), train.end(), rng);
        const FlowLoss epoch_objective = loss_at(epoch);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < train.size(); start += batch) {
            const std::size_t len = std::min(batch, train.size() - start);
            MlpGradients g = MlpGradients::zeros_like(w);
            const double l = batch_loss(w, std::span(train).subspan(start, len), epoch_objective, &g, p.threads);
            if (!std::isfinite(l)) {
                std::ostringstream msg;
                msg << "train_head diverged: non-finite loss at epoch " << epoch << ", batch starting " << start
                    << " (last epoch loss " << (local.train_loss.empty() ? 0.0 : local.train_loss.back()) << ")";
                throw TrainingDiverged(msg.str());
            }
            epoch_loss += l * static_cast<double>(len);
            ++step;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            auto update = [&](std::vector<double> &param, const std::vector<double> &grad, std::vector<double> &mm,
                              std::vector<double> &vv) {
                for (std::size_t i = 0; i < param.size(); ++i) {
                    mm[i] = beta1 * mm[i] + (1.0 - beta1) * grad[i];
                    vv[i] = beta2 * vv[i] + (1.0 - beta2) * grad[i] * grad[i];
                    param[i] -= p.learning_rate * (mm[i] / c1) / (std::sqrt(vv[i] / c2) + adam_eps);
                }
            };
            update(w.w1, g.w1, m.w1, v.w1);
            update(w.b1, g.b1, m.b1, v.b1);
            update(w.w2, g.w2, m.w2, v.w2);
            update(w.b2, g.b2, m.b2, v.b2);
        }
        local.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
        const double vl = batch_loss(w, val, loss, nullptr, p.threads);
        local.validation_loss.push_back(vl);
        const bool settled = epoch >= p.warmup_epochs || epoch + 1 == p.epochs;
        if (settled && (vl < local.best_validation_loss || best.w2.empty())) {
            local.best_validation_loss = vl;
            local.best_epoch = epoch;
            best = w;
        }
    }
    if (best.w2.empty()) {
        best = w;
    }
    for (double &x : best.w2) {
        x *= scale;
    }
    for (double &x : best.b2) {
        x *= scale;
    }
    best.round_to_storage();
    best.validate();
    if (report != nullptr) {
        *report = std::move(local);
    }
    return best;
}

struct FlowPrediction {
    std::size_t event_index = 0;
    double nx = 0.0;
    double ny = 0.0;
};

struct QueryFailure {
    std::size_t event_index = 0;
    std::string reason;
};

struct PredictionBatch {
    std::vector<FlowPrediction> predictions;
    std::vector<QueryFailure> failures;
};

/// Encoder + head over one geometry. Uses the bases embedded in the weights.
template <typename Real> class FlowEstimator {
  public:
    FlowEstimator(const EncoderConfig &cfg, MlpWeights weights, CameraGeometry geometry, unsigned threads = 1)
        : weights_(std::move(weights)), encoder_(checked(cfg, weights_), weights_.bases, geometry, threads) {}

    [[nodiscard]] const MlpWeights &weights() const noexcept { return weights_; }
    [[nodiscard]] const Encoder<Real> &encoder() const noexcept { return encoder_; }

    /// Predictions in query order; duplicate indices give duplicate rows.
    PredictionBatch predict(const EventSlice &slice, std::span<const std::size_t> queries) {
        encoder_.build(slice);
        PredictionBatch out;
        std::vector<std::size_t> valid;
        for (auto q : queries) {
            if (q >= slice.size()) {
                out.failures.push_back({q, "index outside slice"});
            } else {
                valid.push_back(q);
            }
        }
        std::vector<std::optional<FlowVector>> flows(valid.size());
        std::vector<std::string> reasons(valid.size());
        parallel_chunks(valid.size(), resolve_threads(encoder_.threads()),
                        [&](std::size_t begin, std::size_t end, unsigned) {
                            for (std::size_t i = begin; i < end; ++i) {
                                try {
                                    const auto emb = encoder_.embed(valid[i]);
                                    flows[i] = mlp_forward(weights_, embed_to_features(emb));
                                } catch (const std::exception &e) {
                                    reasons[i] = e.what();
                                }
                            }
                        });
        for (std::size_t i = 0; i < valid.size(); ++i) {
            if (flows[i]) {
                out.predictions.push_back({valid[i], flows[i]->x, flows[i]->y});
            } else {
                out.failures.push_back({valid[i], reasons[i]});
            }
        }
        return out;
    }

  private:
    static const EncoderConfig &checked(const EncoderConfig &cfg, const MlpWeights &w) {
        w.validate();
        if (w.dim != cfg.dim) {
            throw DimensionMismatch("weights have D=" + std::to_string(w.dim) + " but encoder has D=" +
                                    std::to_string(cfg.dim));
        }
        return cfg;
    }

    MlpWeights weights_;
    Encoder<Real> encoder_;
};

inline PredictionBatch predict_flows(const EventSlice &slice, std::span<const std::size_t> queries,
                                     const EncoderConfig &cfg, const MlpWeights &weights, unsigned threads = 1) {
    if (cfg.precision == Precision::f64) {
        FlowEstimator<double> est(cfg, weights, slice.geometry(), threads);
        return est.predict(slice, queries);
    }
    FlowEstimator<float> est(cfg, weights, slice.geometry(), threads);
    return est.predict(slice, queries);
}

} // namespace nflow

#endif // NFLOW_FLOW_HEAD_HPP
