#ifndef NFLOW_BENCH_HPP
#define NFLOW_BENCH_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nflow/encoder.hpp"
#include "nflow/flow_head.hpp"
#include "nflow/parallel.hpp"

namespace nflow {

enum class Stage { accumulate, pool, mlp };

inline const char *stage_name(Stage s) {
    switch (s) {
    case Stage::accumulate:
        return "accumulate";
    case Stage::pool:
        return "pool";
    case Stage::mlp:
        return "mlp";
    }
    return "?";
}

struct StageTiming {
    Stage stage = Stage::accumulate;
    /// Events (accumulate) or flows (pool, mlp) processed per repetition.
    std::size_t count = 0;
    /// Median wall time of the timed repetitions, seconds.
    double wall_seconds = 0.0;
    double rate = 0.0;
    unsigned threads = 1;
    std::vector<double> samples;
};

class TimerResolutionError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct BenchOptions {
    std::size_t repetitions = 5;
    std::size_t warmups = 2;
    unsigned threads = 1;
    /// Medians below this are rejected as timer noise.
    double min_seconds = 20e-6;
};

namespace detail {

/// `reset` runs before every repetition, outside the timed region.
template <typename Fn, typename Reset>
StageTiming time_stage(Stage stage, std::size_t count, const BenchOptions &opt, Fn &&run, Reset &&reset) {
    if (opt.repetitions < 1) {
        throw std::invalid_argument("bench: need at least one timed repetition");
    }
    if (opt.warmups < 1) {
        throw std::invalid_argument("bench: need at least one warmup repetition");
    }
    using clock = std::chrono::steady_clock;
    for (std::size_t i = 0; i < opt.warmups; ++i) {
        reset();
        run();
    }
    StageTiming t;
    t.stage = stage;
    t.count = count;
    t.threads = resolve_threads(opt.threads);
    for (std::size_t i = 0; i < opt.repetitions; ++i) {
        reset();
        const auto start = clock::now();
        run();
        t.samples.push_back(std::chrono::duration<double>(clock::now() - start).count());
    }
    auto sorted = t.samples;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    t.wall_seconds = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    if (t.wall_seconds < opt.min_seconds) {
        std::ostringstream msg;
        msg << stage_name(stage) << " stage took " << t.wall_seconds * 1e6 << " us for " << count
            << " items, below the " << opt.min_seconds * 1e6 << " us timer floor; use a larger workload";
        throw TimerResolutionError(msg.str());
    }
    t.rate = static_cast<double>(count) / t.wall_seconds;
    return t;
}

template <typename Fn> StageTiming time_stage(Stage stage, std::size_t count, const BenchOptions &opt, Fn &&run) {
    return time_stage(stage, count, opt, std::forward<Fn>(run), [] {});
}

template <typename Real>
StageTiming bench_stage_impl(const EventSlice &slice, std::span<const std::size_t> queries,
                             const EncoderConfig &cfg, Stage stage, const BenchOptions &opt,
                             const MlpWeights *weights) {
    const Bases bases = weights != nullptr ? weights->bases : generate_bases(cfg);
    Encoder<Real> enc(cfg, bases, slice.geometry(), resolve_threads(opt.threads));
    enc.build(slice);
    if (stage == Stage::accumulate) {
        const std::vector<Real> freq = cast_vector<Real>(bases.t);
        PixelGrid<Real> grid(slice.geometry(), cfg.dim, cfg.delta_x, cfg.delta_y);
        const EventSlice &local = enc.slice();
        return time_stage(
            stage, slice.size(), opt,
            [&] { accumulate_grid<Real>(local, freq, cfg, grid, resolve_threads(opt.threads)); },
            [&] { grid.clear(); });
    }
    if (stage == Stage::pool) {
        return time_stage(stage, queries.size(), opt, [&] {
            const auto out = enc.embed_many(queries);
            if (out.size() != queries.size()) {
                throw std::logic_error("pool stage lost queries");
            }
        });
    }
    MlpWeights w;
    if (weights != nullptr) {
        w = *weights;
    } else {
        TrainParams p;
        w = MlpWeights::zeros(bases, p.hidden);
        w.w1 = box_muller_normals(11, w.w1.size(), 1.0 / static_cast<double>(w.inputs()));
        w.w2 = box_muller_normals(12, w.w2.size(), 1.0 / static_cast<double>(w.hidden));
    }
    std::vector<std::vector<double>> features;
    for (const auto &e : enc.embed_many(queries)) {
        features.push_back(embed_to_features(e));
    }
    std::vector<FlowVector> out(features.size());
    return time_stage(stage, queries.size(), opt, [&] {
        parallel_chunks(features.size(), resolve_threads(opt.threads),
                        [&](std::size_t begin, std::size_t end, unsigned) {
                            for (std::size_t i = begin; i < end; ++i) {
                                out[i] = mlp_forward(w, features[i]);
                            }
                        });
    });
}

} // namespace detail

/// Median-of-repetitions wall time of one stage. Pool is timed against a
/// prebuilt grid and mlp against prebuilt features.
inline StageTiming bench_stage(const EventSlice &slice, std::span<const std::size_t> queries,
                               const EncoderConfig &cfg, Stage stage, const BenchOptions &opt = {},
                               const MlpWeights *weights = nullptr) {
    if (cfg.precision == Precision::f64) {
        return detail::bench_stage_impl<double>(slice, queries, cfg, stage, opt, weights);
    }
    return detail::bench_stage_impl<float>(slice, queries, cfg, stage, opt, weights);
}

/// Seconds per event (accumulate) and per flow (pool, mlp).
struct RuntimeModel {
    double c = 0.0;
    double c_pool = 0.0;
    double c_mlp = 0.0;

    static RuntimeModel from_rates(double events_per_s, double pool_per_s, double mlp_per_s) {
        if (!(events_per_s > 0.0) || !(pool_per_s > 0.0) || !(mlp_per_s > 0.0)) {
            throw std::invalid_argument("RuntimeModel: rates must be positive");
        }
        return {1.0 / events_per_s, 1.0 / pool_per_s, 1.0 / mlp_per_s};
    }
};

inline double estimate_runtime(const RuntimeModel &m, double num_events, double num_flows) {
    return num_events * m.c + num_flows * (m.c_pool + m.c_mlp);
}

/// Reference rates reported for GPU implementations (items/second). These
/// describe that hardware only and are used for estimate_runtime demos.
struct ReferenceRates {
    const char *device;
    int delta;
    double accumulate;
    double pool;
    double mlp;
};

inline constexpr ReferenceRates kReferenceRates[] = {
    {"RTX 2080 Ti", 8, 115.63e6, 4.25e6, 26.67e6}, {"RTX 3070", 8, 96.16e6, 3.09e6, 34.97e6},
    {"RTX A4000", 8, 114.87e6, 3.12e6, 36.23e6},   {"RTX A5000", 8, 166.51e6, 5.61e6, 37.04e6},
    {"RTX A6000", 8, 166.74e6, 5.55e6, 31.45e6},   {"RTX 2080 Ti", 10, 115.63e6, 2.70e6, 42.55e6},
    {"RTX 3070", 10, 96.16e6, 2.08e6, 33.22e6},    {"RTX A4000", 10, 114.87e6, 2.09e6, 35.34e6},
    {"RTX A5000", 10, 166.51e6, 3.68e6, 27.78e6},  {"RTX A6000", 10, 166.74e6, 3.68e6, 31.95e6},
};

/// The worked example's MLP rate; the table lists 26.67M for the same device.
inline constexpr double kWorkedExampleMlpRate = 27.55e6;

/// Least-squares line y = intercept + slope * x.
struct LinearFit {
    double intercept = 0.0;
    double slope = 0.0;
    double r2 = 0.0;
    /// max_i |y_i - fit_i| / y_i.
    double max_relative_residual = 0.0;
};

inline LinearFit fit_linear(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw std::invalid_argument("fit_linear: need >= 2 paired samples");
    }
    const double n = static_cast<double>(x.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0)) {
        throw std::invalid_argument("fit_linear: x values must not all be equal");
    }
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (f.intercept + f.slope * x[i]);
        ss_res += r * r;
        if (y[i] != 0.0) {
            f.max_relative_residual = std::max(f.max_relative_residual, std::abs(r / y[i]));
        }
    }
    f.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    return f;
}

struct StageFit {
    Stage stage = Stage::accumulate;
    std::vector<StageTiming> timings;
    LinearFit fit;
};

struct Calibration {
    RuntimeModel model;
    std::vector<StageFit> stages;
    std::vector<std::string> warnings;
    /// c / C_pool against 1/(delta_x*delta_y).
    double c_over_pool = 0.0;
    double expected_c_over_pool = 0.0;
    bool within_factor_4 = false;
};

inline LinearFit fit_timings(std::span<const StageTiming> timings) {
    std::vector<double> x;
    std::vector<double> y;
    for (const auto &t : timings) {
        x.push_back(static_cast<double>(t.count));
        y.push_back(t.wall_seconds);
    }
    return fit_linear(x, y);
}

/// Builds the model from per-stage timings measured at several sizes.
inline Calibration calibrate_from(std::span<const StageTiming> accumulate, std::span<const StageTiming> pool,
                                  std::span<const StageTiming> mlp, const EncoderConfig &cfg,
                                  double max_residual = 0.20) {
    Calibration cal;
    auto add = [&](Stage s, std::span<const StageTiming> ts) {
        if (ts.size() < 3) {
            throw std::invalid_argument(std::string("calibrate: ") + stage_name(s) + " needs >= 3 workload sizes");
        }
        std::size_t lo = ts.front().count;
        std::size_t hi = lo;
        for (const auto &t : ts) {
            lo = std::min(lo, t.count);
            hi = std::max(hi, t.count);
        }
        if (hi < 10 * lo) {
            throw std::invalid_argument(std::string("calibrate: ") + stage_name(s) +
                                        " sizes must span at least 10x");
        }
        StageFit f{s, {ts.begin(), ts.end()}, fit_timings(ts)};
        if (f.fit.max_relative_residual > max_residual) {
            std::ostringstream msg;
            msg << "non-linear scaling in " << stage_name(s) << ": max residual "
                << 100.0 * f.fit.max_relative_residual << "%; data (count, seconds):";
            for (const auto &t : ts) {
                msg << " (" << t.count << ", " << t.wall_seconds << ")";
            }
            cal.warnings.push_back(msg.str());
        }
        cal.stages.push_back(std::move(f));
        return cal.stages.back().fit.slope;
    };
    cal.model.c = add(Stage::accumulate, accumulate);
    cal.model.c_pool = add(Stage::pool, pool);
    cal.model.c_mlp = add(Stage::mlp, mlp);
    cal.expected_c_over_pool = 1.0 / (static_cast<double>(cfg.delta_x) * static_cast<double>(cfg.delta_y));
    cal.c_over_pool = cal.model.c_pool > 0.0 ? cal.model.c / cal.model.c_pool : 0.0;
    const double ratio = cal.c_over_pool / cal.expected_c_over_pool;
    cal.within_factor_4 = ratio >= 0.25 && ratio <= 4.0;
    if (!cal.within_factor_4) {
        std::ostringstream msg;
        msg << "c/C_pool = " << cal.c_over_pool << " is not within 4x of 1/(dx*dy) = " << cal.expected_c_over_pool;
        cal.warnings.push_back(msg.str());
    }
    return cal;
}

/// One workload per size; each stage is timed on every workload.
struct CalibrationWorkload {
    EventSlice slice;
    std::vector<std::size_t> queries;
};

inline Calibration calibrate(std::span<const CalibrationWorkload> workloads, const EncoderConfig &cfg,
                             const BenchOptions &opt = {}) {
    std::vector<StageTiming> acc;
    std::vector<StageTiming> pool;
    std::vector<StageTiming> mlp;
    for (const auto &w : workloads) {
        acc.push_back(bench_stage(w.slice, w.queries, cfg, Stage::accumulate, opt));
        pool.push_back(bench_stage(w.slice, w.queries, cfg, Stage::pool, opt));
        mlp.push_back(bench_stage(w.slice, w.queries, cfg, Stage::mlp, opt));
    }
    return calibrate_from(acc, pool, mlp, cfg);
}

inline void write_bench_csv(std::ostream &os, std::span<const StageTiming> rows, const EncoderConfig &cfg,
                            unsigned threads) {
    os << "# threads=" << threads << " precision=" << (cfg.precision == Precision::f64 ? "f64" : "f32")
       << " delta_x=" << cfg.delta_x << " delta_y=" << cfg.delta_y << " delta_t=" << cfg.delta_t
       << " D=" << cfg.dim << "\n";
    os << "stage,count,wall_seconds,rate\n";
    const auto old = os.precision(9);
    for (const auto &r : rows) {
        os << stage_name(r.stage) << ',' << r.count << ',' << r.wall_seconds << ',' << r.rate << '\n';
    }
    os.precision(old);
}

inline std::string format_rate(double r) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2);
    if (r >= 1e6) {
        s << r / 1e6 << "M";
    } else if (r >= 1e3) {
        s << r / 1e3 << "k";
    } else {
        s << r;
    }
    return s.str();
}

/// Table-style summary: one row per stage, one column per delta.
inline void write_bench_summary(std::ostream &os, std::span<const std::pair<int, std::vector<StageTiming>>> by_delta) {
    os << std::left << std::setw(20) << "stage";
    for (const auto &[delta, rows] : by_delta) {
        os << std::setw(16) << ("delta=" + std::to_string(delta));
    }
    os << "\n";
    const char *labels[] = {"accumulate (ev/s)", "pool (flows/s)", "mlp (flows/s)"};
    for (Stage s : {Stage::accumulate, Stage::pool, Stage::mlp}) {
        os << std::setw(20) << labels[static_cast<int>(s)];
        for (const auto &[delta, rows] : by_delta) {
            std::string cell = "-";
            for (const auto &r : rows) {
                if (r.stage == s) {
                    cell = format_rate(r.rate);
                }
            }
            os << std::setw(16) << cell;
        }
        os << "\n";
    }
    os << std::right;
}

} // namespace nflow

#endif // NFLOW_BENCH_HPP
