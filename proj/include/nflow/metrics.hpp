#ifndef NFLOW_METRICS_HPP
#define NFLOW_METRICS_HPP

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nflow/binary_io.hpp"
#include "nflow/events.hpp"
#include "nflow/flow_head.hpp"

namespace nflow {

struct FlowPair {
    FlowVector n_hat;
    FlowVector u;
    bool valid = true;
};

class EmptyEvaluation : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

class GeometryMismatch : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// |n.(u-n)| / |n|: how far u's projection on n's direction lies from |n|.
/// Empty for a zero-magnitude prediction.
inline std::optional<double> constraint_residual(FlowVector n, FlowVector u) {
    const double norm = std::hypot(n.x, n.y);
    if (!(norm > 0.0)) {
        return std::nullopt;
    }
    return std::abs(n.x * (u.x - n.x) + n.y * (u.y - n.y)) / norm;
}

/// Pairs that enter both metrics: GT valid, finite, nonzero prediction.
inline bool usable(const FlowPair &p) {
    return p.valid && std::isfinite(p.n_hat.x) && std::isfinite(p.n_hat.y) && std::isfinite(p.u.x) &&
           std::isfinite(p.u.y) && (p.n_hat.x != 0.0 || p.n_hat.y != 0.0);
}

/// Mean constraint residual over usable pairs.
inline double pee(std::span<const FlowPair> pairs) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto &p : pairs) {
        if (usable(p)) {
            sum += *constraint_residual(p.n_hat, p.u);
            ++n;
        }
    }
    if (n == 0) {
        throw EmptyEvaluation("pee: no valid pairs with nonzero prediction");
    }
    return sum / static_cast<double>(n);
}

/// Percentage of usable pairs with n.u > 0; n.u == 0 counts as not positive.
inline double pct_pos(std::span<const FlowPair> pairs) {
    std::size_t pos = 0;
    std::size_t n = 0;
    for (const auto &p : pairs) {
        if (usable(p)) {
            pos += (p.n_hat.x * p.u.x + p.n_hat.y * p.u.y) > 0.0 ? 1 : 0;
            ++n;
        }
    }
    if (n == 0) {
        throw EmptyEvaluation("pct_pos: no valid pairs with nonzero prediction");
    }
    return 100.0 * static_cast<double>(pos) / static_cast<double>(n);
}

/// Dense per-pixel ground-truth optical flow (pixels/second).
struct FlowField {
    CameraGeometry geometry;
    std::vector<FlowVector> flow;
    std::vector<std::uint8_t> valid;

    FlowField() = default;
    explicit FlowField(CameraGeometry g)
        : geometry(g), flow(g.pixels(), FlowVector{}), valid(g.pixels(), 0) {}

    [[nodiscard]] std::size_t index(std::int32_t x, std::int32_t y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(geometry.width) + static_cast<std::size_t>(x);
    }
    [[nodiscard]] bool is_valid(std::int32_t x, std::int32_t y) const { return valid[index(x, y)] != 0; }
    [[nodiscard]] FlowVector at(std::int32_t x, std::int32_t y) const { return flow[index(x, y)]; }
    void set(std::int32_t x, std::int32_t y, FlowVector u) {
        flow[index(x, y)] = u;
        valid[index(x, y)] = 1;
    }
    [[nodiscard]] std::size_t valid_count() const noexcept {
        std::size_t n = 0;
        for (auto v : valid) {
            n += v != 0 ? 1 : 0;
        }
        return n;
    }
};

inline constexpr std::string_view kFlowMagic = "FLW1";

inline void write_flow_field(std::ostream &os, const FlowField &f) {
    le::put_magic(os, kFlowMagic);
    le::put_u32(os, static_cast<std::uint32_t>(f.geometry.width));
    le::put_u32(os, static_cast<std::uint32_t>(f.geometry.height));
    for (std::size_t i = 0; i < f.flow.size(); ++i) {
        le::put_f32(os, static_cast<float>(f.flow[i].x));
        le::put_f32(os, static_cast<float>(f.flow[i].y));
        le::put_u8(os, f.valid[i] != 0 ? 1 : 0);
    }
}

inline FlowField read_flow_field(le::Reader &r) {
    r.expect_magic(kFlowMagic);
    const auto w = r.u32("width");
    const auto h = r.u32("height");
    if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16)) {
        throw ParseError("flow map: implausible geometry " + std::to_string(w) + "x" + std::to_string(h),
                         r.offset());
    }
    FlowField f(CameraGeometry{static_cast<std::int32_t>(w), static_cast<std::int32_t>(h)});
    for (std::size_t i = 0; i < f.flow.size(); ++i) {
        const double ux = r.f32("u_x");
        const double uy = r.f32("u_y");
        const auto v = r.u8("valid");
        if (v > 1) {
            throw ParseError("flow map: valid flag must be 0 or 1", r.offset() - 1);
        }
        if (v == 1 && (!std::isfinite(ux) || !std::isfinite(uy))) {
            throw ParseError("flow map: non-finite flow at a valid pixel", r.offset() - 9);
        }
        f.flow[i] = {ux, uy};
        f.valid[i] = v;
    }
    return f;
}

/// A file holds one or more FLW1 frames back to back.
inline std::vector<FlowField> read_flow_fields(std::istream &is) {
    le::Reader r(is);
    std::vector<FlowField> out;
    do {
        out.push_back(read_flow_field(r));
    } while (!r.at_end());
    return out;
}

inline std::vector<FlowField> load_flow_fields(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open flow map: " + path);
    }
    return read_flow_fields(is);
}

inline void save_flow_field(const std::string &path, const FlowField &f) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot write flow map: " + path);
    }
    write_flow_field(os, f);
}

/// A prediction placed at its event's pixel.
struct PixelFlow {
    std::int32_t x = 0;
    std::int32_t y = 0;
    FlowVector n_hat;
};

struct MetricsRow {
    std::string sequence;
    double pee = std::numeric_limits<double>::quiet_NaN();
    double pct_pos = std::numeric_limits<double>::quiet_NaN();
    std::size_t n_valid = 0;
    std::size_t n_excluded = 0;
};

/// Nearest-pixel pairing of predictions with the GT field.
inline std::vector<FlowPair> pair_predictions(std::span<const PixelFlow> preds, const FlowField &gt,
                                              const CameraGeometry &geometry) {
    if (gt.geometry != geometry) {
        throw GeometryMismatch("GT flow map is " + std::to_string(gt.geometry.width) + "x" +
                               std::to_string(gt.geometry.height) + " but events are " +
                               std::to_string(geometry.width) + "x" + std::to_string(geometry.height));
    }
    std::vector<FlowPair> pairs;
    pairs.reserve(preds.size());
    for (const auto &p : preds) {
        if (!geometry.contains(p.x, p.y)) {
            throw GeometryMismatch("prediction at (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                                   ") lies outside the GT map");
        }
        pairs.push_back({p.n_hat, gt.at(p.x, p.y), gt.is_valid(p.x, p.y)});
    }
    return pairs;
}

/// Metrics over pairs; an empty usable set yields NaN metrics, not an error.
inline MetricsRow summarize(std::string name, std::span<const FlowPair> pairs) {
    MetricsRow row;
    row.sequence = std::move(name);
    for (const auto &p : pairs) {
        (usable(p) ? row.n_valid : row.n_excluded) += 1;
    }
    if (row.n_valid > 0) {
        row.pee = pee(pairs);
        row.pct_pos = pct_pos(pairs);
    }
    return row;
}

inline MetricsRow evaluate(std::string name, std::span<const PixelFlow> preds, const FlowField &gt,
                           const CameraGeometry &geometry) {
    const auto pairs = pair_predictions(preds, gt, geometry);
    return summarize(std::move(name), pairs);
}

struct SequenceEval {
    std::string name;
    std::vector<FlowPair> pairs;
};

struct EvalReport {
    std::vector<MetricsRow> sequences;
    MetricsRow aggregate;
};

/// Per-sequence rows plus an aggregate row pooled over every pair.
inline EvalReport evaluate_sequences(std::span<const SequenceEval> seqs) {
    EvalReport report;
    std::vector<FlowPair> all;
    for (const auto &s : seqs) {
        report.sequences.push_back(summarize(s.name, s.pairs));
        all.insert(all.end(), s.pairs.begin(), s.pairs.end());
    }
    report.aggregate = summarize("ALL", all);
    return report;
}

inline constexpr std::string_view kMetricDefinitions =
    "# PEE = mean over valid pairs of |n.(u-n)|/|n| (pixels/second)\n"
    "# pct_pos = 100 * fraction of valid pairs with n.u > 0 (n.u == 0 counts as not positive)\n"
    "# valid = GT valid at the event pixel and nonzero finite prediction; averaging is per event\n"
    "# these definitions may differ from other published PEE/%Pos normalizations\n";

inline void write_report_csv(std::ostream &os, const EvalReport &r) {
    os << kMetricDefinitions;
    os << "sequence,PEE,pct_pos,n_valid,n_excluded\n";
    auto row = [&](const MetricsRow &m) {
        os << m.sequence << ',';
        if (m.n_valid > 0) {
            os << m.pee << ',' << m.pct_pos;
        } else {
            os << "nan,nan";
        }
        os << ',' << m.n_valid << ',' << m.n_excluded << '\n';
    };
    const auto old = os.precision(10);
    for (const auto &m : r.sequences) {
        row(m);
    }
    row(r.aggregate);
    os.precision(old);
}

} // namespace nflow

#endif // NFLOW_METRICS_HPP
