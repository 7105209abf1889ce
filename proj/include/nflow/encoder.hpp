#ifndef NFLOW_ENCODER_HPP
#define NFLOW_ENCODER_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "nflow/binary_io.hpp"
#include "nflow/events.hpp"
#include "nflow/parallel.hpp"
#include "nflow/random.hpp"

namespace nflow {

enum class Precision : std::uint8_t { f32, f64 };

/// Local-event encoder parameters. delta_t is the half window (a slice spans
/// 2*delta_t seconds); delta_x/delta_y are both the pooling radius and the
/// spatial normalization.
struct EncoderConfig {
    double delta_t = 0.016;
    std::int32_t delta_x = 10;
    std::int32_t delta_y = 10;
    std::uint32_t dim = 64;
    double sigma2 = 25.0;
    std::array<std::uint64_t, 3> seeds{0, 1, 2};
    Precision precision = Precision::f32;

    void validate() const {
        if (!(delta_t > 0.0) || !std::isfinite(delta_t)) {
            throw std::invalid_argument("encoder: delta_t must be positive");
        }
        if (delta_x < 1 || delta_y < 1) {
            throw std::invalid_argument("encoder: delta_x and delta_y must be >= 1");
        }
        if (dim < 1) {
            throw std::invalid_argument("encoder: dimension D must be >= 1");
        }
        if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
            throw std::invalid_argument("encoder: sigma2 must be positive");
        }
    }

    [[nodiscard]] double window() const noexcept { return 2.0 * delta_t; }
    friend bool operator==(const EncoderConfig &, const EncoderConfig &) = default;
};

class EmptyNeighborhoodError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Random frequency vectors for the time, x and y axes.
struct Bases {
    std::vector<double> t;
    std::vector<double> x;
    std::vector<double> y;
    double sigma2 = 0.0;

    [[nodiscard]] std::size_t dim() const noexcept { return t.size(); }
    friend bool operator==(const Bases &, const Bases &) = default;
};

inline Bases generate_bases(const EncoderConfig &cfg) {
    cfg.validate();
    Bases b;
    b.sigma2 = cfg.sigma2;
    b.t = box_muller_normals(cfg.seeds[0], cfg.dim, cfg.sigma2);
    b.x = box_muller_normals(cfg.seeds[1], cfg.dim, cfg.sigma2);
    b.y = box_muller_normals(cfg.seeds[2], cfg.dim, cfg.sigma2);
    return b;
}

inline constexpr std::string_view kBasesMagic = "VKMB";

inline void write_bases(std::ostream &os, const Bases &b) {
    le::put_magic(os, kBasesMagic);
    le::put_u32(os, static_cast<std::uint32_t>(b.dim()));
    le::put_f64(os, b.sigma2);
    for (const auto *v : {&b.t, &b.x, &b.y}) {
        for (double value : *v) {
            le::put_f64(os, value);
        }
    }
}

inline Bases read_bases(le::Reader &r) {
    r.expect_magic(kBasesMagic);
    const std::uint32_t dim = r.u32("D");
    if (dim == 0) {
        throw ParseError("bases: D must be >= 1", r.offset());
    }
    Bases b;
    b.sigma2 = r.f64("sigma2");
    for (auto *v : {&b.t, &b.x, &b.y}) {
        v->resize(dim);
        for (double &value : *v) {
            value = r.f64("basis value");
            if (!std::isfinite(value)) {
                throw ParseError("bases: non-finite frequency", r.offset());
            }
        }
    }
    return b;
}

inline Bases read_bases(std::istream &is) {
    le::Reader r(is);
    return read_bases(r);
}

namespace detail {

inline void check_bases(const Bases &bases, const EncoderConfig &cfg) {
    if (bases.dim() != cfg.dim || bases.x.size() != cfg.dim || bases.y.size() != cfg.dim) {
        throw DimensionMismatch("bases dimension " + std::to_string(bases.dim()) +
                                " does not match encoder D=" + std::to_string(cfg.dim));
    }
}

template <typename Real> std::vector<Real> cast_vector(const std::vector<double> &v) {
    return std::vector<Real>(v.begin(), v.end());
}

/// Branch-free single-precision sine/cosine (Cephes sinf/cosf reduction and
/// polynomials, about 1 ulp for |x| < 8192). Written so the per-component
/// loops auto-vectorise; std::sin/std::cos do not without -ffast-math.
inline void sincos_f32(float x, float &s, float &c) noexcept {
    const float ax = std::fabs(x);
    int j = static_cast<int>(ax * 1.27323954473516f);
    j = (j + 1) & ~1;
    const auto k = static_cast<float>(j);
    const float r = ((ax - k * 0.78515625f) - k * 2.4187564849853515625e-4f) - k * 3.77489497744594108e-8f;
    const float z = r * r;
    const float ps = ((-1.9515295891e-4f * z + 8.3321608736e-3f) * z - 1.6666654611e-1f) * z * r + r;
    const float pc =
        ((2.443315711809948e-5f * z - 1.388731625493765e-3f) * z + 4.166664568298827e-2f) * z * z - 0.5f * z + 1.0f;
    const bool swap = (j & 2) != 0;
    const bool sin_neg = ((j & 4) != 0) != (x < 0.0f);
    const bool cos_neg = ((j & 4) != 0) != swap;
    const float sv = swap ? pc : ps;
    const float cv = swap ? ps : pc;
    s = sin_neg ? -sv : sv;
    c = cos_neg ? -cv : cv;
}

template <typename Real> inline void phase(Real angle, Real &s, Real &c) noexcept {
    if constexpr (std::is_same_v<Real, float>) {
        sincos_f32(angle, s, c);
    } else {
        s = std::sin(angle);
        c = std::cos(angle);
    }
}

template <typename Real> inline Real normalized_time(double t, const EncoderConfig &cfg) {
    return static_cast<Real>(t / cfg.delta_t);
}

} // namespace detail

/// (2*delta_x+1) x (2*delta_y+1) table of exp(i dx/delta_x X) * exp(i dy/delta_y Y).
/// Each entry stores D real parts followed by D imaginary parts.
template <typename Real> class SpatialPhaseTable {
  public:
    SpatialPhaseTable() = default;

    SpatialPhaseTable(const Bases &bases, const EncoderConfig &cfg)
        : radius_x_(cfg.delta_x), radius_y_(cfg.delta_y), dim_(cfg.dim) {
        cfg.validate();
        detail::check_bases(bases, cfg);
        const std::size_t entries = static_cast<std::size_t>(2 * radius_x_ + 1) *
                                    static_cast<std::size_t>(2 * radius_y_ + 1);
        data_.resize(entries * 2 * dim_);
        for (std::int32_t dy = -radius_y_; dy <= radius_y_; ++dy) {
            for (std::int32_t dx = -radius_x_; dx <= radius_x_; ++dx) {
                Real *re = entry(dx, dy);
                Real *im = re + dim_;
                const double fx = static_cast<double>(dx) / cfg.delta_x;
                const double fy = static_cast<double>(dy) / cfg.delta_y;
                for (std::size_t j = 0; j < dim_; ++j) {
                    const std::complex<double> z = std::polar(1.0, fx * bases.x[j]) *
                                                   std::polar(1.0, fy * bases.y[j]);
                    re[j] = static_cast<Real>(z.real());
                    im[j] = static_cast<Real>(z.imag());
                }
            }
        }
    }

    [[nodiscard]] std::int32_t radius_x() const noexcept { return radius_x_; }
    [[nodiscard]] std::int32_t radius_y() const noexcept { return radius_y_; }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }

    [[nodiscard]] const Real *re(std::int32_t dx, std::int32_t dy) const noexcept {
        return data_.data() + offset(dx, dy);
    }
    [[nodiscard]] const Real *im(std::int32_t dx, std::int32_t dy) const noexcept {
        return re(dx, dy) + dim_;
    }
    [[nodiscard]] std::complex<Real> at(std::int32_t dx, std::int32_t dy, std::size_t j) const {
        return {re(dx, dy)[j], im(dx, dy)[j]};
    }

  private:
    [[nodiscard]] std::size_t offset(std::int32_t dx, std::int32_t dy) const noexcept {
        const auto row = static_cast<std::size_t>(dy + radius_y_);
        const auto col = static_cast<std::size_t>(dx + radius_x_);
        return (row * static_cast<std::size_t>(2 * radius_x_ + 1) + col) * 2 * dim_;
    }
    Real *entry(std::int32_t dx, std::int32_t dy) noexcept { return data_.data() + offset(dx, dy); }

    std::int32_t radius_x_ = 0;
    std::int32_t radius_y_ = 0;
    std::size_t dim_ = 0;
    std::vector<Real> data_;
};

template <typename Real>
SpatialPhaseTable<Real> precompute_spatial_phases(const Bases &bases, const EncoderConfig &cfg) {
    return SpatialPhaseTable<Real>(bases, cfg);
}

/// Per-pixel sums of temporal phases plus event counts. Storage carries a
/// zero guard border of (guard_x, guard_y) pixels so a pooling window centred
/// anywhere on the sensor never needs a bounds check.
template <typename Real> class PixelGrid {
  public:
    PixelGrid() = default;

    PixelGrid(CameraGeometry geometry, std::size_t dim, std::int32_t guard_x, std::int32_t guard_y)
        : geometry_(geometry), dim_(dim), guard_x_(guard_x), guard_y_(guard_y),
          stride_(static_cast<std::size_t>(geometry.width + 2 * guard_x)) {
        if (!geometry.valid() || dim == 0 || guard_x < 0 || guard_y < 0) {
            throw std::invalid_argument("PixelGrid: invalid geometry, dimension or guard");
        }
        const std::size_t cells = stride_ * static_cast<std::size_t>(geometry.height + 2 * guard_y);
        embed_.assign(cells * 2 * dim_, Real(0));
        count_.assign(cells, 0);
    }

    [[nodiscard]] const CameraGeometry &geometry() const noexcept { return geometry_; }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] std::int32_t guard_x() const noexcept { return guard_x_; }
    [[nodiscard]] std::int32_t guard_y() const noexcept { return guard_y_; }

    /// Cell index of pixel (x, y); valid for x in [-guard_x, W + guard_x).
    [[nodiscard]] std::size_t cell(std::int32_t x, std::int32_t y) const noexcept {
        return static_cast<std::size_t>(y + guard_y_) * stride_ + static_cast<std::size_t>(x + guard_x_);
    }
    [[nodiscard]] std::size_t row_stride() const noexcept { return stride_; }

    [[nodiscard]] const Real *re(std::size_t cell) const noexcept { return embed_.data() + cell * 2 * dim_; }
    [[nodiscard]] const Real *im(std::size_t cell) const noexcept { return re(cell) + dim_; }
    Real *re(std::size_t cell) noexcept { return embed_.data() + cell * 2 * dim_; }
    Real *im(std::size_t cell) noexcept { return re(cell) + dim_; }
    [[nodiscard]] std::uint32_t count(std::size_t cell) const noexcept { return count_[cell]; }
    std::uint32_t &count(std::size_t cell) noexcept { return count_[cell]; }

    [[nodiscard]] std::complex<Real> embed_at(std::int32_t x, std::int32_t y, std::size_t j) const {
        const auto c = cell(x, y);
        return {re(c)[j], im(c)[j]};
    }
    [[nodiscard]] std::uint32_t count_at(std::int32_t x, std::int32_t y) const {
        return count_[cell(x, y)];
    }

    [[nodiscard]] std::uint64_t total_count() const noexcept {
        std::uint64_t total = 0;
        for (auto c : touched_) {
            total += count_[c];
        }
        return total;
    }

    /// Cells with at least one event, in first-touch order.
    [[nodiscard]] const std::vector<std::size_t> &touched() const noexcept { return touched_; }
    std::vector<std::size_t> &touched_mut() noexcept { return touched_; }

    /// Zeroes every touched cell; cost proportional to occupied pixels.
    void clear() noexcept {
        for (auto c : touched_) {
            std::fill_n(re(c), 2 * dim_, Real(0));
            count_[c] = 0;
        }
        touched_.clear();
    }

  private:
    CameraGeometry geometry_{};
    std::size_t dim_ = 0;
    std::int32_t guard_x_ = 0;
    std::int32_t guard_y_ = 0;
    std::size_t stride_ = 0;
    std::vector<Real> embed_;
    std::vector<std::uint32_t> count_;
    std::vector<std::size_t> touched_;
};

/// D complex values plus the neighbourhood event count used to normalise them.
template <typename Real> struct Embedding {
    std::vector<std::complex<Real>> values;
    std::uint64_t count = 0;
};

/// Adds exp(i t_k/delta_t T) and 1 into the cell of every event. Rows are
/// split across workers so each cell is written by exactly one worker in
/// input order, which makes the result bitwise independent of `threads`.
template <typename Real>
void accumulate_grid(const EventSlice &slice, std::span<const Real> time_freq, const EncoderConfig &cfg,
                     PixelGrid<Real> &grid, unsigned threads = 1) {
    if (slice.t_start() != 0.0) {
        throw std::invalid_argument("accumulate_grid: slice must be rebased (t_start = 0)");
    }
    if (slice.geometry() != grid.geometry()) {
        throw std::invalid_argument("accumulate_grid: slice geometry differs from grid geometry");
    }
    if (time_freq.size() != grid.dim()) {
        throw DimensionMismatch("accumulate_grid: basis dimension differs from grid dimension");
    }
    grid.clear();
    const auto &events = slice.events();
    const std::size_t dim = grid.dim();
    const auto height = static_cast<std::size_t>(grid.geometry().height);
    const unsigned workers = std::min<unsigned>(resolve_threads(threads), static_cast<unsigned>(height));
    std::vector<std::vector<std::size_t>> touched(workers);
    parallel_chunks(height, workers, [&](std::size_t row_begin, std::size_t row_end, unsigned w) {
        auto &mine = touched[w];
        for (const Event &e : events) {
            const auto row = static_cast<std::size_t>(e.y);
            if (row < row_begin || row >= row_end) {
                continue;
            }
            if (!grid.geometry().contains(e.x, e.y)) {
                throw std::invalid_argument("accumulate_grid: event outside geometry");
            }
            const std::size_t c = grid.cell(e.x, e.y);
            if (grid.count(c)++ == 0) {
                mine.push_back(c);
            }
            Real *re = grid.re(c);
            Real *im = grid.im(c);
            const Real tau = detail::normalized_time<Real>(e.t, cfg);
            const Real *freq = time_freq.data();
            for (std::size_t j = 0; j < dim; ++j) {
                Real sn;
                Real cs;
                detail::phase(tau * freq[j], sn, cs);
                re[j] += cs;
                im[j] += sn;
            }
        }
    });
    auto &all = grid.touched_mut();
    for (auto &part : touched) {
        all.insert(all.end(), part.begin(), part.end());
    }
}

namespace detail {

/// Window sum for one query followed by de-phasing and 1/n normalisation.
/// De-phasing divides by exp(i t0/delta_t T) rather than multiplying by its
/// conjugate; the query's own term then cancels to exactly 1.
template <typename Real>
void pool_into(const PixelGrid<Real> &grid, const SpatialPhaseTable<Real> &table, const Real *time_freq,
               const Event &query, const EncoderConfig &cfg, Real *__restrict acc_re, Real *__restrict acc_im,
               Embedding<Real> &out) {
    const std::size_t dim = grid.dim();
    const std::int32_t rx = table.radius_x();
    const std::int32_t ry = table.radius_y();
    if (!grid.geometry().contains(query.x, query.y)) {
        throw std::invalid_argument("pool_embedding: query outside geometry");
    }
    std::fill_n(acc_re, dim, Real(0));
    std::fill_n(acc_im, dim, Real(0));
    std::uint64_t n = 0;
    for (std::int32_t dy = -ry; dy <= ry; ++dy) {
        const std::size_t row = grid.cell(query.x - rx, query.y + dy);
        for (std::int32_t dx = -rx; dx <= rx; ++dx) {
            const std::size_t c = row + static_cast<std::size_t>(dx + rx);
            n += grid.count(c);
            const Real *__restrict gr = grid.re(c);
            const Real *__restrict gi = grid.im(c);
            const Real *__restrict tr = table.re(dx, dy);
            const Real *__restrict ti = table.im(dx, dy);
            for (std::size_t j = 0; j < dim; ++j) {
                acc_re[j] += gr[j] * tr[j] - gi[j] * ti[j];
                acc_im[j] += gr[j] * ti[j] + gi[j] * tr[j];
            }
        }
    }
    if (n == 0) {
        throw EmptyNeighborhoodError("empty neighbourhood at pixel (" + std::to_string(query.x) + "," +
                                     std::to_string(query.y) + ")");
    }
    const Real tau = normalized_time<Real>(query.t, cfg);
    const Real inv_n = Real(1) / static_cast<Real>(n);
    out.values.resize(dim);
    out.count = n;
    for (std::size_t j = 0; j < dim; ++j) {
        Real c;
        Real d;
        phase(tau * time_freq[j], d, c);
        const Real a = acc_re[j];
        const Real b = acc_im[j];
        const Real denom = c * c + d * d;
        const Real real = (a * c + b * d) / denom;
        const Real imag = (b * c - a * d) / denom;
        out.values[j] = {real * inv_n, imag * inv_n};
    }
}

} // namespace detail

template <typename Real>
Embedding<Real> pool_embedding(const PixelGrid<Real> &grid, const SpatialPhaseTable<Real> &table,
                               const Event &query, const Bases &bases, const EncoderConfig &cfg) {
    detail::check_bases(bases, cfg);
    if (grid.dim() != cfg.dim || table.dim() != cfg.dim) {
        throw DimensionMismatch("pool_embedding: grid/table dimension differs from config");
    }
    if (grid.guard_x() < table.radius_x() || grid.guard_y() < table.radius_y()) {
        throw std::invalid_argument("pool_embedding: grid guard smaller than pooling radius");
    }
    const auto freq = detail::cast_vector<Real>(bases.t);
    std::vector<Real> scratch(2 * cfg.dim);
    Embedding<Real> out;
    detail::pool_into(grid, table, freq.data(), query, cfg, scratch.data(), scratch.data() + cfg.dim, out);
    return out;
}

/// Reusable encoder: owns bases, phase table and grid for one geometry.
/// `build` and `embed*` must not overlap; `embed*` calls may run
/// concurrently with each other.
template <typename Real> class Encoder {
  public:
    Encoder(EncoderConfig cfg, Bases bases, CameraGeometry geometry, unsigned threads = 1)
        : cfg_(cfg), bases_(std::move(bases)), threads_(threads) {
        cfg_.validate();
        detail::check_bases(bases_, cfg_);
        time_freq_ = detail::cast_vector<Real>(bases_.t);
        table_ = SpatialPhaseTable<Real>(bases_, cfg_);
        grid_ = PixelGrid<Real>(geometry, cfg_.dim, cfg_.delta_x, cfg_.delta_y);
    }

    Encoder(EncoderConfig cfg, CameraGeometry geometry, unsigned threads = 1)
        : Encoder(cfg, generate_bases(cfg), geometry, threads) {}

    [[nodiscard]] const EncoderConfig &config() const noexcept { return cfg_; }
    [[nodiscard]] const Bases &bases() const noexcept { return bases_; }
    [[nodiscard]] const SpatialPhaseTable<Real> &table() const noexcept { return table_; }
    [[nodiscard]] const PixelGrid<Real> &grid() const noexcept { return grid_; }
    [[nodiscard]] const EventSlice &slice() const noexcept { return slice_; }
    [[nodiscard]] unsigned threads() const noexcept { return threads_; }
    void set_threads(unsigned threads) noexcept { threads_ = threads; }

    /// Rebases the slice and accumulates it into the grid.
    void build(const EventSlice &slice) {
        if (slice.geometry() != grid_.geometry()) {
            grid_ = PixelGrid<Real>(slice.geometry(), cfg_.dim, cfg_.delta_x, cfg_.delta_y);
        }
        slice_ = rebase_slice(slice);
        accumulate_grid<Real>(slice_, time_freq_, cfg_, grid_, threads_);
    }

    /// Embedding of an event given in slice-local (rebased) time.
    [[nodiscard]] Embedding<Real> embed_event(const Event &query) const {
        std::vector<Real> scratch(2 * cfg_.dim);
        Embedding<Real> out;
        detail::pool_into(grid_, table_, time_freq_.data(), query, cfg_, scratch.data(),
                          scratch.data() + cfg_.dim, out);
        return out;
    }

    [[nodiscard]] Embedding<Real> embed(std::size_t index) const {
        check_index(index);
        return embed_event(slice_[index]);
    }

    /// Embeddings for `queries`, returned in query order. Queries are pooled in
    /// raster order of their pixels so neighbouring windows share cache lines;
    /// each result is independent of that order.
    [[nodiscard]] std::vector<Embedding<Real>> embed_many(std::span<const std::size_t> queries) const {
        for (auto q : queries) {
            check_index(q);
        }
        std::vector<std::size_t> order(queries.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const Event &ea = slice_[queries[a]];
            const Event &eb = slice_[queries[b]];
            return ea.y != eb.y ? ea.y < eb.y : ea.x < eb.x;
        });
        std::vector<Embedding<Real>> out(queries.size());
        parallel_chunks(order.size(), resolve_threads(threads_),
                        [&](std::size_t begin, std::size_t end, unsigned) {
                            std::vector<Real> scratch(2 * cfg_.dim);
                            for (std::size_t i = begin; i < end; ++i) {
                                const std::size_t slot = order[i];
                                detail::pool_into(grid_, table_, time_freq_.data(), slice_[queries[slot]], cfg_,
                                                  scratch.data(), scratch.data() + cfg_.dim, out[slot]);
                            }
                        });
        return out;
    }

  private:
    void check_index(std::size_t index) const {
        if (index >= slice_.size()) {
            throw std::out_of_range("query index " + std::to_string(index) + " outside slice of " +
                                    std::to_string(slice_.size()) + " events");
        }
    }

    EncoderConfig cfg_;
    Bases bases_;
    unsigned threads_ = 1;
    std::vector<Real> time_freq_;
    SpatialPhaseTable<Real> table_;
    PixelGrid<Real> grid_;
    EventSlice slice_;
};

/// Full pipeline for one slice: rebase, bases, phase table, grid, pooling.
template <typename Real>
std::vector<Embedding<Real>> encode(const EventSlice &slice, std::span<const std::size_t> queries,
                                    const EncoderConfig &cfg, unsigned threads = 1) {
    Encoder<Real> encoder(cfg, slice.geometry(), threads);
    encoder.build(slice);
    return encoder.embed_many(queries);
}

/// Direct evaluation of the neighbourhood average of exp(i [dt/delta_t,
/// dx/delta_x, dy/delta_y] . [T; X; Y]) over every event within the pixel
/// radius of the query. Quadratic overall; used to check the pooled path.
inline Embedding<double> oracle_encode(const EventSlice &slice, const Event &query, const EncoderConfig &cfg,
                                       const Bases &bases) {
    detail::check_bases(bases, cfg);
    Embedding<double> out;
    out.values.assign(cfg.dim, {0.0, 0.0});
    for (const Event &e : slice.events()) {
        if (std::abs(e.x - query.x) > cfg.delta_x || std::abs(e.y - query.y) > cfg.delta_y) {
            continue;
        }
        const double ft = (e.t - query.t) / cfg.delta_t;
        const double fx = static_cast<double>(e.x - query.x) / cfg.delta_x;
        const double fy = static_cast<double>(e.y - query.y) / cfg.delta_y;
        for (std::size_t j = 0; j < cfg.dim; ++j) {
            out.values[j] += std::polar(1.0, ft * bases.t[j] + fx * bases.x[j] + fy * bases.y[j]);
        }
        ++out.count;
    }
    if (out.count == 0) {
        throw EmptyNeighborhoodError("oracle_encode: empty neighbourhood");
    }
    for (auto &v : out.values) {
        v /= static_cast<double>(out.count);
    }
    return out;
}

inline Embedding<double> oracle_encode(const EventSlice &slice, const Event &query, const EncoderConfig &cfg) {
    return oracle_encode(slice, query, cfg, generate_bases(cfg));
}

/// A probe location relative to the query event: t in seconds, x/y in pixels.
struct Offset {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
};

/// Gaussian kernel density of the query's centred neighbourhood at `point`.
/// Offsets are normalised by (delta_t, delta_x, delta_y); the kernel is
/// exp(-sigma2/2 * d^2), the kernel whose random Fourier features are
/// N(0, sigma2) frequencies.
inline double kde_direct(const EventSlice &slice, const Event &query, const Offset &point,
                         const EncoderConfig &cfg) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const Event &e : slice.events()) {
        if (std::abs(e.x - query.x) > cfg.delta_x || std::abs(e.y - query.y) > cfg.delta_y) {
            continue;
        }
        const double dt = (point.t - (e.t - query.t)) / cfg.delta_t;
        const double dx = (point.x - (e.x - query.x)) / cfg.delta_x;
        const double dy = (point.y - (e.y - query.y)) / cfg.delta_y;
        sum += std::exp(-0.5 * cfg.sigma2 * (dt * dt + dx * dx + dy * dy));
        ++n;
    }
    if (n == 0) {
        throw EmptyNeighborhoodError("kde_direct: empty neighbourhood");
    }
    return sum / static_cast<double>(n);
}

/// (1/D) Re <emb, exp(i [t/delta_t, x/delta_x, y/delta_y] . [T; X; Y])>, the
/// second argument conjugated.
template <typename Real>
double reconstruct_density(const Embedding<Real> &emb, const Offset &point, const Bases &bases,
                           const EncoderConfig &cfg) {
    if (emb.values.size() != bases.dim()) {
        throw DimensionMismatch("reconstruct_density: embedding has " + std::to_string(emb.values.size()) +
                                " components, bases have " + std::to_string(bases.dim()));
    }
    const double ft = point.t / cfg.delta_t;
    const double fx = point.x / cfg.delta_x;
    const double fy = point.y / cfg.delta_y;
    double sum = 0.0;
    for (std::size_t j = 0; j < bases.dim(); ++j) {
        const double angle = ft * bases.t[j] + fx * bases.x[j] + fy * bases.y[j];
        const std::complex<double> v(emb.values[j].real(), emb.values[j].imag());
        sum += (v * std::polar(1.0, -angle)).real();
    }
    return sum / static_cast<double>(bases.dim());
}

} // namespace nflow

#endif // NFLOW_ENCODER_HPP
