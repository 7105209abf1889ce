// Subcommand implementations shared by the nflow executable and its tests.
#ifndef NFLOW_TOOLS_COMMANDS_HPP
#define NFLOW_TOOLS_COMMANDS_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "nflow/bench.hpp"
#include "nflow/config.hpp"
#include "nflow/encoder.hpp"
#include "nflow/events.hpp"
#include "nflow/flow_head.hpp"
#include "nflow/metrics.hpp"
#include "nflow/render.hpp"
#include "nflow/synth.hpp"

namespace nflow::cli {

enum ExitCode : int { kOk = 0, kIoError = 1, kConfigError = 2, kEmptyResult = 3 };

/// Thrown for empty-result conditions (exit 3).
class EmptyResult : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Streams {
    std::ostream &out = std::cout;
    std::ostream &err = std::cerr;
};

/// Runs a command body and maps exceptions to exit codes.
template <typename Fn> int guarded(std::ostream &err, Fn &&fn) {
    try {
        return fn();
    } catch (const EmptyResult &e) {
        err << "error: " << e.what() << "\n";
        return kEmptyResult;
    } catch (const EmptyEvaluation &e) {
        err << "error: " << e.what() << "\n";
        return kEmptyResult;
    } catch (const ParseError &e) {
        err << "error: " << e.what() << "\n";
        return kIoError;
    } catch (const TimerResolutionError &e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::invalid_argument &e) {
        // ConfigError, DimensionMismatch, GeometryMismatch.
        err << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return kIoError;
    }
}

inline EventFormat detect_format(const RunConfig &rc) {
    if (rc.format) {
        return *rc.format;
    }
    const auto ext = std::filesystem::path(rc.events).extension().string();
    return ext == ".csv" || ext == ".txt" ? EventFormat::csv : EventFormat::binary;
}

/// Loads the events and fills in geometry (binary files carry their own).
inline EventStream load_stream(RunConfig &rc) {
    if (rc.events.empty()) {
        throw ConfigError("no event file given (--events)");
    }
    const auto format = detect_format(rc);
    if (format == EventFormat::csv && !rc.geometry.valid()) {
        throw ConfigError("CSV events need a geometry: use a preset or --width/--height");
    }
    auto stream = load_events(rc.events, format, rc.geometry);
    if (format == EventFormat::binary) {
        if (rc.geometry.valid() && rc.geometry != stream.geometry) {
            throw GeometryMismatch("event file is " + std::to_string(stream.geometry.width) + "x" +
                                   std::to_string(stream.geometry.height) + " but the configuration says " +
                                   std::to_string(rc.geometry.width) + "x" + std::to_string(rc.geometry.height));
        }
        rc.geometry = stream.geometry;
    }
    return stream;
}

inline std::vector<EventSlice> slices_for(const RunConfig &rc, EventStream stream) {
    double t0 = 0.0;
    if (rc.t0) {
        t0 = *rc.t0;
    } else if (!stream.events.empty()) {
        t0 = std::min_element(stream.events.begin(), stream.events.end(),
                              [](const Event &a, const Event &b) { return a.t < b.t; })
                 ->t;
    }
    return slice_stream(std::move(stream), rc.encoder.delta_t, rc.resolved_stride(), t0);
}

inline constexpr std::string_view kEmbeddingMagic = "VKME";

/// `VKME`, u32 D, then per record u64 slice, u64 event, D x (f32 re, f32 im).
template <typename Real>
void write_embedding_record(std::ostream &os, std::uint64_t slice, std::uint64_t event, const Embedding<Real> &e) {
    le::put_u64(os, slice);
    le::put_u64(os, event);
    for (const auto &v : e.values) {
        le::put_f32(os, static_cast<float>(v.real()));
        le::put_f32(os, static_cast<float>(v.imag()));
    }
}

struct EmbeddingRecord {
    std::uint64_t slice = 0;
    std::uint64_t event = 0;
    std::vector<std::complex<float>> values;
};

inline std::vector<EmbeddingRecord> read_embeddings(std::istream &is, std::uint32_t *dim_out = nullptr) {
    le::Reader r(is);
    r.expect_magic(kEmbeddingMagic);
    const auto dim = r.u32("D");
    if (dim_out != nullptr) {
        *dim_out = dim;
    }
    std::vector<EmbeddingRecord> out;
    while (!r.at_end()) {
        EmbeddingRecord rec;
        rec.slice = r.u64("slice_index");
        rec.event = r.u64("event_index");
        rec.values.resize(dim);
        for (auto &v : rec.values) {
            const float re = r.f32("re");
            const float im = r.f32("im");
            v = {re, im};
        }
        out.push_back(std::move(rec));
    }
    return out;
}

template <typename Real> int encode_impl(RunConfig &rc, std::vector<EventSlice> slices, Streams io) {
    if (rc.out.empty()) {
        throw ConfigError("encode writes a binary file: give --out");
    }
    std::ofstream os(rc.out, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot write " + rc.out);
    }
    le::put_magic(os, kEmbeddingMagic);
    le::put_u32(os, rc.encoder.dim);
    std::size_t records = 0;
    if (!slices.empty()) {
        Encoder<Real> enc(rc.encoder, rc.geometry, rc.threads);
        for (std::size_t s = 0; s < slices.size(); ++s) {
            const auto queries = rc.queries.select(slices[s].size(), s, rc.query_seed);
            enc.build(slices[s]);
            const auto embs = enc.embed_many(queries);
            for (std::size_t i = 0; i < queries.size(); ++i) {
                write_embedding_record(os, s, queries[i], embs[i]);
            }
            records += queries.size();
        }
    }
    if (!os) {
        throw std::runtime_error("write failed: " + rc.out);
    }
    io.err << "encoded " << records << " queries from " << slices.size() << " slices into " << rc.out << "\n";
    if (records == 0) {
        io.err << "warning: no events; wrote header only\n";
    }
    return kOk;
}

inline int cmd_encode(RunConfig rc, Streams io = {}) {
    return guarded(io.err, [&] {
        auto stream = load_stream(rc);
        // The output is binary, so the resolved configuration goes to stderr.
        echo_config(io.err, rc);
        auto slices = slices_for(rc, std::move(stream));
        return rc.encoder.precision == Precision::f64 ? encode_impl<double>(rc, std::move(slices), io)
                                                      : encode_impl<float>(rc, std::move(slices), io);
    });
}

struct PredictionRow {
    std::size_t slice_index = 0;
    std::size_t event_index = 0;
    double t = 0.0;
    std::int32_t x = 0;
    std::int32_t y = 0;
    double nx = 0.0;
    double ny = 0.0;
};

inline constexpr std::string_view kPredictionHeader = "slice_index,event_index,t,x,y,nx,ny";

inline void write_prediction_row(std::ostream &os, const PredictionRow &r) {
    os << r.slice_index << ',' << r.event_index << ',' << r.t << ',' << r.x << ',' << r.y << ',' << r.nx << ','
       << r.ny << '\n';
}

/// Reads prediction CSV; '#' lines and the column header are skipped.
inline std::vector<PredictionRow> parse_predictions(std::istream &in) {
    std::vector<PredictionRow> rows;
    std::string line;
    std::uint64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = detail::trim(line);
        if (body.empty() || body.front() == '#' || body == kPredictionHeader) {
            continue;
        }
        const auto f = detail::split_fields(body);
        auto fail = [&](const std::string &why) {
            return ParseError("predictions line " + std::to_string(line_no) + ": " + why, line_no);
        };
        if (f.size() != 7) {
            throw fail("expected 7 fields, got " + std::to_string(f.size()));
        }
        const auto si = detail::parse_number<std::size_t>(f[0]);
        const auto ei = detail::parse_number<std::size_t>(f[1]);
        const auto t = detail::parse_number<double>(f[2]);
        const auto x = detail::parse_number<std::int32_t>(f[3]);
        const auto y = detail::parse_number<std::int32_t>(f[4]);
        const auto nx = detail::parse_number<double>(f[5]);
        const auto ny = detail::parse_number<double>(f[6]);
        if (!si || !ei || !t || !x || !y || !nx || !ny) {
            throw fail("malformed field");
        }
        rows.push_back({*si, *ei, *t, *x, *y, *nx, *ny});
    }
    return rows;
}

inline std::vector<PredictionRow> load_predictions(const std::string &path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open predictions: " + path);
    }
    return parse_predictions(in);
}

template <typename Real>
std::size_t predict_impl(const RunConfig &rc, const std::vector<EventSlice> &slices, const MlpWeights &w,
                         std::ostream &os, std::ostream &err, std::size_t &failures) {
    std::size_t ok = 0;
    if (slices.empty()) {
        return 0;
    }
    FlowEstimator<Real> est(rc.encoder, w, rc.geometry, rc.threads);
    for (std::size_t s = 0; s < slices.size(); ++s) {
        const auto queries = rc.queries.select(slices[s].size(), s, rc.query_seed);
        const auto batch = est.predict(slices[s], queries);
        for (const auto &p : batch.predictions) {
            const Event &e = slices[s][p.event_index];
            write_prediction_row(os, {s, p.event_index, e.t, e.x, e.y, p.nx, p.ny});
        }
        for (const auto &f : batch.failures) {
            err << "warning: slice " << s << " event " << f.event_index << ": " << f.reason << "\n";
        }
        ok += batch.predictions.size();
        failures += batch.failures.size();
    }
    return ok;
}

inline int cmd_predict(RunConfig rc, Streams io = {}) {
    return guarded(io.err, [&] {
        if (rc.weights.empty()) {
            throw ConfigError("predict needs --weights");
        }
        const auto weights = load_weights(rc.weights);
        if (weights.dim != rc.encoder.dim) {
            throw DimensionMismatch("weights have D=" + std::to_string(weights.dim) + " but the encoder has D=" +
                                    std::to_string(rc.encoder.dim));
        }
        auto stream = load_stream(rc);
        const auto slices = slices_for(rc, std::move(stream));
        std::ofstream file;
        if (!rc.out.empty()) {
            file.open(rc.out);
            if (!file) {
                throw std::runtime_error("cannot write " + rc.out);
            }
        }
        std::ostream &os = rc.out.empty() ? io.out : file;
        os.precision(17);
        echo_config(os, rc);
        os << kPredictionHeader << "\n";
        std::size_t failures = 0;
        const std::size_t ok = rc.encoder.precision == Precision::f64
                                   ? predict_impl<double>(rc, slices, weights, os, io.err, failures)
                                   : predict_impl<float>(rc, slices, weights, os, io.err, failures);
        io.err << "predicted " << ok << " flows (" << failures << " failed) over " << slices.size() << " slices\n";
        if (ok == 0) {
            throw EmptyResult("no predictions were produced");
        }
        return kOk;
    });
}

inline std::vector<std::string> split_list(const std::string &s) {
    std::vector<std::string> out;
    for (auto f : detail::split_fields(s)) {
        if (!f.empty()) {
            out.emplace_back(f);
        }
    }
    return out;
}

inline int cmd_eval(RunConfig rc, Streams io = {}) {
    return guarded(io.err, [&] {
        const auto preds = split_list(rc.pred);
        const auto gts = split_list(rc.gt);
        if (preds.empty() || gts.empty()) {
            throw ConfigError("eval needs --pred and --gt");
        }
        if (preds.size() != gts.size()) {
            throw ConfigError("eval needs one --gt per --pred (got " + std::to_string(preds.size()) + " and " +
                              std::to_string(gts.size()) + ")");
        }
        std::vector<SequenceEval> seqs;
        for (std::size_t k = 0; k < preds.size(); ++k) {
            const auto rows = load_predictions(preds[k]);
            const auto frames = load_flow_fields(gts[k]);
            const CameraGeometry g = frames.front().geometry;
            for (const auto &f : frames) {
                if (f.geometry != g) {
                    throw GeometryMismatch("GT frames in " + gts[k] + " differ in geometry");
                }
            }
            if (rc.geometry.valid() && rc.geometry != g) {
                throw GeometryMismatch("GT map is " + std::to_string(g.width) + "x" + std::to_string(g.height) +
                                       " but the configuration says " + std::to_string(rc.geometry.width) + "x" +
                                       std::to_string(rc.geometry.height));
            }
            SequenceEval seq{std::filesystem::path(preds[k]).stem().string(), {}};
            for (const auto &r : rows) {
                const std::size_t frame = frames.size() == 1 ? 0 : r.slice_index;
                if (frame >= frames.size()) {
                    throw GeometryMismatch("no GT frame for slice " + std::to_string(r.slice_index) + " in " +
                                           gts[k]);
                }
                const PixelFlow pf{r.x, r.y, {r.nx, r.ny}};
                const auto pair = pair_predictions(std::span(&pf, 1), frames[frame], g);
                seq.pairs.push_back(pair.front());
            }
            seqs.push_back(std::move(seq));
        }
        const auto report = evaluate_sequences(seqs);
        std::ofstream file;
        if (!rc.out.empty()) {
            file.open(rc.out);
            if (!file) {
                throw std::runtime_error("cannot write " + rc.out);
            }
            echo_config(file, rc);
            write_report_csv(file, report);
        }
        const auto &a = report.aggregate;
        if (a.n_valid == 0) {
            throw EmptyResult("no valid prediction/GT pairs (" + std::to_string(a.n_excluded) + " excluded)");
        }
        if (rc.out.empty()) {
            write_report_csv(io.out, report);
        }
        io.out << "PEE=" << a.pee << " pct_pos=" << a.pct_pos << " n_valid=" << a.n_valid
               << " n_excluded=" << a.n_excluded << "\n";
        return kOk;
    });
}

struct BenchArgs {
    std::vector<std::size_t> sizes{100000, 300000, 1000000};
    std::size_t flows = 10000;
    Scene scene = Scene::uniform_noise;
    std::size_t repetitions = 5;
    std::size_t warmups = 2;
    std::uint64_t seed = 1;
    bool compare_deltas = true;
};

inline int cmd_bench(RunConfig rc, BenchArgs args, Streams io = {}) {
    return guarded(io.err, [&] {
        if (!rc.geometry.valid()) {
            rc.geometry = {640, 480};
        }
        if (args.sizes.empty()) {
            throw ConfigError("bench needs at least one workload size");
        }
        BenchOptions opt;
        opt.repetitions = args.repetitions;
        opt.warmups = args.warmups;
        opt.threads = rc.threads;
        SceneParams sp;
        sp.seed = args.seed;
        sp.window = rc.encoder.window();

        struct Sized {
            std::size_t n;
            Workload w;
            std::vector<std::size_t> queries;
        };
        std::vector<Sized> workloads;
        for (std::size_t n : args.sizes) {
            auto w = synth_workload(n, rc.geometry, args.scene, sp);
            QueryPolicy q{QueryPolicy::Kind::random, std::max<std::size_t>(1, args.flows)};
            auto queries = q.select(w.slice.size(), 0, args.seed);
            workloads.push_back({n, std::move(w), std::move(queries)});
        }
        std::vector<StageTiming> rows;
        std::vector<StageTiming> acc;
        for (const auto &s : workloads) {
            acc.push_back(bench_stage(s.w.slice, s.queries, rc.encoder, Stage::accumulate, opt));
            rows.push_back(acc.back());
        }
        const auto &largest = workloads.back();
        rows.push_back(bench_stage(largest.w.slice, largest.queries, rc.encoder, Stage::pool, opt));
        rows.push_back(bench_stage(largest.w.slice, largest.queries, rc.encoder, Stage::mlp, opt));

        std::ofstream file;
        if (!rc.out.empty()) {
            file.open(rc.out);
            if (!file) {
                throw std::runtime_error("cannot write " + rc.out);
            }
            echo_config(file, rc);
            write_bench_csv(file, rows, rc.encoder, resolve_threads(rc.threads));
        }
        echo_config(io.out, rc);
        io.out << "# scene=" << scene_name(args.scene) << " reps=" << opt.repetitions
               << " warmups=" << opt.warmups << " threads=" << resolve_threads(rc.threads) << "\n";
        std::vector<std::pair<int, std::vector<StageTiming>>> table;
        table.emplace_back(rc.encoder.delta_x, std::vector<StageTiming>{acc.back(), rows[rows.size() - 2],
                                                                        rows.back()});
        if (acc.size() >= 2) {
            const auto fit = fit_timings(acc);
            io.out << "accumulate linear fit: " << std::scientific << std::setprecision(3) << fit.slope
                   << " s/event, intercept " << fit.intercept << " s, R^2=" << std::fixed << std::setprecision(4)
                   << fit.r2 << "\n";
        }
        if (args.compare_deltas) {
            std::vector<StageTiming> by_delta;
            for (int d : {8, 10}) {
                EncoderConfig c = rc.encoder;
                c.delta_x = c.delta_y = d;
                by_delta.push_back(bench_stage(largest.w.slice, largest.queries, c, Stage::pool, opt));
            }
            io.out << "pool per-flow time ratio delta=10/delta=8: " << std::fixed << std::setprecision(3)
                   << by_delta[1].wall_seconds / by_delta[0].wall_seconds << " (window area ratio "
                   << 441.0 / 289.0 << ")\n";
        }
        write_bench_summary(io.out, table);
        io.out.unsetf(std::ios::floatfield);
        return kOk;
    });
}

inline int cmd_render(RunConfig rc, Streams io = {}) {
    return guarded(io.err, [&] {
        if (rc.pred.empty()) {
            throw ConfigError("render needs --pred");
        }
        if (rc.out.empty()) {
            throw ConfigError("render needs --out");
        }
        if (!rc.geometry.valid()) {
            throw ConfigError("render needs a geometry: use a preset or --width/--height");
        }
        const auto rows = load_predictions(rc.pred);
        std::vector<PixelFlow> flows;
        flows.reserve(rows.size());
        for (const auto &r : rows) {
            flows.push_back({r.x, r.y, {r.nx, r.ny}});
        }
        if (flows.empty()) {
            io.err << "warning: no predictions; writing a black image\n";
        }
        RenderInfo info;
        const auto img = render_flow(flows, rc.geometry, &info);
        save_ppm(rc.out, img);
        std::ofstream side(rc.out + ".txt");
        if (!side) {
            throw std::runtime_error("cannot write " + rc.out + ".txt");
        }
        write_render_sidecar(side, info);
        io.err << "rendered " << info.colored_pixels << " pixels into " << rc.out << "\n";
        return kOk;
    });
}

} // namespace nflow::cli

#endif // NFLOW_TOOLS_COMMANDS_HPP
