#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "commands.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::map<std::string, std::string> flags;
    std::vector<std::string> sets;
    std::vector<std::string> preds;
    std::vector<std::string> gts;
};

void add_common(CLI::App *cmd, CommonFlags &f) {
    cmd->add_option("--config", f.config, "key=value configuration file");
    for (const auto &[name, help] : std::vector<std::pair<std::string, std::string>>{
             {"preset", "named encoder preset, e.g. 640x480_32ms_C64_k8"},
             {"events", "event file (.csv or binary EVN1)"},
             {"weights", "VKMW weight file"},
             {"out", "output path"},
             {"threads", "worker threads (0 = all cores)"},
             {"precision", "f32 or f64"},
             {"stride", "slice stride in seconds (default: 2*delta_t)"},
             {"queries", "all | every:k | random:m"},
             {"width", "camera width in pixels"},
             {"height", "camera height in pixels"},
             {"format", "event file format: csv or binary"}}) {
        cmd->add_option_function<std::string>(
            "--" + name, [&f, key = name](const std::string &v) { f.flags[key] = v; }, help);
    }
    cmd->add_option("--pred", f.preds, "prediction CSV (repeatable for eval)");
    cmd->add_option("--gt", f.gts, "FLW1 ground-truth flow map (one per --pred)");
    cmd->add_option("--set", f.sets, "extra key=value override, e.g. --set delta_x=8");
}

nflow::RunConfig resolve(const CommonFlags &f, bool require_encoder) {
    nflow::KeyValues kv;
    if (!f.config.empty()) {
        kv = nflow::load_key_values(f.config);
    }
    for (const auto &s : f.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw nflow::ConfigError("--set expects key=value, got '" + s + "'");
        }
        kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    for (const auto &[k, v] : f.flags) {
        kv[k] = v;
    }
    auto join = [](const std::vector<std::string> &v) {
        std::string out;
        for (const auto &s : v) {
            out += (out.empty() ? "" : ",") + s;
        }
        return out;
    };
    if (!f.preds.empty()) {
        kv["pred"] = join(f.preds);
    }
    if (!f.gts.empty()) {
        kv["gt"] = join(f.gts);
    }
    // A preset given on the command line replaces explicit encoder keys that
    // only came from the config file.
    if (f.flags.contains("preset")) {
        for (auto k : nflow::kEncoderKeys) {
            const bool from_cli = std::any_of(f.sets.begin(), f.sets.end(), [&](const std::string &s) {
                return s.starts_with(std::string(k) + "=");
            });
            if (!from_cli) {
                kv.erase(std::string(k));
            }
        }
    }
    return nflow::resolve_config(kv, require_encoder);
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Event-based normal flow: encode, predict, eval, bench, render"};
    app.require_subcommand(1);
    CommonFlags flags;

    auto *encode = app.add_subcommand("encode", "write per-query embeddings (VKME)");
    auto *predict = app.add_subcommand("predict", "write per-event normal flow CSV");
    auto *eval = app.add_subcommand("eval", "score predictions against GT flow maps");
    auto *bench = app.add_subcommand("bench", "time the accumulate, pool and mlp stages");
    auto *render = app.add_subcommand("render", "draw predictions as a PPM image");
    for (auto *cmd : {encode, predict, eval, bench, render}) {
        add_common(cmd, flags);
    }
    nflow::cli::BenchArgs bench_args;
    std::string scene = "uniform_noise";
    bench->add_option("--sizes", bench_args.sizes, "event counts of the accumulate sweep")->delimiter(',');
    bench->add_option("--flows", bench_args.flows, "queries per workload");
    bench->add_option("--scene", scene, "uniform_noise | translating_edge | rotating_bar");
    bench->add_option("--reps", bench_args.repetitions, "timed repetitions (median reported)");
    bench->add_option("--warmups", bench_args.warmups, "untimed warmup repetitions");
    bench->add_option("--seed", bench_args.seed, "workload seed");
    bench->add_flag("!--no-compare", bench_args.compare_deltas, "skip the delta=8 vs delta=10 pool comparison");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : nflow::cli::kConfigError;
    }

    nflow::RunConfig rc;
    const int rc_status = nflow::cli::guarded(std::cerr, [&] {
        rc = resolve(flags, !(eval->parsed() || render->parsed()));
        if (bench->parsed()) {
            bench_args.scene = nflow::parse_scene(scene);
        }
        return 0;
    });
    if (rc_status != 0) {
        return rc_status;
    }
    if (encode->parsed()) {
        return nflow::cli::cmd_encode(rc);
    }
    if (predict->parsed()) {
        return nflow::cli::cmd_predict(rc);
    }
    if (eval->parsed()) {
        return nflow::cli::cmd_eval(rc);
    }
    if (bench->parsed()) {
        return nflow::cli::cmd_bench(rc, bench_args);
    }
    return nflow::cli::cmd_render(rc);
}
