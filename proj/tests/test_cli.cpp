#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"

namespace nflow::cli {
namespace {

namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
  protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("nflow_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string &name) const { return (dir_ / name).string(); }

    std::string write_text(const std::string &name, const std::string &text) const {
        std::ofstream(path(name)) << text;
        return path(name);
    }

    static RunConfig config(std::initializer_list<std::pair<const std::string, std::string>> items) {
        return resolve_config(KeyValues(items));
    }

    static std::string slurp(const std::string &p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    fs::path dir_;
};

TEST_F(CliTest, EncodeSingleEventIsAllOnes) {
    const auto events = write_text("one.csv", "0.5,10,20,1\n");
    for (const char *precision : {"f64", "f32"}) {
        const auto rc = config({{"preset", "640x480_32ms_C64_k8"},
                                {"precision", precision},
                                {"events", events},
                                {"out", path("one.vkme")}});
        std::ostringstream out;
        std::ostringstream err;
        ASSERT_EQ(cmd_encode(rc, {out, err}), kOk) << err.str();
        EXPECT_NE(err.str().find("# dim=64"), std::string::npos);
        std::ifstream in(path("one.vkme"), std::ios::binary);
        std::uint32_t dim = 0;
        const auto recs = read_embeddings(in, &dim);
        EXPECT_EQ(dim, 64u);
        ASSERT_EQ(recs.size(), 1u);
        EXPECT_EQ(recs[0].slice, 0u);
        EXPECT_EQ(recs[0].event, 0u);
        for (const auto &v : recs[0].values) {
            EXPECT_NEAR(v.real(), 1.0f, 1e-6f);
            EXPECT_NEAR(v.imag(), 0.0f, 1e-6f);
        }
    }
}

TEST_F(CliTest, EncodeEmptyInputWritesHeaderOnly) {
    const auto events = write_text("empty.csv", "");
    const auto rc = config({{"preset", "640x480_32ms_C64_k8"}, {"events", events}, {"out", path("e.vkme")}});
    std::ostringstream out;
    std::ostringstream err;
    EXPECT_EQ(cmd_encode(rc, {out, err}), kOk);
    EXPECT_NE(err.str().find("warning"), std::string::npos);
    EXPECT_EQ(slurp(path("e.vkme")).size(), 8u);
}

TEST_F(CliTest, EncodeErrorsMapToExitCodes) {
    std::ostringstream out;
    std::ostringstream err;
    auto rc = config({{"preset", "640x480_32ms_C64_k8"}, {"events", path("missing.csv")}, {"out", path("x")}});
    EXPECT_EQ(cmd_encode(rc, {out, err}), kIoError);
    rc.events = write_text("bad.csv", "0.1,1,1\nnot,a,row\n");
    EXPECT_EQ(cmd_encode(rc, {out, err}), kIoError);
    EXPECT_NE(err.str().find("line 2"), std::string::npos);

    // Binary files carry a geometry that must agree with the preset.
    EventStream s;
    s.geometry = {32, 32};
    s.events = {{0.0, 1, 1, {}}};
    {
        std::ofstream bin(path("small.evn"), std::ios::binary);
        write_events_binary(bin, s);
    }
    rc.events = path("small.evn");
    EXPECT_EQ(cmd_encode(rc, {out, err}), kConfigError);
}

TEST_F(CliTest, PredictWithBiasOnlyHead) {
    auto rc = config({{"preset", "640x480_32ms_C64_k8"},
                      {"events", write_text("ev.csv", "0.0,5,5\n0.001,6,5\n0.002,7,6\n")},
                      {"out", path("pred.csv")}});
    auto w = MlpWeights::zeros(generate_bases(rc.encoder), 16);
    w.b2 = {1.0, 0.0};
    save_weights(path("head.vkmw"), w);
    rc.weights = path("head.vkmw");
    std::ostringstream out;
    std::ostringstream err;
    ASSERT_EQ(cmd_predict(rc, {out, err}), kOk) << err.str();
    std::ifstream in(path("pred.csv"));
    std::string line;
    std::size_t rows = 0;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.starts_with("#")) {
            continue;
        }
        if (!header) {
            EXPECT_EQ(line, kPredictionHeader);
            header = true;
            continue;
        }
        EXPECT_TRUE(line.ends_with(",1,0")) << line;
        ++rows;
    }
    EXPECT_EQ(rows, 3u);
    const auto parsed = load_predictions(path("pred.csv"));
    ASSERT_EQ(parsed.size(), 3u);
    EXPECT_EQ(parsed[2].x, 7);
    EXPECT_EQ(parsed[2].y, 6);
}

TEST_F(CliTest, PredictDimensionMismatchIsConfigError) {
    auto rc = config({{"preset", "640x480_32ms_C64_k8"}, {"events", write_text("ev.csv", "0.0,5,5\n")}});
    EncoderConfig other = rc.encoder;
    other.dim = 32;
    save_weights(path("head.vkmw"), MlpWeights::zeros(generate_bases(other), 8));
    rc.weights = path("head.vkmw");
    std::ostringstream out;
    std::ostringstream err;
    EXPECT_EQ(cmd_predict(rc, {out, err}), kConfigError);
    EXPECT_NE(err.str().find("D=32"), std::string::npos);
    EXPECT_NE(err.str().find("D=64"), std::string::npos);
}

TEST_F(CliTest, PredictOnEmptyInputIsEmptyResult) {
    auto rc = config({{"preset", "640x480_32ms_C64_k8"}, {"events", write_text("ev.csv", "")}});
    save_weights(path("head.vkmw"), MlpWeights::zeros(generate_bases(rc.encoder), 8));
    rc.weights = path("head.vkmw");
    std::ostringstream out;
    std::ostringstream err;
    EXPECT_EQ(cmd_predict(rc, {out, err}), kEmptyResult);
}

std::string prediction_csv(const std::vector<PixelFlow> &flows) {
    std::ostringstream os;
    os.precision(17);
    os << kPredictionHeader << "\n";
    for (std::size_t i = 0; i < flows.size(); ++i) {
        write_prediction_row(os, {0, i, 0.0, flows[i].x, flows[i].y, flows[i].n_hat.x, flows[i].n_hat.y});
    }
    return os.str();
}

TEST_F(CliTest, EvalAnalyticSceneAndEmptySet) {
    SceneParams p;
    p.velocity = {60.0, 20.0};
    p.edge_angle = 0.3;
    const auto w = synth_workload(1000, {48, 40}, Scene::translating_edge, p);
    const double s = p.velocity.x * std::cos(p.edge_angle) + p.velocity.y * std::sin(p.edge_angle);
    std::vector<PixelFlow> flows;
    for (const auto &e : w.slice.events()) {
        flows.push_back({e.x, e.y, {s * std::cos(p.edge_angle), s * std::sin(p.edge_angle)}});
    }
    save_flow_field(path("gt.flw"), w.gt);
    auto rc = resolve_config(KeyValues({{"pred", write_text("edge.csv", prediction_csv(flows))},
                                        {"gt", path("gt.flw")},
                                        {"out", path("report.csv")}}),
                             false);
    std::ostringstream out;
    std::ostringstream err;
    ASSERT_EQ(cmd_eval(rc, {out, err}), kOk) << err.str();
    const auto text = out.str();
    const auto at = text.find("PEE=");
    ASSERT_NE(at, std::string::npos);
    EXPECT_LT(std::stod(text.substr(at + 4)), 1e-6);
    EXPECT_NE(text.find("pct_pos=100"), std::string::npos);
    EXPECT_NE(slurp(path("report.csv")).find("sequence,PEE,pct_pos,n_valid,n_excluded"), std::string::npos);

    save_flow_field(path("blank.flw"), FlowField({48, 40}));
    rc.gt = path("blank.flw");
    rc.out.clear();
    EXPECT_EQ(cmd_eval(rc, {out, err}), kEmptyResult);

    save_flow_field(path("wrong.flw"), FlowField({8, 8}));
    rc.gt = path("wrong.flw");
    EXPECT_EQ(cmd_eval(rc, {out, err}), kConfigError);
}

TEST_F(CliTest, BenchOnTinyWorkloadReportsTimerResolution) {
    auto rc = config({{"delta_t", "0.01"}, {"delta_x", "1"}, {"dim", "4"}, {"width", "4"}, {"height", "4"}});
    BenchArgs args;
    args.sizes = {1};
    args.flows = 1;
    args.compare_deltas = false;
    std::ostringstream out;
    std::ostringstream err;
    EXPECT_EQ(cmd_bench(rc, args, {out, err}), kConfigError);
    EXPECT_NE(err.str().find("timer"), std::string::npos) << err.str();
}

TEST_F(CliTest, RenderWritesImageAndSidecar) {
    const std::vector<PixelFlow> flows{{0, 0, {1, 0}}, {3, 2, {0, -2}}};
    auto rc = resolve_config(KeyValues({{"pred", write_text("p.csv", prediction_csv(flows))},
                                        {"width", "4"},
                                        {"height", "3"},
                                        {"out", path("flow.ppm")}}),
                             false);
    std::ostringstream out;
    std::ostringstream err;
    ASSERT_EQ(cmd_render(rc, {out, err}), kOk) << err.str();
    EXPECT_EQ(slurp(path("flow.ppm")).size(), std::string("P6\n4 3\n255\n").size() + 36u);
    EXPECT_FALSE(slurp(path("flow.ppm.txt")).empty());
}

} // namespace
} // namespace nflow::cli
