// Trains a flow head on synthetic translating edges and writes the files the
// CLI walkthrough uses: head.vkmw, edge.evn, edge_gt.flw and edge.cfg.
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "nflow/config.hpp"
#include "nflow/flow_head.hpp"
#include "nflow/metrics.hpp"
#include "nflow/synth.hpp"

namespace {

nflow::Workload random_edge(std::mt19937_64 &rng, double window, nflow::CameraGeometry g) {
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> speed(40.0, 300.0);
    std::uniform_real_distribution<double> tangential(-150.0, 150.0);
    nflow::SceneParams p;
    p.seed = rng();
    p.window = window;
    p.edge_angle = angle(rng);
    const double s = speed(rng);
    const double t = tangential(rng);
    p.velocity = {s * std::cos(p.edge_angle) - t * std::sin(p.edge_angle),
                  s * std::sin(p.edge_angle) + t * std::cos(p.edge_angle)};
    p.noise_fraction = 0.02;
    return nflow::synth_workload(1500, g, nflow::Scene::translating_edge, p);
}

} // namespace

int main(int argc, char **argv) {
    const std::string dir = argc > 1 ? argv[1] : ".";
    const auto cfg = nflow::preset_config("640x480_32ms_C64_k8");
    const nflow::CameraGeometry g{64, 64};
    const auto bases = nflow::generate_bases(cfg);
    std::mt19937_64 rng(1);

    std::vector<nflow::LabelledSlice> data;
    for (int s = 0; s < 600; ++s) {
        auto w = random_edge(rng, cfg.window(), g);
        nflow::LabelledSlice item{w.slice, {}, {}};
        for (std::size_t i = 0; i < w.slice.size() && item.queries.size() < 40; i += 7) {
            const auto &e = w.slice[i];
            if (w.gt.is_valid(e.x, e.y)) {
                item.queries.push_back(i);
                item.flows.push_back(w.gt.at(e.x, e.y));
            }
        }
        data.push_back(std::move(item));
    }
    const auto samples = nflow::make_training_samples<float>(data, cfg, bases);
    nflow::TrainParams params;
    params.epochs = 80;
    nflow::TrainReport report;
    const auto head = nflow::train_head(samples, bases, params, &report);
    nflow::save_weights(dir + "/head.vkmw", head);
    std::printf("trained on %zu samples; best epoch %zu, validation loss %.4g\n", samples.size(), report.best_epoch,
                report.best_validation_loss);

    // One held-out scene for predict / eval / render.
    const auto test = random_edge(rng, cfg.window(), g);
    {
        std::ofstream os(dir + "/edge.evn", std::ios::binary);
        nflow::write_events_binary(os, {test.slice.events(), test.slice.geometry()});
    }
    nflow::save_flow_field(dir + "/edge_gt.flw", test.gt);
    std::ofstream(dir + "/edge.cfg") << "delta_t = 0.016\ndelta_x = 8\ndim = 64\nqueries = every:5\n";
    std::printf("wrote head.vkmw, edge.evn (%zu events, %dx%d), edge_gt.flw, edge.cfg to %s\n", test.slice.size(),
                g.width, g.height, dir.c_str());
}
