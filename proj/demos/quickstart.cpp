// Encodes a tiny hand-made slice and prints the first embedding components.
#include <cstdio>
#include <vector>

#include "nflow/encoder.hpp"

int main() {
    nflow::EncoderConfig cfg;
    cfg.delta_x = cfg.delta_y = 8;
    const nflow::CameraGeometry geometry{32, 32};
    const nflow::EventSlice slice({{0.000, 10, 10, {}}, {0.004, 11, 10, {}}, {0.008, 12, 10, {}}}, 0.0,
                                  cfg.window(), geometry);
    const std::vector<std::size_t> queries{0, 1, 2};
    const auto embeddings = nflow::encode<float>(slice, queries, cfg);
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        std::printf("event %zu (n=%llu):", i, static_cast<unsigned long long>(embeddings[i].count));
        for (std::size_t j = 0; j < 4; ++j) {
            std::printf(" %+.4f%+.4fi", embeddings[i].values[j].real(), embeddings[i].values[j].imag());
        }
        std::printf(" ...\n");
    }
}
