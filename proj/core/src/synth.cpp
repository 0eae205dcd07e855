#include "ldp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ldp {

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);  // wrap hue into [0,1)
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    const double m = v - c;
    return {r + m, g + m, b + m};
}

std::vector<ImageTensor> generate_toy_corpus(int count, int image_size, RandomSource& rng) {
    if (count < 1) throw std::invalid_argument("generate_toy_corpus: count must be >= 1");
    if (image_size < 4) throw std::invalid_argument("generate_toy_corpus: image_size too small");

    constexpr double kTau = 6.283185307179586;
    std::vector<ImageTensor> images;
    images.reserve(static_cast<size_t>(count));

    for (int n = 0; n < count; ++n) {
        const double hue = rng.uniform();
        const auto dark = hsv_to_rgb(hue, rng.uniform(0.4, 0.8), rng.uniform(0.15, 0.35));
        const auto mid = hsv_to_rgb(hue + rng.uniform(-0.08, 0.08), rng.uniform(0.3, 0.7),
                                    rng.uniform(0.45, 0.65));
        const auto light = hsv_to_rgb(hue + rng.uniform(-0.15, 0.15), rng.uniform(0.1, 0.5),
                                      rng.uniform(0.75, 0.95));

        struct Wave {
            double fx, fy, phase, amp;
        };
        std::vector<Wave> waves;
        const int n_waves = rng.uniform_int(3, 5);
        for (int k = 0; k < n_waves; ++k)
            waves.push_back({rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.0, kTau),
                             rng.uniform(0.3, 1.0)});

        ImageTensor img({image_size, image_size, 3});
        double lo = 1e300, hi = -1e300;
        std::vector<double> field(static_cast<size_t>(image_size) * image_size);
        for (int y = 0; y < image_size; ++y)
            for (int x = 0; x < image_size; ++x) {
                double v = 0.0;
                for (const Wave& w : waves)
                    v += w.amp * std::sin(kTau * (w.fx * x / image_size + w.fy * y / image_size) + w.phase);
                field[static_cast<size_t>(y) * image_size + x] = v;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        const double span = std::max(hi - lo, 1e-9);

        for (int y = 0; y < image_size; ++y)
            for (int x = 0; x < image_size; ++x) {
                const double v = (field[static_cast<size_t>(y) * image_size + x] - lo) / span;
                for (int c = 0; c < 3; ++c) {
                    const double col = v < 0.5 ? dark[static_cast<size_t>(c)] + (mid[static_cast<size_t>(c)] - dark[static_cast<size_t>(c)]) * (2 * v)
                                               : mid[static_cast<size_t>(c)] + (light[static_cast<size_t>(c)] - mid[static_cast<size_t>(c)]) * (2 * v - 1);
                    img.at(y, x, c) = std::clamp(col + rng.normal(0.0, 0.01), 0.0, 1.0);
                }
            }
        images.push_back(std::move(img));
    }
    return images;
}

}  // namespace ldp
