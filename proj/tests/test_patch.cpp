#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ldp/patch.hpp"
#include "support/gradcheck.hpp"

using namespace ldp;
using ldp::testing::grad_max_rel_err;

namespace {

// independent references, element-by-element
double tv_reference(const ImageTensor& p) {
    double total = 0.0;
    for (int c = 0; c < p.dim(2); ++c)
        for (int i = 0; i + 1 < p.dim(0); ++i)
            for (int j = 0; j + 1 < p.dim(1); ++j)
                total += std::sqrt(std::pow(p.at(i + 1, j, c) - p.at(i, j, c), 2) +
                                   std::pow(p.at(i, j + 1, c) - p.at(i, j, c), 2) + 1e-8);
    return total;
}

double nps_reference(const ImageTensor& p, const PrintColorSet& colors) {
    double total = 0.0;
    for (int i = 0; i < p.dim(0); ++i)
        for (int j = 0; j < p.dim(1); ++j) {
            double best = 1e300;
            for (const auto& c : colors.colors)
                best = std::min(best, std::sqrt(std::pow(p.at(i, j, 0) - c[0], 2) +
                                                std::pow(p.at(i, j, 1) - c[1], 2) +
                                                std::pow(p.at(i, j, 2) - c[2], 2)));
            total += best;
        }
    return total;
}

double mc_kl(double mu, double sigma, int samples, RandomSource& rng) {
    double total = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double x = mu + sigma * rng.normal();
        const double logq = -0.5 * std::pow((x - mu) / sigma, 2) - std::log(sigma);
        const double logp = -0.5 * x * x;
        total += logq - logp;
    }
    return total / samples;
}

TransformConfig identity_transform() {
    TransformConfig t;
    t.rotation_deg = 0.0;
    t.scale_jitter = 0.0;
    t.brightness = 0.0;
    t.contrast_min = t.contrast_max = 1.0;
    t.noise_std = 0.0;
    return t;
}

}  // namespace

TEST_CASE("reparameterize: identity, arithmetic, gradients") {
    RandomSource rng(41);
    const Tensor eps = rng.normal_tensor({2, 2, 2});
    PatchLatentParams p{Tensor({2, 2, 2}, 0.0), Tensor({2, 2, 2}, 0.0)};
    const LatentTensor z = reparameterize(p, eps);
    for (size_t i = 0; i < z.data.size(); ++i) CHECK(z.data[i] == eps.data[i]);

    PatchLatentParams q{Tensor({1}, 2.0), Tensor({1}, std::log(0.5))};
    const Tensor one({1}, 1.0);
    CHECK(reparameterize(q, one).data[0] == doctest::Approx(2.5).epsilon(1e-12));

    PatchLatentParams bad{Tensor({2}), Tensor({3})};
    CHECK_THROWS_AS(reparameterize(bad, one), std::invalid_argument);

    const Tensor mu0 = rng.normal_tensor({3, 3, 2});
    const Tensor ls0 = rng.uniform_tensor({3, 3, 2}, -0.5, 0.5);
    const Tensor eps2 = rng.normal_tensor({3, 3, 2});
    CHECK(grad_max_rel_err(mu0, [&](Tape& t, Var v) {
              return t.sum(reparameterize_on_tape(t, v, t.input(ls0), eps2));
          }) < 1e-3);
    CHECK(grad_max_rel_err(ls0, [&](Tape& t, Var v) {
              return t.sum(reparameterize_on_tape(t, t.input(mu0), v, eps2));
          }) < 1e-3);
}

TEST_CASE("tv loss: hand case, constant case, brute-force oracle, gradient") {
    ImageTensor two({2, 2, 1});
    two.at(0, 1, 0) = 1.0;
    two.at(1, 1, 0) = 1.0;
    CHECK(tv_loss(two) == doctest::Approx(1.0).epsilon(1e-6));

    const ImageTensor flat({8, 8, 3}, 0.3);
    CHECK(tv_loss(flat) == doctest::Approx(7 * 7 * 3 * std::sqrt(1e-8)).epsilon(1e-9));

    RandomSource rng(42);
    for (int trial = 0; trial < 30; ++trial) {
        const ImageTensor p = rng.uniform_tensor({6, 6, 3}, 0.0, 1.0);
        CHECK(std::fabs(tv_loss(p) - tv_reference(p)) < 1e-9);
    }

    CHECK_THROWS_AS(tv_loss(ImageTensor({1, 1, 3})), std::invalid_argument);

    const ImageTensor p = rng.uniform_tensor({5, 5, 3}, 0.0, 1.0);
    CHECK(grad_max_rel_err(p, [](Tape& t, Var v) { return tv_loss_on_tape(t, v); }) < 1e-3);
}

TEST_CASE("nps loss: membership, single pixel, oracle, gradient") {
    const PrintColorSet palette = default_print_colors();
    ImageTensor member({2, 2, 3});
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int c = 0; c < 3; ++c) member.at(i, j, c) = palette.colors[3][static_cast<size_t>(c)];
    CHECK(nps_loss(member, palette) == doctest::Approx(0.0).epsilon(1e-15));

    PrintColorSet bw;
    bw.colors = {{0, 0, 0}, {1, 1, 1}};
    ImageTensor gray({1, 1, 3});
    for (int c = 0; c < 3; ++c) gray.at(0, 0, c) = 0.4;
    CHECK(nps_loss(gray, bw) == doctest::Approx(std::sqrt(3.0) * 0.4).epsilon(1e-9));

    RandomSource rng(43);
    for (int trial = 0; trial < 30; ++trial) {
        const ImageTensor p = rng.uniform_tensor({6, 6, 3}, 0.0, 1.0);
        CHECK(std::fabs(nps_loss(p, palette) - nps_reference(p, palette)) < 1e-9);
    }

    CHECK_THROWS_AS(nps_loss(gray, PrintColorSet{}), std::invalid_argument);

    const ImageTensor p = rng.uniform_tensor({5, 5, 3}, 0.0, 1.0);
    CHECK(grad_max_rel_err(p, [&](Tape& t, Var v) { return nps_loss_on_tape(t, v, palette); }) < 1e-3);
}

TEST_CASE("kl loss: exact values, Monte-Carlo agreement, gradient") {
    PatchLatentParams standard{Tensor({4}, 0.0), Tensor({4}, 0.0)};
    CHECK(kl_loss(standard) == 0.0);

    PatchLatentParams shifted{Tensor({1}, 1.0), Tensor({1}, 0.0)};
    CHECK(kl_loss(shifted) == doctest::Approx(0.5).epsilon(1e-12));

    PatchLatentParams wide{Tensor({1}, 0.0), Tensor({1}, std::log(2.0))};
    CHECK(kl_loss(wide) == doctest::Approx(0.5 * (4.0 - std::log(4.0) - 1.0)).epsilon(1e-12));

    RandomSource rng(44);
    for (int trial = 0; trial < 5; ++trial) {
        const double mu = rng.uniform(-1.5, 1.5);
        const double sigma = rng.uniform(0.5, 2.0);
        PatchLatentParams p{Tensor({1}, mu), Tensor({1}, std::log(sigma))};
        CHECK(kl_loss(p) == doctest::Approx(mc_kl(mu, sigma, 200000, rng)).epsilon(0.05));
    }

    const Tensor mu0 = rng.normal_tensor({3, 3});
    const Tensor ls0 = rng.uniform_tensor({3, 3}, -0.4, 0.4);
    CHECK(grad_max_rel_err(mu0, [&](Tape& t, Var v) {
              return kl_loss_on_tape(t, v, t.input(ls0));
          }) < 1e-3);
    CHECK(grad_max_rel_err(ls0, [&](Tape& t, Var v) {
              return kl_loss_on_tape(t, t.input(mu0), v);
          }) < 1e-3);
}

TEST_CASE("total loss arithmetic") {
    const LossWeights w{0.5, 0.1, 0.01};
    CHECK(total_loss(0.5, 0.2, 1.0, 3.0, w) == doctest::Approx(0.73).epsilon(1e-12));
    CHECK(total_loss(0.0, 0.0, 0.0, 0.0, w) == 0.0);
    CHECK(total_loss(0.4, 0.8, 2.0, 6.0, w) == doctest::Approx(2 * total_loss(0.2, 0.4, 1.0, 3.0, w)).epsilon(1e-12));
}

TEST_CASE("apply_patch: identity cases and locality") {
    RandomSource rng(45);
    const ImageTensor x = rng.uniform_tensor({16, 16, 3}, 0.2, 0.8);
    const ImageTensor patch({6, 6, 3}, 0.95);
    const TransformConfig t = identity_transform();

    RandomSource r0(1);
    const ImageTensor same = apply_patch(x, {}, patch, t, r0);
    for (size_t i = 0; i < x.data.size(); ++i) CHECK(same.data[i] == x.data[i]);

    const BBox box{0.5, 0.5, 0.4, 0.6};
    RandomSource r1(2);
    const ImageTensor out = apply_patch(x, {box}, patch, t, r1);
    // footprint: centered square of side 0.3 * 0.6 * 16 = 2.88 px
    int changed = 0;
    for (int y = 0; y < 16; ++y)
        for (int x2 = 0; x2 < 16; ++x2) {
            const bool inside = std::fabs(y + 0.5 - 8.0) <= 2.0 && std::fabs(x2 + 0.5 - 8.0) <= 2.0;
            for (int c = 0; c < 3; ++c) {
                if (out.at(y, x2, c) != x.at(y, x2, c)) {
                    ++changed;
                    CHECK(inside);
                }
            }
        }
    CHECK(changed > 0);
    for (double v : out.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("apply_patch gradients w.r.t. patch and image") {
    RandomSource rng(46);
    const ImageTensor x = rng.uniform_tensor({12, 12, 3}, 0.3, 0.7);
    const ImageTensor patch = rng.uniform_tensor({5, 5, 3}, 0.3, 0.7);
    TransformConfig t;
    t.noise_std = 0.005;
    const std::vector<BBox> boxes = {{0.45, 0.55, 0.5, 0.8}};
    RandomSource draw_rng(7);
    const PlacementDraw draw = draw_placement(boxes, t, 12, draw_rng);

    CHECK(grad_max_rel_err(patch, [&](Tape& tp, Var v) {
              Var out = apply_patch_on_tape(tp, tp.input(x), v, boxes, t, draw);
              return tp.mean(out);
          }) < 1e-3);
    CHECK(grad_max_rel_err(x, [&](Tape& tp, Var v) {
              Var out = apply_patch_on_tape(tp, v, tp.input(patch), boxes, t, draw);
              return tp.mean(tp.square(out));
          }) < 1e-3);
}

TEST_CASE("generate_patch: determinism, range, gradient through the chain") {
    RandomSource rng(47);
    AEConfig acfg;
    acfg.image_size = 16;
    acfg.downsample_factor = 4;
    acfg.latent_depth = 2;
    acfg.base_channels = 4;
    const AEParams ae = init_autoencoder(acfg, rng);

    DenoiserConfig dcfg;
    dcfg.latent_size = 4;
    dcfg.latent_depth = 2;
    dcfg.base_channels = 4;
    const NoiseSchedule sched = make_schedule(5, 1e-3, 0.05);
    const DenoiserParams diff = init_denoiser(dcfg, 5, rng);

    const LatentTensor zT = rng.normal_tensor({4, 4, 2});
    const ImageTensor p1 = generate_patch(ae, diff, sched, zT, 123);
    const ImageTensor p2 = generate_patch(ae, diff, sched, zT, 123);
    CHECK(p1.shape == std::vector<int>{16, 16, 3});
    for (size_t i = 0; i < p1.data.size(); ++i) CHECK(p1.data[i] == p2.data[i]);
    for (double v : p1.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    const auto noise = draw_chain_noise(sched, zT.shape, RandomSource(123));
    const double err = grad_max_rel_err(
        zT,
        [&](Tape& t, Var v) {
            const TapeParams dn = load_params(t, diff.net);
            const TapeParams dec = load_params(t, ae.decoder);
            Var z0 = sample_chain_on_tape(t, diff, dn, sched, v, noise);
            return t.sum(decode_on_tape(t, acfg, dec, z0));
        },
        1e-5, 3);
    CHECK(err < 1e-3);
}

TEST_CASE("optimize_patch: KL-dominated run pins (mu, sigma) at (0, 1)") {
    RandomSource rng(48);
    AEConfig acfg;
    acfg.image_size = 16;
    acfg.downsample_factor = 4;
    acfg.latent_depth = 2;
    acfg.base_channels = 4;
    const AEParams ae = init_autoencoder(acfg, rng);

    DenoiserConfig dcfg;
    dcfg.latent_size = 4;
    dcfg.latent_depth = 2;
    dcfg.base_channels = 4;
    const NoiseSchedule sched = make_schedule(8, 1e-3, 0.05);
    const DenoiserParams diff = init_denoiser(dcfg, 8, rng);

    GridConfig gcfg;
    gcfg.image_size = 16;
    gcfg.grid_size = 4;
    gcfg.base_channels = 8;
    const DetectorParams det = init_detector(gcfg, rng);

    std::vector<ImageTensor> images = {rng.uniform_tensor({16, 16, 3}, 0.0, 1.0)};
    std::vector<std::vector<BBox>> boxes = {{BBox{0.5, 0.5, 0.5, 0.8}}};

    LossWeights w{100.0, 0.0, 0.0};
    OptimizeConfig opt;
    opt.steps = 30;
    opt.batch_size = 2;
    opt.learning_rate = 0.05;
    opt.chain_stride = 2;
    RandomSource orng(49);
    const PatchResult res = optimize_patch(ae, diff, sched, det, images, boxes, w,
                                           identity_transform(), default_print_colors(), opt, orng);
    PatchLatentParams final{res.params.mu, res.params.log_sigma};
    CHECK(kl_loss(final) < 1e-3);
    REQUIRE(res.history.total.size() == 30);

    // same seed, same history
    RandomSource orng2(49);
    const PatchResult res2 = optimize_patch(ae, diff, sched, det, images, boxes, w,
                                            identity_transform(), default_print_colors(), opt, orng2);
    for (size_t i = 0; i < res.history.total.size(); ++i)
        CHECK(res.history.total[i] == res2.history.total[i]);
}

TEST_CASE("print color palette file round trip") {
    namespace fs = std::filesystem;
    const PrintColorSet def = default_print_colors();
    CHECK(def.colors.size() == 30);
    const auto path = (fs::temp_directory_path() / "ldp_palette.txt").string();
    save_print_colors(path, def);
    const PrintColorSet back = load_print_colors(path);
    REQUIRE(back.colors.size() == def.colors.size());
    for (size_t i = 0; i < def.colors.size(); ++i)
        for (int c = 0; c < 3; ++c)
            CHECK(back.colors[i][static_cast<size_t>(c)] ==
                  doctest::Approx(def.colors[i][static_cast<size_t>(c)]).epsilon(1e-6));
}
