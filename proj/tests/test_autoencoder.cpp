#include <doctest.h>

#include <filesystem>

#include "ldp/autoencoder.hpp"
#include "ldp/synth.hpp"
#include "support/gradcheck.hpp"

using namespace ldp;
using ldp::testing::grad_max_rel_err;

namespace {

AEConfig tiny_config() {
    AEConfig cfg;
    cfg.image_size = 16;
    cfg.downsample_factor = 4;
    cfg.latent_depth = 2;
    cfg.base_channels = 4;
    return cfg;
}

}  // namespace

TEST_CASE("encode shape law and determinism") {
    AEConfig cfg;  // 64 / 8 -> 8x8x8
    RandomSource rng(11);
    const AEParams params = init_autoencoder(cfg, rng);
    const ImageTensor x = rng.uniform_tensor({64, 64, 3}, 0.0, 1.0);
    const LatentTensor z = encode(params, x);
    CHECK(z.shape == std::vector<int>{8, 8, 8});
    const LatentTensor z2 = encode(params, x);
    for (size_t i = 0; i < z.data.size(); ++i) CHECK(z.data[i] == z2.data[i]);

    const ImageTensor bad = rng.uniform_tensor({32, 32, 3}, 0.0, 1.0);
    CHECK_THROWS_AS(encode(params, bad), std::invalid_argument);
}

TEST_CASE("decode stays in [0,1] and rejects bad shapes") {
    RandomSource rng(12);
    const AEConfig cfg = tiny_config();
    const AEParams params = init_autoencoder(cfg, rng);
    for (int trial = 0; trial < 100; ++trial) {
        const LatentTensor z = rng.normal_tensor({4, 4, 2});
        const ImageTensor img = decode(params, z);
        CHECK(img.shape == std::vector<int>{16, 16, 3});
        for (double v : img.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    CHECK_THROWS_AS(decode(params, rng.normal_tensor({4, 4, 3})), std::invalid_argument);
}

TEST_CASE("encode and decode pass finite-difference gradient checks") {
    RandomSource rng(13);
    const AEConfig cfg = tiny_config();
    const AEParams params = init_autoencoder(cfg, rng);

    const ImageTensor x = rng.uniform_tensor({16, 16, 3}, 0.1, 0.9);
    const double err_enc = grad_max_rel_err(
        x,
        [&](Tape& t, Var v) {
            const TapeParams enc = load_params(t, params.encoder);
            return t.sum(encode_on_tape(t, cfg, enc, v));
        },
        1e-5, 7);
    CHECK(err_enc < 1e-3);

    const LatentTensor z = rng.normal_tensor({4, 4, 2});
    const double err_dec = grad_max_rel_err(
        z,
        [&](Tape& t, Var v) {
            const TapeParams dec = load_params(t, params.decoder);
            return t.sum(decode_on_tape(t, cfg, dec, v));
        },
        1e-5, 3);
    CHECK(err_dec < 1e-3);
}

TEST_CASE("constant corpus is learned to near-zero error") {
    RandomSource rng(14);
    AEConfig cfg = tiny_config();
    cfg.epochs = 150;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 8;
    std::vector<ImageTensor> data(8, ImageTensor({16, 16, 3}, 0.4));
    const AEParams params = train_autoencoder(data, cfg, rng);

    const ImageTensor rec = decode(params, encode(params, data[0]));
    double mse = 0.0;
    for (size_t i = 0; i < rec.data.size(); ++i) {
        const double d = rec.data[i] - 0.4;
        mse += d * d;
    }
    mse /= static_cast<double>(rec.numel());
    CHECK(mse < 1e-4);
}

TEST_CASE("epoch loss moving average is non-increasing on the toy corpus") {
    RandomSource corpus_rng(15);
    AEConfig cfg;
    cfg.image_size = 32;
    cfg.downsample_factor = 4;
    cfg.latent_depth = 4;
    cfg.base_channels = 8;
    cfg.epochs = 16;
    cfg.learning_rate = 2e-3;
    const auto corpus = generate_toy_corpus(24, 32, corpus_rng);

    RandomSource rng(16);
    TrainLog log;
    train_autoencoder(corpus, cfg, rng, &log);
    REQUIRE(log.epoch_loss.size() == 16);

    auto window_mean = [&](size_t i) {
        double s = 0.0;
        for (size_t k = i; k < i + 10; ++k) s += log.epoch_loss[k];
        return s / 10.0;
    };
    for (size_t i = 0; i + 11 <= log.epoch_loss.size(); ++i)
        CHECK(window_mean(i) >= window_mean(i + 1) - 1e-9);
}

TEST_CASE("training is deterministic for a fixed seed") {
    RandomSource corpus_rng(17);
    const auto corpus = generate_toy_corpus(6, 16, corpus_rng);
    AEConfig cfg = tiny_config();
    cfg.epochs = 3;

    RandomSource r1(99), r2(99);
    const AEParams a = train_autoencoder(corpus, cfg, r1);
    const AEParams b = train_autoencoder(corpus, cfg, r2);
    REQUIRE(a.encoder.items.size() == b.encoder.items.size());
    for (size_t p = 0; p < a.encoder.items.size(); ++p)
        for (size_t i = 0; i < a.encoder.items[p].second.data.size(); ++i)
            CHECK(a.encoder.items[p].second.data[i] == b.encoder.items[p].second.data[i]);
    for (size_t p = 0; p < a.decoder.items.size(); ++p)
        for (size_t i = 0; i < a.decoder.items[p].second.data.size(); ++i)
            CHECK(a.decoder.items[p].second.data[i] == b.decoder.items[p].second.data[i]);
}

TEST_CASE("autoencoder artifact round trip") {
    namespace fs = std::filesystem;
    RandomSource rng(18);
    const AEConfig cfg = tiny_config();
    const AEParams params = init_autoencoder(cfg, rng);
    const fs::path path = fs::temp_directory_path() / "ldp_test_ae.ldp";
    save_autoencoder(path.string(), params);
    const AEParams back = load_autoencoder(path.string());
    CHECK(back.config.image_size == cfg.image_size);
    CHECK(back.config.downsample_factor == cfg.downsample_factor);
    CHECK(back.config.latent_depth == cfg.latent_depth);

    const LatentTensor z = rng.normal_tensor({4, 4, 2});
    const ImageTensor a = decode(params, z);
    const ImageTensor b = decode(back, z);
    for (size_t i = 0; i < a.data.size(); ++i)
        CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-5));
}

TEST_CASE("config validation rejects bad settings") {
    AEConfig cfg;
    cfg.downsample_factor = 3;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AEConfig{};
    cfg.image_size = 60;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AEConfig{};
    cfg.downsample_factor = 32;  // latent grid would be 2x2
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
