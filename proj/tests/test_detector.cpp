#include <doctest.h>

#include <filesystem>
#include <map>

#include "ldp/detector.hpp"
#include "support/gradcheck.hpp"

using namespace ldp;
using ldp::testing::grad_max_rel_err;

namespace {

GridConfig small_config() {
    GridConfig cfg;
    cfg.image_size = 16;
    cfg.grid_size = 4;
    cfg.base_channels = 8;
    return cfg;
}

}  // namespace

TEST_CASE("synthetic dataset is deterministic and respects box invariants") {
    GridConfig cfg;
    RandomSource r1(21), r2(21);
    const auto a = generate_synthetic_dataset(3, cfg, r1);
    const auto b = generate_synthetic_dataset(3, cfg, r2);
    REQUIRE(a.size() == 3);
    for (size_t s = 0; s < a.size(); ++s) {
        REQUIRE(a[s].objects.size() == b[s].objects.size());
        for (size_t i = 0; i < a[s].image.data.size(); ++i)
            CHECK(a[s].image.data[i] == b[s].image.data[i]);
        for (size_t i = 0; i < a[s].objects.size(); ++i) {
            CHECK(a[s].objects[i].first.valid());
            CHECK(a[s].objects[i].second >= 0);
            CHECK(a[s].objects[i].second < cfg.num_classes());
            CHECK(a[s].objects[i].first.cx == b[s].objects[i].first.cx);
        }
        for (double v : a[s].image.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("class histogram covers every class") {
    GridConfig cfg;
    RandomSource rng(22);
    const auto scenes = generate_synthetic_dataset(1000, cfg, rng);
    std::map<int, int> histogram;
    int total = 0;
    for (const auto& s : scenes)
        for (const auto& [_, cls] : s.objects) {
            ++histogram[cls];
            ++total;
        }
    REQUIRE(total > 0);
    for (int c = 0; c < cfg.num_classes(); ++c)
        CHECK(static_cast<double>(histogram[c]) / total >= 0.10);
}

TEST_CASE("detect emits one candidate per cell with valid ranges") {
    const GridConfig cfg = small_config();
    RandomSource rng(23);
    const DetectorParams params = init_detector(cfg, rng);
    const ImageTensor x = rng.uniform_tensor({16, 16, 3}, 0.0, 1.0);
    const auto dets = detect(params, x);
    REQUIRE(static_cast<int>(dets.size()) == cfg.grid_size * cfg.grid_size);
    for (const Detection& d : dets) {
        CHECK(d.obj >= 0.0);
        CHECK(d.obj <= 1.0);
        CHECK(d.box.valid());
        double s = 0.0;
        for (double c : d.cls) {
            CHECK(c >= 0.0);
            CHECK(c <= 1.0);
            s += c;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK_THROWS_AS(detect(params, rng.uniform_tensor({8, 8, 3}, 0.0, 1.0)), std::invalid_argument);
}

TEST_CASE("detection loss: enumerated example and batch mean") {
    // candidate products {0.9*0.8, 0.5*0.99} -> max 0.72
    std::vector<Detection> image_a;
    image_a.push_back({BBox{0.5, 0.5, 0.2, 0.2}, 0.9, {0.8, 0.2}});
    image_a.push_back({BBox{0.3, 0.3, 0.2, 0.2}, 0.5, {0.99, 0.01}});
    CHECK(max_person_score(image_a, 0) == doctest::Approx(0.72).epsilon(1e-12));

    std::vector<Detection> image_b;
    image_b.push_back({BBox{0.5, 0.5, 0.2, 0.2}, 1.0, {0.5, 0.5}});
    const double mean = (max_person_score(image_a, 0) + max_person_score(image_b, 0)) / 2.0;
    CHECK(mean == doctest::Approx(0.61).epsilon(1e-12));
}

TEST_CASE("detection loss is within [0,1] and scales linearly in person probability") {
    const GridConfig cfg = small_config();
    RandomSource rng(24);
    const DetectorParams params = init_detector(cfg, rng);
    std::vector<ImageTensor> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(rng.uniform_tensor({16, 16, 3}, 0.0, 1.0));
    const double loss = detection_loss(params, batch);
    CHECK(loss >= 0.0);
    CHECK(loss <= 1.0);
    CHECK_THROWS_AS(detection_loss(params, {}), std::invalid_argument);

    // scaling every candidate's person probability by lambda scales the max
    RandomSource drng(25);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Detection> dets;
        const int n = drng.uniform_int(1, 6);
        for (int i = 0; i < n; ++i)
            dets.push_back({BBox{0.5, 0.5, 0.3, 0.3}, drng.uniform(), {drng.uniform(), drng.uniform()}});
        const double lambda = drng.uniform(0.1, 0.9);
        std::vector<Detection> scaled = dets;
        for (Detection& d : scaled) d.cls[0] *= lambda;
        CHECK(max_person_score(scaled, 0) ==
              doctest::Approx(lambda * max_person_score(dets, 0)).epsilon(1e-12));
    }
}

TEST_CASE("detection loss gradient w.r.t. input pixels at a unique argmax") {
    const GridConfig cfg = small_config();
    RandomSource rng(26);
    const DetectorParams params = init_detector(cfg, rng);
    const ImageTensor x = rng.uniform_tensor({16, 16, 3}, 0.1, 0.9);

    // verify the argmax is unique before checking
    Tape probe;
    const TapeParams tpp = load_params(probe, params.net);
    Var raw = detector_raw_on_tape(probe, cfg, tpp, probe.input(x));
    Var obj = probe.sigmoid(probe.slice_channels(raw, 4, 5));
    Var cls = probe.softmax_channels(probe.slice_channels(raw, 5, 5 + cfg.num_classes()));
    Var prod = probe.mul(obj, probe.slice_channels(cls, 0, 1));
    const Tensor& pv = probe.value(prod);
    int argmax = 0;
    for (size_t i = 1; i < pv.data.size(); ++i)
        if (pv.data[i] > pv.data[static_cast<size_t>(argmax)]) argmax = static_cast<int>(i);
    int near_ties = 0;
    for (size_t i = 0; i < pv.data.size(); ++i)
        if (static_cast<int>(i) != argmax &&
            pv.data[static_cast<size_t>(argmax)] - pv.data[i] < 1e-7)
            ++near_ties;
    REQUIRE(near_ties == 0);

    const double err = grad_max_rel_err(
        x,
        [&](Tape& t, Var v) {
            const TapeParams tp = load_params(t, params.net);
            return person_score_on_tape(t, cfg, tp, v);
        },
        1e-5, 11);
    CHECK(err < 1e-3);
}

TEST_CASE("training reduces the loss and is seed-deterministic") {
    GridConfig cfg = small_config();
    cfg.epochs = 60;
    cfg.batch_size = 4;
    cfg.learning_rate = 3e-3;
    RandomSource scene_rng(27);
    const auto scenes = generate_synthetic_dataset(24, cfg, scene_rng);

    RandomSource r1(28), r2(28);
    TrainLog log;
    const DetectorParams a = train_detector(scenes, cfg, r1, &log);
    const DetectorParams b = train_detector(scenes, cfg, r2);

    REQUIRE(log.epoch_loss.size() == 60);
    auto mean10 = [&](size_t i) {
        double m = 0.0;
        for (size_t k = i; k < i + 10; ++k) m += log.epoch_loss[k];
        return m / 10.0;
    };
    CHECK(mean10(log.epoch_loss.size() - 10) <= 0.5 * mean10(0));

    for (size_t p = 0; p < a.net.items.size(); ++p)
        for (size_t i = 0; i < a.net.items[p].second.data.size(); ++i)
            CHECK(a.net.items[p].second.data[i] == b.net.items[p].second.data[i]);
}

TEST_CASE("detector artifact round trip preserves outputs") {
    namespace fs = std::filesystem;
    const GridConfig cfg = small_config();
    RandomSource rng(29);
    const DetectorParams params = init_detector(cfg, rng);
    const auto path = (fs::temp_directory_path() / "ldp_test_det.ldp").string();
    save_detector(path, params);
    const DetectorParams back = load_detector(path);
    CHECK(back.config.classes == cfg.classes);
    CHECK(back.config.grid_size == cfg.grid_size);

    const ImageTensor x = rng.uniform_tensor({16, 16, 3}, 0.0, 1.0);
    const auto d1 = detect(params, x);
    const auto d2 = detect(back, x);
    REQUIRE(d1.size() == d2.size());
    for (size_t i = 0; i < d1.size(); ++i)
        CHECK(d1[i].obj == doctest::Approx(d2[i].obj).epsilon(1e-5));
}

TEST_CASE("grid config validation") {
    GridConfig cfg;
    cfg.grid_size = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = GridConfig{};
    cfg.person_class = 5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = GridConfig{};
    cfg.classes = {"person", "person"};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = GridConfig{};
    cfg.image_size = 60;  // 60/8 not a power of two
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = GridConfig{};
    cfg.confidence_threshold = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
