#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ldp/artifact.hpp"
#include "ldp/image_io.hpp"
#include "ldp/random.hpp"
#include "ldp/tensor.hpp"

using namespace ldp;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    fs::path d = fs::temp_directory_path() / (std::string("ldp_test_") + tag);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("tensor shape and indexing") {
    Tensor t({2, 3, 4});
    CHECK(t.numel() == 24);
    t.at(1, 2, 3) = 5.0;
    CHECK(t.data[23] == 5.0);
    CHECK(t.all_finite());
    t.at(0, 0, 0) = std::nan("");
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
}

TEST_CASE("random source: identical seed gives identical sequence") {
    RandomSource a(12345), b(12345);
    for (int i = 0; i < 10000; ++i) {
        CHECK(a.uniform() == b.uniform());
        if (i % 3 == 0) CHECK(a.normal() == b.normal());
    }
}

TEST_CASE("random source: child seeds are stable and distinct") {
    RandomSource root(7);
    RandomSource c0 = root.child(0);
    RandomSource c0b = root.child(0);
    RandomSource c1 = root.child(1);
    CHECK(c0.seed() == c0b.seed());
    CHECK(c0.seed() != c1.seed());
    CHECK(c0.uniform() == c0b.uniform());
}

TEST_CASE("random source: normal moments are sane") {
    RandomSource rng(99);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::fabs(mean) < 0.02);
    CHECK(std::fabs(var - 1.0) < 0.02);
}

TEST_CASE("artifact round-trip: zeros identity") {
    const auto dir = temp_dir("artifact_zeros");
    const std::string path = (dir / "z.ldp").string();
    NamedArray a{"z", {2, 2}, {0.f, 0.f, 0.f, 0.f}};
    save_artifact(path, "test", {a}, {{"note", "zeros"}});
    const Artifact back = load_artifact(path);
    CHECK(back.kind == "test");
    CHECK(back.meta.at("note") == "zeros");
    REQUIRE(back.arrays.size() == 1);
    CHECK(back.arrays[0].shape == std::vector<int>{2, 2});
    for (float v : back.arrays[0].data) CHECK(v == 0.f);
}

TEST_CASE("artifact round-trip: 1000 random floats are bitwise equal") {
    const auto dir = temp_dir("artifact_rand");
    const std::string path = (dir / "r.ldp").string();
    RandomSource rng(4242);
    NamedArray a;
    a.name = "vals";
    a.shape = {1000};
    for (int i = 0; i < 1000; ++i) a.data.push_back(static_cast<float>(rng.uniform(-50.0, 50.0)));
    save_artifact(path, "test", {a}, {});
    const Artifact back = load_artifact(path);
    REQUIRE(back.arrays[0].data.size() == 1000);
    for (int i = 0; i < 1000; ++i) {
        uint32_t want, got;
        std::memcpy(&want, &a.data[i], 4);
        std::memcpy(&got, &back.arrays[0].data[i], 4);
        CHECK(want == got);
    }
}

TEST_CASE("artifact round-trip property: random shapes, extreme finite values") {
    const auto dir = temp_dir("artifact_prop");
    RandomSource rng(555);
    for (int trial = 0; trial < 25; ++trial) {
        const std::string path = (dir / ("t" + std::to_string(trial) + ".ldp")).string();
        Artifact art;
        art.kind = "prop";
        const int narr = rng.uniform_int(1, 4);
        for (int k = 0; k < narr; ++k) {
            NamedArray a;
            a.name = "arr" + std::to_string(k);
            const int r = rng.uniform_int(1, 3);
            int64_t n = 1;
            for (int d = 0; d < r; ++d) {
                const int dim = rng.uniform_int(1, 7);
                a.shape.push_back(dim);
                n *= dim;
            }
            for (int64_t i = 0; i < n; ++i) {
                double v = 0.0;
                switch (rng.uniform_int(0, 4)) {
                    case 0: v = rng.normal() * 1e30; break;
                    case 1: v = rng.normal() * 1e-38; break;  // subnormal range
                    case 2: v = 0.0; break;
                    case 3: v = -rng.uniform(); break;
                    default: v = rng.normal(); break;
                }
                a.data.push_back(static_cast<float>(v));
            }
            art.arrays.push_back(std::move(a));
        }
        save_artifact(path, art);
        const Artifact back = load_artifact(path);
        REQUIRE(back.arrays.size() == art.arrays.size());
        for (size_t k = 0; k < art.arrays.size(); ++k) {
            CHECK(back.arrays[k].shape == art.arrays[k].shape);
            for (size_t i = 0; i < art.arrays[k].data.size(); ++i) {
                uint32_t want, got;
                std::memcpy(&want, &art.arrays[k].data[i], 4);
                std::memcpy(&got, &back.arrays[k].data[i], 4);
                CHECK(want == got);
            }
        }
    }
}

TEST_CASE("artifact save rejects non-finite values before writing") {
    const auto dir = temp_dir("artifact_nan");
    const std::string path = (dir / "bad.ldp").string();
    NamedArray a{"x", {1}, {std::numeric_limits<float>::infinity()}};
    CHECK_THROWS_AS(save_artifact(path, "test", {a}, {}), std::invalid_argument);
    CHECK_FALSE(fs::exists(path));
}

TEST_CASE("artifact load errors: bad magic and payload mismatch") {
    const auto dir = temp_dir("artifact_err");

    const std::string garbage = (dir / "garbage.ldp").string();
    {
        std::ofstream out(garbage, std::ios::binary);
        out << "NOTANLDPFILE.....";
    }
    CHECK_THROWS_WITH_AS(load_artifact(garbage), doctest::Contains("not an LDP artifact"),
                         std::runtime_error);

    // valid file truncated by 4 bytes -> payload shorter than header claims
    const std::string path = (dir / "trunc.ldp").string();
    NamedArray a{"x", {4}, {1.f, 2.f, 3.f, 4.f}};
    save_artifact(path, "test", {a}, {});
    std::ifstream in(path, std::ios::binary);
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const std::string trunc = (dir / "trunc2.ldp").string();
    {
        std::ofstream out(trunc, std::ios::binary);
        out.write(raw.data(), static_cast<std::streamsize>(raw.size() - 4));
    }
    CHECK_THROWS_WITH_AS(load_artifact(trunc), doctest::Contains("payload length mismatch"),
                         std::runtime_error);
}

TEST_CASE("load_image_dir: white image, bilinear oracle, ordering") {
    const auto dir = temp_dir("images");

    ImageTensor white({8, 8, 3}, 1.0);
    save_png((dir / "a.png").string(), white);

    // 16x16 checkerboard; downscale by 2 must equal the 2x2 box average
    ImageTensor checker({16, 16, 3});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) checker.at(y, x, c) = ((x + y) % 2 == 0) ? 1.0 : 0.0;
    save_png((dir / "c.png").string(), checker);

    ImageTensor gray({8, 8, 3}, 0.5);
    save_png((dir / "b.png").string(), gray);

    const auto images = load_image_dir(dir.string(), 8);
    REQUIRE(images.size() == 3);

    // lexicographic order: a, b, c
    for (double v : images[0].data) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
    for (double v : images[1].data) CHECK(v == doctest::Approx(128.0 / 255.0).epsilon(1e-9));

    const ImageTensor& small = images[2];
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c) {
                double ref = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) ref += checker.at(2 * y + dy, 2 * x + dx, c);
                ref /= 4.0;
                CHECK(small.at(y, x, c) == doctest::Approx(ref).epsilon(1e-6));
            }
}

TEST_CASE("load_image_dir: error paths") {
    const auto empty = temp_dir("images_empty");
    CHECK_THROWS_AS(load_image_dir(empty.string(), 8), std::runtime_error);

    const auto broken = temp_dir("images_broken");
    {
        std::ofstream out(broken / "fake.png", std::ios::binary);
        out << "this is not a png";
    }
    CHECK_THROWS_AS(load_image_dir(broken.string(), 8), std::runtime_error);

    // one good file among broken ones is enough
    ImageTensor ok({4, 4, 3}, 0.25);
    save_png((broken / "ok.png").string(), ok);
    const auto images = load_image_dir(broken.string(), 4);
    CHECK(images.size() == 1);
}

TEST_CASE("save_png quantizes to 8 bits") {
    const auto dir = temp_dir("png_roundtrip");
    RandomSource rng(31);
    ImageTensor img({5, 7, 3});
    for (double& v : img.data) v = rng.uniform();
    const std::string path = (dir / "q.png").string();
    save_png(path, img);
    const ImageTensor back = decode_image_file(path);
    REQUIRE(back.shape == img.shape);
    for (size_t i = 0; i < img.data.size(); ++i)
        CHECK(std::fabs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-9);
}
