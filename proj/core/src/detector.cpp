#include "ldp/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ldp/parallel.hpp"
#include "ldp/synth.hpp"

namespace ldp {

int GridConfig::down_stages() const {
    int ratio = image_size / grid_size, s = 0;
    while (ratio > 1) {
        ratio /= 2;
        ++s;
    }
    return s;
}

void GridConfig::validate() const {
    if (grid_size < 2) throw std::invalid_argument("detector: grid_size must be >= 2");
    if (classes.size() < 2) throw std::invalid_argument("detector: need at least 2 classes");
    if (person_class < 0 || person_class >= num_classes())
        throw std::invalid_argument("detector: person_class out of range");
    for (size_t i = 0; i < classes.size(); ++i)
        for (size_t j = i + 1; j < classes.size(); ++j)
            if (classes[i] == classes[j]) throw std::invalid_argument("detector: duplicate class label");
    if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0))
        throw std::invalid_argument("detector: confidence_threshold must be in (0,1)");
    const int ratio = image_size / grid_size;
    if (image_size <= 0 || grid_size * ratio != image_size || (ratio & (ratio - 1)) != 0)
        throw std::invalid_argument("detector: image_size / grid_size must be a power of two");
    if (epochs < 1 || batch_size < 1 || learning_rate <= 0.0 || base_channels < 1)
        throw std::invalid_argument("detector: bad training settings");
}

namespace {

int stage_channels(const GridConfig& cfg, int i) {
    return std::min(cfg.base_channels << i, 64);
}

void fill_rect(ImageTensor& img, double fx0, double fy0, double fx1, double fy1,
               const std::array<double, 3>& color) {
    const int n = img.dim(0);
    const int x0 = std::clamp(static_cast<int>(std::round(fx0 * n)), 0, n);
    const int x1 = std::clamp(static_cast<int>(std::round(fx1 * n)), 0, n);
    const int y0 = std::clamp(static_cast<int>(std::round(fy0 * n)), 0, n);
    const int y1 = std::clamp(static_cast<int>(std::round(fy1 * n)), 0, n);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[static_cast<size_t>(c)];
}

void fill_disc(ImageTensor& img, double fcx, double fcy, double fr,
               const std::array<double, 3>& color, double shade) {
    const int n = img.dim(0);
    const double cx = fcx * n, cy = fcy * n, r = fr * n;
    const int x0 = std::clamp(static_cast<int>(cx - r - 1), 0, n);
    const int x1 = std::clamp(static_cast<int>(cx + r + 2), 0, n);
    const int y0 = std::clamp(static_cast<int>(cy - r - 1), 0, n);
    const int y1 = std::clamp(static_cast<int>(cy + r + 2), 0, n);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            const double d2 = (dx * dx + dy * dy) / (r * r);
            if (d2 > 1.0) continue;
            const double k = 1.0 - shade * d2;
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = std::clamp(color[static_cast<size_t>(c)] * k, 0.0, 1.0);
        }
}

ImageTensor textured_background(int n, RandomSource& rng) {
    constexpr double kTau = 6.283185307179586;
    const double hue = rng.uniform();
    const auto c0 = hsv_to_rgb(hue, rng.uniform(0.05, 0.25), rng.uniform(0.3, 0.5));
    const auto c1 = hsv_to_rgb(hue + rng.uniform(-0.1, 0.1), rng.uniform(0.05, 0.3),
                               rng.uniform(0.55, 0.8));
    struct Wave {
        double fx, fy, phase;
    };
    std::vector<Wave> waves;
    for (int k = 0; k < 3; ++k)
        waves.push_back({rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5), rng.uniform(0.0, kTau)});

    ImageTensor img({n, n, 3});
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double v = 0.0;
            for (const Wave& w : waves)
                v += std::sin(kTau * (w.fx * x / n + w.fy * y / n) + w.phase);
            v = 0.5 + v / 6.0;
            for (int c = 0; c < 3; ++c) {
                const double col = c0[static_cast<size_t>(c)] + (c1[static_cast<size_t>(c)] - c0[static_cast<size_t>(c)]) * v;
                img.at(y, x, c) = std::clamp(col + rng.normal(0.0, 0.015), 0.0, 1.0);
            }
        }
    return img;
}

void draw_person(ImageTensor& img, const BBox& b, RandomSource& rng) {
    const auto clothes = hsv_to_rgb(rng.uniform(), rng.uniform(0.65, 0.95), rng.uniform(0.5, 0.9));
    const auto skin = hsv_to_rgb(rng.uniform(0.06, 0.11), rng.uniform(0.3, 0.5), rng.uniform(0.7, 0.95));
    const auto pants = hsv_to_rgb(rng.uniform(), rng.uniform(0.5, 0.9), rng.uniform(0.2, 0.5));

    const double x0 = b.x0(), y0 = b.y0(), w = b.w, h = b.h;
    // head, torso, two legs: an upright silhouette
    fill_disc(img, b.cx, y0 + 0.14 * h, 0.14 * h * 0.9, skin, 0.15);
    fill_rect(img, x0 + 0.12 * w, y0 + 0.26 * h, x0 + 0.88 * w, y0 + 0.62 * h, clothes);
    fill_rect(img, x0 + 0.16 * w, y0 + 0.62 * h, x0 + 0.46 * w, y0 + h, pants);
    fill_rect(img, x0 + 0.54 * w, y0 + 0.62 * h, x0 + 0.84 * w, y0 + h, pants);
}

void draw_ball(ImageTensor& img, const BBox& b, RandomSource& rng) {
    const auto color = hsv_to_rgb(rng.uniform(), rng.uniform(0.55, 0.95), rng.uniform(0.55, 0.95));
    fill_disc(img, b.cx, b.cy, std::min(b.w, b.h) / 2, color, 0.45);
}

void draw_box_shape(ImageTensor& img, const BBox& b, RandomSource& rng) {
    const auto fill = hsv_to_rgb(rng.uniform(), rng.uniform(0.5, 0.9), rng.uniform(0.45, 0.85));
    const std::array<double, 3> border = {fill[0] * 0.45, fill[1] * 0.45, fill[2] * 0.45};
    fill_rect(img, b.x0(), b.y0(), b.x1(), b.y1(), border);
    const double inset_x = 0.12 * b.w, inset_y = 0.12 * b.h;
    fill_rect(img, b.x0() + inset_x, b.y0() + inset_y, b.x1() - inset_x, b.y1() - inset_y, fill);
}

}  // namespace

std::vector<SynthScene> generate_synthetic_dataset(int n, const GridConfig& cfg, RandomSource& rng) {
    if (n < 1) throw std::invalid_argument("generate_synthetic_dataset: n must be >= 1");
    cfg.validate();

    std::vector<SynthScene> scenes;
    scenes.reserve(static_cast<size_t>(n));
    const int size = cfg.image_size;

    for (int s = 0; s < n; ++s) {
        SynthScene scene;
        scene.image = textured_background(size, rng);

        const int want = rng.uniform_int(1, 3);
        for (int k = 0; k < want; ++k) {
            for (int attempt = 0; attempt < 30; ++attempt) {
                const int cls = rng.uniform_int(0, cfg.num_classes() - 1);
                BBox b;
                if (cls == cfg.person_class) {
                    b.h = rng.uniform(0.35, 0.65);
                    b.w = b.h * rng.uniform(0.32, 0.45);
                } else if (cls % 2 == 1) {
                    b.w = b.h = rng.uniform(0.15, 0.3);
                } else {
                    b.w = rng.uniform(0.2, 0.4);
                    b.h = b.w * rng.uniform(0.5, 0.85);
                }
                b.cx = rng.uniform(b.w / 2 + 0.01, 1.0 - b.w / 2 - 0.01);
                b.cy = rng.uniform(b.h / 2 + 0.01, 1.0 - b.h / 2 - 0.01);

                bool clear = true;
                for (const auto& [other, _] : scene.objects)
                    if (iou(b, other) > 0.02) {
                        clear = false;
                        break;
                    }
                if (!clear) continue;

                if (cls == cfg.person_class)
                    draw_person(scene.image, b, rng);
                else if (cls % 2 == 1)
                    draw_ball(scene.image, b, rng);
                else
                    draw_box_shape(scene.image, b, rng);
                scene.objects.emplace_back(b, cls);
                break;
            }
        }
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

DetectorParams init_detector(const GridConfig& cfg, RandomSource& rng) {
    cfg.validate();
    DetectorParams p;
    p.config = cfg;
    int cin = 3;
    for (int i = 0; i < cfg.down_stages(); ++i) {
        const int cout = stage_channels(cfg, i);
        p.net.add("stage" + std::to_string(i) + ".w", conv_weight_init(rng, 3, 3, cin, cout));
        p.net.add("stage" + std::to_string(i) + ".b", Tensor({cout}));
        cin = cout;
    }
    p.net.add("hidden.w", conv_weight_init(rng, 3, 3, cin, cin));
    p.net.add("hidden.b", Tensor({cin}));
    p.net.add("head.w", conv_weight_init(rng, 1, 1, cin, 5 + cfg.num_classes()));
    p.net.add("head.b", Tensor({5 + cfg.num_classes()}));
    return p;
}

Var detector_raw_on_tape(Tape& tape, const GridConfig& cfg, const TapeParams& tp, Var image) {
    check_shape(tape.value(image), {cfg.image_size, cfg.image_size, 3}, "detector");
    Var h = image;
    for (int i = 0; i < cfg.down_stages(); ++i) {
        const std::string k = "stage" + std::to_string(i);
        h = tape.silu(tape.conv2d(h, tp.at(k + ".w"), tp.at(k + ".b"), 2, 1));
    }
    h = tape.silu(tape.conv2d(h, tp.at("hidden.w"), tp.at("hidden.b"), 1, 1));
    return tape.conv2d(h, tp.at("head.w"), tp.at("head.b"), 1, 0);
}

Var person_score_on_tape(Tape& tape, const GridConfig& cfg, const TapeParams& tp, Var image) {
    Var raw = detector_raw_on_tape(tape, cfg, tp, image);
    Var obj = tape.sigmoid(tape.slice_channels(raw, 4, 5));
    Var cls = tape.softmax_channels(tape.slice_channels(raw, 5, 5 + cfg.num_classes()));
    Var person = tape.slice_channels(cls, cfg.person_class, cfg.person_class + 1);
    return tape.reduce_max(tape.mul(obj, person));
}

std::vector<Detection> detect(const DetectorParams& params, const ImageTensor& image) {
    const GridConfig& cfg = params.config;
    Tape tape;
    const TapeParams tp = load_params(tape, params.net);
    Var raw_v = detector_raw_on_tape(tape, cfg, tp, tape.input_ref(&image));
    const Tensor& raw = tape.value(raw_v);
    const int s = cfg.grid_size, nc = cfg.num_classes();

    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<Detection> out;
    out.reserve(static_cast<size_t>(s) * s);
    for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c) {
            Detection d;
            d.box.cx = (c + sig(raw.at(r, c, 0))) / s;
            d.box.cy = (r + sig(raw.at(r, c, 1))) / s;
            d.box.w = sig(raw.at(r, c, 2));
            d.box.h = sig(raw.at(r, c, 3));
            d.obj = sig(raw.at(r, c, 4));
            double m = raw.at(r, c, 5);
            for (int k = 1; k < nc; ++k) m = std::max(m, raw.at(r, c, 5 + k));
            double sum = 0.0;
            d.cls.resize(static_cast<size_t>(nc));
            for (int k = 0; k < nc; ++k) {
                d.cls[static_cast<size_t>(k)] = std::exp(raw.at(r, c, 5 + k) - m);
                sum += d.cls[static_cast<size_t>(k)];
            }
            for (double& v : d.cls) v /= sum;
            out.push_back(std::move(d));
        }
    return out;
}

std::vector<Detection> detect_thresholded(const DetectorParams& params, const ImageTensor& image) {
    std::vector<Detection> out;
    for (Detection& d : detect(params, image)) {
        const double conf = d.obj * d.cls[static_cast<size_t>(params.config.person_class)];
        if (conf > params.config.confidence_threshold) out.push_back(std::move(d));
    }
    return out;
}

double max_person_score(const std::vector<Detection>& dets, int person_class) {
    double best = 0.0;
    for (const Detection& d : dets)
        best = std::max(best, d.obj * d.cls.at(static_cast<size_t>(person_class)));
    return best;
}

double detection_loss(const DetectorParams& params, const std::vector<ImageTensor>& batch) {
    if (batch.empty()) throw std::invalid_argument("detection_loss: empty batch");
    std::vector<double> scores(batch.size());
    parallel_for(static_cast<int>(batch.size()), [&](int i) {
        Tape tape;
        const TapeParams tp = load_params(tape, params.net);
        Var s = person_score_on_tape(tape, params.config, tp, tape.input_ref(&batch[static_cast<size_t>(i)]));
        scores[static_cast<size_t>(i)] = tape.value(s).data[0];
    });
    double sum = 0.0;
    for (double v : scores) sum += v;
    return sum / static_cast<double>(batch.size());
}

namespace {

// Targets and weights for one scene, YOLO-v1 style: the cell holding an
// object's center is responsible for its box, objectness and class.
struct SceneTargets {
    Tensor box_target, box_weight;  // {S,S,4}
    Tensor obj_target, obj_weight;  // {S,S,1}
    Tensor cls_target, cls_weight;  // {S,S,C}
};

SceneTargets make_targets(const SynthScene& scene, const GridConfig& cfg) {
    const int s = cfg.grid_size, nc = cfg.num_classes();
    SceneTargets t{Tensor({s, s, 4}), Tensor({s, s, 4}), Tensor({s, s, 1}), Tensor({s, s, 1}, 0.5),
                   Tensor({s, s, nc}), Tensor({s, s, nc})};
    for (const auto& [box, cls] : scene.objects) {
        const int col = std::clamp(static_cast<int>(box.cx * s), 0, s - 1);
        const int row = std::clamp(static_cast<int>(box.cy * s), 0, s - 1);
        t.box_target.at(row, col, 0) = box.cx * s - col;
        t.box_target.at(row, col, 1) = box.cy * s - row;
        t.box_target.at(row, col, 2) = box.w;
        t.box_target.at(row, col, 3) = box.h;
        for (int k = 0; k < 4; ++k) t.box_weight.at(row, col, k) = 5.0;
        t.obj_target.at(row, col, 0) = 1.0;
        t.obj_weight.at(row, col, 0) = 2.0;
        t.cls_target.at(row, col, cls) = 1.0;
        for (int k = 0; k < nc; ++k) t.cls_weight.at(row, col, k) = 1.0;
    }
    return t;
}

Var weighted_sq_sum(Tape& tape, Var pred, const Tensor& target, const Tensor& weight) {
    Var diff = tape.sub(pred, tape.input(target));
    return tape.sum(tape.mul(tape.square(diff), tape.input(weight)));
}

}  // namespace

DetectorParams train_detector(const std::vector<SynthScene>& scenes, const GridConfig& cfg,
                              RandomSource& rng, TrainLog* log, bool quiet) {
    cfg.validate();
    if (scenes.empty()) throw std::invalid_argument("train_detector: no scenes");

    DetectorParams params = init_detector(cfg, rng);
    AdamOptimizer adam(cfg.learning_rate, 0.9, 0.999);

    std::vector<SceneTargets> targets;
    targets.reserve(scenes.size());
    for (const SynthScene& sc : scenes) {
        check_shape(sc.image, {cfg.image_size, cfg.image_size, 3}, "train_detector");
        targets.push_back(make_targets(sc, cfg));
    }

    std::vector<int> order(scenes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

        double epoch_loss = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const int count = static_cast<int>(
                std::min(order.size() - start, static_cast<size_t>(cfg.batch_size)));
            std::vector<double> item_loss(static_cast<size_t>(count));
            std::vector<std::vector<Tensor>> item_grads(static_cast<size_t>(count));

            parallel_for(count, [&](int i) {
                const int idx = order[start + static_cast<size_t>(i)];
                Tape tape;
                const TapeParams tp = load_params(tape, params.net);
                Var raw = detector_raw_on_tape(tape, cfg, tp, tape.input_ref(&scenes[static_cast<size_t>(idx)].image));
                Var box = tape.sigmoid(tape.slice_channels(raw, 0, 4));
                Var obj = tape.sigmoid(tape.slice_channels(raw, 4, 5));
                Var cls = tape.softmax_channels(tape.slice_channels(raw, 5, 5 + cfg.num_classes()));
                const SceneTargets& t = targets[static_cast<size_t>(idx)];
                Var loss = tape.add(weighted_sq_sum(tape, box, t.box_target, t.box_weight),
                                    tape.add(weighted_sq_sum(tape, obj, t.obj_target, t.obj_weight),
                                             weighted_sq_sum(tape, cls, t.cls_target, t.cls_weight)));
                item_loss[static_cast<size_t>(i)] = tape.value(loss).data[0];
                tape.backward(loss);
                item_grads[static_cast<size_t>(i)] = collect_grads(tape, tp);
            });

            std::vector<Tensor> grads;
            for (int i = 0; i < count; ++i) {
                accumulate(grads, item_grads[static_cast<size_t>(i)], 1.0 / count);
                epoch_loss += item_loss[static_cast<size_t>(i)];
            }
            adam.step(params.net, grads);
        }
        epoch_loss /= static_cast<double>(scenes.size());
        if (!std::isfinite(epoch_loss))
            throw std::runtime_error("train_detector: loss diverged at epoch " + std::to_string(epoch));
        if (log) log->epoch_loss.push_back(epoch_loss);
        if (!quiet)
            std::fprintf(stderr, "[detector] epoch %d/%d loss %.6f\n", epoch + 1, cfg.epochs, epoch_loss);
    }
    return params;
}

void save_detector(const std::string& path, const DetectorParams& params,
                   const std::map<std::string, std::string>& extra_meta) {
    std::vector<NamedArray> arrays;
    append_params(arrays, "net.", params.net);
    std::map<std::string, std::string> meta = extra_meta;
    meta["image_size"] = std::to_string(params.config.image_size);
    meta["grid_size"] = std::to_string(params.config.grid_size);
    meta["person_class"] = std::to_string(params.config.person_class);
    meta["base_channels"] = std::to_string(params.config.base_channels);
    meta["confidence_threshold"] = std::to_string(params.config.confidence_threshold);
    std::string joined;
    for (size_t i = 0; i < params.config.classes.size(); ++i)
        joined += (i ? "," : "") + params.config.classes[i];
    meta["classes"] = joined;
    save_artifact(path, "detector", arrays, meta);
}

DetectorParams load_detector(const std::string& path) {
    const Artifact art = load_artifact(path);
    if (art.kind != "detector")
        throw std::runtime_error("'" + path + "' is a '" + art.kind + "' artifact, expected 'detector'");
    DetectorParams p;
    p.config.image_size = std::stoi(art.meta.at("image_size"));
    p.config.grid_size = std::stoi(art.meta.at("grid_size"));
    p.config.person_class = std::stoi(art.meta.at("person_class"));
    p.config.base_channels = std::stoi(art.meta.at("base_channels"));
    p.config.confidence_threshold = std::stod(art.meta.at("confidence_threshold"));
    p.config.classes.clear();
    std::string joined = art.meta.at("classes");
    size_t pos = 0;
    while (true) {
        const size_t comma = joined.find(',', pos);
        p.config.classes.push_back(joined.substr(pos, comma - pos));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    p.net = extract_params(art, "net.");
    return p;
}

}  // namespace ldp
