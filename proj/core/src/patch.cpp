#include "ldp/patch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "ldp/parallel.hpp"

namespace ldp {

void LossWeights::validate() const {
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
        throw std::invalid_argument("loss weights must be non-negative");
}

void TransformConfig::validate() const {
    if (!(patch_scale > 0.0 && patch_scale <= 2.0))
        throw std::invalid_argument("transform: patch_scale must be in (0,2]");
    if (rotation_deg < 0.0 || rotation_deg >= 90.0)
        throw std::invalid_argument("transform: rotation_deg must be in [0,90)");
    if (scale_jitter < 0.0 || scale_jitter >= 1.0)
        throw std::invalid_argument("transform: scale_jitter must be in [0,1)");
    if (brightness < 0.0 || brightness >= 1.0)
        throw std::invalid_argument("transform: brightness must be in [0,1)");
    if (!(contrast_min > 0.0 && contrast_min <= contrast_max))
        throw std::invalid_argument("transform: need 0 < contrast_min <= contrast_max");
    if (noise_std < 0.0) throw std::invalid_argument("transform: noise_std must be >= 0");
}

void OptimizeConfig::validate() const {
    if (steps < 1 || batch_size < 1 || learning_rate <= 0.0 || chain_stride < 1)
        throw std::invalid_argument("optimize_patch: bad optimizer settings");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw std::invalid_argument("optimize_patch: bad Adam moment decays");
}

PrintColorSet default_print_colors() {
    PrintColorSet set;
    for (double r : {0.1, 0.5, 0.9})
        for (double g : {0.1, 0.5, 0.9})
            for (double b : {0.1, 0.5, 0.9}) set.colors.push_back({r, g, b});
    set.colors.push_back({0.0, 0.0, 0.0});
    set.colors.push_back({0.25, 0.25, 0.25});
    set.colors.push_back({1.0, 1.0, 1.0});
    return set;
}

PrintColorSet load_print_colors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open color palette '" + path + "'");
    PrintColorSet set;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        double r, g, b;
        if (!(ls >> r >> g >> b))
            throw std::runtime_error("bad palette line in '" + path + "': " + line);
        if (r < 0 || r > 1 || g < 0 || g > 1 || b < 0 || b > 1)
            throw std::runtime_error("palette component out of [0,1] in '" + path + "'");
        set.colors.push_back({r, g, b});
    }
    if (set.colors.empty()) throw std::runtime_error("palette '" + path + "' has no colors");
    return set;
}

void save_print_colors(const std::string& path, const PrintColorSet& colors) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write color palette '" + path + "'");
    char buf[96];
    for (const auto& c : colors.colors) {
        std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f\n", c[0], c[1], c[2]);
        out << buf;
    }
}

LatentTensor reparameterize(const PatchLatentParams& p, const LatentTensor& eps) {
    if (!p.mu.same_shape(p.log_sigma) || !p.mu.same_shape(eps))
        throw std::invalid_argument("reparameterize: shape mismatch");
    LatentTensor z = p.mu;
    for (size_t i = 0; i < z.data.size(); ++i)
        z.data[i] += eps.data[i] * std::exp(p.log_sigma.data[i]);
    return z;
}

Var reparameterize_on_tape(Tape& tape, Var mu, Var log_sigma, const LatentTensor& eps) {
    if (!tape.value(mu).same_shape(eps)) throw std::invalid_argument("reparameterize: shape mismatch");
    Var sigma = tape.exp(log_sigma);
    return tape.add(mu, tape.mul(sigma, tape.input(eps)));
}

ImageTensor generate_patch(const AEParams& ae, const DenoiserParams& diff,
                           const NoiseSchedule& sched, const LatentTensor& zT,
                           uint64_t chain_noise_seed) {
    Tape tape;
    const TapeParams dn = load_params(tape, diff.net);
    const TapeParams dec = load_params(tape, ae.decoder);
    const std::vector<Tensor> noise =
        draw_chain_noise(sched, zT.shape, RandomSource(chain_noise_seed));
    Var z0 = sample_chain_on_tape(tape, diff, dn, sched, tape.input(zT), noise);
    return tape.value(decode_on_tape(tape, ae.config, dec, z0));
}

namespace {
constexpr double kTvDelta = 1e-8;
}

double tv_loss(const ImageTensor& patch) {
    if (patch.rank() != 3 || patch.dim(0) < 2 || patch.dim(1) < 2)
        throw std::invalid_argument("tv_loss: patch must be at least 2x2");
    const int h = patch.dim(0), w = patch.dim(1), c = patch.dim(2);
    double total = 0.0;
    for (int k = 0; k < c; ++k)
        for (int i = 0; i + 1 < h; ++i)
            for (int j = 0; j + 1 < w; ++j) {
                const double dy = patch.at(i + 1, j, k) - patch.at(i, j, k);
                const double dx = patch.at(i, j + 1, k) - patch.at(i, j, k);
                total += std::sqrt(dy * dy + dx * dx + kTvDelta);
            }
    return total;
}

Var tv_loss_on_tape(Tape& tape, Var patch) {
    const Tensor& p = tape.value(patch);
    if (p.rank() != 3 || p.dim(0) < 2 || p.dim(1) < 2)
        throw std::invalid_argument("tv_loss: patch must be at least 2x2");
    const int h = p.dim(0), w = p.dim(1), c = p.dim(2);
    Tensor out({1});
    out.data[0] = tv_loss(p);
    const int parent = patch.idx;
    return tape.push_node(std::move(out), [parent, h, w, c](Tape& t, int self) {
        const double g = t.grad_buffer(self).data[0];
        const Tensor& p = t.node_value(parent);
        Tensor& gp = t.grad_buffer(parent);
        for (int k = 0; k < c; ++k)
            for (int i = 0; i + 1 < h; ++i)
                for (int j = 0; j + 1 < w; ++j) {
                    const double dy = p.at(i + 1, j, k) - p.at(i, j, k);
                    const double dx = p.at(i, j + 1, k) - p.at(i, j, k);
                    const double v = std::sqrt(dy * dy + dx * dx + kTvDelta);
                    const double s = g / v;
                    gp.at(i + 1, j, k) += s * dy;
                    gp.at(i, j + 1, k) += s * dx;
                    gp.at(i, j, k) -= s * (dy + dx);
                }
    });
}

double nps_loss(const ImageTensor& patch, const PrintColorSet& colors) {
    if (colors.colors.empty()) throw std::invalid_argument("nps_loss: empty color set");
    if (patch.rank() != 3 || patch.dim(2) != 3)
        throw std::invalid_argument("nps_loss: patch must be HxWx3");
    const int h = patch.dim(0), w = patch.dim(1);
    double total = 0.0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double best = 1e300;
            for (const auto& c : colors.colors) {
                const double d0 = patch.at(i, j, 0) - c[0];
                const double d1 = patch.at(i, j, 1) - c[1];
                const double d2 = patch.at(i, j, 2) - c[2];
                best = std::min(best, d0 * d0 + d1 * d1 + d2 * d2);
            }
            total += std::sqrt(best);
        }
    return total;
}

Var nps_loss_on_tape(Tape& tape, Var patch, const PrintColorSet& colors) {
    if (colors.colors.empty()) throw std::invalid_argument("nps_loss: empty color set");
    const Tensor& p = tape.value(patch);
    if (p.rank() != 3 || p.dim(2) != 3) throw std::invalid_argument("nps_loss: patch must be HxWx3");
    Tensor out({1});
    out.data[0] = nps_loss(p, colors);
    const int parent = patch.idx;
    const PrintColorSet palette = colors;
    return tape.push_node(std::move(out), [parent, palette](Tape& t, int self) {
        const double g = t.grad_buffer(self).data[0];
        const Tensor& p = t.node_value(parent);
        Tensor& gp = t.grad_buffer(parent);
        const int h = p.dim(0), w = p.dim(1);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double best = 1e300;
                size_t arg = 0;
                for (size_t k = 0; k < palette.colors.size(); ++k) {
                    const auto& c = palette.colors[k];
                    const double d0 = p.at(i, j, 0) - c[0];
                    const double d1 = p.at(i, j, 1) - c[1];
                    const double d2 = p.at(i, j, 2) - c[2];
                    const double d = d0 * d0 + d1 * d1 + d2 * d2;
                    if (d < best) {
                        best = d;
                        arg = k;
                    }
                }
                const double dist = std::sqrt(best);
                if (dist <= 0.0) continue;  // pixel exactly on a palette color
                const auto& c = palette.colors[arg];
                for (int ch = 0; ch < 3; ++ch)
                    gp.at(i, j, ch) += g * (p.at(i, j, ch) - c[static_cast<size_t>(ch)]) / dist;
            }
    });
}

double kl_loss(const PatchLatentParams& p) {
    if (!p.mu.same_shape(p.log_sigma)) throw std::invalid_argument("kl_loss: shape mismatch");
    double total = 0.0;
    for (size_t i = 0; i < p.mu.data.size(); ++i) {
        const double mu = p.mu.data[i];
        const double ls = p.log_sigma.data[i];
        total += 0.5 * (mu * mu + std::exp(2.0 * ls) - 2.0 * ls - 1.0);
    }
    return total / static_cast<double>(p.mu.numel());
}

Var kl_loss_on_tape(Tape& tape, Var mu, Var log_sigma) {
    Var sigma2 = tape.exp(tape.scale(log_sigma, 2.0));
    Var term = tape.add(tape.add(tape.square(mu), sigma2),
                        tape.add_const(tape.scale(log_sigma, -2.0), -1.0));
    return tape.scale(tape.mean(term), 0.5);
}

double total_loss(double l_det, double l_kl, double l_tv, double l_nps, const LossWeights& w) {
    return l_det + w.alpha * l_kl + w.beta * l_tv + w.gamma * l_nps;
}

PlacementDraw draw_placement(const std::vector<BBox>& boxes, const TransformConfig& t,
                             int image_size, RandomSource& rng) {
    constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
    PlacementDraw draw;
    for (size_t i = 0; i < boxes.size(); ++i)
        draw.boxes.push_back({rng.uniform(-t.rotation_deg, t.rotation_deg) * kDegToRad,
                              rng.uniform(1.0 - t.scale_jitter, 1.0 + t.scale_jitter),
                              rng.uniform(t.contrast_min, t.contrast_max),
                              rng.uniform(-t.brightness, t.brightness)});
    draw.pixel_noise = Tensor({image_size, image_size, 3});
    if (t.noise_std > 0.0)
        for (double& v : draw.pixel_noise.data) v = rng.normal(0.0, t.noise_std);
    return draw;
}

namespace {

// Composited-pixel bookkeeping so forward and backward agree exactly.
struct CompositeMap {
    int image_size = 0;
    int patch_size = 0;
    std::vector<int> owner;      // HW, -1 background
    std::vector<double> src_y;   // patch coords of owned pixels
    std::vector<double> src_x;
    std::vector<double> contrast;   // per owned pixel
    std::vector<double> addend;     // brightness per owned pixel
    std::vector<uint8_t> in_range;  // HW3: pre-clamp value strictly inside (0,1)
};

double bilinear_at(const Tensor& p, double fy, double fx, int ch) {
    const int y0 = static_cast<int>(fy);
    const int x0 = static_cast<int>(fx);
    const int y1 = std::min(y0 + 1, p.dim(0) - 1);
    const int x1 = std::min(x0 + 1, p.dim(1) - 1);
    const double wy = fy - y0, wx = fx - x0;
    return (p.at(y0, x0, ch) * (1 - wx) + p.at(y0, x1, ch) * wx) * (1 - wy) +
           (p.at(y1, x0, ch) * (1 - wx) + p.at(y1, x1, ch) * wx) * wy;
}

CompositeMap build_map(const Tensor& image, const Tensor& patch, const std::vector<BBox>& boxes,
                       const TransformConfig& t, const PlacementDraw& draw) {
    const int n = image.dim(0);
    const int ps = patch.dim(0);
    CompositeMap map;
    map.image_size = n;
    map.patch_size = ps;
    map.owner.assign(static_cast<size_t>(n) * n, -1);
    map.src_y.assign(map.owner.size(), 0.0);
    map.src_x.assign(map.owner.size(), 0.0);
    map.contrast.assign(map.owner.size(), 1.0);
    map.addend.assign(map.owner.size(), 0.0);

    for (size_t b = 0; b < boxes.size(); ++b) {
        const BBox& box = boxes[b];
        const auto& pb = draw.boxes[b];
        const double side = t.patch_scale * box.h * n * pb.scale_mult;
        if (side < 1.0) {
            std::fprintf(stderr, "warning: patch footprint below one pixel, skipping box\n");
            continue;
        }
        const double cx = box.cx * n, cy = box.cy * n;
        const double cosr = std::cos(pb.angle_rad), sinr = std::sin(pb.angle_rad);
        const double reach = side * 0.7071067811865476 * 1.01 + 1.0;
        const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
        const int y1 = std::min(n, static_cast<int>(std::ceil(cy + reach)));
        const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
        const int x1 = std::min(n, static_cast<int>(std::ceil(cx + reach)));

        int written = 0;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const double u = cosr * dx + sinr * dy;    // rotate into patch frame
                const double v = -sinr * dx + cosr * dy;
                const double px = (u / side + 0.5) * ps - 0.5;
                const double py = (v / side + 0.5) * ps - 0.5;
                if (px < 0.0 || px > ps - 1.0 || py < 0.0 || py > ps - 1.0) continue;
                const size_t idx = static_cast<size_t>(y) * n + x;
                map.owner[idx] = static_cast<int>(b);
                map.src_y[idx] = py;
                map.src_x[idx] = px;
                map.contrast[idx] = pb.contrast;
                map.addend[idx] = pb.brightness;
                ++written;
            }
        if (written == 0)
            std::fprintf(stderr, "warning: patch footprint outside image, skipping box\n");
    }
    return map;
}

Tensor composite_forward(const Tensor& image, const Tensor& patch, const PlacementDraw& draw,
                         CompositeMap& map) {
    const int n = map.image_size;
    Tensor out = image;
    map.in_range.assign(static_cast<size_t>(n) * n * 3, 0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const size_t idx = static_cast<size_t>(y) * n + x;
            if (map.owner[idx] < 0) continue;
            for (int c = 0; c < 3; ++c) {
                const double sample = bilinear_at(patch, map.src_y[idx], map.src_x[idx], c);
                const double val = map.contrast[idx] * sample + map.addend[idx] +
                                   draw.pixel_noise.at(y, x, c);
                out.at(y, x, c) = std::clamp(val, 0.0, 1.0);
                if (val > 0.0 && val < 1.0) map.in_range[idx * 3 + static_cast<size_t>(c)] = 1;
            }
        }
    return out;
}

void validate_composite_inputs(const Tensor& image, const Tensor& patch,
                               const std::vector<BBox>& boxes, const PlacementDraw& draw) {
    if (image.rank() != 3 || image.dim(2) != 3 || image.dim(0) != image.dim(1))
        throw std::invalid_argument("apply_patch: image must be square HxWx3");
    if (patch.rank() != 3 || patch.dim(2) != 3 || patch.dim(0) != patch.dim(1) || patch.dim(0) < 2)
        throw std::invalid_argument("apply_patch: patch must be square and at least 2x2");
    if (draw.boxes.size() != boxes.size())
        throw std::invalid_argument("apply_patch: placement draw does not match box count");
    for (const BBox& b : boxes)
        if (!b.valid()) throw std::invalid_argument("apply_patch: invalid box");
    check_shape(draw.pixel_noise, {image.dim(0), image.dim(1), 3}, "apply_patch noise");
}

}  // namespace

ImageTensor apply_patch(const ImageTensor& image, const std::vector<BBox>& boxes,
                        const ImageTensor& patch, const TransformConfig& t, RandomSource& rng) {
    t.validate();
    const PlacementDraw draw = draw_placement(boxes, t, image.dim(0), rng);
    validate_composite_inputs(image, patch, boxes, draw);
    CompositeMap map = build_map(image, patch, boxes, t, draw);
    return composite_forward(image, patch, draw, map);
}

Var apply_patch_on_tape(Tape& tape, Var image, Var patch, const std::vector<BBox>& boxes,
                        const TransformConfig& t, const PlacementDraw& draw) {
    t.validate();
    const Tensor& img = tape.value(image);
    const Tensor& p = tape.value(patch);
    validate_composite_inputs(img, p, boxes, draw);

    auto map = std::make_shared<CompositeMap>(build_map(img, p, boxes, t, draw));
    Tensor out = composite_forward(img, p, draw, *map);

    const int px_parent = patch.idx, img_parent = image.idx;
    return tape.push_node(std::move(out), [px_parent, img_parent, map](Tape& tp, int self) {
        const Tensor& g = tp.grad_buffer(self);
        Tensor& gp = tp.grad_buffer(px_parent);
        Tensor& gi = tp.grad_buffer(img_parent);
        const int n = map->image_size;
        const int ps = map->patch_size;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const size_t idx = static_cast<size_t>(y) * n + x;
                if (map->owner[idx] < 0) {
                    for (int c = 0; c < 3; ++c) gi.at(y, x, c) += g.at(y, x, c);
                    continue;
                }
                const double fy = map->src_y[idx], fx = map->src_x[idx];
                const int y0 = static_cast<int>(fy);
                const int x0 = static_cast<int>(fx);
                const int y1 = std::min(y0 + 1, ps - 1);
                const int x1 = std::min(x0 + 1, ps - 1);
                const double wy = fy - y0, wx = fx - x0;
                for (int c = 0; c < 3; ++c) {
                    if (!map->in_range[idx * 3 + static_cast<size_t>(c)]) continue;
                    const double gv = g.at(y, x, c) * map->contrast[idx];
                    gp.at(y0, x0, c) += gv * (1 - wy) * (1 - wx);
                    gp.at(y0, x1, c) += gv * (1 - wy) * wx;
                    gp.at(y1, x0, c) += gv * wy * (1 - wx);
                    gp.at(y1, x1, c) += gv * wy * wx;
                }
            }
    });
}

PatchResult optimize_patch(const AEParams& ae, const DenoiserParams& diff,
                           const NoiseSchedule& full_sched, const DetectorParams& det,
                           const std::vector<ImageTensor>& images,
                           const std::vector<std::vector<BBox>>& boxes, const LossWeights& w,
                           const TransformConfig& t, const PrintColorSet& colors,
                           const OptimizeConfig& opt, RandomSource& rng, bool quiet) {
    w.validate();
    t.validate();
    opt.validate();
    if (images.size() != boxes.size())
        throw std::invalid_argument("optimize_patch: images and box lists must align");
    if (ae.config.latent_size() != diff.config.latent_size ||
        ae.config.latent_depth != diff.config.latent_depth)
        throw std::invalid_argument("optimize_patch: autoencoder and diffusion latent shapes differ");
    if (ae.config.image_size != det.config.image_size)
        throw std::invalid_argument("optimize_patch: autoencoder and detector image sizes differ");

    std::vector<int> usable;
    for (size_t i = 0; i < images.size(); ++i) {
        check_shape(images[i], {det.config.image_size, det.config.image_size, 3}, "optimize_patch");
        if (!boxes[i].empty()) usable.push_back(static_cast<int>(i));
    }
    if (usable.empty()) throw std::invalid_argument("optimize_patch: no image has a target box");

    const NoiseSchedule sched = make_strided(full_sched, opt.chain_stride);
    const std::vector<int> latent_shape = {ae.config.latent_size(), ae.config.latent_size(),
                                           ae.config.latent_depth};
    const std::vector<Tensor> chain_noise =
        draw_chain_noise(sched, latent_shape, RandomSource(opt.frozen_noise_seed));

    PatchLatentParams latent{Tensor(latent_shape), Tensor(latent_shape)};
    ParamSet opt_params;
    opt_params.add("mu", std::move(latent.mu));
    opt_params.add("log_sigma", std::move(latent.log_sigma));
    AdamOptimizer adam(opt.learning_rate, opt.adam_beta1, opt.adam_beta2);

    LossHistory history;
    for (int step = 0; step < opt.steps; ++step) {
        const Tensor eps = rng.normal_tensor(latent_shape);
        std::vector<int> batch_idx;
        std::vector<PlacementDraw> draws;
        for (int i = 0; i < opt.batch_size; ++i) {
            const int idx = usable[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(usable.size()) - 1))];
            batch_idx.push_back(idx);
            draws.push_back(draw_placement(boxes[static_cast<size_t>(idx)], t, det.config.image_size, rng));
        }

        Tape tape;
        const TapeParams tp_opt = load_params(tape, opt_params);
        const TapeParams tp_dn = load_params(tape, diff.net);
        const TapeParams tp_dec = load_params(tape, ae.decoder);
        Var mu_v = tp_opt.at("mu");
        Var ls_v = tp_opt.at("log_sigma");
        Var zT = reparameterize_on_tape(tape, mu_v, ls_v, eps);
        Var z0 = sample_chain_on_tape(tape, diff, tp_dn, sched, zT, chain_noise);
        Var patch_v = decode_on_tape(tape, ae.config, tp_dec, z0);

        Var l_kl = kl_loss_on_tape(tape, mu_v, ls_v);
        Var l_tv = tv_loss_on_tape(tape, patch_v);
        Var l_nps = nps_loss_on_tape(tape, patch_v, colors);
        Var reg = tape.add(tape.scale(l_kl, w.alpha),
                           tape.add(tape.scale(l_tv, w.beta), tape.scale(l_nps, w.gamma)));

        const Tensor& patch_val = tape.value(patch_v);
        std::vector<double> scores(static_cast<size_t>(opt.batch_size));
        std::vector<Tensor> patch_grads(static_cast<size_t>(opt.batch_size));
        parallel_for(opt.batch_size, [&](int i) {
            const int idx = batch_idx[static_cast<size_t>(i)];
            Tape item;
            const TapeParams tp_det = load_params(item, det.net);
            Var x = item.input_ref(&images[static_cast<size_t>(idx)]);
            Var pv = item.input_ref(&patch_val);
            Var patched = apply_patch_on_tape(item, x, pv, boxes[static_cast<size_t>(idx)], t,
                                              draws[static_cast<size_t>(i)]);
            Var score = person_score_on_tape(item, det.config, tp_det, patched);
            scores[static_cast<size_t>(i)] = item.value(score).data[0];
            item.backward(score);
            patch_grads[static_cast<size_t>(i)] = item.grad(pv);
        });

        double l_det = 0.0;
        Tensor dpatch(patch_val.shape);
        for (int i = 0; i < opt.batch_size; ++i) {
            l_det += scores[static_cast<size_t>(i)] / opt.batch_size;
            const Tensor& gp = patch_grads[static_cast<size_t>(i)];
            for (size_t j = 0; j < dpatch.data.size(); ++j)
                dpatch.data[j] += gp.data[j] / opt.batch_size;
        }

        const double kl_v = tape.value(l_kl).data[0];
        const double tv_v = tape.value(l_tv).data[0];
        const double nps_v = tape.value(l_nps).data[0];
        const double total = total_loss(l_det, kl_v, tv_v, nps_v, w);
        if (!std::isfinite(total))
            throw std::runtime_error("optimize_patch: non-finite loss at step " + std::to_string(step) +
                                     " (det=" + std::to_string(l_det) + ", kl=" + std::to_string(kl_v) +
                                     ", tv=" + std::to_string(tv_v) + ", nps=" + std::to_string(nps_v) + ")");
        history.det.push_back(l_det);
        history.kl.push_back(kl_v);
        history.tv.push_back(tv_v);
        history.nps.push_back(nps_v);
        history.total.push_back(total);

        Tensor seed({1});
        seed.data[0] = 1.0;
        tape.backward({{reg, seed}, {patch_v, dpatch}});
        adam.step(opt_params, collect_grads(tape, tp_opt));

        if (!quiet && (step % 10 == 0 || step + 1 == opt.steps))
            std::fprintf(stderr, "[patch] step %d/%d det %.4f kl %.4f tv %.2f nps %.2f total %.4f\n",
                         step + 1, opt.steps, l_det, kl_v, tv_v, nps_v, total);
    }

    PatchResult result;
    result.params.mu = opt_params.get("mu");
    result.params.log_sigma = opt_params.get("log_sigma");
    result.patch = generate_patch(ae, diff, sched, result.params.mu, opt.frozen_noise_seed);
    result.history = std::move(history);
    return result;
}

void save_patch(const std::string& path, const PatchResult& result, uint64_t chain_noise_seed,
                const std::map<std::string, std::string>& extra_meta) {
    std::vector<NamedArray> arrays;
    arrays.push_back(to_named_array("mu", result.params.mu));
    arrays.push_back(to_named_array("log_sigma", result.params.log_sigma));
    arrays.push_back(to_named_array("patch_image", result.patch));
    std::map<std::string, std::string> meta = extra_meta;
    meta["chain_noise_seed"] = std::to_string(chain_noise_seed);
    save_artifact(path, "patch", arrays, meta);
}

std::pair<PatchLatentParams, ImageTensor> load_patch(const std::string& path) {
    const Artifact art = load_artifact(path);
    if (art.kind != "patch")
        throw std::runtime_error("'" + path + "' is a '" + art.kind + "' artifact, expected 'patch'");
    PatchLatentParams p;
    p.mu = to_tensor(find_array(art, "mu"));
    p.log_sigma = to_tensor(find_array(art, "log_sigma"));
    return {std::move(p), to_tensor(find_array(art, "patch_image"))};
}

}  // namespace ldp
