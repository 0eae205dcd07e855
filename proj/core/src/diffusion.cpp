#include "ldp/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ldp/parallel.hpp"

namespace ldp {

namespace {

void validate_hard_invariants(const NoiseSchedule& s) {
    if (s.timesteps < 1 || static_cast<int>(s.beta.size()) != s.timesteps)
        throw std::invalid_argument("noise schedule: inconsistent step count");
    double prev_beta = 0.0, prev_ab = 1.0;
    for (int i = 0; i < s.timesteps; ++i) {
        const double b = s.beta[static_cast<size_t>(i)];
        if (b <= 0.0 || b >= 1.0) throw std::invalid_argument("noise schedule: beta out of (0,1)");
        if (b + 1e-12 < prev_beta) throw std::invalid_argument("noise schedule: beta must be non-decreasing");
        const double ab = s.alpha_bar[static_cast<size_t>(i)];
        if (ab >= prev_ab) throw std::invalid_argument("noise schedule: alpha_bar must strictly decrease");
        prev_beta = b;
        prev_ab = ab;
    }
}

}  // namespace

NoiseSchedule make_schedule(int timesteps, double beta_start, double beta_end) {
    if (timesteps < 2) throw std::invalid_argument("make_schedule: need at least 2 steps");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw std::invalid_argument("make_schedule: require 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.timesteps = timesteps;
    double cum = 1.0;
    for (int t = 1; t <= timesteps; ++t) {
        const double b = beta_start + (beta_end - beta_start) * (t - 1) / (timesteps - 1);
        s.beta.push_back(b);
        s.alpha.push_back(1.0 - b);
        cum *= 1.0 - b;
        s.alpha_bar.push_back(cum);
        s.t_index.push_back(t);
    }
    validate_hard_invariants(s);
    return s;
}

NoiseSchedule make_strided(const NoiseSchedule& full, int stride) {
    if (stride < 1) throw std::invalid_argument("make_strided: stride must be >= 1");
    if (stride == 1) return full;

    std::vector<int> keep;
    for (int t = full.timesteps; t >= 1; t -= stride) keep.push_back(t);
    std::reverse(keep.begin(), keep.end());

    NoiseSchedule s;
    s.timesteps = static_cast<int>(keep.size());
    double prev_ab = 1.0;
    for (int t : keep) {
        const double ab = full.alpha_bar[static_cast<size_t>(t - 1)];
        const double a = ab / prev_ab;
        s.alpha.push_back(a);
        s.beta.push_back(1.0 - a);
        s.alpha_bar.push_back(ab);
        s.t_index.push_back(t);
        prev_ab = ab;
    }
    validate_hard_invariants(s);
    return s;
}

LatentTensor forward_sample(const NoiseSchedule& sched, const LatentTensor& z0, int t,
                            const LatentTensor& eps) {
    if (t < 1 || t > sched.timesteps)
        throw std::invalid_argument("forward_sample: t out of range [1," +
                                    std::to_string(sched.timesteps) + "]");
    if (!z0.same_shape(eps)) throw std::invalid_argument("forward_sample: shape mismatch");
    const double ab = sched.alpha_bar[static_cast<size_t>(t - 1)];
    const double cs = std::sqrt(ab), cn = std::sqrt(1.0 - ab);
    LatentTensor zt = z0;
    for (size_t i = 0; i < zt.data.size(); ++i) zt.data[i] = cs * z0.data[i] + cn * eps.data[i];
    return zt;
}

int DenoiserConfig::effective_down_stages() const {
    int d = 0, sz = latent_size;
    while (d < down_stages && sz % 2 == 0 && sz / 2 >= 2) {
        sz /= 2;
        ++d;
    }
    return d;
}

void DenoiserConfig::validate() const {
    if (latent_size < 1 || latent_depth < 1) throw std::invalid_argument("denoiser: bad latent shape");
    if (base_channels < 1) throw std::invalid_argument("denoiser: base_channels must be >= 1");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
        throw std::invalid_argument("denoiser: time_embed_dim must be even and >= 2");
    if (down_stages < 0) throw std::invalid_argument("denoiser: down_stages must be >= 0");
    if (epochs < 1 || batch_size < 1 || learning_rate <= 0.0)
        throw std::invalid_argument("denoiser: bad training settings");
}

namespace {

int level_channels(const DenoiserConfig& cfg, int level) {
    return cfg.base_channels + level * (cfg.base_channels / 2);
}

Tensor sinusoidal_table(int max_t, int dim) {
    Tensor table({max_t, dim});
    const int half = dim / 2;
    for (int t = 1; t <= max_t; ++t)
        for (int k = 0; k < half; ++k) {
            const double freq = std::pow(10000.0, -static_cast<double>(k) / half);
            table.at(t - 1, k) = std::sin(t * freq);
            table.at(t - 1, half + k) = std::cos(t * freq);
        }
    return table;
}

void add_block(ParamSet& net, RandomSource& rng, const std::string& name, int k, int cin, int cout,
               int temb_dim) {
    net.add(name + ".w", conv_weight_init(rng, k, k, cin, cout));
    net.add(name + ".b", Tensor({cout}));
    net.add(name + ".tw", dense_weight_init(rng, temb_dim, cout));
    net.add(name + ".tb", Tensor({cout}));
}

}  // namespace

DenoiserParams init_denoiser(const DenoiserConfig& cfg, int max_timestep, RandomSource& rng) {
    cfg.validate();
    if (max_timestep < 1) throw std::invalid_argument("init_denoiser: max_timestep must be >= 1");

    DenoiserParams p;
    p.config = cfg;
    p.time_embed = sinusoidal_table(max_timestep, cfg.time_embed_dim);

    const int d = cfg.effective_down_stages();
    add_block(p.net, rng, "stem", 3, cfg.latent_depth, level_channels(cfg, 0), cfg.time_embed_dim);
    for (int i = 0; i < d; ++i)
        add_block(p.net, rng, "down" + std::to_string(i), 3, level_channels(cfg, i),
                  level_channels(cfg, i + 1), cfg.time_embed_dim);
    add_block(p.net, rng, "mid", 3, level_channels(cfg, d), level_channels(cfg, d), cfg.time_embed_dim);
    for (int i = d - 1; i >= 0; --i)
        add_block(p.net, rng, "up" + std::to_string(i), 2, level_channels(cfg, i + 1),
                  level_channels(cfg, i), cfg.time_embed_dim);
    p.net.add("out.w", conv_weight_init(rng, 3, 3, level_channels(cfg, 0), cfg.latent_depth));
    p.net.add("out.b", Tensor({cfg.latent_depth}));
    return p;
}

namespace {

Var block(Tape& tape, const TapeParams& tp, const std::string& name, Var h, Var temb, int stride,
          bool transpose) {
    Var y = transpose ? tape.conv2d_transpose(h, tp.at(name + ".w"), tp.at(name + ".b"), stride, 0)
                      : tape.conv2d(h, tp.at(name + ".w"), tp.at(name + ".b"), stride, 1);
    Var bias = tape.dense(temb, tp.at(name + ".tw"), tp.at(name + ".tb"));
    return tape.add_channel_bias(y, bias);
}

}  // namespace

Var denoiser_on_tape(Tape& tape, const DenoiserParams& params, const TapeParams& tp, Var z,
                     int t) {
    const DenoiserConfig& cfg = params.config;
    check_shape(tape.value(z), {cfg.latent_size, cfg.latent_size, cfg.latent_depth}, "denoiser");
    if (t < 1 || t > params.time_embed.dim(0))
        throw std::invalid_argument("denoiser: timestep out of embedding table range");

    Tensor row({cfg.time_embed_dim});
    for (int k = 0; k < cfg.time_embed_dim; ++k) row.at(k) = params.time_embed.at(t - 1, k);
    Var temb = tape.input(std::move(row));

    const int d = cfg.effective_down_stages();
    std::vector<Var> skips;
    Var h = tape.silu(block(tape, tp, "stem", z, temb, 1, false));
    for (int i = 0; i < d; ++i) {
        skips.push_back(h);
        h = tape.silu(block(tape, tp, "down" + std::to_string(i), h, temb, 2, false));
    }
    h = tape.silu(block(tape, tp, "mid", h, temb, 1, false));
    for (int i = d - 1; i >= 0; --i) {
        Var u = block(tape, tp, "up" + std::to_string(i), h, temb, 2, true);
        h = tape.silu(tape.add(u, skips[static_cast<size_t>(i)]));
    }
    return tape.conv2d(h, tp.at("out.w"), tp.at("out.b"), 1, 1);
}

LatentTensor predict_noise(const DenoiserParams& params, const LatentTensor& zt, int t) {
    Tape tape;
    const TapeParams tp = load_params(tape, params.net);
    return tape.value(denoiser_on_tape(tape, params, tp, tape.input(zt), t));
}

double train_step(DenoiserParams& params, AdamOptimizer& adam, const NoiseSchedule& sched,
                  const std::vector<LatentTensor>& z0_batch, RandomSource& rng) {
    if (z0_batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const int count = static_cast<int>(z0_batch.size());

    // all randomness drawn up front so worker scheduling cannot reorder it
    std::vector<int> ts;
    std::vector<Tensor> epses;
    for (const LatentTensor& z0 : z0_batch) {
        ts.push_back(sched.t_index[static_cast<size_t>(rng.uniform_int(0, sched.timesteps - 1))]);
        epses.push_back(rng.normal_tensor(z0.shape));
    }

    std::vector<double> item_loss(static_cast<size_t>(count));
    std::vector<std::vector<Tensor>> item_grads(static_cast<size_t>(count));
    parallel_for(count, [&](int i) {
        // forward-sample at the position whose original timestep is ts[i]
        int pos = 0;
        while (sched.t_index[static_cast<size_t>(pos)] != ts[static_cast<size_t>(i)]) ++pos;
        const LatentTensor zt =
            forward_sample(sched, z0_batch[static_cast<size_t>(i)], pos + 1, epses[static_cast<size_t>(i)]);
        Tape tape;
        const TapeParams tp = load_params(tape, params.net);
        Var pred = denoiser_on_tape(tape, params, tp, tape.input(zt), ts[static_cast<size_t>(i)]);
        Var loss = tape.mean_squared_error(pred, tape.input(epses[static_cast<size_t>(i)]));
        item_loss[static_cast<size_t>(i)] = tape.value(loss).data[0];
        tape.backward(loss);
        item_grads[static_cast<size_t>(i)] = collect_grads(tape, tp);
    });

    std::vector<Tensor> grads;
    double total = 0.0;
    for (int i = 0; i < count; ++i) {
        accumulate(grads, item_grads[static_cast<size_t>(i)], 1.0 / count);
        total += item_loss[static_cast<size_t>(i)];
    }
    const double loss = total / count;
    if (!std::isfinite(loss)) throw std::runtime_error("train_step: non-finite diffusion loss");
    adam.step(params.net, grads);
    return loss;
}

DenoiserParams train_denoiser(const std::vector<LatentTensor>& latents, const DenoiserConfig& cfg,
                              const NoiseSchedule& sched, RandomSource& rng, TrainLogD* log,
                              bool quiet) {
    cfg.validate();
    if (latents.empty()) throw std::invalid_argument("train_denoiser: no latents");

    DenoiserParams params = init_denoiser(cfg, sched.max_t_index(), rng);
    AdamOptimizer adam(cfg.learning_rate, 0.9, 0.999);

    std::vector<int> order(latents.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<LatentTensor> batch;
            for (size_t i = start; i < end; ++i) batch.push_back(latents[static_cast<size_t>(order[i])]);
            const double loss = train_step(params, adam, sched, batch, rng);
            if (log) log->step_loss.push_back(loss);
            epoch_loss += loss;
            ++batches;
        }
        if (!quiet)
            std::fprintf(stderr, "[diffusion] epoch %d/%d loss %.6f\n", epoch + 1, cfg.epochs,
                         epoch_loss / batches);
    }
    return params;
}

LatentTensor sample_chain(const DenoiserParams& params, const NoiseSchedule& sched,
                          const LatentTensor& zT, NoiseMode mode, RandomSource rng) {
    check_shape(zT, {params.config.latent_size, params.config.latent_size, params.config.latent_depth},
                "sample_chain");
    LatentTensor z = zT;
    for (int pos = sched.timesteps; pos >= 1; --pos) {
        const int t = sched.t_index[static_cast<size_t>(pos - 1)];
        const double beta = sched.beta[static_cast<size_t>(pos - 1)];
        const double alpha = sched.alpha[static_cast<size_t>(pos - 1)];
        const double ab = sched.alpha_bar[static_cast<size_t>(pos - 1)];
        const LatentTensor eps_hat = predict_noise(params, z, t);
        const double coef = beta / std::sqrt(1.0 - ab);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
        for (size_t i = 0; i < z.data.size(); ++i)
            z.data[i] = inv_sqrt_alpha * (z.data[i] - coef * eps_hat.data[i]);
        if (pos > 1 && mode != NoiseMode::zero) {
            const double sigma = std::sqrt(beta);
            for (double& v : z.data) v += sigma * rng.normal();
        }
        if (!z.all_finite())
            throw std::runtime_error("sample_chain: non-finite latent at step " + std::to_string(t));
    }
    return z;
}

std::vector<Tensor> draw_chain_noise(const NoiseSchedule& sched, const std::vector<int>& shape,
                                     RandomSource rng) {
    std::vector<Tensor> noise;
    for (int pos = sched.timesteps; pos >= 2; --pos) noise.push_back(rng.normal_tensor(shape));
    return noise;
}

Var sample_chain_on_tape(Tape& tape, const DenoiserParams& params, const TapeParams& tp,
                         const NoiseSchedule& sched, Var zT, const std::vector<Tensor>& noise) {
    if (static_cast<int>(noise.size()) < sched.timesteps - 1)
        throw std::invalid_argument("sample_chain_on_tape: need a noise tensor per step above 1");
    Var z = zT;
    for (int pos = sched.timesteps; pos >= 1; --pos) {
        const int t = sched.t_index[static_cast<size_t>(pos - 1)];
        const double beta = sched.beta[static_cast<size_t>(pos - 1)];
        const double alpha = sched.alpha[static_cast<size_t>(pos - 1)];
        const double ab = sched.alpha_bar[static_cast<size_t>(pos - 1)];
        Var eps_hat = denoiser_on_tape(tape, params, tp, z, t);
        z = tape.scale(tape.sub(z, tape.scale(eps_hat, beta / std::sqrt(1.0 - ab))),
                       1.0 / std::sqrt(alpha));
        if (pos > 1) {
            Tensor scaled = noise[static_cast<size_t>(sched.timesteps - pos)];
            const double sigma = std::sqrt(beta);
            for (double& v : scaled.data) v *= sigma;
            z = tape.add(z, tape.input(std::move(scaled)));
        }
        if (!tape.value(z).all_finite())
            throw std::runtime_error("sample_chain_on_tape: non-finite latent at step " + std::to_string(t));
    }
    return z;
}

void save_diffusion(const std::string& path, const DenoiserParams& params,
                    const NoiseSchedule& sched, const std::map<std::string, std::string>& extra_meta) {
    std::vector<NamedArray> arrays;
    append_params(arrays, "net.", params.net);
    arrays.push_back(to_named_array("time_embed", params.time_embed));
    Tensor beta({sched.timesteps});
    for (int i = 0; i < sched.timesteps; ++i) beta.at(i) = sched.beta[static_cast<size_t>(i)];
    arrays.push_back(to_named_array("beta", beta));

    std::map<std::string, std::string> meta = extra_meta;
    meta["latent_size"] = std::to_string(params.config.latent_size);
    meta["latent_depth"] = std::to_string(params.config.latent_depth);
    meta["base_channels"] = std::to_string(params.config.base_channels);
    meta["time_embed_dim"] = std::to_string(params.config.time_embed_dim);
    meta["down_stages"] = std::to_string(params.config.down_stages);
    meta["timesteps"] = std::to_string(sched.timesteps);
    save_artifact(path, "diffusion", arrays, meta);
}

std::pair<DenoiserParams, NoiseSchedule> load_diffusion(const std::string& path) {
    const Artifact art = load_artifact(path);
    if (art.kind != "diffusion")
        throw std::runtime_error("'" + path + "' is a '" + art.kind + "' artifact, expected 'diffusion'");

    DenoiserParams p;
    p.config.latent_size = std::stoi(art.meta.at("latent_size"));
    p.config.latent_depth = std::stoi(art.meta.at("latent_depth"));
    p.config.base_channels = std::stoi(art.meta.at("base_channels"));
    p.config.time_embed_dim = std::stoi(art.meta.at("time_embed_dim"));
    p.config.down_stages = std::stoi(art.meta.at("down_stages"));
    p.net = extract_params(art, "net.");
    p.time_embed = to_tensor(find_array(art, "time_embed"));

    const Tensor beta = to_tensor(find_array(art, "beta"));
    NoiseSchedule s;
    s.timesteps = beta.dim(0);
    double cum = 1.0;
    for (int t = 1; t <= s.timesteps; ++t) {
        const double b = beta.at(t - 1);
        s.beta.push_back(b);
        s.alpha.push_back(1.0 - b);
        cum *= 1.0 - b;
        s.alpha_bar.push_back(cum);
        s.t_index.push_back(t);
    }
    validate_hard_invariants(s);
    return {std::move(p), std::move(s)};
}

}  // namespace ldp
