#include "ldp/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "ldp/parallel.hpp"

namespace ldp {

int AEConfig::stages() const {
    int f = downsample_factor, s = 0;
    while (f > 1) {
        f /= 2;
        ++s;
    }
    return s;
}

void AEConfig::validate() const {
    if (image_size <= 0) throw std::invalid_argument("autoencoder: image_size must be positive");
    if (downsample_factor < 1 || (downsample_factor & (downsample_factor - 1)) != 0)
        throw std::invalid_argument("autoencoder: downsample_factor must be a power of two");
    if (image_size % downsample_factor != 0)
        throw std::invalid_argument("autoencoder: image_size must be divisible by downsample_factor");
    if (latent_size() < 4) throw std::invalid_argument("autoencoder: latent grid must be at least 4x4");
    if (latent_depth < 1) throw std::invalid_argument("autoencoder: latent_depth must be >= 1");
    if (base_channels < 1) throw std::invalid_argument("autoencoder: base_channels must be >= 1");
    if (epochs < 1 || batch_size < 1 || learning_rate <= 0.0)
        throw std::invalid_argument("autoencoder: bad training settings");
}

namespace {

int encoder_top_channels(const AEConfig& cfg) { return cfg.base_channels << (cfg.stages() - 1); }

}  // namespace

AEParams init_autoencoder(const AEConfig& cfg, RandomSource& rng) {
    cfg.validate();
    AEParams p;
    p.config = cfg;
    const int s = cfg.stages();

    int cin = 3;
    for (int i = 0; i < s; ++i) {
        const int cout = cfg.base_channels << i;
        p.encoder.add("stage" + std::to_string(i) + ".w", conv_weight_init(rng, 3, 3, cin, cout));
        p.encoder.add("stage" + std::to_string(i) + ".b", Tensor({cout}));
        cin = cout;
    }
    p.encoder.add("proj.w", conv_weight_init(rng, 1, 1, cin, cfg.latent_depth));
    p.encoder.add("proj.b", Tensor({cfg.latent_depth}));

    const int top = encoder_top_channels(cfg);
    p.decoder.add("proj.w", conv_weight_init(rng, 1, 1, cfg.latent_depth, top));
    p.decoder.add("proj.b", Tensor({top}));
    cin = top;
    for (int k = 0; k < s; ++k) {
        const int cout = (k < s - 1) ? (cfg.base_channels << (s - 2 - k)) : cfg.base_channels;
        p.decoder.add("up" + std::to_string(k) + ".w", conv_weight_init(rng, 2, 2, cin, cout));
        p.decoder.add("up" + std::to_string(k) + ".b", Tensor({cout}));
        cin = cout;
    }
    p.decoder.add("out.w", conv_weight_init(rng, 3, 3, cin, 3));
    p.decoder.add("out.b", Tensor({3}));
    return p;
}

Var encode_on_tape(Tape& tape, const AEConfig& cfg, const TapeParams& enc, Var image) {
    const Tensor& x = tape.value(image);
    check_shape(x, {cfg.image_size, cfg.image_size, 3}, "encode");
    Var h = image;
    for (int i = 0; i < cfg.stages(); ++i) {
        const std::string k = "stage" + std::to_string(i);
        h = tape.silu(tape.conv2d(h, enc.at(k + ".w"), enc.at(k + ".b"), 2, 1));
    }
    return tape.conv2d(h, enc.at("proj.w"), enc.at("proj.b"), 1, 0);
}

Var decode_on_tape(Tape& tape, const AEConfig& cfg, const TapeParams& dec, Var latent) {
    const Tensor& z = tape.value(latent);
    check_shape(z, {cfg.latent_size(), cfg.latent_size(), cfg.latent_depth}, "decode");
    Var h = tape.silu(tape.conv2d(latent, dec.at("proj.w"), dec.at("proj.b"), 1, 0));
    for (int k = 0; k < cfg.stages(); ++k) {
        const std::string name = "up" + std::to_string(k);
        h = tape.silu(tape.conv2d_transpose(h, dec.at(name + ".w"), dec.at(name + ".b"), 2, 0));
    }
    return tape.sigmoid(tape.conv2d(h, dec.at("out.w"), dec.at("out.b"), 1, 1));
}

LatentTensor encode(const AEParams& params, const ImageTensor& image) {
    Tape tape;
    const TapeParams enc = load_params(tape, params.encoder);
    return tape.value(encode_on_tape(tape, params.config, enc, tape.input(image)));
}

ImageTensor decode(const AEParams& params, const LatentTensor& latent) {
    Tape tape;
    const TapeParams dec = load_params(tape, params.decoder);
    return tape.value(decode_on_tape(tape, params.config, dec, tape.input(latent)));
}

AEParams train_autoencoder(const std::vector<ImageTensor>& dataset, const AEConfig& cfg,
                           RandomSource& rng, TrainLog* log, bool quiet) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train_autoencoder: empty dataset");
    for (const ImageTensor& img : dataset)
        check_shape(img, {cfg.image_size, cfg.image_size, 3}, "train_autoencoder");

    AEParams params = init_autoencoder(cfg, rng);
    AdamOptimizer adam(cfg.learning_rate, 0.9, 0.999);

    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    const size_t n_enc = params.encoder.items.size();
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
                Tape tape;
                const TapeParams enc = load_params(tape, params.encoder);
                const TapeParams dec = load_params(tape, params.decoder);
                Var x = tape.input_ref(&dataset[static_cast<size_t>(order[start + static_cast<size_t>(i)])]);
                Var z = encode_on_tape(tape, cfg, enc, x);
                Var y = decode_on_tape(tape, cfg, dec, z);
                Var loss = tape.mean_squared_error(y, x);
                item_loss[static_cast<size_t>(i)] = tape.value(loss).data[0];
                tape.backward(loss);
                std::vector<Tensor> g = collect_grads(tape, enc);
                std::vector<Tensor> gd = collect_grads(tape, dec);
                g.insert(g.end(), gd.begin(), gd.end());
                item_grads[static_cast<size_t>(i)] = std::move(g);
            });

            std::vector<Tensor> grads;
            for (int i = 0; i < count; ++i) accumulate(grads, item_grads[static_cast<size_t>(i)], 1.0 / count);

            ParamSet joint;
            for (auto& [name, t] : params.encoder.items) joint.add("enc." + name, std::move(t));
            for (auto& [name, t] : params.decoder.items) joint.add("dec." + name, std::move(t));
            adam.step(joint, grads);
            for (size_t i = 0; i < n_enc; ++i) params.encoder.items[i].second = std::move(joint.items[i].second);
            for (size_t i = n_enc; i < joint.items.size(); ++i)
                params.decoder.items[i - n_enc].second = std::move(joint.items[i].second);

            for (int i = 0; i < count; ++i) epoch_loss += item_loss[static_cast<size_t>(i)];
        }
        epoch_loss /= static_cast<double>(dataset.size());
        if (!std::isfinite(epoch_loss))
            throw std::runtime_error("train_autoencoder: loss diverged at epoch " + std::to_string(epoch));
        if (log) log->epoch_loss.push_back(epoch_loss);
        if (!quiet) std::fprintf(stderr, "[autoencoder] epoch %d/%d loss %.6f\n", epoch + 1, cfg.epochs, epoch_loss);
    }
    if (!params.encoder.all_finite() || !params.decoder.all_finite())
        throw std::runtime_error("train_autoencoder: non-finite weights after training");
    return params;
}

void save_autoencoder(const std::string& path, const AEParams& params,
                      const std::map<std::string, std::string>& extra_meta) {
    std::vector<NamedArray> arrays;
    append_params(arrays, "enc.", params.encoder);
    append_params(arrays, "dec.", params.decoder);
    std::map<std::string, std::string> meta = extra_meta;
    meta["image_size"] = std::to_string(params.config.image_size);
    meta["downsample_factor"] = std::to_string(params.config.downsample_factor);
    meta["latent_depth"] = std::to_string(params.config.latent_depth);
    meta["base_channels"] = std::to_string(params.config.base_channels);
    save_artifact(path, "autoencoder", arrays, meta);
}

AEParams load_autoencoder(const std::string& path) {
    const Artifact art = load_artifact(path);
    if (art.kind != "autoencoder")
        throw std::runtime_error("'" + path + "' is a '" + art.kind + "' artifact, expected 'autoencoder'");
    AEParams p;
    p.config.image_size = std::stoi(art.meta.at("image_size"));
    p.config.downsample_factor = std::stoi(art.meta.at("downsample_factor"));
    p.config.latent_depth = std::stoi(art.meta.at("latent_depth"));
    p.config.base_channels = std::stoi(art.meta.at("base_channels"));
    p.encoder = extract_params(art, "enc.");
    p.decoder = extract_params(art, "dec.");
    return p;
}

}  // namespace ldp
