#pragma once

#include <map>
#include <string>
#include <vector>

#include "ldp/nn.hpp"
#include "ldp/random.hpp"
#include "ldp/tensor.hpp"

namespace ldp {

// Image -> latent compression config. The spatial law is
// latent_size = image_size / downsample_factor, with one strided stage per
// power of two in the factor.
struct AEConfig {
    int image_size = 64;
    int downsample_factor = 8;
    int latent_depth = 8;
    int base_channels = 16;
    int epochs = 25;
    double learning_rate = 1e-3;
    int batch_size = 16;

    int latent_size() const { return image_size / downsample_factor; }
    int stages() const;
    void validate() const;
};

struct AEParams {
    AEConfig config;
    ParamSet encoder;
    ParamSet decoder;
};

AEParams init_autoencoder(const AEConfig& cfg, RandomSource& rng);

// Tape-level forward passes, reused by training and by the patch chain.
Var encode_on_tape(Tape& tape, const AEConfig& cfg, const TapeParams& enc, Var image);
Var decode_on_tape(Tape& tape, const AEConfig& cfg, const TapeParams& dec, Var latent);

LatentTensor encode(const AEParams& params, const ImageTensor& image);
// Output squashed into [0,1] by a final sigmoid.
ImageTensor decode(const AEParams& params, const LatentTensor& latent);

// Plain MSE reconstruction training with Adam. Deterministic for a given
// (dataset, config, seed); throws on divergence.
AEParams train_autoencoder(const std::vector<ImageTensor>& dataset, const AEConfig& cfg,
                           RandomSource& rng, TrainLog* log = nullptr, bool quiet = true);

void save_autoencoder(const std::string& path, const AEParams& params,
                      const std::map<std::string, std::string>& extra_meta = {});
AEParams load_autoencoder(const std::string& path);

}  // namespace ldp
