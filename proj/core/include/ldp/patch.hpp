#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ldp/autoencoder.hpp"
#include "ldp/detector.hpp"
#include "ldp/diffusion.hpp"
#include "ldp/types.hpp"

namespace ldp {

// Distribution parameters of the seed latent: Z_T ~ N(mu, sigma^2) with
// sigma = exp(log_sigma), optimized instead of Z_T itself.
struct PatchLatentParams {
    Tensor mu;
    Tensor log_sigma;
};

struct LossWeights {
    double alpha = 0.5;  // latent regularizer
    double beta = 0.1;   // total variation
    double gamma = 0.01; // non-printability
    void validate() const;
};

struct PrintColorSet {
    std::vector<std::array<double, 3>> colors;
};

// 30 printable colors: a 3x3x3 RGB lattice plus three grays.
PrintColorSet default_print_colors();
// Plain text, one "r g b" triplet per line, components in [0,1].
PrintColorSet load_print_colors(const std::string& path);
void save_print_colors(const std::string& path, const PrintColorSet& colors);

struct TransformConfig {
    double patch_scale = 0.3;  // patch side as a fraction of box height
    double rotation_deg = 20.0;
    double scale_jitter = 0.1;
    double brightness = 0.1;
    double contrast_min = 0.9;
    double contrast_max = 1.1;
    double noise_std = 0.01;
    void validate() const;
};

// One sampled draw of all placement nuisances, so a composite can be
// replayed exactly.
struct PlacementDraw {
    struct PerBox {
        double angle_rad;
        double scale_mult;
        double contrast;
        double brightness;
    };
    std::vector<PerBox> boxes;
    Tensor pixel_noise;  // {H,W,3}, already scaled by noise_std
};

PlacementDraw draw_placement(const std::vector<BBox>& boxes, const TransformConfig& t,
                             int image_size, RandomSource& rng);

// Z_T = mu + eps * sigma.
LatentTensor reparameterize(const PatchLatentParams& p, const LatentTensor& eps);
Var reparameterize_on_tape(Tape& tape, Var mu, Var log_sigma, const LatentTensor& eps);

// P = decode(reverse_chain(zT)) with frozen per-step chain noise.
ImageTensor generate_patch(const AEParams& ae, const DenoiserParams& diff,
                           const NoiseSchedule& sched, const LatentTensor& zT,
                           uint64_t chain_noise_seed);

// Forward-difference total variation, last row/column excluded, per channel,
// delta = 1e-8 inside the square root.
double tv_loss(const ImageTensor& patch);
Var tv_loss_on_tape(Tape& tape, Var patch);

// Sum over pixels of the distance to the nearest printable color.
double nps_loss(const ImageTensor& patch, const PrintColorSet& colors);
Var nps_loss_on_tape(Tape& tape, Var patch, const PrintColorSet& colors);

// Exact KL(N(mu,sigma^2) || N(0,I)), averaged over latent elements.
double kl_loss(const PatchLatentParams& p);
Var kl_loss_on_tape(Tape& tape, Var mu, Var log_sigma);

double total_loss(double l_det, double l_kl, double l_tv, double l_nps, const LossWeights& w);

// Scales the patch to patch_scale * box height per box, rotates and jitters
// it, composites at the box center with bilinear resampling, applies the
// color jitter and clamps to [0,1]. Pixels outside every footprint are
// untouched. Boxes whose footprint misses the image entirely are skipped
// with a warning.
ImageTensor apply_patch(const ImageTensor& image, const std::vector<BBox>& boxes,
                        const ImageTensor& patch, const TransformConfig& t, RandomSource& rng);
Var apply_patch_on_tape(Tape& tape, Var image, Var patch, const std::vector<BBox>& boxes,
                        const TransformConfig& t, const PlacementDraw& draw);

struct OptimizeConfig {
    int steps = 300;
    int batch_size = 12;
    double learning_rate = 0.02;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    int chain_stride = 4;
    uint64_t frozen_noise_seed = 1;
    void validate() const;
};

struct LossHistory {
    std::vector<double> det, kl, tv, nps, total;
};

struct PatchResult {
    PatchLatentParams params;
    ImageTensor patch;  // decoded at Z_T = mu
    LossHistory history;
};

// The optimization loop: per step draw eps, reparameterize, run the frozen
// chain and decoder, composite onto a sampled image batch, evaluate the
// four-term objective and update (mu, log_sigma) with Adam.
PatchResult optimize_patch(const AEParams& ae, const DenoiserParams& diff,
                           const NoiseSchedule& full_sched, const DetectorParams& det,
                           const std::vector<ImageTensor>& images,
                           const std::vector<std::vector<BBox>>& boxes, const LossWeights& w,
                           const TransformConfig& t, const PrintColorSet& colors,
                           const OptimizeConfig& opt, RandomSource& rng, bool quiet = true);

void save_patch(const std::string& path, const PatchResult& result, uint64_t chain_noise_seed,
                const std::map<std::string, std::string>& extra_meta = {});
// Returns latent params and the stored decoded patch image.
std::pair<PatchLatentParams, ImageTensor> load_patch(const std::string& path);

}  // namespace ldp
