#pragma once

#include <map>
#include <string>
#include <vector>

#include "ldp/nn.hpp"
#include "ldp/random.hpp"
#include "ldp/tensor.hpp"

namespace ldp {

// Forward-process schedule. Index position i (1-based) carries beta/alpha/
// alpha_bar; t_index maps positions to original timesteps so strided chains
// keep their trained time embeddings. Construction enforces 0 < beta < 1,
// beta non-decreasing and alpha_bar strictly decreasing. Note that short
// desk-scale schedules keep alpha_bar(T) well above zero; the terminal
// marginal is only approximately standard normal.
struct NoiseSchedule {
    int timesteps = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<int> t_index;

    int max_t_index() const { return t_index.empty() ? 0 : t_index.back(); }
};

// Linear beta interpolation from beta_start to beta_end over T steps.
NoiseSchedule make_schedule(int timesteps, double beta_start, double beta_end);

// Every stride-th step of a full schedule (terminal step always kept), with
// per-step noise rates adjusted so the cumulative signal decay matches the
// full schedule at the retained steps.
NoiseSchedule make_strided(const NoiseSchedule& full, int stride);

// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps, t in [1, T].
LatentTensor forward_sample(const NoiseSchedule& sched, const LatentTensor& z0, int t,
                            const LatentTensor& eps);

struct DenoiserConfig {
    int latent_size = 8;
    int latent_depth = 8;
    int base_channels = 32;
    int time_embed_dim = 16;
    int down_stages = 2;  // capped so the bottom grid stays at least 2x2
    int epochs = 120;
    double learning_rate = 1e-4;
    int batch_size = 32;

    int effective_down_stages() const;
    void validate() const;
};

// Noise predictor weights plus the fixed sinusoidal time-embedding table
// (one row per original timestep).
struct DenoiserParams {
    DenoiserConfig config;
    ParamSet net;
    Tensor time_embed;
};

DenoiserParams init_denoiser(const DenoiserConfig& cfg, int max_timestep, RandomSource& rng);

Var denoiser_on_tape(Tape& tape, const DenoiserParams& params, const TapeParams& tp, Var z,
                     int t);

// Predicts the noise component of z_t.
LatentTensor predict_noise(const DenoiserParams& params, const LatentTensor& zt, int t);

// One optimizer update on a batch: per item draws t uniform in [1,T] and a
// fresh standard-normal eps, regresses the predictor onto eps. Returns the
// batch loss.
double train_step(DenoiserParams& params, AdamOptimizer& adam, const NoiseSchedule& sched,
                  const std::vector<LatentTensor>& z0_batch, RandomSource& rng);

struct TrainLogD {
    std::vector<double> step_loss;
};

DenoiserParams train_denoiser(const std::vector<LatentTensor>& latents, const DenoiserConfig& cfg,
                              const NoiseSchedule& sched, RandomSource& rng,
                              TrainLogD* log = nullptr, bool quiet = true);

// Reverse-chain noise handling:
//   frozen - per-step noises drawn once from the rng given to the call, so
//            identical (zT, seed) pairs give identical outputs;
//   fresh  - caller-supplied rng, ordinary stochastic ancestral sampling;
//   zero   - deterministic mean chain.
// The final step never adds noise.
enum class NoiseMode { frozen, fresh, zero };

LatentTensor sample_chain(const DenoiserParams& params, const NoiseSchedule& sched,
                          const LatentTensor& zT, NoiseMode mode, RandomSource rng);

// Per-step noises for a differentiable frozen chain, positions T..2.
std::vector<Tensor> draw_chain_noise(const NoiseSchedule& sched, const std::vector<int>& shape,
                                     RandomSource rng);

Var sample_chain_on_tape(Tape& tape, const DenoiserParams& params, const TapeParams& tp,
                         const NoiseSchedule& sched, Var zT, const std::vector<Tensor>& noise);

void save_diffusion(const std::string& path, const DenoiserParams& params,
                    const NoiseSchedule& sched,
                    const std::map<std::string, std::string>& extra_meta = {});
std::pair<DenoiserParams, NoiseSchedule> load_diffusion(const std::string& path);

}  // namespace ldp
