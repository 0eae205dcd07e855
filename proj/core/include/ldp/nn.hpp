#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ldp/artifact.hpp"
#include "ldp/autograd.hpp"
#include "ldp/random.hpp"
#include "ldp/tensor.hpp"

namespace ldp {

// Ordered name -> tensor map for network weights. Order is the artifact
// payload order, so it must be identical across construction paths.
struct ParamSet {
    std::vector<std::pair<std::string, Tensor>> items;

    Tensor& add(const std::string& name, Tensor init);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool all_finite() const;
    int64_t total_count() const;
};

// Parameters loaded onto a tape as non-owning leaves, in ParamSet order.
struct TapeParams {
    std::vector<Var> vars;
    const ParamSet* source = nullptr;

    Var at(const std::string& name) const;
};

TapeParams load_params(Tape& tape, const ParamSet& params);

// Per-parameter gradients after backward, in ParamSet order.
std::vector<Tensor> collect_grads(Tape& tape, const TapeParams& tp);

struct TrainLog {
    std::vector<double> epoch_loss;
};

void accumulate(std::vector<Tensor>& into, const std::vector<Tensor>& grads, double scale);

class AdamOptimizer {
  public:
    AdamOptimizer(double lr, double beta1, double beta2, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamSet& params, const std::vector<Tensor>& grads);
    double learning_rate() const { return lr_; }

  private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// Uniform fan-in/fan-out initializers.
Tensor conv_weight_init(RandomSource& rng, int kh, int kw, int cin, int cout);
Tensor dense_weight_init(RandomSource& rng, int n, int m);

// Artifact bridging: every parameter as "<prefix><name>".
void append_params(std::vector<NamedArray>& arrays, const std::string& prefix,
                   const ParamSet& params);
ParamSet extract_params(const Artifact& artifact, const std::string& prefix);

}  // namespace ldp
