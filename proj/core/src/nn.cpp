#include "ldp/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ldp {

Tensor& ParamSet::add(const std::string& name, Tensor init) {
    for (auto& [n, _] : items)
        if (n == name) throw std::logic_error("ParamSet: duplicate parameter '" + name + "'");
    items.emplace_back(name, std::move(init));
    return items.back().second;
}

Tensor& ParamSet::get(const std::string& name) {
    for (auto& [n, t] : items)
        if (n == name) return t;
    throw std::logic_error("ParamSet: no parameter '" + name + "'");
}

const Tensor& ParamSet::get(const std::string& name) const {
    for (const auto& [n, t] : items)
        if (n == name) return t;
    throw std::logic_error("ParamSet: no parameter '" + name + "'");
}

bool ParamSet::all_finite() const {
    for (const auto& [_, t] : items)
        if (!t.all_finite()) return false;
    return true;
}

int64_t ParamSet::total_count() const {
    int64_t n = 0;
    for (const auto& [_, t] : items) n += t.numel();
    return n;
}

Var TapeParams::at(const std::string& name) const {
    if (!source) throw std::logic_error("TapeParams: not loaded");
    for (size_t i = 0; i < source->items.size(); ++i)
        if (source->items[i].first == name) return vars[i];
    throw std::logic_error("TapeParams: no parameter '" + name + "'");
}

TapeParams load_params(Tape& tape, const ParamSet& params) {
    TapeParams tp;
    tp.source = &params;
    tp.vars.reserve(params.items.size());
    for (const auto& [_, t] : params.items) tp.vars.push_back(tape.input_ref(&t));
    return tp;
}

std::vector<Tensor> collect_grads(Tape& tape, const TapeParams& tp) {
    std::vector<Tensor> grads;
    grads.reserve(tp.vars.size());
    for (Var v : tp.vars) grads.push_back(tape.grad(v));
    return grads;
}

void accumulate(std::vector<Tensor>& into, const std::vector<Tensor>& grads, double scale) {
    if (into.empty()) {
        into = grads;
        for (Tensor& t : into)
            for (double& v : t.data) v *= scale;
        return;
    }
    if (into.size() != grads.size()) throw std::logic_error("accumulate: size mismatch");
    for (size_t i = 0; i < into.size(); ++i)
        for (size_t j = 0; j < into[i].data.size(); ++j) into[i].data[j] += scale * grads[i].data[j];
}

void AdamOptimizer::step(ParamSet& params, const std::vector<Tensor>& grads) {
    if (grads.size() != params.items.size()) throw std::logic_error("AdamOptimizer: grad count mismatch");
    if (m_.empty()) {
        for (const auto& [_, t] : params.items) {
            m_.emplace_back(t.shape);
            v_.emplace_back(t.shape);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t p = 0; p < params.items.size(); ++p) {
        Tensor& theta = params.items[p].second;
        const Tensor& g = grads[p];
        if (!theta.same_shape(g)) throw std::logic_error("AdamOptimizer: grad shape mismatch");
        for (size_t i = 0; i < theta.data.size(); ++i) {
            const double gv = g.data[i];
            m_[p].data[i] = beta1_ * m_[p].data[i] + (1.0 - beta1_) * gv;
            v_[p].data[i] = beta2_ * v_[p].data[i] + (1.0 - beta2_) * gv * gv;
            const double mhat = m_[p].data[i] / bc1;
            const double vhat = v_[p].data[i] / bc2;
            theta.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

Tensor conv_weight_init(RandomSource& rng, int kh, int kw, int cin, int cout) {
    const double fan_in = static_cast<double>(kh) * kw * cin;
    const double fan_out = static_cast<double>(kh) * kw * cout;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    return rng.uniform_tensor({kh, kw, cin, cout}, -limit, limit);
}

Tensor dense_weight_init(RandomSource& rng, int n, int m) {
    const double limit = std::sqrt(6.0 / (static_cast<double>(n) + m));
    return rng.uniform_tensor({n, m}, -limit, limit);
}

void append_params(std::vector<NamedArray>& arrays, const std::string& prefix,
                   const ParamSet& params) {
    for (const auto& [name, t] : params.items) arrays.push_back(to_named_array(prefix + name, t));
}

ParamSet extract_params(const Artifact& artifact, const std::string& prefix) {
    ParamSet out;
    for (const NamedArray& a : artifact.arrays)
        if (a.name.rfind(prefix, 0) == 0) out.add(a.name.substr(prefix.size()), to_tensor(a));
    if (out.items.empty())
        throw std::runtime_error("artifact has no arrays with prefix '" + prefix + "'");
    return out;
}

}  // namespace ldp
