#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "wetsam/errors.hpp"
#include "wetsam/init.hpp"
#include "wetsam/ops.hpp"
#include "wetsam/tensor.hpp"

// Parameter ownership and the small layer vocabulary shared by the model modules.

namespace wetsam {

/// Ordered collection of named parameters. Modules keep tensor handles that share
/// storage with the entries here, so in-place optimizer updates are visible to them.
template <class Real>
class ParameterStore {
public:
    Tensor<Real> add(const std::string& name, Tensor<Real> tensor, bool trainable = true) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        tensor.set_requires_grad(trainable);
        index_[name] = params_.size();
        params_.push_back({name, tensor, trainable});
        return tensor;
    }

    std::vector<Parameter<Real>>& all() noexcept { return params_; }
    const std::vector<Parameter<Real>>& all() const noexcept { return params_; }

    Parameter<Real>& get(const std::string& name) { return params_.at(lookup(name)); }
    const Parameter<Real>& get(const std::string& name) const { return params_.at(lookup(name)); }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t size() const noexcept { return params_.size(); }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (p.trainable) n += p.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    /// Enables or disables gradient tracking on trainable parameters (off for inference).
    void set_tracking(bool on) {
        for (auto& p : params_) p.tensor.set_requires_grad(on && p.trainable);
    }

private:
    std::size_t lookup(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }

    std::vector<Parameter<Real>> params_;
    std::map<std::string, std::size_t> index_;
};

enum class Init { glorot, he, zeros, ones };

template <class Real>
Tensor<Real> make_param(ParameterStore<Real>& store, const std::string& name, Shape shape, Init init,
                        std::size_t fan_in, std::size_t fan_out, Rng& rng, bool trainable = true) {
    Tensor<Real> t;
    switch (init) {
    case Init::glorot: t = glorot_tensor<Real>(shape, fan_in, fan_out, rng); break;
    case Init::he: t = uniform_tensor<Real>(shape, std::sqrt(6.0 / static_cast<double>(fan_in)), rng); break;
    case Init::zeros: t = Tensor<Real>::zeros(shape); break;
    case Init::ones: t = Tensor<Real>::full(shape, Real(1)); break;
    }
    return store.add(name, t, trainable);
}

/// y = x W + b over the last axis; the bias can be left out.
template <class Real>
struct Linear {
    Tensor<Real> weight, bias;
    bool has_bias = true;

    Linear() = default;
    Linear(ParameterStore<Real>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
           Init weight_init = Init::glorot, bool trainable = true, bool with_bias = true)
        : has_bias(with_bias) {
        weight = make_param(store, name + ".weight", {in, out}, weight_init, in, out, rng, trainable);
        if (has_bias) bias = make_param(store, name + ".bias", {out}, Init::zeros, in, out, rng, trainable);
    }

    Tensor<Real> operator()(const Tensor<Real>& x) const {
        return has_bias ? ops::dense(x, weight, bias) : ops::dense(x, weight, std::nullopt);
    }
};

/// k x k convolution with bias over NHWC input.
template <class Real>
struct Conv2d {
    Tensor<Real> kernel, bias;
    std::size_t stride = 1;

    Conv2d() = default;
    Conv2d(ParameterStore<Real>& store, const std::string& name, std::size_t k, std::size_t cin, std::size_t cout,
           std::size_t stride_, Rng& rng, Init kernel_init = Init::glorot, bool trainable = true)
        : stride(stride_) {
        kernel = make_param(store, name + ".kernel", {k, k, cin, cout}, kernel_init, k * k * cin, k * k * cout, rng,
                            trainable);
        bias = make_param(store, name + ".bias", {cout}, Init::zeros, cin, cout, rng, trainable);
    }

    Tensor<Real> operator()(const Tensor<Real>& x) const { return ops::conv2d(x, kernel, bias, stride); }
};

template <class Real>
struct LayerNorm {
    Tensor<Real> gain, offset;

    LayerNorm() = default;
    LayerNorm(ParameterStore<Real>& store, const std::string& name, std::size_t d, Rng& rng) {
        gain = make_param(store, name + ".gain", {d}, Init::ones, d, d, rng);
        offset = make_param(store, name + ".offset", {d}, Init::zeros, d, d, rng);
    }

    Tensor<Real> operator()(const Tensor<Real>& x) const { return ops::layer_norm(x, gain, offset); }
};

} // namespace wetsam
