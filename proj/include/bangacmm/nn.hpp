#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "checkpoint.hpp"
#include "errors.hpp"
#include "tensor.hpp"

namespace bangacmm {

enum class Init { normal, zeros, ones };

inline constexpr double kInitStd = 0.02;

struct Parameter {
  std::string name;
  Tensor value;
  // Decoupled weight decay applies only to weight matrices and embeddings.
  bool decay = true;
};

// Owns every trainable tensor of a model under a unique dotted name.
// Initialization draws from one seeded stream in registration order.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  Tensor add(const std::string& name, Shape shape, Init init, bool decay) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    Tensor t(std::move(shape), 0.0, true);
    if (init == Init::normal) {
      std::normal_distribution<double> dist(0.0, kInitStd);
      for (double& v : t.data()) v = dist(rng_);
    } else if (init == Init::ones) {
      std::fill(t.data().begin(), t.data().end(), 1.0);
    }
    index_[name] = params_.size();
    params_.push_back({name, t, decay});
    return t;
  }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
    return params_[it->second].value;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

  std::vector<NamedTensor> entries() const {
    std::vector<NamedTensor> out;
    for (const auto& p : params_) out.push_back({p.name, p.value.clone()});
    return out;
  }

  // Copies values from entries by name. Every parameter must be present with
  // an identical shape.
  void load(const std::vector<NamedTensor>& entries) {
    std::map<std::string, const Tensor*> byname;
    for (const auto& e : entries) byname[e.name] = &e.tensor;
    for (auto& p : params_) {
      auto it = byname.find(p.name);
      if (it == byname.end()) throw ValidationError("checkpoint lacks parameter '" + p.name + "'");
      if (it->second->shape() != p.value.shape()) {
        throw ValidationError("checkpoint parameter '" + p.name + "' has shape " +
                              shape_str(it->second->shape()) + ", model expects " +
                              shape_str(p.value.shape()));
      }
      p.value.copy_values_from(*it->second);
    }
  }

 private:
  std::mt19937_64 rng_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

struct LinearLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  LinearLayer() = default;
  LinearLayer(ParamStore& store, const std::string& name, std::size_t in, std::size_t out)
      : weight(store.add(name + ".weight", {out, in}, Init::normal, true)),
        bias(store.add(name + ".bias", {out}, Init::zeros, false)) {}

  Tensor operator()(Tape& tape, const Tensor& x) const { return linear(tape, x, weight, bias); }
};

struct LayerNormLayer {
  Tensor gain;
  Tensor bias;

  LayerNormLayer() = default;
  LayerNormLayer(ParamStore& store, const std::string& name, std::size_t d)
      : gain(store.add(name + ".gain", {d}, Init::ones, false)),
        bias(store.add(name + ".bias", {d}, Init::zeros, false)) {}

  Tensor operator()(Tape& tape, const Tensor& x) const { return layernorm(tape, x, gain, bias); }
};

// Pre-norm encoder block:
//   x = x + Wo attn(LN1 x)
//   x = x + W2 gelu(W1 LN2 x)
class TransformerBlock {
 public:
  TransformerBlock(ParamStore& store, const std::string& name, std::size_t d_model,
                   std::size_t n_heads, std::size_t d_ff)
      : n_heads_(n_heads),
        ln1_(store, name + ".ln1", d_model),
        q_(store, name + ".attn.q", d_model, d_model),
        k_(store, name + ".attn.k", d_model, d_model),
        v_(store, name + ".attn.v", d_model, d_model),
        o_(store, name + ".attn.out", d_model, d_model),
        ln2_(store, name + ".ln2", d_model),
        ff1_(store, name + ".ff.in", d_model, d_ff),
        ff2_(store, name + ".ff.out", d_ff, d_model) {}

  Tensor forward(Tape& tape, const Tensor& x, const std::vector<bool>& key_mask, double dropout_p,
                 bool training) const {
    Tensor h = ln1_(tape, x);
    Tensor a = attention(tape, q_(tape, h), k_(tape, h), v_(tape, h), n_heads_, key_mask);
    Tensor x1 = add(tape, x, dropout(tape, o_(tape, a), dropout_p, training));
    Tensor f = ff2_(tape, gelu(tape, ff1_(tape, ln2_(tape, x1))));
    return add(tape, x1, dropout(tape, f, dropout_p, training));
  }

  static std::size_t param_count(std::size_t d, std::size_t d_ff) {
    return 2 * (2 * d) + 4 * (d * d + d) + (d * d_ff + d_ff) + (d_ff * d + d);
  }

 private:
  std::size_t n_heads_;
  LayerNormLayer ln1_;
  LinearLayer q_, k_, v_, o_;
  LayerNormLayer ln2_;
  LinearLayer ff1_, ff2_;
};

}  // namespace bangacmm
