#pragma once

// Fusion strategies and the six-way intent head.
//
//   early:        F = f(W_T T + W_I I + b)                  shallow features
//   intermediate: F = f(W [phi_T; phi_I] + b)               deep features, text first
//   late:         z = f(W_T h_T(phi_T) + W_I h_I(phi_I) + b) per-modality logits
//
// early/intermediate feed F through dropout -> C -> softmax; late feeds z
// straight into softmax.

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "autodiff.hpp"
#include "errors.hpp"
#include "nn.hpp"

namespace bangacmm {

enum class IntentLabel { Informative = 0, Advocative, Promotive, Exhibitionist, Expressive, Controversial };

inline constexpr std::size_t kNumIntents = 6;

inline constexpr std::array<std::string_view, kNumIntents> kIntentNames = {
    "Informative", "Advocative", "Promotive", "Exhibitionist", "Expressive", "Controversial"};

inline std::string_view to_string(IntentLabel l) { return kIntentNames.at(static_cast<std::size_t>(l)); }

inline std::optional<IntentLabel> parse_intent(std::string_view s) {
  for (std::size_t i = 0; i < kNumIntents; ++i) {
    if (kIntentNames[i] == s) return static_cast<IntentLabel>(i);
  }
  return std::nullopt;
}

inline IntentLabel intent_from_index(int i) {
  if (i < 0 || i >= static_cast<int>(kNumIntents)) throw ContractError("intent index out of range: " + std::to_string(i));
  return static_cast<IntentLabel>(i);
}

enum class Strategy { early, intermediate, late };
enum class LateWeighting { learned_scalar, learned_matrix };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::early: return "early";
    case Strategy::intermediate: return "intermediate";
    case Strategy::late: return "late";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "early") return Strategy::early;
  if (s == "intermediate") return Strategy::intermediate;
  if (s == "late") return Strategy::late;
  throw ConfigError("invalid fusion strategy '" + s + "'; valid values: early, intermediate, late");
}

inline const char* to_string(LateWeighting w) {
  return w == LateWeighting::learned_scalar ? "learned_scalar" : "learned_matrix";
}

inline LateWeighting parse_late_weighting(const std::string& s) {
  if (s == "learned_scalar") return LateWeighting::learned_scalar;
  if (s == "learned_matrix") return LateWeighting::learned_matrix;
  throw ConfigError("fusion.late_weighting must be learned_scalar or learned_matrix, got '" + s + "'");
}

inline const char* to_string(Activation a) { return a == Activation::gelu ? "gelu" : "identity"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("fusion.activation must be gelu or identity, got '" + s + "'");
}

struct FusionConfig {
  Strategy strategy = Strategy::intermediate;
  std::size_t d_t = 64;
  std::size_t d_i = 64;
  std::size_t d_fuse = 64;
  std::size_t n_classes = kNumIntents;
  double dropout_p = 0.1;
  LateWeighting late_weighting = LateWeighting::learned_scalar;
  Activation activation = Activation::gelu;

  void validate() const {
    if (d_fuse < 1 || d_t < 1 || d_i < 1) throw ConfigError("fusion widths must be positive");
    if (n_classes != kNumIntents) throw ConfigError("fusion.n_classes must be 6");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("fusion.dropout must be in [0, 1)");
  }

  // Closed-form count of the parameters make_fusion_params registers.
  std::size_t param_count() const {
    const std::size_t head = n_classes * d_fuse + n_classes;
    switch (strategy) {
      case Strategy::early: return d_fuse * d_t + d_fuse * d_i + d_fuse + head;
      case Strategy::intermediate: return d_fuse * (d_t + d_i) + d_fuse + head;
      case Strategy::late: {
        const std::size_t combiner = late_weighting == LateWeighting::learned_scalar ? 2 : 2 * n_classes * n_classes;
        return (n_classes * d_t + n_classes) + (n_classes * d_i + n_classes) + combiner + n_classes;
      }
    }
    return 0;
  }
};

// Tensors used by one strategy; the others stay undefined.
struct FusionParams {
  // early
  Tensor W_T, W_I, b;
  // intermediate (b shared with early's slot)
  Tensor W;
  // late: per-modality heads and the decision-level combiner
  Tensor head_T, head_T_bias, head_I, head_I_bias;
  Tensor late_W_T, late_W_I, late_b;
  // classifier for early / intermediate
  Tensor C, c_b;
};

inline FusionParams make_fusion_params(ParamStore& store, const FusionConfig& cfg) {
  cfg.validate();
  FusionParams p;
  const std::size_t k = cfg.n_classes;
  switch (cfg.strategy) {
    case Strategy::early:
      p.W_T = store.add("fusion.W_T", {cfg.d_fuse, cfg.d_t}, Init::normal, true);
      p.W_I = store.add("fusion.W_I", {cfg.d_fuse, cfg.d_i}, Init::normal, true);
      p.b = store.add("fusion.b", {cfg.d_fuse}, Init::zeros, false);
      break;
    case Strategy::intermediate:
      p.W = store.add("fusion.W", {cfg.d_fuse, cfg.d_t + cfg.d_i}, Init::normal, true);
      p.b = store.add("fusion.b", {cfg.d_fuse}, Init::zeros, false);
      break;
    case Strategy::late: {
      p.head_T = store.add("late.head_T.weight", {k, cfg.d_t}, Init::normal, true);
      p.head_T_bias = store.add("late.head_T.bias", {k}, Init::zeros, false);
      p.head_I = store.add("late.head_I.weight", {k, cfg.d_i}, Init::normal, true);
      p.head_I_bias = store.add("late.head_I.bias", {k}, Init::zeros, false);
      // The combiner starts as a plain sum of the two heads' logits.
      if (cfg.late_weighting == LateWeighting::learned_scalar) {
        p.late_W_T = store.add("late.W_T", {1}, Init::ones, false);
        p.late_W_I = store.add("late.W_I", {1}, Init::ones, false);
      } else {
        p.late_W_T = store.add("late.W_T", {k, k}, Init::zeros, false);
        p.late_W_I = store.add("late.W_I", {k, k}, Init::zeros, false);
        for (std::size_t i = 0; i < k; ++i) {
          p.late_W_T.at(i, i) = 1.0;
          p.late_W_I.at(i, i) = 1.0;
        }
      }
      p.late_b = store.add("late.b", {k}, Init::zeros, false);
      return p;
    }
  }
  p.C = store.add("classifier.weight", {k, cfg.d_fuse}, Init::normal, true);
  p.c_b = store.add("classifier.bias", {k}, Init::zeros, false);
  return p;
}

namespace detail {

inline void require_width(const Tensor& t, std::size_t width, const char* what) {
  if (t.rank() != 1 || t.dim(0) != width) {
    throw DimensionError(std::string(what) + " has shape " + shape_str(t.shape()) + ", expected [" +
                         std::to_string(width) + "]");
  }
}

}  // namespace detail

inline Tensor fuse_early(Tape& tape, const Tensor& T, const Tensor& I, const FusionParams& p,
                         const FusionConfig& cfg) {
  if (!p.W_T.defined()) throw ContractError("fuse_early requires early-fusion parameters");
  detail::require_width(T, cfg.d_t, "text features");
  detail::require_width(I, cfg.d_i, "image features");
  Tensor z = add(tape, linear(tape, T, p.W_T, p.b), linear(tape, I, p.W_I));
  return activate(tape, z, cfg.activation);
}

inline Tensor fuse_intermediate(Tape& tape, const Tensor& phi_T, const Tensor& phi_I, const FusionParams& p,
                                const FusionConfig& cfg) {
  if (!p.W.defined()) throw ContractError("fuse_intermediate requires intermediate-fusion parameters");
  detail::require_width(phi_T, cfg.d_t, "text features");
  detail::require_width(phi_I, cfg.d_i, "image features");
  return activate(tape, linear(tape, concat(tape, phi_T, phi_I), p.W, p.b), cfg.activation);
}

inline Tensor fuse_late(Tape& tape, const Tensor& phi_T, const Tensor& phi_I, const FusionParams& p,
                        const FusionConfig& cfg) {
  if (!p.head_T.defined()) throw ContractError("fuse_late requires late-fusion parameters");
  detail::require_width(phi_T, cfg.d_t, "text features");
  detail::require_width(phi_I, cfg.d_i, "image features");
  Tensor h_T = linear(tape, phi_T, p.head_T, p.head_T_bias);
  Tensor h_I = linear(tape, phi_I, p.head_I, p.head_I_bias);
  auto weigh = [&](const Tensor& h, const Tensor& w) {
    return cfg.late_weighting == LateWeighting::learned_scalar ? mul(tape, h, w) : linear(tape, h, w);
  };
  Tensor z = add(tape, add(tape, weigh(h_T, p.late_W_T), weigh(h_I, p.late_W_I)), p.late_b);
  return activate(tape, z, cfg.activation);
}

// Class logits from fused features (early/intermediate: dropout -> C) or
// from late-fusion output (passed through unchanged).
inline Tensor head_logits(Tape& tape, const Tensor& fused, const FusionParams& p, const FusionConfig& cfg,
                          bool training) {
  if (cfg.strategy == Strategy::late) {
    if (fused.rank() != 1 || fused.dim(0) != cfg.n_classes) {
      throw ContractError("late fusion must supply " + std::to_string(cfg.n_classes) + " logits, got " +
                          shape_str(fused.shape()));
    }
    return fused;
  }
  if (!p.C.defined() || fused.rank() != 1 || fused.dim(0) != cfg.d_fuse) {
    throw ContractError(std::string(to_string(cfg.strategy)) + " fusion must supply " +
                        std::to_string(cfg.d_fuse) + " features, got " + shape_str(fused.shape()));
  }
  return linear(tape, dropout(tape, fused, cfg.dropout_p, training), p.C, p.c_b);
}

inline Tensor classify(Tape& tape, const Tensor& fused, const FusionParams& p, const FusionConfig& cfg,
                       bool training) {
  return softmax(tape, head_logits(tape, fused, p, cfg, training));
}

}  // namespace bangacmm
