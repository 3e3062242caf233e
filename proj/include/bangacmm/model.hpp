#pragma once

// Encoders + fusion head assembled into one trainable classifier.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "fusion.hpp"
#include "image.hpp"
#include "nn.hpp"
#include "text.hpp"
#include "vision.hpp"

namespace bangacmm {

enum class Modality { text, image, both };

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::text: return "text";
    case Modality::image: return "image";
    case Modality::both: return "both";
  }
  return "?";
}

inline Modality parse_modality(const std::string& s) {
  if (s == "text") return Modality::text;
  if (s == "image") return Modality::image;
  if (s == "both") return Modality::both;
  throw ConfigError("modality must be text, image or both, got '" + s + "'");
}

struct ModelConfig {
  Modality modality = Modality::both;
  TextEncoderConfig text;
  VisionEncoderConfig vision;
  FusionConfig fusion;
  PreprocessConfig preprocess;
  std::uint64_t seed = 0;

  // Fusion widths follow the encoders; d_fuse defaults to the text width.
  void finalize() {
    fusion.d_t = text.d_model;
    fusion.d_i = vision.d_model;
    if (fusion.d_fuse == 0) fusion.d_fuse = text.d_model;
    preprocess.image_size = vision.image_size;
  }

  void validate() const {
    if (modality != Modality::image) text.validate();
    if (modality != Modality::text) vision.validate();
    fusion.validate();
  }

  bool uses_text() const { return modality != Modality::image; }
  bool uses_image() const { return modality != Modality::text; }

  // Encoder layers only matter when deep features are consumed.
  bool deep_features() const { return modality != Modality::both || fusion.strategy != Strategy::early; }

  // Row label used by the ablation table.
  std::string row_label() const {
    if (modality == Modality::text) return "Text-only";
    if (modality == Modality::image) return "Image-only";
    switch (fusion.strategy) {
      case Strategy::early: return "Early fusion";
      case Strategy::late: return "Late fusion";
      case Strategy::intermediate: return "Intermediate fusion";
    }
    return "?";
  }

  std::string group() const {
    if (modality == Modality::text) return "text-only";
    if (modality == Modality::image) return "image-only";
    return to_string(fusion.strategy);
  }

  // Reads the model.*, text.*, vision.*, fusion.*, preprocess.* keys.
  void read(ConfigReader& r) {
    r.choice("model.modality", modality, parse_modality);
    r.size("text.vocab_size", text.vocab_size);
    r.size("text.d_model", text.d_model, 1);
    r.size("text.n_layers", text.n_layers);
    r.size("text.n_heads", text.n_heads, 1);
    r.size("text.max_len", text.max_len, 2);
    r.size("text.d_ff", text.d_ff);
    r.real("text.dropout", text.dropout_p);
    r.flag("text.positions", text.use_positions);
    r.size("vision.image_size", vision.image_size, 1);
    r.size("vision.patch_size", vision.patch_size, 1);
    r.size("vision.d_model", vision.d_model, 1);
    r.size("vision.n_layers", vision.n_layers);
    r.size("vision.n_heads", vision.n_heads, 1);
    r.size("vision.d_ff", vision.d_ff);
    r.real("vision.dropout", vision.dropout_p);
    r.flag("vision.positions", vision.use_positions);
    r.choice("vision.pooling", vision.pooling, parse_pooling);
    r.choice("fusion.strategy", fusion.strategy, parse_strategy);
    r.size("fusion.d_fuse", fusion.d_fuse);
    r.real("fusion.dropout", fusion.dropout_p);
    r.choice("fusion.late_weighting", fusion.late_weighting, parse_late_weighting);
    r.choice("fusion.activation", fusion.activation, parse_activation);
    r.flag("preprocess.augment.rotate", preprocess.augment.rotate);
    r.flag("preprocess.augment.hflip", preprocess.augment.hflip);
    r.flag("preprocess.augment.brightness", preprocess.augment.brightness);
    r.flag("preprocess.filters", preprocess.filters);
    for (int c = 0; c < 3; ++c) {
      r.real("preprocess.mean" + std::to_string(c), preprocess.mean[c]);
      r.real("preprocess.std" + std::to_string(c), preprocess.stdev[c]);
    }
    r.u64("model.seed", seed);
  }

  KeyValues to_key_values() const {
    KeyValues kv;
    kv.set("model.modality", to_string(modality));
    kv.set("model.seed", std::to_string(seed));
    kv.set("text.vocab_size", std::to_string(text.vocab_size));
    kv.set("text.d_model", std::to_string(text.d_model));
    kv.set("text.n_layers", std::to_string(text.n_layers));
    kv.set("text.n_heads", std::to_string(text.n_heads));
    kv.set("text.max_len", std::to_string(text.max_len));
    kv.set("text.d_ff", std::to_string(text.d_ff));
    kv.set("text.dropout", format_real(text.dropout_p));
    kv.set("text.positions", text.use_positions ? "true" : "false");
    kv.set("vision.image_size", std::to_string(vision.image_size));
    kv.set("vision.patch_size", std::to_string(vision.patch_size));
    kv.set("vision.d_model", std::to_string(vision.d_model));
    kv.set("vision.n_layers", std::to_string(vision.n_layers));
    kv.set("vision.n_heads", std::to_string(vision.n_heads));
    kv.set("vision.d_ff", std::to_string(vision.d_ff));
    kv.set("vision.dropout", format_real(vision.dropout_p));
    kv.set("vision.positions", vision.use_positions ? "true" : "false");
    kv.set("vision.pooling", to_string(vision.pooling));
    kv.set("fusion.strategy", to_string(fusion.strategy));
    kv.set("fusion.d_fuse", std::to_string(fusion.d_fuse));
    kv.set("fusion.dropout", format_real(fusion.dropout_p));
    kv.set("fusion.late_weighting", to_string(fusion.late_weighting));
    kv.set("fusion.activation", to_string(fusion.activation));
    kv.set("preprocess.augment.rotate", preprocess.augment.rotate ? "true" : "false");
    kv.set("preprocess.augment.hflip", preprocess.augment.hflip ? "true" : "false");
    kv.set("preprocess.augment.brightness", preprocess.augment.brightness ? "true" : "false");
    kv.set("preprocess.filters", preprocess.filters ? "true" : "false");
    for (int c = 0; c < 3; ++c) {
      kv.set("preprocess.mean" + std::to_string(c), format_real(preprocess.mean[c]));
      kv.set("preprocess.std" + std::to_string(c), format_real(preprocess.stdev[c]));
    }
    return kv;
  }

  static ModelConfig from_key_values(const KeyValues& kv) {
    ModelConfig cfg;
    ConfigReader r(kv);
    cfg.read(r);
    r.finish(false);
    cfg.finalize();
    cfg.validate();
    return cfg;
  }
};

// One preprocessed example.
struct ModelInput {
  std::vector<int> ids;  // CLS-prefixed token ids
  Tensor patches;        // [num_patches x patch_dim] from a normalized image
};

class MultimodalModel {
 public:
  explicit MultimodalModel(ModelConfig cfg) : cfg_(std::move(cfg)), store_(cfg_.seed) {
    cfg_.finalize();
    cfg_.validate();
    const bool deep = cfg_.deep_features();
    if (cfg_.uses_text()) {
      TextEncoderConfig tc = cfg_.text;
      if (!deep) tc.n_layers = 0;
      text_.emplace(store_, tc);
    }
    if (cfg_.uses_image()) {
      VisionEncoderConfig vc = cfg_.vision;
      if (!deep) vc.n_layers = 0;
      vision_.emplace(store_, vc);
    }
    if (cfg_.modality == Modality::both) {
      fusion_ = make_fusion_params(store_, cfg_.fusion);
    } else {
      const std::size_t width = cfg_.uses_text() ? cfg_.text.d_model : cfg_.vision.d_model;
      unimodal_head_ = LinearLayer(store_, "classifier", width, cfg_.fusion.n_classes);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Closed-form parameter count for a configuration.
  static std::size_t param_count(ModelConfig cfg) {
    cfg.finalize();
    const bool deep = cfg.deep_features();
    std::size_t n = 0;
    if (cfg.uses_text()) {
      auto tc = cfg.text;
      if (!deep) tc.n_layers = 0;
      n += TextEncoder::param_count(tc);
    }
    if (cfg.uses_image()) {
      auto vc = cfg.vision;
      if (!deep) vc.n_layers = 0;
      n += VisionEncoder::param_count(vc);
    }
    if (cfg.modality == Modality::both) {
      n += cfg.fusion.param_count();
    } else {
      const std::size_t width = cfg.uses_text() ? cfg.text.d_model : cfg.vision.d_model;
      n += width * cfg.fusion.n_classes + cfg.fusion.n_classes;
    }
    return n;
  }

  // Six class logits for one example.
  Tensor logits(Tape& tape, const ModelInput& in, bool training) const {
    const bool deep = cfg_.deep_features();
    std::optional<TextFeatures> tf;
    std::optional<ImageFeatures> vf;
    if (text_) tf = text_->encode(tape, in.ids, training, deep);
    if (vision_) vf = vision_->encode_patches(tape, in.patches, training, deep);
    if (cfg_.modality == Modality::text) {
      return unimodal_head_(tape, dropout(tape, tf->cls, cfg_.fusion.dropout_p, training));
    }
    if (cfg_.modality == Modality::image) {
      return unimodal_head_(tape, dropout(tape, vf->pooled, cfg_.fusion.dropout_p, training));
    }
    Tensor fused;
    switch (cfg_.fusion.strategy) {
      case Strategy::early: fused = fuse_early(tape, tf->shallow, vf->shallow, fusion_, cfg_.fusion); break;
      case Strategy::intermediate: fused = fuse_intermediate(tape, tf->cls, vf->pooled, fusion_, cfg_.fusion); break;
      case Strategy::late: fused = fuse_late(tape, tf->cls, vf->pooled, fusion_, cfg_.fusion); break;
    }
    return head_logits(tape, fused, fusion_, cfg_.fusion, training);
  }

  Tensor probabilities(const ModelInput& in) const {
    Tape tape(false);
    return softmax(tape, logits(tape, in, false));
  }

  int predict(const ModelInput& in) const {
    Tape tape(false);
    Tensor z = logits(tape, in, false);
    return static_cast<int>(std::max_element(z.data().begin(), z.data().end()) - z.data().begin());
  }

  const FusionParams& fusion_params() const { return fusion_; }
  const std::optional<TextEncoder>& text_encoder() const { return text_; }
  const std::optional<VisionEncoder>& vision_encoder() const { return vision_; }

  // Checkpoint entries: a "__manifest__" text entry (config + label order),
  // an optional "__vocab__" entry, then every parameter.
  std::vector<NamedTensor> checkpoint_entries(const Vocabulary* vocab = nullptr) const {
    std::vector<NamedTensor> out;
    out.push_back(text_entry("__manifest__", manifest_text()));
    if (vocab) {
      std::string joined;
      for (const auto& t : vocab->tokens()) joined += t + "\n";
      out.push_back(text_entry("__vocab__", joined));
    }
    for (auto& e : store_.entries()) out.push_back(std::move(e));
    return out;
  }

  std::string manifest_text() const {
    KeyValues kv = cfg_.to_key_values();
    std::string labels;
    for (auto n : kIntentNames) labels += (labels.empty() ? "" : ",") + std::string(n);
    kv.set("labels", labels);
    return kv.to_text();
  }

  // Loads parameters; the stored configuration must equal this model's.
  void load_checkpoint_entries(const std::vector<NamedTensor>& entries) {
    const NamedTensor* manifest = nullptr;
    for (const auto& e : entries) {
      if (e.name == "__manifest__") manifest = &e;
    }
    if (!manifest) throw ValidationError("checkpoint has no __manifest__ entry");
    const std::string stored = entry_text(manifest->tensor);
    if (stored != manifest_text()) {
      throw ValidationError("checkpoint configuration does not match the requested model configuration");
    }
    store_.load(entries);
  }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  std::optional<TextEncoder> text_;
  std::optional<VisionEncoder> vision_;
  FusionParams fusion_;
  LinearLayer unimodal_head_;
};

// Reconstructs config (and vocabulary, when stored) from checkpoint entries.
struct LoadedCheckpoint {
  ModelConfig config;
  std::optional<Vocabulary> vocab;
  std::vector<NamedTensor> entries;
};

inline LoadedCheckpoint inspect_checkpoint(std::vector<NamedTensor> entries) {
  LoadedCheckpoint out;
  bool found = false;
  for (const auto& e : entries) {
    if (e.name == "__manifest__") {
      auto kv = KeyValues::parse_text(entry_text(e.tensor), "__manifest__");
      out.config = ModelConfig::from_key_values(kv);
      if (!kv.has("labels")) throw ValidationError("checkpoint manifest lacks label ordering");
      std::string expected;
      for (auto n : kIntentNames) expected += (expected.empty() ? "" : ",") + std::string(n);
      if (kv.at("labels") != expected) throw ValidationError("checkpoint label ordering differs from this build");
      found = true;
    } else if (e.name == "__vocab__") {
      std::istringstream is(entry_text(e.tensor));
      out.vocab = Vocabulary::load(is);
    }
  }
  if (!found) throw ValidationError("checkpoint has no __manifest__ entry");
  out.entries = std::move(entries);
  return out;
}

}  // namespace bangacmm
