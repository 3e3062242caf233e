#pragma once

#include <string>
#include <vector>

#include "autodiff.hpp"
#include "errors.hpp"
#include "image.hpp"
#include "nn.hpp"

namespace bangacmm {

enum class Pooling { cls_token, global_average };

inline const char* to_string(Pooling p) { return p == Pooling::cls_token ? "cls_token" : "global_average"; }

inline Pooling parse_pooling(const std::string& s) {
  if (s == "cls_token") return Pooling::cls_token;
  if (s == "global_average") return Pooling::global_average;
  throw ConfigError("vision.pooling must be cls_token or global_average, got '" + s + "'");
}

struct VisionEncoderConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 0;  // 0 selects 4 * d_model
  double dropout_p = 0.1;
  Pooling pooling = Pooling::global_average;
  bool use_positions = true;

  std::size_t ff_width() const { return d_ff ? d_ff : 4 * d_model; }
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * Image::channels; }

  void validate() const {
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
      throw ConfigError("vision.image_size must be divisible by vision.patch_size");
    }
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw ConfigError("vision.d_model must be divisible by vision.n_heads");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("vision.dropout must be in [0, 1)");
  }
};

struct ImageFeatures {
  Tensor shallow;  // mean of embedded patches, before any encoder layer
  Tensor pooled;   // CLS final state or average of final patch states
};

// Patch-embedding transformer. Patches are linearly embedded and given
// learned positions; a learned CLS row is prepended in cls_token mode.
class VisionEncoder {
 public:
  VisionEncoder(ParamStore& store, const VisionEncoderConfig& cfg, const std::string& prefix = "vision")
      : cfg_(cfg) {
    cfg_.validate();
    const std::size_t rows = cfg.num_patches() + (cfg.pooling == Pooling::cls_token ? 1 : 0);
    patch_proj_ = LinearLayer(store, prefix + ".patch_proj", cfg.patch_dim(), cfg.d_model);
    if (cfg.pooling == Pooling::cls_token) {
      cls_ = store.add(prefix + ".cls", {cfg.d_model}, Init::normal, false);
    }
    if (cfg.use_positions) pos_emb_ = store.add(prefix + ".pos_emb", {rows, cfg.d_model}, Init::normal, true);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      blocks_.emplace_back(store, prefix + ".layer" + std::to_string(l), cfg.d_model, cfg.n_heads,
                           cfg.ff_width());
    }
  }

  const VisionEncoderConfig& config() const { return cfg_; }

  static std::size_t param_count(const VisionEncoderConfig& c) {
    const std::size_t rows = c.num_patches() + (c.pooling == Pooling::cls_token ? 1 : 0);
    return c.patch_dim() * c.d_model + c.d_model + (c.pooling == Pooling::cls_token ? c.d_model : 0) +
           (c.use_positions ? rows * c.d_model : 0) +
           c.n_layers * TransformerBlock::param_count(c.d_model, c.ff_width());
  }

  // image: normalized [3 x S x S] tensor.
  ImageFeatures encode(Tape& tape, const Tensor& image, bool training, bool deep = true) const {
    if (image.rank() != 3 || image.dim(1) != cfg_.image_size || image.dim(2) != cfg_.image_size) {
      throw DimensionError("vision encoder expects [3 x " + std::to_string(cfg_.image_size) + " x " +
                           std::to_string(cfg_.image_size) + "], got " + shape_str(image.shape()));
    }
    return encode_patches(tape, patchify(image, cfg_.patch_size), training, deep);
  }

  ImageFeatures encode_patches(Tape& tape, const Tensor& patches, bool training, bool deep = true) const {
    const bool with_cls = cfg_.pooling == Pooling::cls_token;
    Tensor x = patch_proj_(tape, patches);
    if (with_cls) x = stack_rows(tape, {cls_, x});
    if (cfg_.use_positions) x = add(tape, x, pos_emb_);
    ImageFeatures out;
    std::vector<double> patch_rows(x.dim(0), 1.0);
    if (with_cls) patch_rows[0] = 0.0;
    out.shallow = mean_rows(tape, x, patch_rows);
    if (!deep) return out;
    Tensor h = blocks_.empty() ? x : dropout(tape, x, cfg_.dropout_p, training);
    for (const auto& b : blocks_) h = b.forward(tape, h, {}, cfg_.dropout_p, training);
    out.pooled = with_cls ? select_row(tape, h, 0) : mean_rows(tape, h, patch_rows);
    return out;
  }

 private:
  VisionEncoderConfig cfg_;
  LinearLayer patch_proj_;
  Tensor cls_;
  Tensor pos_emb_;
  std::vector<TransformerBlock> blocks_;
};

}  // namespace bangacmm
