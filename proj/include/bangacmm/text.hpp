#pragma once

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "autodiff.hpp"
#include "errors.hpp"
#include "nn.hpp"

namespace bangacmm {

// NFC composition, punctuation (Unicode category P*) removed, whitespace
// runs collapsed to one ASCII space, ends trimmed. Case is preserved.
inline std::string normalize_text(const std::string& raw) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");
  icu::UnicodeString composed = nfc->normalize(icu::UnicodeString::fromUTF8(raw), status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU normalization failed");

  icu::UnicodeString cleaned;
  bool pending_space = false;
  for (int32_t i = 0; i < composed.length();) {
    const UChar32 c = composed.char32At(i);
    i += U16_LENGTH(c);
    if (u_ispunct(c)) continue;
    if (u_isUWhiteSpace(c)) {
      pending_space = !cleaned.isEmpty();
      continue;
    }
    if (pending_space) cleaned.append(static_cast<UChar>(u' '));
    pending_space = false;
    cleaned.append(c);
  }
  std::string out;
  cleaned.toUTF8String(out);
  return out;
}

inline std::vector<std::string> split_whitespace(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

// Reserved ids are fixed; every other token maps to a dense id >= 3.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kUnk = 2;
  static constexpr int kReserved = 3;

  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (is_reserved_name(tokens_[i])) throw ContractError("vocabulary may not contain '" + tokens_[i] + "'");
      if (!ids_.emplace(tokens_[i], static_cast<int>(i) + kReserved).second) {
        throw ContractError("duplicate vocabulary token '" + tokens_[i] + "'");
      }
    }
  }

  std::size_t size() const { return tokens_.size() + kReserved; }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const {
    static const std::string reserved[kReserved] = {"[PAD]", "[CLS]", "[UNK]"};
    if (id < 0 || static_cast<std::size_t>(id) >= size()) throw ContractError("token id out of range");
    return id < kReserved ? reserved[id] : tokens_[id - kReserved];
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  static bool is_reserved_name(const std::string& s) { return s == "[PAD]" || s == "[CLS]" || s == "[UNK]"; }

  // One token per line; line i (0-based) holds id i + 3.
  void save(std::ostream& os) const {
    for (const auto& t : tokens_) os << t << '\n';
  }
  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write vocabulary '" + path + "'");
    save(os);
  }
  static Vocabulary load(std::istream& is) {
    std::vector<std::string> tokens;
    for (std::string line; std::getline(is, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.push_back(line);
    }
    return Vocabulary(std::move(tokens));
  }
  static Vocabulary load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read vocabulary '" + path + "'");
    return load(is);
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Frequency-ranked, ties broken lexicographically (byte order).
inline Vocabulary build_vocab(const std::vector<std::string>& corpus, std::size_t max_size) {
  if (max_size < 4) throw ParameterError("build_vocab: max_size must be at least 4");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : corpus) {
    for (auto& tok : split_whitespace(line)) {
      if (!Vocabulary::is_reserved_name(tok)) ++counts[tok];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - Vocabulary::kReserved);
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return Vocabulary(std::move(tokens));
}

struct TokenizedText {
  std::vector<int> ids;  // CLS first
  std::size_t original_tokens = 0;
  bool truncated = false;
};

// CLS + whitespace tokens of an already-normalized string, cut to max_len ids.
inline TokenizedText tokenize(const std::string& normalized, const Vocabulary& vocab, std::size_t max_len) {
  TokenizedText out;
  out.ids.push_back(Vocabulary::kCls);
  const auto toks = split_whitespace(normalized);
  out.original_tokens = toks.size();
  for (const auto& t : toks) {
    if (out.ids.size() == max_len) {
      out.truncated = true;
      break;
    }
    out.ids.push_back(vocab.id(t));
  }
  return out;
}

inline std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
  std::string s;
  for (int id : ids) {
    if (id == Vocabulary::kCls || id == Vocabulary::kPad) continue;
    if (!s.empty()) s += ' ';
    s += vocab.token(id);
  }
  return s;
}

struct TextEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t max_len = 64;
  std::size_t d_ff = 0;  // 0 selects 4 * d_model
  double dropout_p = 0.1;
  bool use_positions = true;

  std::size_t ff_width() const { return d_ff ? d_ff : 4 * d_model; }

  void validate() const {
    if (vocab_size < static_cast<std::size_t>(Vocabulary::kReserved)) {
      throw ConfigError("text.vocab_size must cover the reserved ids");
    }
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw ConfigError("text.d_model must be divisible by text.n_heads");
    }
    if (max_len < 2) throw ConfigError("text.max_len must be at least 2");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("text.dropout must be in [0, 1)");
  }
};

struct TextFeatures {
  Tensor shallow;  // mask-aware mean of embedded tokens, before any encoder layer
  Tensor cls;      // final hidden state at position 0
};

class TextEncoder {
 public:
  TextEncoder(ParamStore& store, const TextEncoderConfig& cfg, const std::string& prefix = "text")
      : cfg_(cfg) {
    cfg_.validate();
    token_emb_ = store.add(prefix + ".token_emb", {cfg.vocab_size, cfg.d_model}, Init::normal, true);
    if (cfg.use_positions) {
      pos_emb_ = store.add(prefix + ".pos_emb", {cfg.max_len, cfg.d_model}, Init::normal, true);
    }
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      blocks_.emplace_back(store, prefix + ".layer" + std::to_string(l), cfg.d_model, cfg.n_heads,
                           cfg.ff_width());
    }
  }

  const TextEncoderConfig& config() const { return cfg_; }

  static std::size_t param_count(const TextEncoderConfig& c) {
    return c.vocab_size * c.d_model + (c.use_positions ? c.max_len * c.d_model : 0) +
           c.n_layers * TransformerBlock::param_count(c.d_model, c.ff_width());
  }

  // ids: CLS first, optionally PAD-padded. PAD positions are excluded from
  // attention and from the shallow mean. With deep=false the encoder layers
  // are skipped and cls is left undefined.
  TextFeatures encode(Tape& tape, std::span<const int> ids, bool training, bool deep = true) const {
    if (ids.empty() || ids[0] != Vocabulary::kCls) throw ContractError("text sequence must start with CLS");
    if (ids.size() > cfg_.max_len) ids = ids.first(cfg_.max_len);
    std::vector<bool> mask(ids.size());
    std::vector<double> weights(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      mask[i] = ids[i] != Vocabulary::kPad;
      weights[i] = mask[i] ? 1.0 : 0.0;
    }
    Tensor x = embedding(tape, token_emb_, ids);
    if (cfg_.use_positions) {
      std::vector<int> pos(ids.size());
      for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
      x = add(tape, x, embedding(tape, pos_emb_, pos));
    }
    TextFeatures out;
    out.shallow = mean_rows(tape, x, weights);
    if (!deep) return out;
    Tensor h = blocks_.empty() ? x : dropout(tape, x, cfg_.dropout_p, training);
    for (const auto& b : blocks_) h = b.forward(tape, h, mask, cfg_.dropout_p, training);
    out.cls = select_row(tape, h, 0);
    return out;
  }

 private:
  TextEncoderConfig cfg_;
  Tensor token_emb_;
  Tensor pos_emb_;
  std::vector<TransformerBlock> blocks_;
};

}  // namespace bangacmm
