#pragma once

// Dataset manifests, the stratified split and the planted-signal generator.
//
// Manifest lines are tab-separated: id, split, label, image_path, text.
// image_path is relative to the manifest's directory. '#' starts a comment.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "errors.hpp"
#include "fusion.hpp"
#include "image.hpp"

namespace bangacmm {

enum class Split { train, test, val };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::val: return "val";
  }
  return "?";
}

inline std::optional<Split> parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "val") return Split::val;
  return std::nullopt;
}

struct Sample {
  std::string id;
  IntentLabel label = IntentLabel::Informative;
  std::string text;
  std::string image_path;
  Split split = Split::train;

  bool operator==(const Sample&) const = default;
};

struct SplitRatios {
  double train = 0.795;
  double test = 0.103;
  double val = 0.102;

  void validate() const {
    if (train < 0 || test < 0 || val < 0) throw ParameterError("split fractions must be non-negative");
    if (std::abs(train + test + val - 1.0) > 1e-9) throw ParameterError("split fractions must sum to 1");
  }
};

inline constexpr std::size_t kMinPerClass = 3;

// Largest-remainder apportionment of n items over the three splits.
// Equal remainders favour train, then test, then val.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& r) {
  const std::array<double, 3> frac = {r.train, r.test, r.val};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = static_cast<double>(n) * frac[k];
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    rem[k] = exact - std::floor(exact);
    used += counts[k];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; used < n; ++i, ++used) ++counts[order[i % 3]];
  return counts;
}

inline std::uint64_t fnv1a(std::uint64_t seed, const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](unsigned char c) {
    h ^= c;
    h *= 1099511628211ull;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
  for (unsigned char c : s) mix(c);
  return h;
}

// Per class: order samples by a seeded hash of their id, then hand out
// train/test/val counts from split_counts in that order. Labels only decide
// grouping, so relabelling classes relabels the result identically.
inline std::vector<Sample> stratified_split(std::vector<Sample> samples, const SplitRatios& ratios,
                                            std::uint64_t seed) {
  ratios.validate();
  std::array<std::vector<std::size_t>, kNumIntents> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[static_cast<std::size_t>(samples[i].label)].push_back(i);
  for (std::size_t c = 0; c < kNumIntents; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < kMinPerClass) {
      throw ContractError("class " + std::string(kIntentNames[c]) + " has " + std::to_string(idx.size()) +
                          " samples; at least " + std::to_string(kMinPerClass) + " are needed to split");
    }
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const auto ha = fnv1a(seed, samples[a].id), hb = fnv1a(seed, samples[b].id);
      return ha != hb ? ha < hb : samples[a].id < samples[b].id;
    });
    const auto counts = split_counts(idx.size(), ratios);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      samples[idx[j]].split = j < counts[0] ? Split::train : j < counts[0] + counts[1] ? Split::test : Split::val;
    }
  }
  return samples;
}

inline std::vector<Sample> filter_split(const std::vector<Sample>& samples, Split s) {
  std::vector<Sample> out;
  for (const auto& x : samples)
    if (x.split == s) out.push_back(x);
  return out;
}

// counts[class][split]
using SplitTable = std::array<std::array<std::size_t, 3>, kNumIntents>;

inline SplitTable split_table(const std::vector<Sample>& samples) {
  SplitTable t{};
  for (const auto& s : samples) ++t[static_cast<std::size_t>(s.label)][static_cast<std::size_t>(s.split)];
  return t;
}

inline std::string render_split_table(const SplitTable& t) {
  std::ostringstream os;
  char line[96];
  std::snprintf(line, sizeof line, "%-15s %7s %7s %7s\n", "Category", "Train", "Test", "Val");
  os << line;
  std::array<std::size_t, 3> total{};
  for (std::size_t c = 0; c < kNumIntents; ++c) {
    std::snprintf(line, sizeof line, "%-15s %7zu %7zu %7zu\n", std::string(kIntentNames[c]).c_str(), t[c][0],
                  t[c][1], t[c][2]);
    os << line;
    for (int k = 0; k < 3; ++k) total[k] += t[c][k];
  }
  std::snprintf(line, sizeof line, "%-15s %7zu %7zu %7zu\n", "Total", total[0], total[1], total[2]);
  os << line;
  return os.str();
}

// ---------------------------------------------------------------------------
// Manifest IO

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<Sample> samples;

  std::filesystem::path image_file(const Sample& s) const { return base_dir / s.image_path; }
};

inline void save_manifest(std::ostream& os, const std::vector<Sample>& samples) {
  os << "# id\tsplit\tlabel\timage_path\ttext\n";
  for (const auto& s : samples) {
    os << s.id << '\t' << to_string(s.split) << '\t' << to_string(s.label) << '\t' << s.image_path << '\t'
       << s.text << '\n';
  }
}

inline void save_manifest(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot write manifest '" + path + "'");
  save_manifest(os, samples);
}

// Parses every line and reports all problems at once.
inline std::vector<Sample> parse_manifest(std::istream& is, const std::string& source = "<manifest>") {
  std::vector<Sample> out;
  std::vector<std::string> errors;
  std::map<std::string, std::size_t> first_line;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    std::vector<std::string> f;
    std::size_t pos = 0;
    for (int k = 0; k < 4; ++k) {
      const auto tab = line.find('\t', pos);
      if (tab == std::string::npos) break;
      f.push_back(line.substr(pos, tab - pos));
      pos = tab + 1;
    }
    if (f.size() != 4) {
      errors.push_back(where + "expected 5 tab-separated fields (id, split, label, image_path, text)");
      continue;
    }
    f.push_back(line.substr(pos));
    Sample s;
    s.id = f[0];
    bool ok = true;
    if (s.id.empty()) {
      errors.push_back(where + "empty id");
      ok = false;
    }
    if (auto sp = parse_split(f[1])) {
      s.split = *sp;
    } else {
      errors.push_back(where + "unknown split '" + f[1] + "'");
      ok = false;
    }
    if (auto l = parse_intent(f[2])) {
      s.label = *l;
    } else {
      errors.push_back(where + "unknown label '" + f[2] + "'");
      ok = false;
    }
    s.image_path = f[3];
    if (s.image_path.empty()) {
      errors.push_back(where + "empty image_path");
      ok = false;
    }
    s.text = f[4];
    if (!s.id.empty()) {
      auto [it, fresh] = first_line.emplace(s.id, lineno);
      if (!fresh) {
        errors.push_back(where + "duplicate id '" + s.id + "' (lines " + std::to_string(it->second) + " and " +
                         std::to_string(lineno) + ")");
        ok = false;
      }
    }
    if (ok) out.push_back(std::move(s));
  }
  if (!errors.empty()) {
    std::string msg = "manifest errors:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ParseError(msg);
  }
  return out;
}

// Loads and validates a manifest; with check_images every referenced image
// must exist and decode.
inline Manifest load_manifest(const std::string& path, bool check_images = true) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read manifest '" + path + "'");
  Manifest m;
  m.base_dir = std::filesystem::path(path).parent_path();
  m.samples = parse_manifest(is, path);
  if (check_images) {
    std::vector<std::string> bad;
    for (const auto& s : m.samples) {
      const auto file = m.image_file(s);
      if (!std::filesystem::exists(file)) {
        bad.push_back("missing image " + file.string() + " (sample " + s.id + ")");
        continue;
      }
      try {
        (void)read_ppm(file.string());
      } catch (const std::exception& e) {
        bad.push_back("undecodable image " + file.string() + " (sample " + s.id + "): " + e.what());
      }
    }
    if (!bad.empty()) {
      std::string msg = "manifest " + path + " references unusable images:";
      for (const auto& b : bad) msg += "\n  " + b;
      throw ValidationError(msg);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Planted-signal synthetic data
//
// Classes linked by a text-ambiguous pair share one signal token; classes
// linked by an image-ambiguous pair share one pattern. A pattern is a
// coloured quadrant block; patterns are coloured in pairs that differ only
// in the quadrant, so spatially pooled colour alone cannot separate them.

struct ClassPair {
  int a = 0, b = 0;
  bool operator==(const ClassPair&) const = default;
};

inline std::vector<ClassPair> parse_pairs(const std::string& s) {
  std::vector<ClassPair> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto dash = item.find('-');
    try {
      if (dash == std::string::npos) throw std::invalid_argument("no dash");
      std::size_t ua = 0, ub = 0;
      const std::string sa = trim(item.substr(0, dash)), sb = trim(item.substr(dash + 1));
      const int a = std::stoi(sa, &ua), b = std::stoi(sb, &ub);
      if (ua != sa.size() || ub != sb.size()) throw std::invalid_argument("junk");
      if (a < 0 || b < 0 || a >= static_cast<int>(kNumIntents) || b >= static_cast<int>(kNumIntents) || a == b) {
        throw ConfigError("class pair '" + item + "' must name two different classes in 0..5");
      }
      out.push_back({a, b});
    } catch (const std::invalid_argument&) {
      throw ConfigError("class pair '" + item + "' must look like 0-1");
    } catch (const std::out_of_range&) {
      throw ConfigError("class pair '" + item + "' must look like 0-1");
    }
  }
  return out;
}

inline std::string format_pairs(const std::vector<ClassPair>& pairs) {
  std::string s;
  for (const auto& p : pairs) s += (s.empty() ? "" : ",") + std::to_string(p.a) + "-" + std::to_string(p.b);
  return s;
}

struct SynthSpec {
  std::size_t n_per_class = 126;
  std::size_t vocab_size = 40;  // noise words
  std::size_t seq_len_min = 6;
  std::size_t seq_len_max = 12;
  std::size_t image_size = 32;
  double p_text_signal = 0.9;
  double p_image_signal = 0.9;
  double noise_amplitude = 0.3;  // background pixels ~ U(0.5 - a/2, 0.5 + a/2)
  std::vector<ClassPair> text_ambiguous = {{0, 1}, {2, 3}};
  std::vector<ClassPair> image_ambiguous = {{1, 2}, {3, 4}};
  SplitRatios ratios;
  std::uint64_t seed = 7;

  // Connected components of the ambiguity graph: group[c] per class.
  static std::array<int, kNumIntents> groups(const std::vector<ClassPair>& pairs) {
    std::array<int, kNumIntents> g{};
    for (std::size_t c = 0; c < kNumIntents; ++c) g[c] = static_cast<int>(c);
    auto find = [&](int x) {
      while (g[x] != x) x = g[x];
      return x;
    };
    for (const auto& p : pairs) {
      const int ra = find(p.a), rb = find(p.b);
      if (ra != rb) g[std::max(ra, rb)] = std::min(ra, rb);
    }
    std::array<int, kNumIntents> dense{};
    std::map<int, int> ids;
    for (std::size_t c = 0; c < kNumIntents; ++c) {
      const int root = find(static_cast<int>(c));
      auto [it, fresh] = ids.emplace(root, static_cast<int>(ids.size()));
      dense[c] = it->second;
    }
    return dense;
  }

  std::array<int, kNumIntents> text_groups() const { return groups(text_ambiguous); }
  std::array<int, kNumIntents> image_groups() const { return groups(image_ambiguous); }

  void validate() const {
    std::vector<std::string> errors;
    if (n_per_class < kMinPerClass) {
      errors.push_back("n_per_class = " + std::to_string(n_per_class) + " is below the split minimum of " +
                       std::to_string(kMinPerClass));
    }
    if (vocab_size < 1) errors.push_back("vocab_size must be positive");
    if (seq_len_min < 1 || seq_len_max < seq_len_min) errors.push_back("need 1 <= seq_len_min <= seq_len_max");
    if (image_size < 4 || image_size % 2) errors.push_back("image_size must be even and at least 4");
    if (!(p_text_signal >= 0 && p_text_signal <= 1)) errors.push_back("p_text_signal must be in [0, 1]");
    if (!(p_image_signal >= 0 && p_image_signal <= 1)) errors.push_back("p_image_signal must be in [0, 1]");
    if (!(noise_amplitude >= 0 && noise_amplitude <= 1)) errors.push_back("noise_amplitude must be in [0, 1]");
    try {
      ratios.validate();
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
    const auto tg = text_groups(), ig = image_groups();
    for (std::size_t a = 0; a < kNumIntents; ++a)
      for (std::size_t b = a + 1; b < kNumIntents; ++b)
        if (tg[a] == tg[b] && ig[a] == ig[b]) {
          errors.push_back("classes " + std::to_string(a) + " and " + std::to_string(b) +
                           " are ambiguous in both modalities; no observation can separate them");
        }
    const int n_image_groups = *std::max_element(ig.begin(), ig.end()) + 1;
    if (n_image_groups > 12) errors.push_back("too many image patterns");
    if (!errors.empty()) {
      std::string msg = "invalid synthetic spec:";
      for (const auto& e : errors) msg += "\n  " + e;
      throw ConfigError(msg);
    }
  }

  KeyValues to_key_values() const {
    KeyValues kv;
    kv.set("n_per_class", std::to_string(n_per_class));
    kv.set("vocab_size", std::to_string(vocab_size));
    kv.set("seq_len_min", std::to_string(seq_len_min));
    kv.set("seq_len_max", std::to_string(seq_len_max));
    kv.set("image_size", std::to_string(image_size));
    kv.set("p_text_signal", format_real(p_text_signal));
    kv.set("p_image_signal", format_real(p_image_signal));
    kv.set("noise_amplitude", format_real(noise_amplitude));
    kv.set("text_ambiguous", format_pairs(text_ambiguous));
    kv.set("image_ambiguous", format_pairs(image_ambiguous));
    kv.set("split.train", format_real(ratios.train));
    kv.set("split.test", format_real(ratios.test));
    kv.set("split.val", format_real(ratios.val));
    kv.set("seed", std::to_string(seed));
    return kv;
  }

  static SynthSpec from_key_values(const KeyValues& kv) {
    SynthSpec s;
    ConfigReader r(kv);
    r.size("n_per_class", s.n_per_class);
    r.size("vocab_size", s.vocab_size);
    r.size("seq_len_min", s.seq_len_min);
    r.size("seq_len_max", s.seq_len_max);
    r.size("image_size", s.image_size);
    r.real("p_text_signal", s.p_text_signal);
    r.real("p_image_signal", s.p_image_signal);
    r.real("noise_amplitude", s.noise_amplitude);
    r.choice("text_ambiguous", s.text_ambiguous, parse_pairs);
    r.choice("image_ambiguous", s.image_ambiguous, parse_pairs);
    r.real("split.train", s.ratios.train);
    r.real("split.test", s.ratios.test);
    r.real("split.val", s.ratios.val);
    r.u64("seed", s.seed);
    r.finish();
    s.validate();
    return s;
  }

  static SynthSpec load(const std::string& path) { return from_key_values(KeyValues::load(path)); }
};

inline constexpr std::array<std::array<double, 3>, 6> kPatternColours = {{
    {0.95, 0.10, 0.10},
    {0.10, 0.85, 0.15},
    {0.10, 0.20, 0.95},
    {0.95, 0.90, 0.10},
    {0.85, 0.10, 0.90},
    {0.10, 0.90, 0.90},
}};

// Image group g uses colour g/2 in quadrant 0 (top-left) when g is even and
// quadrant 3 (bottom-right) when odd.
inline int pattern_colour(int group) { return group / 2; }
inline int pattern_quadrant(int group) { return group % 2 ? 3 : 0; }

inline std::string signal_token(int text_group) { return "sig" + std::to_string(text_group); }
inline std::string noise_token(std::size_t i) { return "w" + std::to_string(i); }

struct SynthSample {
  Sample sample;
  Image image;
  bool text_signal = false;
  bool image_signal = false;
};

// Draws n_per_class samples per class in class-major order, then splits.
inline std::vector<SynthSample> gen_synthetic(const SynthSpec& spec) {
  spec.validate();
  const auto tg = spec.text_groups(), ig = spec.image_groups();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> word(0, spec.vocab_size - 1);
  std::uniform_int_distribution<std::size_t> length(spec.seq_len_min, spec.seq_len_max);
  const std::size_t S = spec.image_size, half = S / 2;
  std::vector<SynthSample> out;
  std::size_t serial = 0;
  for (std::size_t c = 0; c < kNumIntents; ++c) {
    for (std::size_t k = 0; k < spec.n_per_class; ++k, ++serial) {
      SynthSample s;
      char id[32];
      std::snprintf(id, sizeof id, "s%05zu", serial);
      s.sample.id = id;
      s.sample.label = static_cast<IntentLabel>(c);
      s.sample.image_path = "images/" + s.sample.id + ".ppm";

      std::vector<std::string> toks(length(rng));
      for (auto& t : toks) t = noise_token(word(rng));
      s.text_signal = unit(rng) < spec.p_text_signal;
      const std::size_t slot = std::uniform_int_distribution<std::size_t>(0, toks.size() - 1)(rng);
      if (s.text_signal) toks[slot] = signal_token(tg[c]);
      for (const auto& t : toks) s.sample.text += (s.sample.text.empty() ? "" : " ") + t;

      s.image = Image(S, S);
      for (double& v : s.image.pixels) v = 0.5 + spec.noise_amplitude * (unit(rng) - 0.5);
      s.image_signal = unit(rng) < spec.p_image_signal;
      if (s.image_signal) {
        const auto& colour = kPatternColours[pattern_colour(ig[c])];
        const std::size_t q = pattern_quadrant(ig[c]);
        const std::size_t y0 = (q / 2) * half, x0 = (q % 2) * half;
        for (std::size_t y = y0; y < y0 + half; ++y)
          for (std::size_t x = x0; x < x0 + half; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch) {
              const double v = colour[ch] + 0.1 * (unit(rng) - 0.5);
              s.image.pixels[(y * S + x) * 3 + ch] = std::clamp(v, 0.0, 1.0);
            }
      }
      // Quantize now so the in-memory image equals its PPM encoding.
      for (double& v : s.image.pixels) v = std::round(v * 255.0) / 255.0;
      out.push_back(std::move(s));
    }
  }
  std::vector<Sample> plain;
  for (const auto& s : out) plain.push_back(s.sample);
  plain = stratified_split(std::move(plain), spec.ratios, spec.seed);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].sample.split = plain[i].split;
  return out;
}

// Writes manifest.tsv, images/ and SPEC under dir; returns the manifest path.
inline std::string write_synthetic(const SynthSpec& spec, const std::vector<SynthSample>& data,
                                   const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw ValidationError("cannot create output directory '" + dir + "': " + ec.message());
  std::vector<Sample> samples;
  for (const auto& s : data) {
    write_ppm((fs::path(dir) / s.sample.image_path).string(), s.image);
    samples.push_back(s.sample);
  }
  const std::string manifest = (fs::path(dir) / "manifest.tsv").string();
  save_manifest(manifest, samples);
  std::ofstream spec_out(fs::path(dir) / "SPEC", std::ios::binary);
  if (!spec_out) throw ValidationError("cannot write SPEC file in '" + dir + "'");
  spec.to_key_values().write(spec_out);
  return manifest;
}

// ---------------------------------------------------------------------------
// Bayes-optimal accuracy by exhaustive enumeration of the observation space.
//
// Text is observed as its signal group or "none"; the image as its pattern
// group, its pattern colour only (colour_only), or "none". Noise never
// imitates a signal. Classes are equiprobable.

struct BayesView {
  bool text = true;
  bool image = true;
  bool colour_only = false;
};

inline double bayes_accuracy(const SynthSpec& spec, BayesView view) {
  const auto tg = spec.text_groups(), ig = spec.image_groups();
  auto image_key = [&](std::size_t c) { return view.colour_only ? pattern_colour(ig[c]) : ig[c]; };
  // observation index -1 = no signal
  std::set<int> tobs = {-1}, iobs = {-1};
  for (std::size_t c = 0; c < kNumIntents; ++c) {
    tobs.insert(tg[c]);
    iobs.insert(image_key(c));
  }
  auto p_text = [&](int o, std::size_t c) {
    if (!view.text) return o == -1 ? 1.0 : 0.0;
    return o == -1 ? 1.0 - spec.p_text_signal : (o == tg[c] ? spec.p_text_signal : 0.0);
  };
  auto p_image = [&](int o, std::size_t c) {
    if (!view.image) return o == -1 ? 1.0 : 0.0;
    return o == -1 ? 1.0 - spec.p_image_signal : (o == image_key(c) ? spec.p_image_signal : 0.0);
  };
  double acc = 0.0;
  for (int ot : tobs)
    for (int oi : iobs) {
      double best = 0.0;
      for (std::size_t c = 0; c < kNumIntents; ++c) best = std::max(best, p_text(ot, c) * p_image(oi, c));
      acc += best / static_cast<double>(kNumIntents);
    }
  return acc;
}

}  // namespace bangacmm
