#pragma once

// Command implementations behind the bangacmm executable. Each command
// validates all inputs first (exit 1 on any problem), then computes
// (exit 2 on failure).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "data.hpp"
#include "gradcheck.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "train.hpp"

namespace bangacmm {

inline constexpr const char* kOutputDirEnv = "BANGACMM_OUTPUT_DIR";

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2 };

struct RunConfig {
  std::string manifest;  // resolved against the config file's directory
  std::string output_dir = "bangacmm_out";
  std::uint64_t seed = 0;
  int verbosity = 1;
  bool trace = false;
  bool decorrelate_seeds = false;
  ModelConfig model;
  TrainConfig train;

  static RunConfig from_key_values(const KeyValues& kv, const std::filesystem::path& base_dir,
                                   bool need_manifest = true) {
    RunConfig rc;
    ConfigReader r(kv);
    std::string manifest;
    r.text("data.manifest", manifest);
    r.text("output.dir", rc.output_dir);
    r.u64("run.seed", rc.seed);
    std::size_t verbosity = 1;
    r.size("run.verbosity", verbosity);
    r.flag("run.trace", rc.trace);
    r.flag("compare.decorrelate_seeds", rc.decorrelate_seeds);
    rc.model.read(r);
    rc.train.read(r);
    if (kv.has("model.seed")) r.error("model.seed: set the seed with run.seed");
    if (need_manifest && manifest.empty()) r.error("data.manifest: required");
    if (verbosity > 2) r.error("run.verbosity: must be 0, 1 or 2");
    r.finish();
    rc.verbosity = static_cast<int>(verbosity);
    if (!manifest.empty()) {
      std::filesystem::path p(manifest);
      rc.manifest = (p.is_absolute() ? p : base_dir / p).lexically_normal().string();
    }
    rc.set_seed(rc.seed);
    rc.check();
    return rc;
  }

  static RunConfig load(const std::string& path, bool need_manifest = true) {
    return from_key_values(KeyValues::load(path), std::filesystem::path(path).parent_path(), need_manifest);
  }

  void set_seed(std::uint64_t s) {
    seed = s;
    model.seed = s;
    train.seed = s;
  }

  // Semantic checks that need the whole configuration.
  void check() const {
    std::vector<std::string> errors;
    auto collect = [&](const std::function<void()>& f) {
      try {
        f();
      } catch (const std::exception& e) {
        errors.push_back(e.what());
      }
    };
    ModelConfig m = model;
    if (m.text.vocab_size == 0) m.text.vocab_size = Vocabulary::kReserved + 1;
    m.finalize();
    collect([&] { m.validate(); });
    collect([&] { train.validate(); });
    if (!errors.empty()) {
      std::string msg = "configuration errors:";
      for (const auto& e : errors) msg += "\n  " + e;
      throw ConfigError(msg);
    }
  }
};

inline std::string resolve_output_dir(const std::string& configured) {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return configured;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw ValidationError("cannot create output directory '" + dir + "'" + (ec ? ": " + ec.message() : ""));
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot write '" + path.string() + "'");
  os << text;
}

// ---------------------------------------------------------------------------
// One training run, shared by train and compare.

struct RunOutcome {
  EvalReport test_report;
  TrainResult train;
  Vocabulary vocab;
  std::vector<NamedTensor> checkpoint;
};

struct PreparedRun {
  ModelConfig model;
  Vocabulary vocab;
  Dataset train_set, val_set, test_set;
};

inline PreparedRun prepare_run(const RunConfig& rc, const Manifest& m, PipelineTrace* trace = nullptr) {
  PreparedRun p;
  p.model = rc.model;
  const auto train_samples = filter_split(m.samples, Split::train);
  const auto val_samples = filter_split(m.samples, Split::val);
  const auto test_samples = filter_split(m.samples, Split::test);
  if (train_samples.empty() || val_samples.empty() || test_samples.empty()) {
    throw ValidationError("manifest must contain train, val and test samples (got " +
                          std::to_string(train_samples.size()) + "/" + std::to_string(val_samples.size()) + "/" +
                          std::to_string(test_samples.size()) + ")");
  }
  const std::size_t max_vocab = rc.model.text.vocab_size ? rc.model.text.vocab_size : static_cast<std::size_t>(-1);
  p.vocab = vocab_from(train_samples, std::max<std::size_t>(max_vocab, Vocabulary::kReserved + 1));
  p.model.text.vocab_size = p.vocab.size();
  p.model.finalize();
  p.model.validate();
  p.train_set = prepare_dataset(m, train_samples, p.model, p.vocab, trace);
  p.val_set = prepare_dataset(m, val_samples, p.model, p.vocab, trace);
  p.test_set = prepare_dataset(m, test_samples, p.model, p.vocab, trace);
  return p;
}

inline RunOutcome execute_run(const PreparedRun& p, const TrainConfig& tc, const std::string& model_id,
                              const TrainHooks& hooks = {}) {
  MultimodalModel model(p.model);
  RunOutcome out;
  out.train = train(model, p.train_set, p.val_set, tc, hooks);
  out.test_report = evaluate(model, p.test_set, model_id);
  out.vocab = p.vocab;
  out.checkpoint = model.checkpoint_entries(p.model.uses_text() ? &p.vocab : nullptr);
  return out;
}

inline void write_run_artifacts(const std::filesystem::path& dir, const RunOutcome& r) {
  save_checkpoint((dir / "checkpoint.tfu").string(), r.checkpoint);
  write_history((dir / "history.tsv").string(), r.train.history);
  write_text(dir / "report.kv", report_key_values(r.test_report).to_text());
  write_text(dir / "confusion.tsv", confusion_tsv(r.test_report.cm));
  write_text(dir / "report.txt", render_comparison({r.test_report}, r.test_report.strategy == "text-only" ||
                                                                         r.test_report.strategy == "image-only"
                                                                     ? Layout::unimodal
                                                                     : Layout::fusion) +
                                     "\n" + render_per_class(r.test_report));
}

inline std::string model_id_for(const ModelConfig& m) {
  std::string text = "Transformer-" + std::to_string(m.text.d_model);
  std::string vision = "PatchViT-" + std::to_string(m.vision.d_model);
  if (m.modality == Modality::text) return text;
  if (m.modality == Modality::image) return vision;
  return text + "+" + vision;
}

inline TrainHooks epoch_printer(std::ostream& out, int verbosity, const std::string& tag) {
  TrainHooks h;
  if (verbosity >= 1) {
    h.on_epoch = [&out, tag](const EpochRecord& r) {
      char line[200];
      std::snprintf(line, sizeof line,
                    "[%s] epoch %3zu  train_loss %.4f  train_acc %.4f  val_loss %.4f  val_acc %.4f  val_f1 %.4f  lr %.3g\n",
                    tag.c_str(), r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.val_f1, r.lr);
      out << line << std::flush;
    };
  }
  return h;
}

// Runs `validate` and maps any exception to exit 1, then `compute` mapping
// failures to exit 2.
inline int run_phases(std::ostream& err, const std::function<void()>& validate, const std::function<int()>& compute) {
  try {
    validate();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  try {
    return compute();
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << "\n";
    return kExitRuntime;
  }
}

struct CommandOptions {
  std::optional<std::uint64_t> seed;
};

// ---------------------------------------------------------------------------

inline int cmd_gen_data(const std::string& spec_path, const std::string& out_dir, const CommandOptions& opt,
                        std::ostream& out, std::ostream& err) {
  SynthSpec spec;
  return run_phases(
      err,
      [&] {
        KeyValues kv = KeyValues::load(spec_path);
        if (opt.seed) kv.set("seed", std::to_string(*opt.seed));
        spec = SynthSpec::from_key_values(kv);
        ensure_dir(out_dir);
      },
      [&] {
        const auto data = gen_synthetic(spec);
        const std::string manifest = write_synthetic(spec, data, out_dir);
        std::vector<Sample> samples;
        for (const auto& s : data) samples.push_back(s.sample);
        out << "wrote " << samples.size() << " samples to " << manifest << "\n";
        out << render_split_table(split_table(samples));
        char line[160];
        std::snprintf(line, sizeof line, "Bayes accuracy: text %.4f  image %.4f  both %.4f  both(colour-only image) %.4f\n",
                      bayes_accuracy(spec, {true, false, false}), bayes_accuracy(spec, {false, true, false}),
                      bayes_accuracy(spec, {true, true, false}), bayes_accuracy(spec, {true, true, true}));
        out << line;
        return kExitOk;
      });
}

inline int cmd_train(const std::string& config_path, std::optional<Modality> modality, const CommandOptions& opt,
                     std::ostream& out, std::ostream& err) {
  RunConfig rc;
  Manifest manifest;
  std::string dir;
  return run_phases(
      err,
      [&] {
        rc = RunConfig::load(config_path);
        if (modality) rc.model.modality = *modality;
        if (opt.seed) rc.set_seed(*opt.seed);
        rc.check();
        manifest = load_manifest(rc.manifest);
        dir = resolve_output_dir(rc.output_dir);
        ensure_dir(dir);
      },
      [&] {
        PipelineTrace trace;
        PreparedRun prepared = prepare_run(rc, manifest, rc.trace ? &trace : nullptr);
        const std::string id = model_id_for(prepared.model);
        TrainHooks hooks = epoch_printer(out, rc.verbosity, prepared.model.row_label());
        if (rc.trace) hooks.trace = &trace;
        RunOutcome r = execute_run(prepared, rc.train, id, hooks);
        write_run_artifacts(dir, r);
        if (rc.trace) {
          std::string lines;
          for (const auto& l : trace.lines) lines += l + "\n";
          write_text(std::filesystem::path(dir) / "trace.txt", lines);
        }
        out << prepared.model.row_label() << ": best epoch " << r.train.stop.best_epoch << " of "
            << r.train.stop.stop_epoch << (r.train.stop.stopped_early ? " (early stop)" : "") << "\n";
        out << render_comparison({r.test_report}, Layout::ablation);
        out << render_per_class(r.test_report);
        out << "artifacts in " << dir << "\n";
        return kExitOk;
      });
}

inline int cmd_eval(const std::string& checkpoint_path, const std::string& manifest_path, const std::string& split,
                    const std::optional<std::string>& out_dir, std::ostream& out, std::ostream& err) {
  LoadedCheckpoint ck;
  Manifest manifest;
  std::vector<Sample> samples;
  std::string dir;
  return run_phases(
      err,
      [&] {
        ck = inspect_checkpoint(load_checkpoint(checkpoint_path));
        if (ck.config.uses_text() && !ck.vocab) throw ValidationError("checkpoint lacks a vocabulary for its text encoder");
        manifest = load_manifest(manifest_path);
        if (split == "all") {
          samples = manifest.samples;
        } else if (auto s = parse_split(split)) {
          samples = filter_split(manifest.samples, *s);
        } else {
          throw ConfigError("--split must be train, val, test or all, got '" + split + "'");
        }
        if (samples.empty()) throw ValidationError("no samples in split '" + split + "'");
        if (out_dir || std::getenv(kOutputDirEnv)) {
          dir = resolve_output_dir(out_dir.value_or(""));
          ensure_dir(dir);
        }
      },
      [&] {
        MultimodalModel model(ck.config);
        model.load_checkpoint_entries(ck.entries);
        const Vocabulary vocab = ck.vocab.value_or(Vocabulary{});
        const Dataset data = prepare_dataset(manifest, samples, ck.config, vocab);
        const EvalReport r = evaluate(model, data, model_id_for(ck.config));
        out << render_comparison({r}, Layout::ablation);
        out << render_per_class(r);
        if (!dir.empty()) {
          write_text(std::filesystem::path(dir) / "report.kv", report_key_values(r).to_text());
          write_text(std::filesystem::path(dir) / "confusion.tsv", confusion_tsv(r.cm));
        }
        return kExitOk;
      });
}

// The five ablation rows in table order.
inline std::vector<ModelConfig> ablation_models(const ModelConfig& base) {
  std::vector<ModelConfig> out;
  ModelConfig m = base;
  m.modality = Modality::text;
  out.push_back(m);
  m.modality = Modality::image;
  out.push_back(m);
  for (Strategy s : {Strategy::early, Strategy::late, Strategy::intermediate}) {
    m = base;
    m.modality = Modality::both;
    m.fusion.strategy = s;
    out.push_back(m);
  }
  return out;
}

struct CompareOutcome {
  std::vector<EvalReport> reports;
  std::vector<std::vector<EpochRecord>> histories;
  std::vector<StopDecision> stops;
  std::vector<std::string> groups;
  std::string table;
};

inline CompareOutcome run_compare(const RunConfig& rc, const Manifest& manifest, const std::string& dir,
                                  std::ostream& out) {
  CompareOutcome co;
  const auto rows = ablation_models(rc.model);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    RunConfig sub = rc;
    sub.model = rows[i];
    sub.set_seed(rc.decorrelate_seeds ? mix_seed(rc.seed, i) : rc.seed);
    const std::string group = sub.model.group();
    try {
      PreparedRun prepared = prepare_run(sub, manifest);
      RunOutcome r = execute_run(prepared, sub.train, model_id_for(prepared.model),
                                 epoch_printer(out, rc.verbosity, sub.model.row_label()));
      if (!dir.empty()) {
        const auto sub_dir = std::filesystem::path(dir) / group;
        ensure_dir(sub_dir.string());
        write_run_artifacts(sub_dir, r);
      }
      co.reports.push_back(r.test_report);
      co.histories.push_back(r.train.history);
      co.stops.push_back(r.train.stop);
      co.groups.push_back(group);
    } catch (const std::exception& e) {
      std::string partial = co.reports.empty() ? "(no completed runs)\n" : render_comparison(co.reports, Layout::ablation);
      throw std::runtime_error(sub.model.row_label() + " run failed: " + e.what() + "\npartial results:\n" + partial);
    }
  }
  co.table = render_comparison(co.reports, Layout::ablation);
  return co;
}

inline int cmd_compare(const std::string& config_path, const CommandOptions& opt, std::ostream& out,
                       std::ostream& err) {
  RunConfig rc;
  Manifest manifest;
  std::string dir;
  return run_phases(
      err,
      [&] {
        rc = RunConfig::load(config_path);
        if (opt.seed) rc.set_seed(*opt.seed);
        for (const auto& m : ablation_models(rc.model)) {
          RunConfig probe = rc;
          probe.model = m;
          probe.check();
        }
        manifest = load_manifest(rc.manifest);
        dir = resolve_output_dir(rc.output_dir);
        ensure_dir(dir);
      },
      [&] {
        CompareOutcome co = run_compare(rc, manifest, dir, out);
        write_text(std::filesystem::path(dir) / "comparison.txt", co.table);
        out << co.table;
        return kExitOk;
      });
}

// ---------------------------------------------------------------------------
// Gradient check on a fixed random batch, for each fusion strategy.

struct GradcheckInputs {
  std::vector<ModelInput> inputs;
  std::vector<int> labels;
};

inline GradcheckInputs random_inputs(const ModelConfig& cfg, std::size_t batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> tok(Vocabulary::kReserved, static_cast<int>(cfg.text.vocab_size) - 1);
  std::uniform_int_distribution<std::size_t> len(1, cfg.text.max_len - 1);
  GradcheckInputs g;
  for (std::size_t b = 0; b < batch; ++b) {
    ModelInput in;
    in.ids.push_back(Vocabulary::kCls);
    const std::size_t n = len(rng);
    for (std::size_t i = 0; i < n; ++i) in.ids.push_back(tok(rng));
    // Pad one example so the attention mask is exercised.
    if (b == 0 && in.ids.size() < cfg.text.max_len) in.ids.push_back(Vocabulary::kPad);
    in.patches = Tensor({cfg.vision.num_patches(), cfg.vision.patch_dim()});
    for (double& v : in.patches.data()) v = normal(rng);
    g.inputs.push_back(std::move(in));
    g.labels.push_back(static_cast<int>(b % kNumIntents));
  }
  return g;
}

// Query/key gradients of a freshly initialized model are ~1e-7, where a 1e-5
// step leaves central differences dominated by round-off.
inline constexpr double kModelGradStep = 1e-4;

inline GradCheckReport gradcheck_model(MultimodalModel& model, const GradcheckInputs& g, double tolerance = 1e-4) {
  LossFn loss = [&](Tape& tape) {
    std::vector<Tensor> rows;
    for (const auto& in : g.inputs) rows.push_back(model.logits(tape, in, false));
    return cross_entropy(tape, stack_rows(tape, rows), g.labels);
  };
  return gradcheck(model.params().params(), loss, kModelGradStep, tolerance);
}

inline int cmd_gradcheck(const std::string& config_path, const CommandOptions& opt, std::ostream& out,
                         std::ostream& err) {
  RunConfig rc;
  return run_phases(
      err,
      [&] {
        rc = RunConfig::load(config_path, false);
        if (opt.seed) rc.set_seed(*opt.seed);
        if (rc.model.text.vocab_size < Vocabulary::kReserved + 1) {
          throw ConfigError("text.vocab_size: gradcheck needs an explicit vocabulary size of at least 4");
        }
        rc.model.modality = Modality::both;
        rc.model.finalize();
        rc.model.validate();
      },
      [&] {
        bool ok = true;
        for (Strategy s : {Strategy::early, Strategy::late, Strategy::intermediate}) {
          ModelConfig m = rc.model;
          m.fusion.strategy = s;
          MultimodalModel model(m);
          const auto inputs = random_inputs(model.config(), 3, mix_seed(rc.seed, 7));
          const auto report = gradcheck_model(model, inputs);
          out << to_string(s) << " fusion (" << model.params().count() << " parameters): "
              << (report.passed() ? "PASS" : "FAIL") << "\n"
              << render_gradcheck(report);
          ok = ok && report.passed();
        }
        return ok ? kExitOk : kExitRuntime;
      });
}

}  // namespace bangacmm
