#pragma once

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ugest/pipeline.hpp"

namespace ugest {

namespace cli_detail {

inline std::pair<std::size_t, std::size_t> parse_range(const std::string& s) {
  const auto dots = s.find("..");
  try {
    if (dots == std::string::npos) {
      const auto n = std::stoul(s);
      return {n, n};
    }
    return {std::stoul(s.substr(0, dots)), std::stoul(s.substr(dots + 2))};
  } catch (const std::exception&) {
    throw ConfigError("expected N or MIN..MAX, got " + s);
  }
}

template <class T>
void apply(std::optional<T>& flag, const char* key, RunConfig& c) {
  if (flag) set_config_value(c, key, nlohmann::json(*flag));
}

}  // namespace cli_detail

/// Entry point shared by the binary and the tests. Exit codes: 0 success,
/// 1 runtime failure, 2 usage error.
inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Synthetic gesture recognition pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool quiet = false;
  app.add_option("--config", config_path, "File of dotted-key overrides (JSON or key=value lines)");
  app.add_option("--set", overrides, "Dotted-key override key=value (repeatable)");
  app.add_option("--seed", seed, "Global seed (UGEST_SEED overrides)");
  app.add_option("--threads", threads, "Worker threads (default: available cores)");
  app.add_flag("--quiet", quiet, "No progress output");

  // gen
  auto* gen = app.add_subcommand("gen", "Build a synthetic dataset");
  std::string gen_out;
  std::optional<std::size_t> per_class, frames, size, sequences;
  std::optional<std::string> seq_len;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--per-class", per_class, "Videos per class, split 4:1:1 into train/val/test");
  gen->add_option("--frames", frames, "Frames per video");
  gen->add_option("--size", size, "Frame height and width");
  gen->add_option("--sequences", sequences, "Number of test gesture sequences to emit");
  gen->add_option("--seq-len", seq_len, "Sequence length N or MIN..MAX");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Raw manifest to processed clips");
  std::string pre_in, pre_out;
  std::optional<std::size_t> k, target_size;
  std::optional<double> ratio_a;
  std::optional<std::string> detector;
  pre->add_option("--in", pre_in, "Raw manifest.jsonl")->required();
  pre->add_option("--out", pre_out, "Output directory")->required();
  pre->add_option("--k", k, "Representative frames per clip");
  pre->add_option("--target-size", target_size, "Crop side length");
  pre->add_option("--ratio-a", ratio_a, "Box extension ratio");
  pre->add_option("--detector", detector, "ground_truth or threshold");

  // train options are shared with ablate
  std::optional<std::string> variant;
  std::optional<std::size_t> epochs, batch, repetitions;
  std::optional<double> lr, alpha, b0, b1, fraction;
  auto add_train_opts = [&](CLI::App* s, bool with_variant) {
    if (with_variant) s->add_option("--variant", variant, "full, no_slow, no_fast, no_transformer, no_dce, no_temporal_pooling");
    s->add_option("--epochs", epochs, "Epoch budget");
    s->add_option("--batch", batch, "Batch size");
    s->add_option("--lr", lr, "Initial learning rate");
    s->add_option("--alpha", alpha, "DCE alpha");
    s->add_option("--b0", b0, "DCE lower distance bound");
    s->add_option("--b1", b1, "DCE upper distance bound");
  };
  auto* train = app.add_subcommand("train", "Train a model on a processed manifest");
  std::string data, ckpt_out;
  train->add_option("--data", data, "Processed manifest.jsonl")->required();
  train->add_option("--out", ckpt_out, "Checkpoint directory")->required();
  add_train_opts(train, true);
  train->add_option("--train-fraction", fraction, "Seeded fraction of the train split");
  train->add_option("--repetitions", repetitions, "Independent subsamples (default 10 when --train-fraction < 1)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ckpt, eval_out, split = "test";
  std::optional<std::size_t> window;
  std::optional<double> beta;
  std::string seq_path;
  ev->add_option("--checkpoint", ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", data, "Processed manifest.jsonl")->required();
  ev->add_option("--out", eval_out, "Output directory")->required();
  ev->add_option("--split", split, "Manifest split to evaluate");
  ev->add_option("--window-frames", window, "Sliding window length n (0 = whole clip)");
  ev->add_option("--beta", beta, "DWA beta");
  ev->add_option("--sequences", seq_path, "sequences.jsonl for sequence accuracy");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train and evaluate all six variants");
  std::string abl_out;
  abl->add_option("--data", data, "Processed manifest.jsonl")->required();
  abl->add_option("--out", abl_out, "Output directory")->required();
  add_train_opts(abl, false);

  // curve
  auto* cur = app.add_subcommand("curve", "CSV data from reports or a training log");
  std::string kind, curve_out;
  std::vector<std::string> inputs;
  cur->add_option("--kind", kind, "distance, window, fraction or training")->required();
  cur->add_option("--in", inputs, "report.json files (or one train_log.jsonl)")->required();
  cur->add_option("--out", curve_out, "CSV path (default: stdout)");

  auto* info = app.add_subcommand("info", "Print config, stage shapes and parameter count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) load_config_file(cfg, config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + kv);
      set_config_text(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) cfg.apply_seed(*seed);
    if (const char* env = std::getenv("UGEST_SEED"); env && *env) set_config_text(cfg, "seed", env);
    if (threads) cfg.threads = *threads;

    using cli_detail::apply;
    if (per_class) {
      cfg.gen.val_per_class = cfg.gen.test_per_class = *per_class / 6;
      cfg.gen.train_per_class = *per_class - 2 * (*per_class / 6);
    }
    apply(frames, "synth.frames", cfg);
    if (size) cfg.synth.height = cfg.synth.width = *size;
    apply(sequences, "gen.sequences", cfg);
    if (seq_len) std::tie(cfg.gen.seq_min, cfg.gen.seq_max) = cli_detail::parse_range(*seq_len);
    apply(k, "preprocess.k", cfg);
    apply(target_size, "preprocess.target_size", cfg);
    apply(ratio_a, "preprocess.ratio_a", cfg);
    apply(detector, "preprocess.detector", cfg);
    apply(variant, "train.variant", cfg);
    apply(epochs, "train.epochs", cfg);
    apply(batch, "train.batch", cfg);
    apply(lr, "train.lr0", cfg);
    apply(alpha, "dce.alpha", cfg);
    apply(b0, "dce.b0", cfg);
    apply(b1, "dce.b1", cfg);
    apply(fraction, "train.fraction", cfg);
    if (repetitions) cfg.repetitions = *repetitions;
    else if (fraction && *fraction < 1.0 && cfg.repetitions == 1) cfg.repetitions = 10;
    apply(window, "eval.window_frames", cfg);
    apply(beta, "dwa.beta", cfg);

    if (*train || *abl) {
      // the processed data fixes the clip geometry the model must accept
      const auto d = open_processed(data);
      cfg.preprocess = d.preprocess;
      cfg.synth.channels = d.image_channels;
    }

    // Shape fields of the raw data are checked against the files themselves
    // by later stages, so only gen/info validate the synthetic settings.
    std::vector<std::string> viol = validate_config(cfg);
    if (!*gen && !*info) {
      std::erase_if(viol, [](const std::string& s) {
        return s.rfind("synth.", 0) == 0 || s.find("exceeds the source frame count") != std::string::npos ||
               s.rfind("eval.window_frames", 0) == 0 || s.rfind("model.in_channels", 0) == 0;
      });
    }
    if (*gen || *pre) {
      // model fields do not matter for data generation
      std::erase_if(viol, [](const std::string& s) { return s.rfind("model.", 0) == 0; });
    }
    if (!viol.empty()) {
      std::string msg = "invalid configuration:";
      for (const auto& v : viol) msg += "\n  " + v;
      throw ConfigError(msg);
    }
    std::ostream* progress = quiet ? nullptr : &err;

    if (*gen) {
      const auto r = run_gen(cfg, gen_out);
      out << "wrote " << r.manifest.records.size() << " videos to " << gen_out;
      if (r.sequences) out << " (+" << r.sequences << " sequences)";
      out << '\n';
    } else if (*pre) {
      const auto m = run_preprocess(cfg, pre_in, pre_out);
      out << "processed " << m.records.size() << " clips into " << pre_out << '\n';
    } else if (*train) {
      const auto runs = run_train(cfg, data, ckpt_out, progress);
      for (const auto& r : runs)
        out << "checkpoint " << r.checkpoint.string() << " best_epoch " << r.result.best_epoch << " val_loss "
            << format_double(r.result.best_val_loss) << '\n';
    } else if (*ev) {
      const auto r = run_eval(cfg, ckpt, data, eval_out, split, seq_path);
      out << "accuracy " << format_double(r.report["accuracy"].get<double>()) << " dwa " << format_double(r.report["dwa"].get<double>())
          << " gss " << format_double(r.report["gss"].get<double>()) << " macro_f1 " << format_double(r.report["macro_f1"].get<double>())
          << " map " << format_double(r.report["map"].get<double>()) << '\n';
    } else if (*abl) {
      run_ablate(cfg, data, abl_out, progress);
      std::ifstream f(fs::path(abl_out) / "ablation.csv");
      out << f.rdbuf();
    } else if (*cur) {
      std::vector<fs::path> paths(inputs.begin(), inputs.end());
      const auto csv = run_curve(curve_kind_from_name(kind), paths);
      if (curve_out.empty()) out << csv;
      else write_text(curve_out, csv);
    } else if (*info) {
      out << run_info(cfg);
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace ugest
