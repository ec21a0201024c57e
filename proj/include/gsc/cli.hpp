#ifndef GSC_CLI_HPP
#define GSC_CLI_HPP

#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gsc/approx.hpp"
#include "gsc/error.hpp"
#include "gsc/head.hpp"
#include "gsc/io.hpp"
#include "gsc/metrics.hpp"
#include "gsc/pipeline.hpp"
#include "gsc/synth.hpp"

namespace gsc::cli {

enum ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

inline int exit_code_for(ErrorCode code) {
  if (is_data_error(code)) return data;
  if (code == ErrorCode::invalid_argument) return usage;
  return numeric;
}

/// Flags shared by every command that runs the pipeline.
struct RunFlags {
  std::string manifest;
  std::string config;
  std::string out = "out";
  double ratio = 0.05;
  std::string rule;
  std::string strategy;
  std::size_t rounds = 1;
  std::string score;
  std::uint64_t seed = 0;
  std::string approx;
  double target_tpr = 0.95;
  double beta = 0.0;
  double alpha = 0.0;
  double clip = 0.0;
  bool calibrate_raw = false;

  CLI::Option* ratio_opt = nullptr;
  CLI::Option* rounds_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* tpr_opt = nullptr;
  CLI::Option* beta_opt = nullptr;
  CLI::Option* alpha_opt = nullptr;
  CLI::Option* clip_opt = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--manifest", manifest, "Dataset manifest.json")->required();
    app->add_option("--config", config, "Run config JSON (flags override it)");
    app->add_option("--out", out, "Output directory")->capture_default_str();
    ratio_opt = app->add_option("--ratio", ratio, "Fraction of coordinates to modify");
    app->add_option("--rule", rule, "zero | scale | sign_perturb | orth_project | clip");
    app->add_option("--strategy", strategy, "top_grad | top_grad_times_feature | fisher_weighted | random | reverse");
    rounds_opt = app->add_option("--rounds", rounds, "Iterative short-circuit rounds");
    app->add_option("--score", score, "energy | msp");
    seed_opt = app->add_option("--seed", seed, "Seed for random selection and probes");
    app->add_option("--approx", approx, "first_order | exact | both");
    tpr_opt = app->add_option("--target-tpr", target_tpr, "Calibration target TPR");
    beta_opt = app->add_option("--beta", beta, "Scale factor for rule scale");
    alpha_opt = app->add_option("--alpha", alpha, "Step for rule sign_perturb");
    clip_opt = app->add_option("--clip", clip, "Bound for rule clip");
    app->add_flag("--calibrate-raw", calibrate_raw, "Calibrate the threshold on raw scores");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config.empty()) {
      try {
        cfg = run_config_from_json(ojson::parse(read_text(config)));
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::config, config + ": " + e.what());
      }
    }
    if (ratio_opt->count()) cfg.plan.ratio = ratio;
    if (!rule.empty()) cfg.plan.rule = parse_rule_kind(rule);
    if (!strategy.empty()) cfg.plan.strategy = parse_selection_kind(strategy);
    if (rounds_opt->count()) cfg.plan.rounds = rounds;
    if (!score.empty()) cfg.score = parse_score_kind(score);
    if (seed_opt->count()) cfg.seed = seed;
    if (!approx.empty()) cfg.approx_mode = parse_approx_mode(approx);
    if (tpr_opt->count()) cfg.target_tpr = target_tpr;
    if (beta_opt->count()) cfg.plan.beta = beta;
    if (alpha_opt->count()) cfg.plan.alpha = alpha;
    if (clip_opt->count()) cfg.plan.clip_bound = clip;
    if (calibrate_raw) cfg.calibrate_on_raw = true;
    cfg.output_dir = out;
    return cfg;
  }
};

inline std::vector<std::size_t> default_k_values(std::size_t d) {
  std::vector<std::size_t> ks;
  for (std::size_t base = 1; base <= d; base *= 10) {
    for (std::size_t m : {1u, 2u, 5u}) {
      if (base * m < d) ks.push_back(base * m);
    }
  }
  ks.push_back(d);
  return ks;
}

inline int cmd_gen(const std::string& config_path, const CLI::Option* seed_opt, std::uint64_t seed,
                   const std::string& head, const std::string& out_dir, std::ostream& out) {
  SynthConfig cfg;
  if (!config_path.empty()) {
    try {
      cfg = synth_config_from_json(ojson::parse(read_text(config_path)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config, config_path + ": " + e.what());
    }
  }
  if (seed_opt->count()) cfg.seed = seed;
  if (!head.empty()) cfg.head = parse_synth_head(head);
  cfg.validate();
  const SynthDataset ds = generate(cfg);
  const auto manifest = save_dataset(out_dir, to_dataset(ds));
  SynthConfig resolved = cfg;
  resolved.spike_gain = ds.spike_gain;
  write_text(fs::path(out_dir) / "synth_config.json", to_json(resolved).dump(2) + "\n");
  out << "wrote " << manifest.string() << " (spike_gain " << format_double(ds.spike_gain) << ")\n";
  return ok;
}

inline int cmd_eval(const RunFlags& flags, std::ostream& out) {
  const RunConfig cfg = flags.resolve();
  const Dataset data = load_dataset(flags.manifest);
  const EvalReport report = run_pipeline(data, cfg);
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  write_text(dir / "report.csv", report_csv(report));
  write_text(dir / "summary.json", summary_json(report, cfg));
  if (report.aggregates.threshold) write_text(dir / "calibration.json", to_json(*report.aggregates.threshold).dump(2) + "\n");
  const auto& a = report.aggregates;
  const auto show = [](const std::optional<double>& x) { return x ? format_double(*x) : std::string("n/a"); };
  out << "auroc_raw " << show(a.auroc_raw) << "  auroc_gsc " << show(a.auroc_gsc) << "\n"
      << "fpr95_raw " << show(a.fpr95_raw) << "  fpr95 " << show(a.fpr95) << "\n"
      << "errors " << a.n_errors << "\n";
  return ok;
}

inline int cmd_approx_error(const RunFlags& flags, std::size_t probes, std::ostream& out) {
  RunConfig cfg = flags.resolve();
  cfg.approx_mode = ApproxMode::both;
  const Dataset data = load_dataset(flags.manifest);
  const ShortCircuitPlan base = make_plan(cfg.plan, data);
  std::vector<AuditSample> samples;
  std::vector<std::string> labels;
  for (const auto& set : data.sets) {
    if (set.label == SetLabel::calibration) continue;
    for (const auto& f : set.features) {
      AuditSample s{f, base, set.label == SetLabel::ood};
      if (base.strategy.kind == SelectionKind::random) s.plan.strategy.seed = Rng::derive(cfg.seed, samples.size());
      samples.push_back(std::move(s));
      labels.emplace_back(to_string(set.label));
    }
  }
  if (samples.empty()) throw Error(ErrorCode::config, "manifest has no ID or OOD feature sets");
  AuditOptions opt;
  opt.probes = probes;
  opt.seed = cfg.seed;
  const std::vector<ScoreKind> kinds{ScoreKind::energy, ScoreKind::msp};
  const AuditTable table = audit_gap(data.head, samples, kinds, opt);

  std::string csv = "sample_id,label,score_kind,gap_abs,logit_gap_inf,delta_norm2,remainder_bound,flops_approx,flops_exact\n";
  for (const auto& r : table.rows) {
    csv += std::to_string(r.sample_id) + "," + labels[r.sample_id] + "," + std::string(to_string(r.score_kind)) + "," +
           format_double(r.gap_abs) + "," + format_double(r.logit_gap_inf) + "," + format_double(r.delta_norm2) + "," +
           (r.remainder_bound ? format_double(*r.remainder_bound) : std::string("unavailable")) + "," +
           std::to_string(r.flops_approx) + "," + std::to_string(r.flops_exact) + "\n";
  }
  ojson summary = ojson::array();
  for (const auto& s : table.summary) {
    ojson e;
    e["score_kind"] = std::string(to_string(s.score_kind));
    e["label"] = s.is_ood ? "OOD" : "ID";
    e["count"] = s.count;
    e["mean"] = s.mean;
    e["std"] = s.stddev;
    e["max"] = s.max;
    summary.push_back(e);
  }
  ojson doc;
  doc["bound_available"] = table.bound_available;
  doc["summary"] = summary;
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  write_text(dir / "approx_error.csv", csv);
  write_text(dir / "approx_error_summary.json", doc.dump(2) + "\n");
  out << doc.dump(2) << "\n";
  return ok;
}

inline int cmd_concentration(const std::string& manifest, const std::vector<std::size_t>& k_opt,
                             const std::string& out_dir, std::ostream& out) {
  const Dataset data = load_dataset(manifest);
  const FeatureSet* id = data.find(SetLabel::id);
  const FeatureSet* ood = data.find(SetLabel::ood);
  if (!id || !ood) throw Error(ErrorCode::config, "concentration needs ID and OOD feature sets");
  const auto ks = k_opt.empty() ? default_k_values(data.d()) : k_opt;
  for (std::size_t k : ks) {
    if (k < 1 || k > data.d()) throw Error(ErrorCode::invalid_argument, "--k values must lie in [1, d]");
  }
  const auto pid = concentration_profile(data.head, id->features, ks);
  const auto pood = concentration_profile(data.head, ood->features, ks);
  fs::create_directories(out_dir);
  const std::string csv = concentration_csv(pid, pood);
  write_text(fs::path(out_dir) / "concentration.csv", csv);
  out << csv;
  return ok;
}

inline int cmd_flops(const std::string& manifest, const std::string& out_dir, std::ostream& out) {
  const Dataset data = load_dataset(manifest);
  const FlopReport r = flop_report(data.head);
  ojson j;
  j["forward"] = r.forward;
  j["backward"] = r.backward;
  j["approx_extra"] = r.approx_extra;
  j["two_forward"] = r.two_forward;
  j["approx_path"] = r.approx_path;
  j["exact_path"] = r.exact_path;
  j["jvp_dense"] = r.jvp_dense;
  j["approx_over_exact"] = static_cast<double>(r.approx_path) / static_cast<double>(r.exact_path);
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "flops.json", j.dump(2) + "\n");
  out << j.dump(2) << "\n";
  return ok;
}

inline int cmd_hist(const RunFlags& flags, std::size_t bins, const std::string& which, std::ostream& out) {
  const RunConfig cfg = flags.resolve();
  if (which != "gsc" && which != "raw") throw Error(ErrorCode::invalid_argument, "--which must be gsc or raw");
  const Dataset data = load_dataset(flags.manifest);
  const EvalReport report = run_pipeline(data, cfg);
  ScoredSet s;
  for (const auto& r : report.rows) {
    if (!r.error.empty() || r.label == SetLabel::calibration) continue;
    const double x = which == "raw" ? *r.raw_score : *r.gsc_score;
    (r.label == SetLabel::id ? s.id_scores : s.ood_scores).push_back(x);
  }
  const std::string csv = histogram_csv(export_histogram(s, bins));
  fs::create_directories(cfg.output_dir);
  write_text(fs::path(cfg.output_dir) / "hist.csv", csv);
  out << csv;
  return ok;
}

/// Entry point behind the gsc executable; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gradient short-circuit OOD detection engine", "gsc"};
  app.require_subcommand(1);

  std::string gen_config;
  std::string gen_head;
  std::string gen_out = "synth";
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--config", gen_config, "Synthetic config JSON");
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "Override the config seed");
  gen->add_option("--head", gen_head, "affine | tanh | gated_relu");
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();

  RunFlags eval_flags;
  auto* eval = app.add_subcommand("eval", "Run the pipeline and write the report");
  eval_flags.attach(eval);

  RunFlags audit_flags;
  std::size_t probes = 16;
  auto* audit = app.add_subcommand("approx-error", "Exact vs first-order score gap audit");
  audit_flags.attach(audit);
  audit->add_option("--probes", probes, "Smoothness probes per sample")->capture_default_str();

  std::string conc_manifest;
  std::string conc_out = "out";
  std::vector<std::size_t> conc_k;
  auto* conc = app.add_subcommand("concentration", "TopKRatio profile for ID and OOD");
  conc->add_option("--manifest", conc_manifest, "Dataset manifest.json")->required();
  conc->add_option("--k", conc_k, "k values (ascending)")->delimiter(',');
  conc->add_option("--out", conc_out, "Output directory")->capture_default_str();

  std::string flops_manifest;
  std::string flops_out = "out";
  auto* flops = app.add_subcommand("flops", "Analytic FLOP report for the head");
  flops->add_option("--manifest", flops_manifest, "Dataset manifest.json")->required();
  flops->add_option("--out", flops_out, "Output directory")->capture_default_str();

  RunFlags hist_flags;
  std::size_t bins = 50;
  std::string which = "gsc";
  auto* hist = app.add_subcommand("hist", "Score histogram for ID and OOD");
  hist_flags.attach(hist);
  hist->add_option("--bins", bins, "Bin count")->capture_default_str();
  hist->add_option("--which", which, "gsc | raw")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return usage;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_config, gen_seed_opt, gen_seed, gen_head, gen_out, out);
    if (eval->parsed()) return cmd_eval(eval_flags, out);
    if (audit->parsed()) return cmd_approx_error(audit_flags, probes, out);
    if (conc->parsed()) return cmd_concentration(conc_manifest, conc_k, conc_out, out);
    if (flops->parsed()) return cmd_flops(flops_manifest, flops_out, out);
    if (hist->parsed()) return cmd_hist(hist_flags, bins, which, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return data;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return data;
  }
  return usage;
}

}  // namespace gsc::cli

#endif  // GSC_CLI_HPP
