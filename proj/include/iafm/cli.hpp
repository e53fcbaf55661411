#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "iafm/analytics.hpp"
#include "iafm/error.hpp"
#include "iafm/glmm/fit.hpp"
#include "iafm/ingest.hpp"
#include "iafm/model_zoo.hpp"
#include "iafm/synthgen.hpp"

namespace iafm::cli {

enum ExitCode : int { kOk = 0, kInputError = 2, kNotConverged = 3, kInternalError = 4 };

/// Every option of every subcommand. The config file uses the same names as
/// the long flags (without dashes), one `key = value` per line.
struct RunConfig {
  std::string input;
  std::string out_dir = ".";
  std::uint64_t seed = 20240601;
  std::string format = "auto";  // csv, jsonl or auto (by extension)
  unsigned threads = 0;

  FilterConfig filter;
  bool filter_fixpoint = false;

  std::string model = "base";
  double t_scale = 0.01;
  std::optional<double> reference_offset;
  bool allow_nonconverged = false;
  bool uncorrelated = false;
  double outer_tol = 1e-6;
  int outer_max_iter = 500;

  std::string fit_path;
  int max_opportunity = 20;
  std::size_t curve_floor = analytics::kDefaultCurveFloor;

  synth::GenParams sim = synth::default_gen_params();
};

namespace detail {

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::Io, "cannot write '" + tmp.string() + "'");
    os << content;
    if (!os.flush()) throw Error(ErrorCode::Io, "cannot write '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot rename to '" + path.string() + "': " + ec.message());
}

inline std::string read_file(const std::string& path) {
  if (path.empty()) throw Error(ErrorCode::Io, "--input is required");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

inline InputFormat input_format(const RunConfig& c) {
  if (c.format == "csv") return InputFormat::CSV;
  if (c.format == "jsonl") return InputFormat::JSONL;
  if (c.format != "auto") throw Error(ErrorCode::InvalidParameter, "format '" + c.format + "'");
  const auto ext = std::filesystem::path(c.input).extension().string();
  return ext == ".jsonl" || ext == ".ndjson" ? InputFormat::JSONL : InputFormat::CSV;
}

inline std::filesystem::path out_path(const RunConfig& c, const std::string& name) {
  std::error_code ec;
  std::filesystem::create_directories(c.out_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create '" + c.out_dir + "': " + ec.message());
  return std::filesystem::path(c.out_dir) / name;
}

inline Dataset load(const RunConfig& c) {
  c.filter.validate();
  const auto bytes = read_file(c.input);
  return load_dataset(bytes, input_format(c), c.filter, c.filter_fixpoint,
                      std::filesystem::path(c.input).filename().string());
}

inline glmm::FitOptions fit_options(const RunConfig& c) {
  glmm::FitOptions o;
  o.t_scale = c.t_scale;
  o.threads = c.threads;
  o.random_effects_correlated = !c.uncorrelated;
  o.outer_tol = c.outer_tol;
  o.outer_max_iter = c.outer_max_iter;
  return o;
}

inline std::string text_of(const auto& rows) {
  std::ostringstream ss;
  analytics::write_text(ss, rows);
  return ss.str();
}

// Distributions, mastery table and their text forms for one fit.
inline void write_fit_report(const RunConfig& c, const glmm::FitResult& fit, std::ostream& out) {
  const double offset = c.reference_offset.value_or(analytics::default_reference_offset(fit));
  const auto dist = analytics::effect_distributions(fit);
  const auto mastery = analytics::mastery_table(fit, offset);
  nlohmann::ordered_json dj = analytics::to_json(dist);
  dj["iqr_percent_initial_knowledge"] = analytics::iqr_percent_initial_knowledge(fit, offset);
  dj["iqr_percent_learning_rate"] = analytics::iqr_percent_learning_rate(fit, offset);
  nlohmann::ordered_json mj;
  mj["reference_offset"] = offset;
  mj["rows"] = analytics::to_json(std::span<const analytics::MasteryRow>(mastery));
  write_atomic(out_path(c, "distributions.json"), dump(dj));
  write_atomic(out_path(c, "mastery.json"), dump(mj));
  const auto dist_text = text_of(dist);
  const auto mastery_text = text_of(std::span<const analytics::MasteryRow>(mastery));
  write_atomic(out_path(c, "distributions.txt"), dist_text);
  write_atomic(out_path(c, "mastery.txt"), mastery_text);
  out << "student effects (BLUPs, prior SD alongside)\n"
      << dist_text << "\nmastery (reference offset " << analytics::format_number(offset, 4)
      << ")\n"
      << mastery_text;
}

inline std::string curve_csv(const RunConfig& c, const Dataset& d, const glmm::FitResult& fit) {
  const auto points = analytics::learning_curve(
      d, fit, analytics::default_curve_context(c.max_opportunity), c.max_opportunity,
      c.curve_floor);
  std::ostringstream ss;
  analytics::write_curve_csv(ss, points);
  return ss.str();
}

inline glmm::FitResult read_fit(const std::string& path) {
  const auto text = read_file(path);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::DecodeError, "'" + path + "': " + e.what());
  }
  return glmm::fit_result_from_json(j);
}

}  // namespace detail

inline int cmd_ingest(const RunConfig& c, std::ostream& out) {
  const auto d = detail::load(c);
  std::ostringstream csv;
  write_interactions_csv(csv, d.rows);
  const auto summary = detail::dump(to_json(dataset_summary(d)));
  detail::write_atomic(detail::out_path(c, "dataset.csv"), csv.str());
  detail::write_atomic(detail::out_path(c, "summary.json"), summary);
  out << summary;
  return kOk;
}

inline int cmd_fit(const RunConfig& c, std::ostream& out) {
  const auto d = detail::load(c);
  const auto fit = glmm::fit(d, model_by_name(c.model), detail::fit_options(c));
  detail::write_atomic(detail::out_path(c, "fit.json"), detail::dump(glmm::to_json(fit)));
  detail::write_atomic(detail::out_path(c, "curve.csv"), detail::curve_csv(c, d, fit));
  out << fit.spec.name << ": theta_pop " << analytics::format_number(fit.fixed_effects.theta_pop, 4)
      << ", delta_pop " << analytics::format_number(fit.fixed_effects.delta_pop, 5)
      << ", loglik " << analytics::format_number(fit.marginal_loglik, 3)
      << (fit.converged ? ", converged" : ", NOT converged") << "\n";
  for (const auto& w : fit.warnings) out << "warning: " << w << "\n";
  detail::write_fit_report(c, fit, out);
  return fit.converged || c.allow_nonconverged ? kOk : kNotConverged;
}

inline int cmd_ablate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto d = detail::load(c);
  std::vector<glmm::FitResult> fits;
  bool failed = false;
  for (std::size_t i = 0; const auto& spec : ablation_grid()) {
    try {
      auto fit = glmm::fit(d, spec, detail::fit_options(c));
      if (!fit.converged) {
        err << spec.name << ": not converged (gradient norm " << fit.gradient_norm << ")\n";
        failed = failed || !c.allow_nonconverged;
      }
      detail::write_atomic(detail::out_path(c, "fit_m" + std::to_string(i) + ".json"),
                           detail::dump(glmm::to_json(fit)));
      fits.push_back(std::move(fit));
    } catch (const Error& e) {
      err << spec.name << ": " << e.what() << "\n";
      failed = true;
    }
    ++i;
  }
  if (fits.size() != ablation_grid().size()) return kInternalError;

  const auto rows = analytics::ablation_report(fits);
  const std::span<const analytics::AblationRow> rs(rows);
  detail::write_atomic(detail::out_path(c, "ablation.json"), detail::dump(analytics::to_json(rs)));
  detail::write_atomic(detail::out_path(c, "ablation.txt"), detail::text_of(rs));
  out << detail::text_of(rs);
  for (auto f : {glmm::Factor::Level, glmm::Factor::Subject, glmm::Factor::KcType}) {
    const auto table = analytics::factor_effect_table(fits, f);
    const std::span<const analytics::FactorEffectRow> ts(table);
    const std::string name = "factor_" + std::string(glmm::to_string(f));
    detail::write_atomic(detail::out_path(c, name + ".json"), detail::dump(analytics::to_json(ts)));
    detail::write_atomic(detail::out_path(c, name + ".txt"), detail::text_of(ts));
  }
  const auto scatter = analytics::subject_scatter_data(fits);
  detail::write_atomic(detail::out_path(c, "subject_scatter.json"),
                       detail::dump(analytics::to_json(std::span<const analytics::ScatterPoint>(scatter))));
  return failed ? kNotConverged : kOk;
}

inline int cmd_simulate(const RunConfig& c, std::ostream& out) {
  auto p = c.sim;
  p.seed = c.seed;
  const auto g = synth::generate(p);
  std::ostringstream csv;
  write_interactions_csv(csv, g.dataset.rows);
  detail::write_atomic(detail::out_path(c, "interactions.csv"), csv.str());
  detail::write_atomic(detail::out_path(c, "ground_truth.json"),
                       detail::dump(synth::ground_truth_json(p, g)));
  out << g.dataset.rows.size() << " rows, " << g.truth.size() << " students\n";
  return kOk;
}

inline int cmd_curve(const RunConfig& c, std::ostream& out) {
  if (c.fit_path.empty()) throw Error(ErrorCode::InvalidParameter, "--fit is required");
  const auto d = detail::load(c);
  const auto fit = detail::read_fit(c.fit_path);
  const auto csv = detail::curve_csv(c, d, fit);
  detail::write_atomic(detail::out_path(c, "curve.csv"), csv);
  out << csv;
  return kOk;
}

inline int cmd_report(const RunConfig& c, std::ostream& out) {
  if (c.fit_path.empty()) throw Error(ErrorCode::InvalidParameter, "--fit is required");
  const auto fit = detail::read_fit(c.fit_path);
  detail::write_fit_report(c, fit, out);
  return fit.converged || c.allow_nonconverged ? kOk : kNotConverged;
}

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InnerDivergence:
    case ErrorCode::OracleTooLarge:
      return kInternalError;
    default:
      return kInputError;
  }
}

/// Parses arguments and runs one subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  RunConfig c;
  CLI::App app{"Additive-factors learning-curve analytics"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key = value file; flags override it");
  app.add_option("--input", c.input, "interaction log (CSV or JSONL)");
  app.add_option("--out-dir", c.out_dir, "directory for outputs")->capture_default_str();
  app.add_option("--seed", c.seed, "random seed")->capture_default_str();
  app.add_option("--format", c.format, "csv, jsonl or auto")->capture_default_str();
  app.add_option("--threads", c.threads, "worker threads (0: all cores)");
  app.add_option("--min-kc-interactions", c.filter.min_kc_interactions)->capture_default_str();
  app.add_option("--max-opportunity-index", c.filter.max_opportunity_index)->capture_default_str();
  app.add_flag("--filter-fixpoint", c.filter_fixpoint, "repeat filtering until nothing changes");
  app.add_option("--model", c.model, "base or m0..m7")->capture_default_str();
  app.add_option("--t-scale", c.t_scale)->capture_default_str();
  app.add_option("--reference-offset", c.reference_offset,
                 "log-odds added to knowledge in mastery tables (default: modal exercise type)");
  app.add_flag("--allow-nonconverged", c.allow_nonconverged);
  app.add_flag("--uncorrelated", c.uncorrelated, "diagonal random-effect covariance");
  app.add_option("--outer-tol", c.outer_tol)->capture_default_str();
  app.add_option("--outer-max-iter", c.outer_max_iter)->capture_default_str();
  app.add_option("--fit", c.fit_path, "fit JSON written by the fit command");
  app.add_option("--max-opportunity", c.max_opportunity)->capture_default_str();
  app.add_option("--curve-floor", c.curve_floor)->capture_default_str();
  app.add_option("--n-students", c.sim.n_students)->capture_default_str();
  app.add_option("--kcs-per-student", c.sim.kcs_per_student)->capture_default_str();
  app.add_option("--opps-per-kc", c.sim.opps_per_kc)->capture_default_str();
  app.add_option("--theta-pop", c.sim.theta_pop)->capture_default_str();
  app.add_option("--delta-pop", c.sim.delta_pop)->capture_default_str();
  app.add_option("--sd-theta", c.sim.sd_theta)->capture_default_str();
  app.add_option("--sd-delta", c.sim.sd_delta)->capture_default_str();
  app.add_option("--rho", c.sim.rho)->capture_default_str();
  app.add_option("--gamma", c.sim.gamma)->capture_default_str();
  app.add_option("--simplified-first-k", c.sim.simplified_first_k)->capture_default_str();

  auto* ingest = app.add_subcommand("ingest", "parse, index and filter an interaction log");
  auto* fit = app.add_subcommand("fit", "fit one model and write the report");
  auto* ablate = app.add_subcommand("ablate", "fit the 8 ablation models");
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic population");
  auto* curve = app.add_subcommand("curve", "empirical and predicted learning curve");
  auto* report = app.add_subcommand("report", "tables from an existing fit");
  for (auto* sub : {ingest, fit, ablate, simulate, curve, report}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kInputError;
  }

  try {
    if (*ingest) return cmd_ingest(c, out);
    if (*fit) return cmd_fit(c, out);
    if (*ablate) return cmd_ablate(c, out, err);
    if (*simulate) return cmd_simulate(c, out);
    if (*curve) return cmd_curve(c, out);
    if (*report) return cmd_report(c, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
  return kInternalError;
}

}  // namespace iafm::cli
