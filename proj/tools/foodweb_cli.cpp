// Command-line front end: ingest -> fit -> summarize -> plotdata / dic,
// plus simulate/recover for synthetic-data studies.
//
// Exit codes: 0 success, 2 validation error, 3 convergence failure,
// 4 numerical failure.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "foodweb/diagnostics.hpp"
#include "foodweb/postproc.hpp"
#include "foodweb/runconfig.hpp"
#include "foodweb/synthgen.hpp"

namespace fs = std::filesystem;
using namespace foodweb;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitConvergence = 3;
constexpr int kExitNumerical = 4;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::string out_dir = ".";
};

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty()) cfg = RunConfig::from_file(opts.config_path);
  for (const auto& ov : opts.overrides) {
    auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw ValidationError("override must be key=value: " + ov);
    cfg.set(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  return cfg;
}

fs::path out_path(const CommonOpts& opts, const std::string& name) {
  fs::create_directories(opts.out_dir);
  return fs::path(opts.out_dir) / name;
}

std::vector<ParameterState> states_from_table(const ChainTable& ct,
                                              const ModelSpec& spec,
                                              const ReducedWeb& web) {
  auto names = parameter_names(spec, web);
  if (ct.names != names)
    throw ValidationError(
        "chain file columns do not match the model spec and web");
  std::vector<ParameterState> states;
  states.reserve(ct.draws.rows());
  for (int r = 0; r < ct.draws.rows(); ++r)
    states.push_back(unflatten_state(ct.draws.row(r), spec, web));
  return states;
}

int cmd_ingest(const CommonOpts& opts, const RunConfig& cfg) {
  std::string diet = cfg.get("diet"), meta = cfg.get("meta");
  if (diet.empty() || meta.empty())
    throw ValidationError("ingest requires --diet and --meta");
  ModelSpec spec = cfg.model_spec();
  DietMatrix m = load_diet_matrix(diet, meta);
  ReducedWeb web = assemble_reduced_web(m, spec.mode, spec.covariates);
  for (const auto& w : web.warnings) std::cerr << "warning: " << w << "\n";
  write_reduced_web(web, out_path(opts, "reducedweb.csv").string());
  write_cardinality_report(web, out_path(opts, "reducedweb.sets.txt").string());
  cfg.write_manifest(out_path(opts, "ingest.manifest.txt").string());
  std::cout << "nodes: " << web.n << "  links: " << web.n_links()
            << "  |I1|=" << web.nodes.basal.size()
            << " |I2|=" << web.nodes.middle.size()
            << " |I3|=" << web.nodes.top.size()
            << "  |S1|=" << web.dyads.mutual.size()
            << " |S2|=" << web.dyads.send_only.size()
            << " |S3|=" << web.dyads.receive_only.size() << "\n";
  return kExitOk;
}

int cmd_fit(const CommonOpts& opts, const RunConfig& cfg) {
  std::string web_path = cfg.get("web");
  if (web_path.empty()) throw ValidationError("fit requires --web");
  ModelSpec spec = cfg.model_spec();
  SamplerConfig sc = cfg.sampler_config();
  ReducedWeb web = read_reduced_web(web_path, spec.mode);
  if (static_cast<int>(spec.covariates.size()) != web.L())
    throw ValidationError(
        "covariate subset does not match the web file's columns");
  for (int c = 0; c < web.L(); ++c)
    if (spec.covariates[c] != web.covariate_names[c])
      throw ValidationError("covariate mismatch: spec has '" +
                            spec.covariates[c] + "', web file has '" +
                            web.covariate_names[c] + "'");

  auto chains = run_chains(spec, web, sc);
  for (const auto& chain : chains) {
    if (chain.error_flag) {
      std::cerr << "numerical failure in chain " << chain.chain_index << ": "
                << chain.error_msg << "\n";
      return kExitNumerical;
    }
    write_chain_csv(chain, web,
                    out_path(opts, "chain" + std::to_string(chain.chain_index) +
                                       ".csv")
                        .string());
  }
  std::vector<std::string> extra = {"web = " + web_path};
  for (const auto& c : chains)
    extra.push_back("accept_rate_z_chain" + std::to_string(c.chain_index) +
                    " = " + csv::format_double(c.accept_rate_z));
  cfg.write_manifest(out_path(opts, "fit.manifest.txt").string(), extra);

  if (sc.n_chains >= 2 &&
      static_cast<int>(chains[0].draws.size()) >= 50) {
    DiagReport rep = diagnostics(chains, web);
    std::ofstream dout(out_path(opts, "diagnostics.txt"));
    dout << "parameter,rhat,ess\n";
    for (const auto& p : rep.params)
      dout << p.name << "," << p.rhat << "," << p.ess << "\n";
    dout << "# converged = " << (rep.converged ? "yes" : "no") << "\n";
    std::cout << "convergence verdict: "
              << (rep.converged ? "converged"
                                : (rep.inconclusive ? "inconclusive"
                                                    : "NOT converged"))
              << " (max split-Rhat " << rep.max_rhat() << ")\n";
    if (!rep.converged && !cfg.get_bool("allow_nonconverged", false))
      return kExitConvergence;
  } else {
    std::cout << "diagnostics skipped (need >=2 chains and >=50 draws)\n";
  }
  return kExitOk;
}

ModelSpec spec_for_chain(const RunConfig& cfg) { return cfg.model_spec(); }

int cmd_summarize(const CommonOpts& opts, const RunConfig& cfg,
                  const std::vector<std::string>& chain_files) {
  if (chain_files.empty()) throw ValidationError("no chain files given");
  ChainTable merged = read_chain_csv(chain_files[0]);
  for (size_t i = 1; i < chain_files.size(); ++i) {
    ChainTable t = read_chain_csv(chain_files[i]);
    if (t.names != merged.names)
      throw ValidationError("chain files have differing columns");
    Eigen::MatrixXd both(merged.draws.rows() + t.draws.rows(),
                         merged.draws.cols());
    both << merged.draws, t.draws;
    merged.draws = std::move(both);
  }
  Summary s = summarize(merged);
  write_summary_csv(s, out_path(opts, "summary.csv").string());
  cfg.write_manifest(out_path(opts, "summarize.manifest.txt").string());
  std::cout << "wrote summary for " << s.params.size() << " parameters ("
            << merged.draws.rows() << " pooled draws)\n";
  return kExitOk;
}

int cmd_plotdata(const CommonOpts& opts, const RunConfig& cfg,
                 const std::vector<std::string>& chain_files,
                 const std::string& which, bool with_cloud) {
  std::string web_path = cfg.get("web");
  if (web_path.empty()) throw ValidationError("plotdata requires --web");
  ModelSpec spec = spec_for_chain(cfg);
  ReducedWeb web = read_reduced_web(web_path, spec.mode);
  std::vector<ParameterState> states;
  for (const auto& f : chain_files) {
    auto part = states_from_table(read_chain_csv(f), spec, web);
    states.insert(states.end(), part.begin(), part.end());
  }
  GraphKind kind;
  if (which == "sr")
    kind = GraphKind::sr;
  else if (which == "u")
    kind = GraphKind::u;
  else if (which == "v")
    kind = GraphKind::v;
  else
    throw ValidationError("plot kind must be sr|u|v");
  GraphData g = emit_graph_data(states, spec, web, kind, with_cloud);
  write_graph_csv(g, web, out_path(opts, which + "_points.csv").string(),
                  out_path(opts, "arrows.csv").string(),
                  with_cloud ? out_path(opts, which + "_cloud.csv").string()
                             : "");
  std::cout << "wrote " << g.means.size() << " node positions\n";
  return kExitOk;
}

int cmd_dic(const CommonOpts& opts, const RunConfig& cfg,
            const std::vector<std::string>& chain_files) {
  std::string web_path = cfg.get("web");
  if (web_path.empty()) throw ValidationError("dic requires --web");
  ModelSpec spec = spec_for_chain(cfg);
  ReducedWeb web = read_reduced_web(web_path, spec.mode);
  std::vector<ParameterState> states;
  for (const auto& f : chain_files) {
    auto part = states_from_table(read_chain_csv(f), spec, web);
    states.insert(states.end(), part.begin(), part.end());
  }
  DicResult d = compute_dic(states, spec, web);
  std::ofstream out(out_path(opts, "dic.txt"));
  out << "DIC = " << d.dic << "\nDbar = " << d.dbar << "\npD = " << d.pd
      << "\n";
  std::cout << "DIC = " << d.dic << " (Dbar " << d.dbar << ", pD " << d.pd
            << ")\n";
  return kExitOk;
}

int cmd_simulate(const CommonOpts& opts, const RunConfig& cfg, int n,
                 double density, double mutual_frac) {
  ModelSpec spec = cfg.model_spec();
  SynthConfig sc;
  sc.spec = spec;
  sc.n = n;
  sc.density = density;
  sc.mutual_frac = mutual_frac;
  sc.seed = static_cast<std::uint64_t>(cfg.get_long("seed", 1));
  sc.beta = Eigen::VectorXd::Zero(static_cast<int>(spec.covariates.size()) + 1);
  sc.beta(0) = 1.0;
  for (int c = 1; c < sc.beta.size(); ++c) sc.beta(c) = 0.5;
  auto [web, truth] = generate_web(sc);
  write_reduced_web(web, out_path(opts, "synthweb.csv").string());
  write_cardinality_report(web, out_path(opts, "synthweb.sets.txt").string());
  PosteriorChain truth_chain;
  truth_chain.spec = spec;
  truth_chain.draws.push_back(truth);
  write_chain_csv(truth_chain, web, out_path(opts, "truth.csv").string());
  cfg.write_manifest(out_path(opts, "simulate.manifest.txt").string());
  std::cout << "simulated web: " << web.n << " nodes, " << web.n_links()
            << " links\n";
  return kExitOk;
}

int cmd_recover(const CommonOpts& opts, const RunConfig& cfg, int n,
                int n_replicates) {
  ModelSpec spec = cfg.model_spec();
  SynthConfig sc;
  sc.spec = spec;
  sc.n = n;
  sc.seed = static_cast<std::uint64_t>(cfg.get_long("seed", 1));
  sc.beta = Eigen::VectorXd::Zero(static_cast<int>(spec.covariates.size()) + 1);
  sc.beta(0) = 1.0;
  for (int c = 1; c < sc.beta.size(); ++c) sc.beta(c) = 0.5;
  SamplerConfig scfg = cfg.sampler_config();
  std::vector<std::string> track = {"beta0", "rho", "rho_sr", "sigma2"};
  for (size_t c = 0; c < spec.covariates.size(); ++c)
    track.push_back("beta" + std::to_string(c + 1));
  RecoveryReport rep = recovery_study(sc, scfg, n_replicates, track);
  std::ofstream out(out_path(opts, "recovery.txt"));
  out << "replicates = " << rep.n_replicates << "\n"
      << "converged = " << rep.n_converged << "\n"
      << "excluded = " << rep.n_excluded << "\n"
      << "parameter,coverage90,bias\n";
  for (const auto& p : rep.params)
    out << p.name << "," << p.covered << "/" << rep.n_converged << ","
        << p.bias << "\n";
  cfg.write_manifest(out_path(opts, "recover.manifest.txt").string());
  std::cout << "recovery study complete: " << rep.n_converged << "/"
            << rep.n_replicates << " replicates usable\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reduced weighted food-web social network model"};
  app.require_subcommand(1);

  CommonOpts opts;
  RunConfig flag_cfg;
  std::string diet, meta, web_path, mode, covariates, pin_scale;
  bool interaction = false, random_slopes = false, allow_nonconv = false;
  long chains = -1, iters = -1, burnin = -1, thin = -1, seed = -1;
  double a_hyper = -1.0;
  std::vector<std::string> chain_files;
  std::string which = "sr";
  bool with_cloud = false;
  int synth_n = 30, n_replicates = 20;
  double density = 0.35, mutual_frac = 0.15;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "key=value config file");
    sub->add_option("--set", opts.overrides,
                    "config override key=value (repeatable)");
    sub->add_option("--out", opts.out_dir, "output directory");
    sub->add_option("--mode", mode, "population|per_adult");
    sub->add_option("--covariates", covariates,
                    "comma list from {taxdist,prey_biomass,prey_harvest,"
                    "pred_biomass,pred_harvest}, or all|none");
    sub->add_flag("--interaction", interaction, "include the u'v term");
    sub->add_flag("--random-slopes", random_slopes,
                  "per-receiver slope on pred_harvest");
    sub->add_option("--chains", chains);
    sub->add_option("--iters", iters);
    sub->add_option("--burnin", burnin);
    sub->add_option("--thin", thin);
    sub->add_option("--seed", seed);
    sub->add_option("--a", a_hyper, "prior diffuseness hyperparameter");
    sub->add_option("--pin-scale", pin_scale, "sd|var");
    sub->add_flag("--allow-nonconverged", allow_nonconv,
                  "downgrade convergence failure to a warning");
  };

  CLI::App* ingest = app.add_subcommand("ingest", "diet matrix -> reduced web");
  ingest->add_option("--diet", diet, "diet percentage CSV")->required();
  ingest->add_option("--meta", meta, "node metadata CSV")->required();
  add_common(ingest);

  CLI::App* fit = app.add_subcommand("fit", "run MCMC on a reduced web");
  fit->add_option("--web", web_path, "reduced web CSV")->required();
  add_common(fit);

  CLI::App* summ = app.add_subcommand("summarize", "chain CSVs -> summary.csv");
  summ->add_option("chain_files", chain_files, "chain CSV files")->required();
  add_common(summ);

  CLI::App* plot = app.add_subcommand("plotdata", "chain CSVs -> graph CSVs");
  plot->add_option("chain_files", chain_files, "chain CSV files")->required();
  plot->add_option("--web", web_path, "reduced web CSV")->required();
  plot->add_option("--which", which, "sr|u|v");
  plot->add_flag("--cloud", with_cloud, "also write per-draw positions");
  add_common(plot);

  CLI::App* dic = app.add_subcommand("dic", "chain CSVs -> dic.txt");
  dic->add_option("chain_files", chain_files, "chain CSV files")->required();
  dic->add_option("--web", web_path, "reduced web CSV")->required();
  add_common(dic);

  CLI::App* sim = app.add_subcommand("simulate", "generate a synthetic web");
  sim->add_option("--n", synth_n, "node count");
  sim->add_option("--density", density);
  sim->add_option("--mutual-frac", mutual_frac);
  add_common(sim);

  CLI::App* rec = app.add_subcommand("recover", "parameter recovery study");
  rec->add_option("--n", synth_n, "node count per replicate");
  rec->add_option("--replicates", n_replicates);
  add_common(rec);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = resolve_config(opts);
    // flag overrides beat config-file values
    if (!diet.empty()) cfg.set("diet", diet);
    if (!meta.empty()) cfg.set("meta", meta);
    if (!web_path.empty()) cfg.set("web", web_path);
    if (!mode.empty()) cfg.set("mode", mode);
    if (!covariates.empty()) cfg.set("covariates", covariates);
    if (interaction) cfg.set("interaction", "true");
    if (random_slopes) cfg.set("random_slopes", "true");
    if (allow_nonconv) cfg.set("allow_nonconverged", "true");
    if (chains >= 0) cfg.set("chains", std::to_string(chains));
    if (iters >= 0) cfg.set("iters", std::to_string(iters));
    if (burnin >= 0) cfg.set("burnin", std::to_string(burnin));
    if (thin >= 0) cfg.set("thin", std::to_string(thin));
    if (seed >= 0) cfg.set("seed", std::to_string(seed));
    if (a_hyper >= 0.0) cfg.set("a", csv::format_double(a_hyper));
    if (!pin_scale.empty()) cfg.set("pin_scale", pin_scale);

    if (ingest->parsed()) return cmd_ingest(opts, cfg);
    if (fit->parsed()) return cmd_fit(opts, cfg);
    if (summ->parsed()) return cmd_summarize(opts, cfg, chain_files);
    if (plot->parsed())
      return cmd_plotdata(opts, cfg, chain_files, which, with_cloud);
    if (dic->parsed()) return cmd_dic(opts, cfg, chain_files);
    if (sim->parsed())
      return cmd_simulate(opts, cfg, synth_n, density, mutual_frac);
    if (rec->parsed()) return cmd_recover(opts, cfg, synth_n, n_replicates);
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}
