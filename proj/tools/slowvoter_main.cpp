#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "slowvoter/harness.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string default_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SLOWVOTER_RUNS"); env && *env) return env;
  return "./runs";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voter-model membrane toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // --output-root is accepted on either side of the subcommand
  std::string output_root_flag;
  app.add_option("--output-root", output_root_flag, "directory holding run folders");

  // run ------------------------------------------------------------------
  auto* run = app.add_subcommand("run", "execute an experiment preset");
  std::string config_path, preset;
  run->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  run->add_option("--preset", preset, "preset name (defaults apply)");

  // overrides mirror the JSON schema paths; flag > file > preset default
  int d = 0, scale = 0, parallelism = -1;
  double span = 0, alpha = 0, beta = 0, t = 0, u0 = 0;
  double level = 0, plus = 0, minus = 0, intercept = 0, slope = 0;
  double tol_abs = 0, tol_rel = 0;
  std::uint64_t horizon = 0, seed = 0;
  std::int64_t replicas = 0;
  std::string profile_kind;
  std::vector<int> scales;
  auto* o_d = run->add_option("--box.d", d, "lattice dimension");
  auto* o_scale = run->add_option("--box.scale", scale, "lattice parameter N");
  auto* o_span = run->add_option("--box.span", span, "macroscopic half-width");
  auto* o_alpha = run->add_option("--rates.alpha", alpha, "membrane strength");
  auto* o_beta = run->add_option("--rates.beta", beta, "membrane exponent");
  auto* o_t = run->add_option("--t", t, "macroscopic time");
  auto* o_u0 = run->add_option("--u0", u0, "start / probe coordinate");
  auto* o_horizon = run->add_option("--horizon", horizon, "walk step horizon");
  auto* o_scales =
      run->add_option("--scales", scales, "box sizes, comma separated")->delimiter(',');
  auto* o_kind = run->add_option("--profile.kind", profile_kind, "constant|step|ramp");
  auto* o_level = run->add_option("--profile.level", level, "constant level");
  auto* o_plus = run->add_option("--profile.plus", plus, "step level, plus side");
  auto* o_minus = run->add_option("--profile.minus", minus, "step level, minus side");
  auto* o_icpt = run->add_option("--profile.intercept", intercept, "ramp intercept");
  auto* o_slope = run->add_option("--profile.slope", slope, "ramp slope");
  auto* o_reps = run->add_option("--replicas", replicas, "Monte Carlo replicas");
  auto* o_seed = run->add_option("--seed", seed, "base RNG seed");
  auto* o_tabs = run->add_option("--tolerances.abs", tol_abs, "absolute tolerance");
  auto* o_trel = run->add_option("--tolerances.rel", tol_rel, "relative tolerance");
  auto* o_par = run->add_option("--parallelism", parallelism, "worker threads, 0 = auto");

  // compare ----------------------------------------------------------------
  auto* compare = app.add_subcommand("compare", "diff the CSV artifacts of two runs");
  std::string ref_a, ref_b;
  double cmp_abs = 1e-12, cmp_rel = 1e-9;
  compare->add_option("run_a", ref_a, "run id or directory")->required();
  compare->add_option("run_b", ref_b, "run id or directory")->required();
  compare->add_option("--abs", cmp_abs, "per-column max-abs tolerance");
  compare->add_option("--rel", cmp_rel, "per-column max-rel tolerance");

  // list / show --------------------------------------------------------------
  auto* list = app.add_subcommand("list", "list recorded runs, oldest first");
  auto* show = app.add_subcommand("show", "print a run's report.json");
  std::string show_ref;
  show->add_option("run", show_ref, "run id or directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) {
      if (config_path.empty() && preset.empty())
        throw std::invalid_argument("run needs --preset or --config");
      slowvoter::ExperimentConfig cfg = config_path.empty()
                                            ? slowvoter::defaults_for(preset)
                                            : slowvoter::config_from_json(slurp(config_path));
      if (!preset.empty() && !config_path.empty() && cfg.preset != preset)
        throw std::invalid_argument("--preset '" + preset + "' conflicts with config preset '" +
                                    cfg.preset + "'");
      if (o_d->count()) cfg.d = d;
      if (o_scale->count()) cfg.scale = scale;
      if (o_span->count()) cfg.span = span;
      if (o_alpha->count()) cfg.alpha = alpha;
      if (o_beta->count()) cfg.beta = beta;
      if (o_t->count()) cfg.t = t;
      if (o_u0->count()) cfg.u0 = u0;
      if (o_horizon->count()) cfg.horizon = horizon;
      if (o_scales->count()) cfg.scales = scales;
      if (o_kind->count()) cfg.profile.kind = profile_kind;
      if (o_level->count()) cfg.profile.level = level;
      if (o_plus->count()) cfg.profile.plus = plus;
      if (o_minus->count()) cfg.profile.minus = minus;
      if (o_icpt->count()) cfg.profile.intercept = intercept;
      if (o_slope->count()) cfg.profile.slope = slope;
      if (o_reps->count()) cfg.replicas = replicas;
      if (o_seed->count()) cfg.seed = seed;
      if (o_tabs->count()) cfg.tolerances.abs = tol_abs;
      if (o_trel->count()) cfg.tolerances.rel = tol_rel;
      if (o_par->count()) cfg.parallelism = parallelism;
      if (!output_root_flag.empty()) cfg.output_dir = output_root_flag;

      slowvoter::RunRecord rec = slowvoter::run_experiment(cfg);
      std::cout << "run " << rec.run_id << " (" << rec.preset << ") -> " << rec.directory
                << "\n"
                << (rec.pass ? "PASS" : "FAIL") << "\n";
      return rec.pass ? 0 : 1;
    }
    if (compare->parsed()) {
      std::string root = default_root(output_root_flag);
      slowvoter::DiffReport rep = slowvoter::compare_runs(
          slowvoter::resolve_run_dir(root, ref_a), slowvoter::resolve_run_dir(root, ref_b),
          {cmp_abs, cmp_rel});
      std::cout << rep.to_json() << "\n";
      return rep.pass ? 0 : 1;
    }
    if (list->parsed()) {
      for (const auto& s : slowvoter::list_runs(default_root(output_root_flag)))
        std::cout << s.run_id << "  " << s.preset << "  " << s.finished_at << "  "
                  << (s.pass ? "PASS" : "FAIL") << "  " << s.directory << "\n";
      return 0;
    }
    if (show->parsed()) {
      std::string dir = slowvoter::resolve_run_dir(default_root(output_root_flag), show_ref);
      std::cout << slurp((std::filesystem::path(dir) / "report.json").string());
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
