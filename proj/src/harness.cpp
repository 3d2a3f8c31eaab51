#include "slowvoter/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "slowvoter/brownian.hpp"
#include "slowvoter/fluctuation.hpp"
#include "slowvoter/pde.hpp"
#include "slowvoter/walks.hpp"

namespace slowvoter {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string>& preset_names() {
  static const std::set<std::string> names = {
      "hydro-sub",        "hydro-robin",    "hydro-neumann", "invariance",
      "qv-limit",         "martingale-exact", "gamma-estimate",
      "variance-scaling"};
  return names;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string now_utc() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[24];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Work items land in caller-preallocated slots, so the outcome does not
// depend on the degree or on scheduling; only the item index seeds anything.
void parallel_slots(int n, int degree, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (degree <= 0) {
    unsigned hc = std::thread::hardware_concurrency();
    degree = hc ? static_cast<int>(hc) : 1;
  }
  degree = std::min(degree, n);
  if (degree == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  std::exception_ptr err;
  auto worker = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(degree));
  for (int k = 0; k < degree; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

[[noreturn]] void bad_field(const std::string& path, const std::string& msg) {
  throw std::invalid_argument(path + ": " + msg);
}

double need_num(const json& j, const std::string& path) {
  if (!j.is_number()) bad_field(path, "must be a number");
  return j.get<double>();
}

std::int64_t need_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) bad_field(path, "must be an integer");
  return j.get<std::int64_t>();
}

std::uint64_t need_uint(const json& j, const std::string& path) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0))
    bad_field(path, "must be a non-negative integer");
  return j.get<std::uint64_t>();
}

std::string need_str(const json& j, const std::string& path) {
  if (!j.is_string()) bad_field(path, "must be a string");
  return j.get<std::string>();
}

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& prefix) {
  for (const auto& item : j.items())
    if (!known.count(item.key()))
      bad_field(prefix.empty() ? item.key() : prefix + "." + item.key(), "unknown key");
}

json semantic_json(const ExperimentConfig& cfg) {
  json j;
  j["preset"] = cfg.preset;
  j["box"] = {{"d", cfg.d}, {"scale", cfg.scale}, {"span", cfg.span}};
  j["rates"] = {{"alpha", cfg.alpha}, {"beta", cfg.beta}};
  j["t"] = cfg.t;
  j["u0"] = cfg.u0;
  j["horizon"] = cfg.horizon;
  j["scales"] = cfg.scales;
  j["profile"] = {{"kind", cfg.profile.kind},     {"level", cfg.profile.level},
                  {"plus", cfg.profile.plus},     {"minus", cfg.profile.minus},
                  {"intercept", cfg.profile.intercept}, {"slope", cfg.profile.slope}};
  j["replicas"] = cfg.replicas;
  j["seed"] = cfg.seed;
  j["tolerances"] = {{"abs", cfg.tolerances.abs}, {"rel", cfg.tolerances.rel}};
  return j;
}

struct PresetOutput {
  bool pass = false;
  json report;
  std::vector<std::pair<std::string, std::string>> files;
};

double zscore(const Estimate& e) {
  return e.std_error > 0.0 ? e.value / e.std_error : 0.0;
}

// ---- preset runners ---------------------------------------------------------

PresetOutput run_hydro(const ExperimentConfig& cfg) {
  InterfaceCondition cond = InterfaceCondition::none();
  if (cfg.preset == "hydro-robin") cond = InterfaceCondition::robin(cfg.alpha);
  if (cfg.preset == "hydro-neumann") cond = InterfaceCondition::neumann();
  InitialProfile rho0 = cfg.profile.build();
  Grid1D ref = solve_1d(rho0, cfg.t, cond, 0.005, 0.0, cfg.span);

  const int points = 21;
  MembraneRates rates{cfg.alpha, cfg.beta, cfg.scale};
  std::vector<std::int64_t> sites(points);
  for (int i = 0; i < points; ++i) {
    double u = -1.0 + 0.1 * i;
    sites[static_cast<std::size_t>(i)] = std::llround(u * cfg.scale);
  }
  std::vector<Estimate> est(points);
  parallel_slots(points, cfg.parallelism, [&](int i) {
    est[static_cast<std::size_t>(i)] =
        one_point_function({sites[static_cast<std::size_t>(i)]}, cfg.t, rates, rho0,
                           cfg.replicas,
                           cfg.seed + 1000003ull * static_cast<std::uint64_t>(i));
  });

  std::string csv = "u,site,estimate,std_error,reference,abs_diff\n";
  double sup = 0.0;
  for (int i = 0; i < points; ++i) {
    auto k = static_cast<std::size_t>(i);
    double u = static_cast<double>(sites[k]) / cfg.scale;
    Side side = sites[k] <= 0 ? Side::kMinus : Side::kPlus;
    double rv = ref.at(u, side);
    double diff = std::fabs(est[k].value - rv);
    sup = std::max(sup, diff);
    csv += fmt_g(u) + "," + std::to_string(sites[k]) + "," + fmt_g(est[k].value) + "," +
           fmt_g(est[k].std_error) + "," + fmt_g(rv) + "," + fmt_g(diff) + "\n";
  }
  PresetOutput out;
  out.pass = sup <= cfg.tolerances.abs;
  out.report = {{"op", "hydro-profile"},
                {"interface", cfg.preset == "hydro-robin"
                                  ? "robin"
                                  : (cfg.preset == "hydro-neumann" ? "neumann" : "none")},
                {"points", points},
                {"sup_abs_diff", sup},
                {"tolerance_abs", cfg.tolerances.abs},
                {"pass", out.pass}};
  out.files.emplace_back("profile.csv", std::move(csv));
  return out;
}

PresetOutput run_invariance(const ExperimentConfig& cfg) {
  // u0 = 0 starts at the origin; the sign bit selects the side (JSON -0.0
  // reaches here intact)
  Side side = (cfg.u0 < 0.0 || std::signbit(cfg.u0)) ? Side::kMinus : Side::kPlus;
  SignedHalfLinePoint pt{cfg.u0 == 0.0 ? 0.0 : cfg.u0, side};
  SnappingParams params;
  params.alpha = cfg.alpha;
  params.regime = regime_for_beta(cfg.beta);
  MembraneRates rates{cfg.alpha, cfg.beta, cfg.scale};
  double ks = invariance_distance(pt, cfg.t, rates, params, cfg.replicas, cfg.seed);

  PresetOutput out;
  out.pass = ks <= cfg.tolerances.abs;
  out.report = {{"op", "invariance"},        {"regime", regime_name(params.regime)},
                {"u0", cfg.u0},              {"ks_distance", ks},
                {"threshold", cfg.tolerances.abs}, {"pass", out.pass}};
  std::string csv = "u0,beta,t,scale,replicas,ks\n";
  csv += fmt_g(cfg.u0) + "," + fmt_g(cfg.beta) + "," + fmt_g(cfg.t) + "," +
         std::to_string(cfg.scale) + "," + std::to_string(cfg.replicas) + "," +
         fmt_g(ks) + "\n";
  out.files.emplace_back("invariance.csv", std::move(csv));
  return out;
}

PresetOutput run_qv_limit(const ExperimentConfig& cfg) {
  CensoredEstimate gamma = gamma_d(cfg.d, cfg.horizon, cfg.replicas, cfg.seed + 97);
  double c = cfg.profile.level;
  double reference = 4.0 * cfg.d * (1.0 - gamma.value) * c * (1.0 - c);
  MembraneRates rates{cfg.alpha, cfg.beta, cfg.scale};
  InitialProfile rho0 = cfg.profile.build();

  std::int64_t x1 = std::max<std::int64_t>(1, std::llround(std::fabs(cfg.u0) * cfg.scale));
  std::vector<std::int64_t> probes = {x1, -x1};
  std::vector<Estimate> est(probes.size());
  parallel_slots(static_cast<int>(probes.size()), cfg.parallelism, [&](int i) {
    std::vector<std::int64_t> x(static_cast<std::size_t>(cfg.d), 0);
    x[0] = probes[static_cast<std::size_t>(i)];
    est[static_cast<std::size_t>(i)] =
        pair_correlation_qv(x, cfg.t, rates, rho0, cfg.replicas,
                            cfg.seed + 1000003ull * static_cast<std::uint64_t>(i + 1));
  });

  std::string csv = "x1,estimate,std_error,reference,rel_diff\n";
  double max_rel = 0.0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    double rel = std::fabs(est[i].value / reference - 1.0);
    max_rel = std::max(max_rel, rel);
    csv += std::to_string(probes[i]) + "," + fmt_g(est[i].value) + "," +
           fmt_g(est[i].std_error) + "," + fmt_g(reference) + "," + fmt_g(rel) + "\n";
  }
  PresetOutput out;
  out.pass = max_rel <= cfg.tolerances.rel;
  out.report = {{"op", "qv-limit"},
                {"gamma_estimate", gamma.value},
                {"gamma_std_error", gamma.std_error},
                {"reference", reference},
                {"max_rel_diff", max_rel},
                {"tolerance_rel", cfg.tolerances.rel},
                {"pass", out.pass}};
  out.files.emplace_back("qv.csv", std::move(csv));
  return out;
}

PresetOutput run_martingale(const ExperimentConfig& cfg) {
  int n = 2 * static_cast<int>(std::max<std::int64_t>(2, std::llround(cfg.span * cfg.scale)));
  BoxGeometry geom = BoxGeometry::with_site_count(cfg.d, n);
  MembraneRates rates{cfg.alpha, cfg.beta, cfg.scale};
  SBetaFunction H = critical_gaussian_pair(2.0, 1.0, cfg.alpha);
  for (int a = 1; a < cfg.d; ++a) H.perp_parts.push_back(PolyGauss({1.0}, 1.0));
  LatticeConfig init = sample_initial(geom, cfg.profile.build(), cfg.scale, cfg.seed);
  std::vector<double> times = {cfg.t / 2.0, cfg.t};
  MartingaleReport rep =
      martingale_check(init, H, rates, times, cfg.replicas, cfg.seed + 1);

  std::string csv = "t,mean_M,mean_M_se,qv_gap,qv_gap_se,mean_qv,mean_qv_se\n";
  double max_z = 0.0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    max_z = std::max({max_z, std::fabs(zscore(rep.mean_M[k])),
                      std::fabs(zscore(rep.qv_gap[k]))});
    csv += fmt_g(rep.times[k]) + "," + fmt_g(rep.mean_M[k].value) + "," +
           fmt_g(rep.mean_M[k].std_error) + "," + fmt_g(rep.qv_gap[k].value) + "," +
           fmt_g(rep.qv_gap[k].std_error) + "," + fmt_g(rep.mean_qv[k].value) + "," +
           fmt_g(rep.mean_qv[k].std_error) + "\n";
  }
  PresetOutput out;
  out.pass = max_z <= 3.0;
  out.report = {{"op", "martingale-exact"}, {"sites", geom.site_count()},
                {"max_abs_z", max_z},       {"z_limit", 3.0},
                {"pass", out.pass}};
  out.files.emplace_back("martingale.csv", std::move(csv));
  return out;
}

PresetOutput run_gamma(const ExperimentConfig& cfg) {
  CensoredEstimate est = gamma_d(cfg.d, cfg.horizon, cfg.replicas, cfg.seed);
  bool pass;
  if (cfg.d <= 2)
    pass = est.value >= 0.95;  // recurrent: censored mass is all that is missing
  else
    pass = est.value > 0.0 && est.value + 3.0 * est.std_error < 1.0 &&
           est.std_error <= cfg.tolerances.abs;
  std::string csv =
      "dim,horizon,replicas,estimate,std_error,censored_fraction,residual_bound\n";
  csv += std::to_string(cfg.d) + "," + std::to_string(est.horizon_steps) + "," +
         std::to_string(est.replicas) + "," + fmt_g(est.value) + "," +
         fmt_g(est.std_error) + "," + fmt_g(est.censored_fraction) + "," +
         fmt_g(est.residual_bound) + "\n";
  PresetOutput out;
  out.pass = pass;
  out.report = {{"op", "gamma-estimate"},
                {"dim", cfg.d},
                {"estimate", est.value},
                {"std_error", est.std_error},
                {"censored_fraction", est.censored_fraction},
                {"pass", pass}};
  out.files.emplace_back("gamma.csv", std::move(csv));
  return out;
}

PresetOutput run_variance_scaling(const ExperimentConfig& cfg) {
  SBetaFunction H = critical_gaussian_pair(2.0, 1.0, cfg.alpha);
  for (int a = 1; a < cfg.d; ++a) H.perp_parts.push_back(PolyGauss({1.0}, 1.0));
  MembraneRates rates{cfg.alpha, cfg.beta, 1};
  VarianceScalingReport rep = boundary_variance_scaling(
      rates, cfg.profile.build(), H, cfg.d, cfg.scales, cfg.t, cfg.replicas, cfg.seed);

  bool growing = rep.bounds.back() > 0.0;
  for (std::size_t i = 0; i + 1 < rep.bounds.size(); ++i)
    growing = growing && rep.bounds[i] < rep.bounds[i + 1];
  double ceiling = 2.0 * (cfg.d - 1);
  std::string csv = "scale,bound\n";
  for (std::size_t i = 0; i < rep.scales.size(); ++i)
    csv += std::to_string(rep.scales[i]) + "," + fmt_g(rep.bounds[i]) + "\n";
  PresetOutput out;
  out.pass = growing && rep.fitted_exponent <= ceiling;
  out.report = {{"op", "variance-scaling"},
                {"fitted_exponent", rep.fitted_exponent},
                {"exponent_ceiling", ceiling},
                {"pass", out.pass}};
  out.files.emplace_back("scaling.csv", std::move(csv));
  return out;
}

PresetOutput dispatch(const ExperimentConfig& cfg) {
  if (cfg.preset.rfind("hydro-", 0) == 0) return run_hydro(cfg);
  if (cfg.preset == "invariance") return run_invariance(cfg);
  if (cfg.preset == "qv-limit") return run_qv_limit(cfg);
  if (cfg.preset == "martingale-exact") return run_martingale(cfg);
  if (cfg.preset == "gamma-estimate") return run_gamma(cfg);
  return run_variance_scaling(cfg);
}

// csv parsing for compare ------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;
};

CsvTable parse_csv(const std::string& text, const std::string& where) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(where + ": empty artifact");
  std::istringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) t.header.push_back(cell);
  t.columns.resize(t.header.size());
  std::size_t row = 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t col = 0;
    while (std::getline(ls, cell, ',')) {
      if (col >= t.header.size())
        throw std::invalid_argument(where + ": ragged row " + std::to_string(row));
      char* end = nullptr;
      double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0')
        throw std::invalid_argument(where + ": non-numeric cell '" + cell + "'");
      t.columns[col].push_back(v);
      ++col;
    }
    if (col != t.header.size())
      throw std::invalid_argument(where + ": ragged row " + std::to_string(row));
    ++row;
  }
  return t;
}

json load_record(const std::string& dir) {
  json j = json::parse(read_file(fs::path(dir) / "record.json"), nullptr, false);
  if (j.is_discarded())
    throw std::invalid_argument(dir + ": record.json is not valid JSON");
  return j;
}

}  // namespace

// ---- profile ----------------------------------------------------------------

InitialProfile ProfileSpec::build() const {
  if (kind == "constant") return InitialProfile::constant(level);
  if (kind == "step") return InitialProfile::step(plus, minus);
  if (kind == "ramp") return InitialProfile::ramp(intercept, slope);
  throw std::invalid_argument("profile.kind: unknown kind '" + kind + "'");
}

// ---- config plumbing ----------------------------------------------------------

ExperimentConfig defaults_for(const std::string& preset) {
  if (!preset_names().count(preset))
    throw std::invalid_argument("preset: unknown preset '" + preset + "'");
  ExperimentConfig cfg;
  cfg.preset = preset;
  if (preset.rfind("hydro-", 0) == 0) {
    cfg.scale = 500;
    cfg.t = 0.1;
    cfg.replicas = 100000;
    cfg.beta = preset == "hydro-sub" ? 0.5 : (preset == "hydro-robin" ? 1.0 : 2.0);
    cfg.profile = ProfileSpec{"ramp", 0.5, 0.5, 0.5, 0.5, 0.5};
    cfg.tolerances = {0.02, 0.05};
  } else if (preset == "invariance") {
    cfg.scale = 200;
    cfg.t = 0.5;
    cfg.u0 = 1.0;
    cfg.replicas = 100000;
    cfg.tolerances = {0.05, 0.05};
  } else if (preset == "qv-limit") {
    cfg.d = 4;
    cfg.scale = 50;
    cfg.t = 1.0;
    cfg.u0 = 0.5;
    cfg.replicas = 20000;
    cfg.profile = ProfileSpec{"constant", 0.5, 0.5, 0.5, 0.5, 0.5};
    cfg.tolerances = {0.02, 0.10};
  } else if (preset == "martingale-exact") {
    cfg.scale = 1;
    cfg.span = 3.0;
    cfg.t = 0.5;
    cfg.replicas = 100000;
    cfg.profile = ProfileSpec{"ramp", 0.5, 0.5, 0.5, 0.5, 0.3};
  } else if (preset == "gamma-estimate") {
    cfg.d = 3;
    cfg.replicas = 100000;
    cfg.tolerances = {0.005, 0.05};
  } else {  // variance-scaling
    cfg.d = 4;
    cfg.t = 0.5;
    cfg.replicas = 5000;
    cfg.profile = ProfileSpec{"constant", 0.5, 0.5, 0.5, 0.5, 0.5};
  }
  return cfg;
}

ExperimentConfig config_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument("config: not valid JSON");
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  if (!j.contains("preset")) throw std::invalid_argument("preset: required");
  ExperimentConfig cfg = defaults_for(need_str(j["preset"], "preset"));

  reject_unknown(j, {"preset", "box", "rates", "t", "u0", "horizon", "scales",
                     "profile", "replicas", "seed", "tolerances", "parallelism",
                     "output_dir"},
                 "");
  if (j.contains("box")) {
    const json& b = j["box"];
    if (!b.is_object()) bad_field("box", "must be an object");
    reject_unknown(b, {"d", "scale", "span"}, "box");
    if (b.contains("d")) cfg.d = static_cast<int>(need_int(b["d"], "box.d"));
    if (b.contains("scale")) cfg.scale = static_cast<int>(need_int(b["scale"], "box.scale"));
    if (b.contains("span")) cfg.span = need_num(b["span"], "box.span");
  }
  if (j.contains("rates")) {
    const json& r = j["rates"];
    if (!r.is_object()) bad_field("rates", "must be an object");
    reject_unknown(r, {"alpha", "beta"}, "rates");
    if (r.contains("alpha")) cfg.alpha = need_num(r["alpha"], "rates.alpha");
    if (r.contains("beta")) cfg.beta = need_num(r["beta"], "rates.beta");
  }
  if (j.contains("t")) cfg.t = need_num(j["t"], "t");
  if (j.contains("u0")) cfg.u0 = need_num(j["u0"], "u0");
  if (j.contains("horizon")) cfg.horizon = need_uint(j["horizon"], "horizon");
  if (j.contains("scales")) {
    const json& s = j["scales"];
    if (!s.is_array()) bad_field("scales", "must be an array of integers");
    cfg.scales.clear();
    for (const auto& v : s)
      cfg.scales.push_back(static_cast<int>(need_int(v, "scales")));
  }
  if (j.contains("profile")) {
    const json& p = j["profile"];
    if (!p.is_object()) bad_field("profile", "must be an object");
    reject_unknown(p, {"kind", "level", "plus", "minus", "intercept", "slope"},
                   "profile");
    if (p.contains("kind")) cfg.profile.kind = need_str(p["kind"], "profile.kind");
    if (p.contains("level")) cfg.profile.level = need_num(p["level"], "profile.level");
    if (p.contains("plus")) cfg.profile.plus = need_num(p["plus"], "profile.plus");
    if (p.contains("minus")) cfg.profile.minus = need_num(p["minus"], "profile.minus");
    if (p.contains("intercept"))
      cfg.profile.intercept = need_num(p["intercept"], "profile.intercept");
    if (p.contains("slope")) cfg.profile.slope = need_num(p["slope"], "profile.slope");
  }
  if (j.contains("replicas")) cfg.replicas = need_int(j["replicas"], "replicas");
  if (j.contains("seed")) cfg.seed = need_uint(j["seed"], "seed");
  if (j.contains("tolerances")) {
    const json& t = j["tolerances"];
    if (!t.is_object()) bad_field("tolerances", "must be an object");
    reject_unknown(t, {"abs", "rel"}, "tolerances");
    if (t.contains("abs")) cfg.tolerances.abs = need_num(t["abs"], "tolerances.abs");
    if (t.contains("rel")) cfg.tolerances.rel = need_num(t["rel"], "tolerances.rel");
  }
  if (j.contains("parallelism"))
    cfg.parallelism = static_cast<int>(need_int(j["parallelism"], "parallelism"));
  if (j.contains("output_dir")) cfg.output_dir = need_str(j["output_dir"], "output_dir");
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j = semantic_json(cfg);
  j["parallelism"] = cfg.parallelism;
  j["output_dir"] = cfg.output_dir;
  return j.dump(2);
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(semantic_json(cfg).dump())));
  return buf;
}

void validate_config(const ExperimentConfig& cfg) {
  if (!preset_names().count(cfg.preset))
    bad_field("preset", "unknown preset '" + cfg.preset + "'");
  if (cfg.d < 1) bad_field("box.d", "must be >= 1");
  if (cfg.scale < 1) bad_field("box.scale", "must be >= 1");
  if (!(cfg.span > 0.0)) bad_field("box.span", "must be > 0");
  if (!(cfg.alpha > 0.0)) bad_field("rates.alpha", "must be > 0");
  if (!(cfg.beta >= 0.0) || !std::isfinite(cfg.beta))
    bad_field("rates.beta", "must be finite and >= 0");
  if (!(cfg.t >= 0.0) || !std::isfinite(cfg.t)) bad_field("t", "must be finite and >= 0");
  if (!std::isfinite(cfg.u0)) bad_field("u0", "must be finite");
  if (cfg.horizon < 1) bad_field("horizon", "must be >= 1");
  if (cfg.replicas < 1) bad_field("replicas", "must be >= 1");
  if (!(cfg.tolerances.abs > 0.0)) bad_field("tolerances.abs", "must be > 0");
  if (!(cfg.tolerances.rel > 0.0)) bad_field("tolerances.rel", "must be > 0");
  if (cfg.parallelism < 0) bad_field("parallelism", "must be >= 0");
  if (cfg.profile.kind != "constant" && cfg.profile.kind != "step" &&
      cfg.profile.kind != "ramp")
    bad_field("profile.kind", "unknown kind '" + cfg.profile.kind + "'");
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (cfg.profile.kind == "constant" && !in_unit(cfg.profile.level))
    bad_field("profile.level", "must lie in [0,1]");
  if (cfg.profile.kind == "step" &&
      (!in_unit(cfg.profile.plus) || !in_unit(cfg.profile.minus)))
    bad_field("profile.plus/minus", "must lie in [0,1]");
  if (cfg.profile.kind == "ramp" &&
      (!std::isfinite(cfg.profile.intercept) || !std::isfinite(cfg.profile.slope)))
    bad_field("profile.intercept/slope", "must be finite");

  if (cfg.preset.rfind("hydro-", 0) == 0) {
    if (cfg.d != 1) bad_field("box.d", "hydro presets reduce to the membrane axis, need d = 1");
    if (!(cfg.t > 0.0)) bad_field("t", "hydro presets need t > 0");
    if (cfg.preset == "hydro-sub" && !(cfg.beta < 1.0))
      bad_field("rates.beta", "hydro-sub needs beta < 1");
    if (cfg.preset == "hydro-robin" && cfg.beta != 1.0)
      bad_field("rates.beta", "hydro-robin needs beta == 1");
    if (cfg.preset == "hydro-neumann" && !(cfg.beta > 1.0))
      bad_field("rates.beta", "hydro-neumann needs beta > 1");
    if (!(cfg.span >= 2.0)) bad_field("box.span", "solver window must cover |u| <= 1 with room, need span >= 2");
  } else if (cfg.preset == "invariance") {
    if (cfg.d != 1) bad_field("box.d", "invariance tracks the membrane axis, need d = 1");
    if (!(cfg.t > 0.0)) bad_field("t", "invariance needs t > 0");
  } else if (cfg.preset == "qv-limit") {
    if (cfg.d < 3) bad_field("box.d", "qv-limit needs a transient walk, d >= 3");
    if (cfg.profile.kind != "constant")
      bad_field("profile.kind", "qv-limit needs a constant profile");
    if (!(cfg.t > 0.0)) bad_field("t", "qv-limit needs t > 0");
    if (cfg.u0 == 0.0) bad_field("u0", "bulk probe coordinate must be nonzero");
  } else if (cfg.preset == "martingale-exact") {
    if (cfg.d != 1) bad_field("box.d", "martingale-exact runs the chain on a segment, need d = 1");
    if (!(cfg.t > 0.0)) bad_field("t", "martingale-exact needs t > 0");
    double sites = 2.0 * std::max(2.0, std::round(cfg.span * cfg.scale));
    if (sites > 4096) bad_field("box.span", "span * scale too large, box exceeds 4096 sites");
  } else if (cfg.preset == "variance-scaling") {
    if (cfg.d < 2) bad_field("box.d", "variance-scaling needs a membrane plane, d >= 2");
    if (cfg.scales.empty()) bad_field("scales", "need >= 1 box size");
    for (std::size_t i = 0; i < cfg.scales.size(); ++i) {
      if (cfg.scales[i] < 2) bad_field("scales", "box sizes must be >= 2");
      if (i > 0 && cfg.scales[i] <= cfg.scales[i - 1])
        bad_field("scales", "box sizes must increase");
    }
  }
}

// ---- run orchestration --------------------------------------------------------

std::string output_root(const ExperimentConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv("SLOWVOTER_RUNS"); env && *env) return env;
  return "./runs";
}

RunRecord run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);
  RunRecord rec;
  rec.run_id = config_hash(cfg);
  rec.preset = cfg.preset;
  fs::path dir = fs::path(output_root(cfg)) / rec.run_id;
  fs::create_directories(dir);
  rec.directory = dir.string();
  rec.started_at = now_utc();

  PresetOutput out = dispatch(cfg);
  rec.pass = out.pass;
  rec.config_json = config_to_json(cfg);

  write_atomic(dir / "config.json", rec.config_json + "\n");
  rec.artifacts.push_back("config.json");
  for (auto& [name, content] : out.files) {
    write_atomic(dir / name, content);
    rec.artifacts.push_back(name);
  }
  write_atomic(dir / "report.json", out.report.dump(2) + "\n");
  rec.artifacts.push_back("report.json");

  rec.finished_at = now_utc();
  json record = {{"run_id", rec.run_id},
                 {"preset", rec.preset},
                 {"pass", rec.pass},
                 {"started_at", rec.started_at},
                 {"finished_at", rec.finished_at},
                 {"artifacts", rec.artifacts},
                 {"config", json::parse(rec.config_json)}};
  write_atomic(dir / "record.json", record.dump(2) + "\n");
  return rec;
}

// ---- compare / list -------------------------------------------------------------

std::string resolve_run_dir(const std::string& root, const std::string& ref) {
  if (fs::is_directory(ref)) return ref;
  fs::path under = fs::path(root) / ref;
  if (fs::is_directory(under)) return under.string();
  throw std::invalid_argument("run '" + ref + "' not found under " + root);
}

DiffReport compare_runs(const std::string& dir_a, const std::string& dir_b,
                        const ToleranceSpec& tol) {
  json ra = load_record(dir_a);
  json rb = load_record(dir_b);
  std::string pa = ra.value("preset", ""), pb = rb.value("preset", "");
  if (pa != pb)
    throw std::invalid_argument("preset kinds differ: '" + pa + "' vs '" + pb + "'");

  auto csv_names = [](const json& r) {
    std::vector<std::string> names;
    for (const auto& a : r.value("artifacts", json::array()))
      if (a.is_string() && a.get<std::string>().size() > 4 &&
          a.get<std::string>().substr(a.get<std::string>().size() - 4) == ".csv")
        names.push_back(a.get<std::string>());
    std::sort(names.begin(), names.end());
    return names;
  };
  std::vector<std::string> na = csv_names(ra), nb = csv_names(rb);
  if (na != nb) throw std::invalid_argument("artifact sets differ");

  DiffReport rep;
  for (const std::string& name : na) {
    CsvTable a = parse_csv(read_file(fs::path(dir_a) / name), name);
    CsvTable b = parse_csv(read_file(fs::path(dir_b) / name), name);
    if (a.header != b.header) throw std::invalid_argument(name + ": headers differ");
    for (std::size_t c = 0; c < a.header.size(); ++c) {
      if (a.columns[c].size() != b.columns[c].size())
        throw std::invalid_argument(name + ": row counts differ");
      ColumnDiff d;
      d.artifact = name;
      d.column = a.header[c];
      for (std::size_t r = 0; r < a.columns[c].size(); ++r) {
        double x = a.columns[c][r], y = b.columns[c][r];
        double abs = std::fabs(x - y);
        d.max_abs = std::max(d.max_abs, abs);
        double denom = std::max(std::fabs(x), std::fabs(y));
        if (denom > 0.0) d.max_rel = std::max(d.max_rel, abs / denom);
      }
      d.pass = d.max_abs <= tol.abs || d.max_rel <= tol.rel;
      rep.pass = rep.pass && d.pass;
      rep.columns.push_back(std::move(d));
    }
  }
  return rep;
}

std::string DiffReport::to_json() const {
  json j;
  j["op"] = "compare";
  j["pass"] = pass;
  j["columns"] = json::array();
  for (const auto& c : columns)
    j["columns"].push_back({{"artifact", c.artifact},
                            {"column", c.column},
                            {"max_abs", c.max_abs},
                            {"max_rel", c.max_rel},
                            {"pass", c.pass}});
  return j.dump(2);
}

std::vector<RunSummary> list_runs(const std::string& root) {
  std::vector<RunSummary> out;
  if (!fs::is_directory(root)) return out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    fs::path rec = entry.path() / "record.json";
    if (!fs::exists(rec)) continue;
    json j = json::parse(read_file(rec), nullptr, false);
    if (j.is_discarded()) continue;
    RunSummary s;
    s.run_id = j.value("run_id", entry.path().filename().string());
    s.preset = j.value("preset", "");
    s.finished_at = j.value("finished_at", "");
    s.pass = j.value("pass", false);
    s.directory = entry.path().string();
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const RunSummary& a, const RunSummary& b) {
    return a.finished_at != b.finished_at ? a.finished_at < b.finished_at
                                          : a.run_id < b.run_id;
  });
  return out;
}

}  // namespace slowvoter
