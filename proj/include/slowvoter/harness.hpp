#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slowvoter/profile.hpp"

namespace slowvoter {

// Initial / probe density in the JSON schema. kind selects which of the
// remaining fields matter; ramps are clipped to [0,1] by the profile itself.
struct ProfileSpec {
  std::string kind = "ramp";  // constant | step | ramp
  double level = 0.5;
  double plus = 0.5;
  double minus = 0.5;
  double intercept = 0.5;
  double slope = 0.5;
  InitialProfile build() const;
};

struct ToleranceSpec {
  double abs = 0.02;
  double rel = 0.05;
};

// One experiment. The JSON schema mirrors the nesting used here, and CLI
// flags mirror the schema paths (--rates.alpha overrides rates.alpha):
//
//   {
//     "preset": "hydro-robin",
//     "box": {"d": 1, "scale": 500, "span": 4.0},
//     "rates": {"alpha": 1.0, "beta": 1.0},
//     "t": 0.1,
//     "u0": 1.0,
//     "horizon": 100000,
//     "scales": [8, 16, 32],
//     "profile": {"kind": "ramp", "intercept": 0.5, "slope": 0.5},
//     "replicas": 100000,
//     "seed": 1,
//     "tolerances": {"abs": 0.02, "rel": 0.05},
//     "parallelism": 0,
//     "output_dir": ""
//   }
//
// Presets:
//   hydro-sub, hydro-robin, hydro-neumann
//       dual-walk one-point profile on 21 points |u1| <= 1 against the 1d
//       solver with the matching interface (free / robin(alpha) / blocked);
//       pass when the sup abs difference is within tolerances.abs
//   invariance
//       KS distance between the rescaled membrane-walk endpoint started at
//       u0 and the regime limit process; pass within tolerances.abs
//   qv-limit
//       per-site quadratic-variation expectation at bulk sites +-u0 against
//       4 d (1 - gamma_d) rho (1 - rho); pass within tolerances.rel
//   martingale-exact
//       Dynkin-ledger z-scores on the span-box chain at times {t/2, t};
//       pass when every |z| <= 3
//   gamma-estimate
//       return probability of the simple d-dimensional walk at the step
//       horizon; recurrent dims must reach 0.95, transient dims must stay
//       inside (0,1) with std_error within tolerances.abs
//   variance-scaling
//       covariance upper bound for the plane observable across box scales;
//       pass when bounds grow and the fitted exponent stays at or below the
//       squared-volume order 2(d-1)
//
// output_dir and parallelism are plumbing: they do not enter the config
// hash, and results are independent of the parallelism degree (work items
// land in preallocated slots and are reduced in index order).
struct ExperimentConfig {
  std::string preset;
  int d = 1;
  int scale = 100;  // lattice parameter N
  double span = 4.0;
  double alpha = 1.0;
  double beta = 1.0;
  double t = 0.1;
  double u0 = 1.0;
  std::uint64_t horizon = 100000;
  std::vector<int> scales = {8, 16, 32};
  ProfileSpec profile;
  std::int64_t replicas = 10000;
  std::uint64_t seed = 1;
  ToleranceSpec tolerances;
  int parallelism = 0;  // 0 = hardware concurrency
  std::string output_dir;
};

// Preset defaults; explicit config fields override them. Unknown preset
// names are invalid arguments.
ExperimentConfig defaults_for(const std::string& preset);

// Parse a config document: "preset" is required, everything else overlays
// the preset defaults. Unknown keys and type mismatches are invalid
// arguments naming the offending schema path.
ExperimentConfig config_from_json(const std::string& text);

// Full snapshot including plumbing fields, canonical key order.
std::string config_to_json(const ExperimentConfig& cfg);

// 16 hex digits over the semantic fields (everything except output_dir and
// parallelism). Stable across re-serialization of the same config.
std::string config_hash(const ExperimentConfig& cfg);

// Field-level validation; throws invalid_argument with "path: message".
void validate_config(const ExperimentConfig& cfg);

struct RunRecord {
  std::string run_id;
  std::string directory;
  std::string preset;
  bool pass = false;
  std::string started_at;   // UTC, second resolution
  std::string finished_at;
  std::vector<std::string> artifacts;  // file names inside directory
  std::string config_json;
};

// Executes the preset and writes config.json, the preset artifacts
// (CSV + report.json), and record.json under <output root>/<run_id>/.
// Numeric artifacts are bit-reproducible for a given (config, seed); all
// files are written to a temp name and renamed into place.
RunRecord run_experiment(const ExperimentConfig& cfg);

// Root resolution: cfg.output_dir, else $SLOWVOTER_RUNS, else ./runs.
std::string output_root(const ExperimentConfig& cfg);

// A run reference is a directory path or a run_id under root.
std::string resolve_run_dir(const std::string& root, const std::string& ref);

struct ColumnDiff {
  std::string artifact;
  std::string column;
  double max_abs = 0.0;
  double max_rel = 0.0;
  bool pass = true;
};

// Per-column comparison of the CSV artifacts of two runs of the same
// preset. A column passes when its max-abs or its max-rel difference is
// within the spec. Different presets, artifact sets, headers, or row
// counts are schema errors (invalid_argument).
struct DiffReport {
  std::vector<ColumnDiff> columns;
  bool pass = true;
  std::string to_json() const;
};
DiffReport compare_runs(const std::string& dir_a, const std::string& dir_b,
                        const ToleranceSpec& tol);

struct RunSummary {
  std::string run_id;
  std::string preset;
  std::string finished_at;
  std::string directory;
  bool pass = false;
};

// All runs under root carrying a readable record.json, oldest first.
std::vector<RunSummary> list_runs(const std::string& root);

}  // namespace slowvoter
