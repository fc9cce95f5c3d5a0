#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bladefl/bounds.hpp"
#include "bladefl/data.hpp"
#include "bladefl/learner.hpp"
#include "bladefl/params.hpp"
#include "bladefl/protocol.hpp"

namespace bladefl {

inline constexpr const char* kVersion = "bladefl 0.1.0";

struct DatasetConfig {
  std::string kind = "synth";  // synth | idx
  int n_classes = 5;
  int n_features = 16;
  int n_samples = 4000;
  double separation = 0.5;
  std::string images;
  std::string labels;
};

// Everything a run needs. The JSON form mirrors these names; see README.
struct RunConfig {
  SystemParams params;
  std::optional<HardwareModel> hardware;  // overrides alpha and beta when set
  DatasetConfig dataset;
  int samples_per_client = 200;
  std::string partition = "noniid";  // noniid | iid
  int shards_per_client = 2;
  ModelSpec model;
  int batch = 0;
  double dp_noise_var = 0.0;
  unsigned difficulty_bits = 8;
  bool deterministic_mining = true;
  std::uint64_t seed = 1;

  // Bound analysis.
  std::optional<BoundConstants> constants;  // given constants skip estimation
  std::optional<double> theta;              // overrides the measured theta
  int k_min = 1;
  int probes = 24;
  double safety_factor = 1.5;

  void resolve();  // applies the hardware block, then validates the static parameters
  SimulationConfig simulation() const;
};

RunConfig desk_preset();
RunConfig paper_preset();
RunConfig preset(const std::string& name);

// Keys missing from j keep their value in base. Throws InvalidParameter on
// malformed values.
RunConfig config_from_json(const std::string& json_text, RunConfig base = desk_preset());
std::string config_to_json(const RunConfig& cfg, int indent = 2);

struct PreparedData {
  Dataset train;  // N * samples_per_client samples, the union of the shards
  Dataset eval;
  Partition partition;
};

PreparedData prepare_data(const RunConfig& cfg);

struct EstimatedConstants {
  BoundConstants constants;  // after the safety factor
  double raw_L = 0.0;
  double raw_xi = 0.0;
  double init_distance = 0.0;
  double optimum_loss = 0.0;  // F(w*) on the pooled shards
  WeightVector w_star;
};

// L and xi from probe pairs (scaled by the safety factor), phi from the
// reference optimum, delta from the client shards at w0 and w*.
EstimatedConstants estimate_bound_constants(const RunConfig& cfg, const PreparedData& data);

struct CompareRow {
  int k = 0;
  int tau = 0;
  double bound = 0.0;  // +inf if divergent
  double loss = 0.0;   // F(w_bar^K)
  double gap = 0.0;    // F(w_bar^K) - F(w*)
  double accuracy = 0.0;
  double theta_hat = 0.0;
  bool dominates = false;
};

struct CompareReport {
  std::vector<CompareRow> rows;
  EstimatedConstants estimate;
  double dominance_fraction = 0.0;
  int divergent_points = 0;
  int bound_argmin = 0;
  int empirical_argmin = 0;
  int argmin_steps = 0;
  double relative_gap_at_optimum = 0.0;  // (G - gap) / gap at the bound's argmin
  bool lazy = false;
};

// Bound (floored tau) against simulated loss gaps across every feasible K.
CompareReport compare_bound(const RunConfig& cfg, int jobs = 1);

struct SweepSpec {
  std::string axis = "K";  // K alpha beta N eta lazy_ratio sigma2 sigma2_dp
  std::vector<double> grid;
  int repetitions = 1;
  bool vary_seed = true;  // repetition r runs with seed + r
  bool with_bound = false;
  int jobs = 1;
};

struct SweepRow {
  double axis_value = 0.0;
  int repetition = 0;
  std::uint64_t seed = 0;
  int k = 0;
  int tau = 0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  std::optional<double> bound;
  double theta_hat = 0.0;
  bool empirical_argmin = false;
  double wall_seconds = 0.0;
  std::string status = "ok";
};

// One group of rows per repetition, each group in grid order.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, const RunConfig& base);
RunConfig apply_axis(RunConfig cfg, const std::string& axis, double value);

}  // namespace bladefl
