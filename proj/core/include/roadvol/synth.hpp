#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "roadvol/dual.hpp"
#include "roadvol/kvconfig.hpp"
#include "roadvol/model.hpp"
#include "roadvol/primal.hpp"

namespace roadvol::synth {

using model::NormStats;

// Synthetic grid network + traffic generator. Volumes follow per-class
// demand shapes scaled by capacity and a node factor that mixes upstream
// neighbor demand, so ground truth is direction-sensitive by construction.
// Speeds derive from utilization through a smooth congestion curve with an
// optional free-flow plateau where speed carries no volume information.
struct SynthConfig {
  int grid_rows = 5;
  int grid_cols = 5;
  double p_oneway = 0.3;
  double sensor_fraction = 0.3;

  double cap_per_lane = 900.0;  // veh/h per lane
  double alpha = 1.0;           // congestion curve steepness
  double beta = 2.0;            // congestion curve exponent
  double free_flow_threshold = 0.0;  // utilization under which speed stays at free flow
  double speed_noise = 0.0;          // relative std of multiplicative speed noise
  double demand_scale = 0.65;        // overall utilization level
  double upstream_mix = 0.4;         // share of demand driven by upstream neighbors
  double node_factor_spread = 0.25;  // per-node demand factor in [1-s, 1+s]
  double missing_rate = 0.0;         // per (sensor, day) probability of a missing profile

  bool raw_days = false;  // per-day jitter instead of typical weekday profiles
  int raw_days_per_weekday = 3;
  double raw_jitter = 0.15;

  int T = 96;
  int Tprime = 24;
  std::uint64_t seed = 1;

  void validate() const;
  void to_kv(KvConfig& kv, const std::string& prefix = "synth.") const;
  static SynthConfig from_kv(const KvConfig& kv, const std::string& prefix = "synth.");
};

// Normalized demand shape for a functional class at a weekday hour, in (0,1].
double demand_profile(int functional_class, int weekday, int hour);

// Speed from utilization u = q/capacity: free flow at u <= threshold, then
// ffs / (1 + alpha * ((u-threshold)/(1-threshold))^beta).
double congestion_speed(double ffs, double utilization, double alpha, double beta, double threshold);

// Inverse of the threshold-free curve: utilization from an exact speed.
double invert_speed(double ffs, double v, double alpha, double beta);

// Grid-shaped primal graph; every maneuver permitted except U-turns.
graph::PrimalGraph gen_network(const SynthConfig& cfg);

// Fills day columns, speed tensor (all nodes), sensor set and observed
// volumes (sensor nodes only, with missing-rate dropouts) on the dual graph.
void gen_traffic(graph::DualGraph& dual, const SynthConfig& cfg);

// Ground-truth hourly volume for any node/day, regardless of sensor status.
std::vector<double> true_volume_profile(const graph::DualGraph& dual, const SynthConfig& cfg, int node, int day);

// ---------------------------------------------------------------------------

struct Sample {
  graph::Subgraph sg;
  std::vector<double> target;  // Tprime observed volumes, original units
  int node = -1;
  int day = -1;
  int weekday = -1;
  int target_fc = 0;  // functional class of the target node
};

struct Dataset {
  std::vector<Sample> samples;
  int T = 0;
  int Tprime = 0;
  int skipped = 0;  // (sensor, day) pairs dropped for missing volumes
};

// One sample per (labeled node, day column); pairs with missing volumes are
// skipped and counted.
Dataset assemble_dataset(const graph::DualGraph& dual, int K);

// Fits feature/speed z-scores and the volume scale on the given training
// samples only. Zero-variance columns keep scale 1 and emit a warning.
NormStats fit_norm_stats(const Dataset& ds, const std::vector<int>& train_idx,
                         std::vector<std::string>* warnings = nullptr);

}  // namespace roadvol::synth
