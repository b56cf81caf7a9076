#pragma once
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "roadvol/kvconfig.hpp"
#include "roadvol/model.hpp"
#include "roadvol/synth.hpp"

namespace roadvol::train {

using diff::ParamStore;
using diff::Tape;
using diff::Tensor;
using model::ModelConfig;
using model::NormStats;
using model::VolumeModel;
using synth::Dataset;

struct TrainConfig {
  double huber_delta = 50.0;
  int batch_size = 64;
  int epochs = 100;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double val_fraction = 0.2;  // fraction of SENSOR NODES held out
  int patience = 15;          // early-stop patience on validation GEH
  int workers = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  void validate() const;
  void to_kv(KvConfig& kv, const std::string& prefix = "train.") const;
  static TrainConfig from_kv(const KvConfig& kv, const std::string& prefix = "train.");
};

struct MetricsReport {
  double rmse = 0.0;
  double mape = 0.0;  // %, hours with zero ground truth masked
  double geh = 0.0;   // mean GEH over all pooled hourly pairs
  double pct_geh_gt5 = 0.0;  // %
};

double geh_stat(double estimated, double observed);

// Pooled over all pairs; throws on empty input.
MetricsReport compute_metrics(std::span<const double> predicted, std::span<const double> observed);

// Mean elementwise Huber between two same-length profiles in original units.
Tensor huber_profile_loss(Tensor predicted, Tensor observed, double delta);

// Sensor-level split: val gets round(fraction*|labeled|) sensors; every day
// sample of a validation sensor stays out of training.
std::pair<std::vector<int>, std::vector<int>> split_sensors(const std::vector<int>& labeled, double fraction,
                                                            std::uint64_t seed);

// Sample indices of a dataset restricted to a sensor set.
std::vector<int> samples_of_sensors(const Dataset& ds, const std::vector<int>& sensors);

class Adam {
 public:
  Adam(const ParamStore& store, double beta1, double beta2, double eps);
  void step(ParamStore& store, double lr);

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_geh = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> curve;
  int best_epoch = -1;
  double best_val_geh = 0.0;
};

// Mini-batch training with the adaptive-moment optimizer; loss on the target
// node only, in original units. Leaves the store at the best-validation
// checkpoint. Aborts with NumericError on divergence.
TrainResult train_model(const VolumeModel& model, ParamStore& store, const Dataset& ds,
                        const std::vector<int>& train_idx, const std::vector<int>& val_idx, const NormStats& norm,
                        const TrainConfig& cfg, std::uint64_t seed);

// Eval-mode prediction for one subgraph: original units, clamped at zero.
std::vector<double> predict_profile(const VolumeModel& model, const ParamStore& store, const graph::Subgraph& sg,
                                    const NormStats& norm);

MetricsReport evaluate_samples(const VolumeModel& model, const ParamStore& store, const Dataset& ds,
                               const std::vector<int>& idx, const NormStats& norm);

// Per-functional-class mean volume profile per weekday, fitted on training
// samples. The reference point the learned model has to beat.
class ClassMeanBaseline {
 public:
  ClassMeanBaseline(const Dataset& ds, const std::vector<int>& train_idx);
  std::vector<double> predict(int functional_class, int weekday) const;
  MetricsReport evaluate(const Dataset& ds, const std::vector<int>& idx) const;

 private:
  int tprime_ = 0;
  std::vector<double> class_sum_;  // [5][7][Tprime]
  std::vector<int> class_count_;   // [5][7]
  std::vector<double> global_sum_;  // [7][Tprime]
  std::vector<int> global_count_;   // [7]
};

// Forward on the K-hop subgraph of every node (labeled and unlabeled) for
// one day column; rows clamped at zero, original units.
std::vector<std::vector<double>> infer_network(const VolumeModel& model, const ParamStore& store,
                                               const graph::DualGraph& dual, int day, const NormStats& norm);

// ---------------------------------------------------------------------------
// file-level helpers shared by the CLI and the acceptance suite
// ---------------------------------------------------------------------------

void write_loss_curve_csv(const std::string& path, const std::vector<EpochStats>& curve);

struct ResultRow {
  std::string model;
  std::string seed;  // seed number or "mean"
  MetricsReport metrics;
};
void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows);

MetricsReport mean_metrics(const std::vector<MetricsReport>& per_seed);

// Checkpoint = flat float64 binary + text manifest + key=value config with
// the model configuration and normalization stats.
void save_checkpoint(const std::string& prefix, const ParamStore& store, const ModelConfig& mcfg,
                     const NormStats& norm, const KvConfig* extra = nullptr);
void load_checkpoint(const std::string& prefix, ParamStore& store, ModelConfig& mcfg, NormStats& norm);

// Trains one variant for one seed on a dataset: seed-keyed split, train-only
// normalization, training, validation metrics. Parameters live in store_out.
struct SeedRunResult {
  MetricsReport val_metrics;
  TrainResult train;
  NormStats norm;
  std::vector<int> train_sensors, val_sensors;
  std::unique_ptr<VolumeModel> model;
};
SeedRunResult run_seed(const ModelConfig& mcfg, const TrainConfig& tcfg, const Dataset& ds, std::uint64_t seed,
                       ParamStore& store_out);

// Full ablation table: the full model plus each variant on the averaged-day
// dataset and the full model on the raw-day dataset, seed-averaged.
struct AblationRow {
  std::string model;
  MetricsReport metrics;
};
std::vector<AblationRow> run_ablations(const Dataset& avg_ds, const Dataset& raw_ds, const ModelConfig& base,
                                       const TrainConfig& tcfg);

}  // namespace roadvol::train
