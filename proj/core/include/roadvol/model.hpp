#pragma once
#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "roadvol/dual.hpp"
#include "roadvol/kvconfig.hpp"
#include "roadvol/layers.hpp"

namespace roadvol::model {

using diff::ParamStore;
using diff::Tape;
using diff::Tensor;

// Exactly one variant flag may be set; all clear is the full model.
struct AblationFlags {
  bool no_speed_branch = false;      // drop the spatio-temporal branch
  bool no_static_branch = false;     // drop the static-descriptor branch
  bool no_neighborhood = false;      // attention replaced by per-node dense maps
  bool single_branch_fusion = false; // static features tiled over time into one branch
  bool undirected_attention = false; // directed attention replaced by plain GAT

  int count_set() const {
    return static_cast<int>(no_speed_branch) + static_cast<int>(no_static_branch) +
           static_cast<int>(no_neighborhood) + static_cast<int>(single_branch_fusion) +
           static_cast<int>(undirected_attention);
  }
  std::string name() const;
  static AblationFlags from_name(const std::string& name);
};

struct ModelConfig {
  int K = 2;        // branch depth == neighborhood hops
  int hidden = 64;  // C
  int heads = 4;
  int kernel = 9;   // temporal kernel size p, odd
  int T = 96;       // speed steps per day
  int Tprime = 24;  // volume steps per day
  int n_static = graph::kNumStaticFeatures;
  double dropout_conv = 0.1;
  double dropout_attn = 0.3;
  double dropout_dense = 0.6;
  double leaky_slope = 0.2;
  AblationFlags ablation;

  // speed channel + hour-of-day sin/cos + weekday one-hot
  static constexpr int kHourEncodingDims = 2;
  static constexpr int kWeekdayDims = 7;
  int speed_channels() const { return 1 + kHourEncodingDims + kWeekdayDims; }
  // first spatio-temporal layer input width (static features tiled in for
  // the single-branch variant)
  int input_channels() const {
    return ablation.single_branch_fusion ? speed_channels() + n_static : speed_channels();
  }

  void validate() const;

  void to_kv(KvConfig& kv, const std::string& prefix = "model.") const;
  static ModelConfig from_kv(const KvConfig& kv, const std::string& prefix = "model.");
};

// Feature scaling fitted on the training split only. Static columns and the
// speed channel are z-scored; volumes are divided by the training standard
// deviation (predictions are multiplied back before the loss and exports).
struct NormStats {
  std::array<double, graph::kNumStaticFeatures> feat_mean{};
  std::array<double, graph::kNumStaticFeatures> feat_std{};
  double speed_mean = 0.0;
  double speed_std = 1.0;
  double vol_scale = 1.0;

  static NormStats identity();
  void to_kv(KvConfig& kv, const std::string& prefix = "norm.") const;
  static NormStats from_kv(const KvConfig& kv, const std::string& prefix = "norm.");
};

// Encoded spatio-temporal input [N,T,E]: normalized speed, temporal encoding
// of hour and weekday, optionally the tiled z-scored static row.
std::vector<double> encode_speed_input(const graph::Subgraph& sg, const NormStats& norm, bool include_static);

// z-scored static feature matrix [N, n_static]
std::vector<double> encode_static_input(const graph::Subgraph& sg, const NormStats& norm);

// Two-branch volume estimator over a neighborhood subgraph: a spatio-temporal
// branch of K factorized blocks (temporal conv -> directed attention per time
// step -> temporal conv) reduced over time, a spatial branch of K directed
// attention layers over static descriptors, and a fused dense head emitting
// one Tprime-length profile per node. Variant construction follows the
// ablation flags in the config.
class VolumeModel {
 public:
  // Creates fresh parameters in the store, seeded deterministically.
  VolumeModel(const ModelConfig& cfg, ParamStore& store, std::uint64_t init_seed);
  // Binds to parameters already present in the store (a loaded checkpoint).
  VolumeModel(const ModelConfig& cfg, ParamStore& store);

  // All-node predictions [N, Tprime] in normalized volume units.
  Tensor forward(Tape& tape, const ParamStore& store, const graph::Subgraph& sg, const NormStats& norm,
                 bool train, Rng& dropout_rng) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  // spatial aggregation slot: directed attention, plain attention, or a
  // per-node dense map depending on the variant
  struct SpatialOp {
    std::optional<nn::DirectedGraphAttention> directed;
    std::optional<nn::GraphAttention> undirected;
    std::optional<nn::Dense> per_node;

    Tensor forward(Tape& tape, const ParamStore& store, Tensor h, const nn::DirectedMessages* dm,
                   const nn::UndirectedMessages* um) const;
  };

  void build(diff::ParamRegistry& reg);
  SpatialOp make_spatial_op(diff::ParamRegistry& reg, const std::string& prefix, int cin) const;

  ModelConfig cfg_;
  // spatio-temporal branch
  std::vector<nn::TemporalConv> conv_in_;
  std::vector<SpatialOp> st_attn_;
  std::vector<nn::TemporalConv> conv_out_;
  std::optional<nn::Dense> reduce_;  // (T*C) -> C
  // spatial branch
  std::vector<SpatialOp> spatial_;
  // fused head
  std::optional<nn::Dense> head1_;  // 2C -> C
  std::optional<nn::Dense> head2_;  // C -> Tprime
};

// Validates flags and constructs the requested variant.
std::unique_ptr<VolumeModel> build_variant(const ModelConfig& cfg, ParamStore& store, std::uint64_t init_seed);

// Rebuilds a variant over checkpointed parameters.
std::unique_ptr<VolumeModel> attach_variant(const ModelConfig& cfg, ParamStore& store);

}  // namespace roadvol::model
