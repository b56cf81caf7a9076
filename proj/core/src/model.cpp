#include "roadvol/model.hpp"

#include <cmath>

#include "roadvol/errors.hpp"

namespace roadvol::model {

std::string AblationFlags::name() const {
  if (no_speed_branch) return "no_speed_branch";
  if (no_static_branch) return "no_static_branch";
  if (no_neighborhood) return "no_neighborhood";
  if (single_branch_fusion) return "single_branch";
  if (undirected_attention) return "undirected";
  return "full";
}

AblationFlags AblationFlags::from_name(const std::string& name) {
  AblationFlags f;
  if (name == "full") return f;
  if (name == "no_speed_branch")
    f.no_speed_branch = true;
  else if (name == "no_static_branch")
    f.no_static_branch = true;
  else if (name == "no_neighborhood")
    f.no_neighborhood = true;
  else if (name == "single_branch")
    f.single_branch_fusion = true;
  else if (name == "undirected")
    f.undirected_attention = true;
  else
    throw ConfigError("unknown model variant '" + name + "'");
  return f;
}

void ModelConfig::validate() const {
  if (K < 1) throw ConfigError("model: K must be >= 1");
  if (hidden < 1 || heads < 1 || hidden % heads != 0)
    throw ConfigError("model: hidden dim " + std::to_string(hidden) + " must be divisible by heads " +
                      std::to_string(heads));
  if (kernel <= 0 || kernel % 2 == 0) throw ConfigError("model: kernel size must be odd");
  if (T < 1 || Tprime < 1) throw ConfigError("model: T and Tprime must be positive");
  if (ablation.count_set() > 1) throw ConfigError("model: conflicting ablation flags (at most one variant)");
  for (double r : {dropout_conv, dropout_attn, dropout_dense})
    if (r < 0.0 || r >= 1.0) throw ConfigError("model: dropout rates must be in [0,1)");
}

void ModelConfig::to_kv(KvConfig& kv, const std::string& prefix) const {
  kv.set(prefix + "K", K);
  kv.set(prefix + "hidden", hidden);
  kv.set(prefix + "heads", heads);
  kv.set(prefix + "kernel", kernel);
  kv.set(prefix + "T", T);
  kv.set(prefix + "Tprime", Tprime);
  kv.set(prefix + "n_static", n_static);
  kv.set(prefix + "dropout_conv", dropout_conv);
  kv.set(prefix + "dropout_attn", dropout_attn);
  kv.set(prefix + "dropout_dense", dropout_dense);
  kv.set(prefix + "leaky_slope", leaky_slope);
  kv.set(prefix + "variant", ablation.name());
}

ModelConfig ModelConfig::from_kv(const KvConfig& kv, const std::string& prefix) {
  ModelConfig cfg;
  cfg.K = kv.get_int(prefix + "K", cfg.K);
  cfg.hidden = kv.get_int(prefix + "hidden", cfg.hidden);
  cfg.heads = kv.get_int(prefix + "heads", cfg.heads);
  cfg.kernel = kv.get_int(prefix + "kernel", cfg.kernel);
  cfg.T = kv.get_int(prefix + "T", cfg.T);
  cfg.Tprime = kv.get_int(prefix + "Tprime", cfg.Tprime);
  cfg.n_static = kv.get_int(prefix + "n_static", cfg.n_static);
  cfg.dropout_conv = kv.get_double(prefix + "dropout_conv", cfg.dropout_conv);
  cfg.dropout_attn = kv.get_double(prefix + "dropout_attn", cfg.dropout_attn);
  cfg.dropout_dense = kv.get_double(prefix + "dropout_dense", cfg.dropout_dense);
  cfg.leaky_slope = kv.get_double(prefix + "leaky_slope", cfg.leaky_slope);
  cfg.ablation = AblationFlags::from_name(kv.get_str(prefix + "variant", "full"));
  cfg.validate();
  return cfg;
}

NormStats NormStats::identity() {
  NormStats n;
  n.feat_mean.fill(0.0);
  n.feat_std.fill(1.0);
  return n;
}

void NormStats::to_kv(KvConfig& kv, const std::string& prefix) const {
  for (int i = 0; i < graph::kNumStaticFeatures; ++i) {
    kv.set(prefix + "feat_mean." + std::to_string(i), feat_mean[static_cast<size_t>(i)]);
    kv.set(prefix + "feat_std." + std::to_string(i), feat_std[static_cast<size_t>(i)]);
  }
  kv.set(prefix + "speed_mean", speed_mean);
  kv.set(prefix + "speed_std", speed_std);
  kv.set(prefix + "vol_scale", vol_scale);
}

NormStats NormStats::from_kv(const KvConfig& kv, const std::string& prefix) {
  NormStats n = NormStats::identity();
  for (int i = 0; i < graph::kNumStaticFeatures; ++i) {
    n.feat_mean[static_cast<size_t>(i)] = kv.get_double(prefix + "feat_mean." + std::to_string(i), 0.0);
    n.feat_std[static_cast<size_t>(i)] = kv.get_double(prefix + "feat_std." + std::to_string(i), 1.0);
  }
  n.speed_mean = kv.get_double(prefix + "speed_mean", 0.0);
  n.speed_std = kv.get_double(prefix + "speed_std", 1.0);
  n.vol_scale = kv.get_double(prefix + "vol_scale", 1.0);
  return n;
}

std::vector<double> encode_speed_input(const graph::Subgraph& sg, const NormStats& norm, bool include_static) {
  const int N = static_cast<int>(sg.nodes.size());
  const int T = sg.T;
  const int base = 1 + ModelConfig::kHourEncodingDims + ModelConfig::kWeekdayDims;
  const int E = include_static ? base + sg.n_features : base;
  if (sg.weekday < 0 || sg.weekday >= ModelConfig::kWeekdayDims)
    throw DataError("encode_speed_input: weekday out of range");
  std::vector<double> out(static_cast<size_t>(N) * T * E, 0.0);
  std::vector<double> static_rows;
  if (include_static) static_rows = encode_static_input(sg, norm);
  const double two_pi = 6.283185307179586476925287;
  for (int i = 0; i < N; ++i) {
    for (int t = 0; t < T; ++t) {
      double* row = out.data() + (static_cast<size_t>(i) * T + t) * E;
      double v = sg.speeds[static_cast<size_t>(i) * T + t];
      row[0] = (v - norm.speed_mean) / norm.speed_std;
      double phase = two_pi * static_cast<double>(t) / static_cast<double>(T);
      row[1] = std::sin(phase);
      row[2] = std::cos(phase);
      row[3 + sg.weekday] = 1.0;
      if (include_static)
        for (int f = 0; f < sg.n_features; ++f)
          row[base + f] = static_rows[static_cast<size_t>(i) * sg.n_features + f];
    }
  }
  return out;
}

std::vector<double> encode_static_input(const graph::Subgraph& sg, const NormStats& norm) {
  const int N = static_cast<int>(sg.nodes.size());
  std::vector<double> out(static_cast<size_t>(N) * sg.n_features);
  for (int i = 0; i < N; ++i)
    for (int f = 0; f < sg.n_features; ++f) {
      double x = sg.features[static_cast<size_t>(i) * sg.n_features + f];
      out[static_cast<size_t>(i) * sg.n_features + f] =
          (x - norm.feat_mean[static_cast<size_t>(f)]) / norm.feat_std[static_cast<size_t>(f)];
    }
  return out;
}

// ---------------------------------------------------------------------------

Tensor VolumeModel::SpatialOp::forward(Tape& tape, const ParamStore& store, Tensor h,
                                       const nn::DirectedMessages* dm, const nn::UndirectedMessages* um) const {
  if (directed) return directed->forward(tape, store, h, *dm);
  if (undirected) return undirected->forward(tape, store, h, *um);
  return per_node->forward(tape, store, h);
}

VolumeModel::SpatialOp VolumeModel::make_spatial_op(diff::ParamRegistry& reg, const std::string& prefix,
                                                    int cin) const {
  SpatialOp op;
  auto act = nn::Activation::leaky(cfg_.leaky_slope);
  if (cfg_.ablation.no_neighborhood) {
    op.per_node.emplace(reg, prefix, cin, cfg_.hidden, act);
  } else if (cfg_.ablation.undirected_attention) {
    op.undirected.emplace(reg, prefix, cin, cfg_.hidden, cfg_.heads, act, cfg_.leaky_slope);
  } else {
    op.directed.emplace(reg, prefix, cin, cfg_.hidden, cfg_.heads, act, cfg_.leaky_slope);
  }
  return op;
}

void VolumeModel::build(diff::ParamRegistry& reg) {
  const int C = cfg_.hidden;
  const auto relu = nn::Activation::relu();

  const bool has_st = !cfg_.ablation.no_speed_branch;
  const bool has_spatial = !cfg_.ablation.no_static_branch && !cfg_.ablation.single_branch_fusion;

  if (has_st) {
    for (int k = 0; k < cfg_.K; ++k) {
      int cin = k == 0 ? cfg_.input_channels() : C;
      conv_in_.emplace_back(reg, "st." + std::to_string(k) + ".conv_in", cfg_.kernel, cin, C, relu);
      st_attn_.push_back(make_spatial_op(reg, "st." + std::to_string(k) + ".attn", C));
      conv_out_.emplace_back(reg, "st." + std::to_string(k) + ".conv_out", cfg_.kernel, C, C, relu);
    }
    reduce_.emplace(reg, "st.reduce", cfg_.T * C, C, relu);
  }
  if (has_spatial) {
    for (int k = 0; k < cfg_.K; ++k) {
      int cin = k == 0 ? cfg_.n_static : C;
      spatial_.push_back(make_spatial_op(reg, "sp." + std::to_string(k), cin));
    }
  }
  head1_.emplace(reg, "head.fc1", 2 * C, C, relu);
  head2_.emplace(reg, "head.fc2", C, cfg_.Tprime, nn::Activation::none());
}

VolumeModel::VolumeModel(const ModelConfig& cfg, ParamStore& store, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng::stream(init_seed, "param-init");
  auto reg = diff::ParamRegistry::create(store, rng);
  build(reg);
}

VolumeModel::VolumeModel(const ModelConfig& cfg, ParamStore& store) : cfg_(cfg) {
  cfg_.validate();
  auto reg = diff::ParamRegistry::bind(store);
  build(reg);
}

Tensor VolumeModel::forward(Tape& tape, const ParamStore& store, const graph::Subgraph& sg, const NormStats& norm,
                            bool train, Rng& dropout_rng) const {
  const int N = static_cast<int>(sg.nodes.size());
  const int C = cfg_.hidden;
  if (N < 1) throw DataError("VolumeModel: empty subgraph");
  if (sg.T != cfg_.T)
    throw ShapeError("VolumeModel: speed length " + std::to_string(sg.T) + " does not match configured T " +
                     std::to_string(cfg_.T));

  nn::DirectedMessages dmsgs;
  nn::UndirectedMessages umsgs;
  if (!cfg_.ablation.no_neighborhood) {
    if (cfg_.ablation.undirected_attention)
      umsgs = nn::UndirectedMessages::build(N, sg.edges);
    else
      dmsgs = nn::DirectedMessages::build(N, sg.edges);
  }

  auto drop = [&](Tensor x, double rate) { return diff::dropout(x, rate, train, dropout_rng); };

  Tensor hp, hf;
  if (!cfg_.ablation.no_speed_branch) {
    auto enc = encode_speed_input(sg, norm, cfg_.ablation.single_branch_fusion);
    Tensor h = tape.constant({N, cfg_.T, cfg_.input_channels()}, std::span<const double>(enc));
    for (int k = 0; k < cfg_.K; ++k) {
      h = drop(conv_in_[static_cast<size_t>(k)].forward(tape, store, h), cfg_.dropout_conv);
      h = drop(st_attn_[static_cast<size_t>(k)].forward(tape, store, h, &dmsgs, &umsgs), cfg_.dropout_attn);
      h = drop(conv_out_[static_cast<size_t>(k)].forward(tape, store, h), cfg_.dropout_conv);
    }
    Tensor flat = diff::reshape(h, {N, cfg_.T * C});
    hp = drop(reduce_->forward(tape, store, flat), cfg_.dropout_dense);
  }
  if (!cfg_.ablation.no_static_branch && !cfg_.ablation.single_branch_fusion) {
    auto fenc = encode_static_input(sg, norm);
    Tensor g = tape.constant({N, cfg_.n_static}, std::span<const double>(fenc));
    for (int k = 0; k < cfg_.K; ++k)
      g = drop(spatial_[static_cast<size_t>(k)].forward(tape, store, g, &dmsgs, &umsgs), cfg_.dropout_attn);
    hf = g;
  }

  Tensor fused;
  if (hp.valid() && hf.valid())
    fused = diff::concat({hp, hf}, 1);
  else if (hp.valid())
    fused = diff::concat({hp, hp}, 1);  // branch removed: duplicate to keep head width 2C
  else
    fused = diff::concat({hf, hf}, 1);

  Tensor z = drop(head1_->forward(tape, store, fused), cfg_.dropout_dense);
  return head2_->forward(tape, store, z);  // [N, Tprime], linear
}

std::unique_ptr<VolumeModel> build_variant(const ModelConfig& cfg, ParamStore& store, std::uint64_t init_seed) {
  cfg.validate();
  return std::make_unique<VolumeModel>(cfg, store, init_seed);
}

std::unique_ptr<VolumeModel> attach_variant(const ModelConfig& cfg, ParamStore& store) {
  cfg.validate();
  return std::make_unique<VolumeModel>(cfg, store);
}

}  // namespace roadvol::model
