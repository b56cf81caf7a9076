// roadvol: network-wide traffic volume estimation from speed profiles and
// static road descriptors on a directed segment graph.
//
// Pipeline: gen-net -> gen-traffic -> train -> evaluate / infer / ablate.
// Every command is a pure function of (config, input files, seed): rerunning
// with the same inputs yields byte-identical outputs. Exit codes: 0 ok,
// 2 config error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "roadvol/csvio.hpp"
#include "roadvol/dual.hpp"
#include "roadvol/errors.hpp"
#include "roadvol/kvconfig.hpp"
#include "roadvol/model.hpp"
#include "roadvol/primal.hpp"
#include "roadvol/synth.hpp"
#include "roadvol/traineval.hpp"

namespace fs = std::filesystem;
using namespace roadvol;

namespace {

struct CommonOpts {
  std::string out_dir;
  std::string config_path;
  std::vector<std::string> overrides;  // key=value pairs, win over the config file
  std::uint64_t seed = 1;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--out-dir", c.out_dir, "output directory")->required();
  cmd->add_option("--config", c.config_path, "key=value config file");
  cmd->add_option("--set", c.overrides, "override a config key, e.g. --set synth.alpha=1.5");
  cmd->add_option("--seed", c.seed, "master seed (all randomness derives from it)");
}

KvConfig resolve_config(const CLI::App* cmd, const CommonOpts& c) {
  KvConfig kv;
  if (!c.config_path.empty()) kv = KvConfig::load(c.config_path);
  for (const auto& kvpair : c.overrides) {
    auto eq = kvpair.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kvpair + "'");
    kv.set(kvpair.substr(0, eq), kvpair.substr(eq + 1));
  }
  if (cmd->count("--seed") > 0) {
    kv.set("run.seed", static_cast<std::int64_t>(c.seed));
    kv.set("synth.seed", static_cast<std::int64_t>(c.seed));
  }
  return kv;
}

std::uint64_t run_seed_of(const KvConfig& kv) {
  return static_cast<std::uint64_t>(kv.get_double("run.seed", 1.0));
}

void prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
}

void write_status(const std::string& out_dir, const std::string& cmd, int code, const std::string& msg) {
  if (out_dir.empty()) return;
  std::error_code ec;
  if (!fs::exists(out_dir, ec)) return;
  std::ofstream st(fs::path(out_dir) / (cmd + ".status"), std::ios::trunc);
  st << code;
  if (!msg.empty()) st << ' ' << msg;
  st << '\n';
}

void save_resolved(const KvConfig& kv, const std::string& out_dir, const std::string& cmd) {
  kv.save((fs::path(out_dir) / (cmd + ".config")).string());
}

graph::DualGraph load_graph_with_data(const std::string& net_path, const std::string& speeds_path,
                                      const std::string& volumes_path) {
  auto primal = graph::load_primal(net_path);
  auto dual = graph::build_dual(primal);
  if (!speeds_path.empty()) io::load_speeds_csv(dual, speeds_path);
  if (!volumes_path.empty()) io::load_volumes_csv(dual, volumes_path);
  return dual;
}

std::vector<std::uint64_t> seed_list(const KvConfig& kv, int n_seeds) {
  std::uint64_t base = run_seed_of(kv);
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n_seeds; ++i) seeds.push_back(base + static_cast<std::uint64_t>(i));
  return seeds;
}

// ---------------------------------------------------------------------------

int cmd_gen_net(const CLI::App* cmd, const CommonOpts& common, const std::string& grid, double p_oneway) {
  KvConfig kv = resolve_config(cmd, common);
  if (cmd->count("--grid") > 0) {
    auto x = grid.find('x');
    if (x == std::string::npos) throw ConfigError("--grid expects RxC, e.g. 5x5");
    kv.set("synth.grid_rows", grid.substr(0, x));
    kv.set("synth.grid_cols", grid.substr(x + 1));
  }
  if (cmd->count("--p-oneway") > 0) kv.set("synth.p_oneway", p_oneway);
  auto cfg = synth::SynthConfig::from_kv(kv);
  cfg.to_kv(kv);

  prepare_out_dir(common.out_dir);
  auto primal = synth::gen_network(cfg);
  if (primal.links.empty()) std::cerr << "warning: generated network has no links\n";
  graph::save_primal(primal, (fs::path(common.out_dir) / "network.txt").string());
  save_resolved(kv, common.out_dir, "gen-net");
  write_status(common.out_dir, "gen-net", 0, "");
  std::cout << "gen-net: " << primal.intersections.size() << " intersections, " << primal.links.size()
            << " links\n";
  return 0;
}

int cmd_gen_traffic(const CLI::App* cmd, const CommonOpts& common, const std::string& net_path,
                    const std::string& mode) {
  KvConfig kv = resolve_config(cmd, common);
  if (cmd->count("--mode") > 0) {
    if (mode == "raw")
      kv.set("synth.raw_days", true);
    else if (mode == "averaged")
      kv.set("synth.raw_days", false);
    else
      throw ConfigError("--mode must be 'averaged' or 'raw'");
  }
  auto cfg = synth::SynthConfig::from_kv(kv);
  cfg.to_kv(kv);

  prepare_out_dir(common.out_dir);
  auto primal = graph::load_primal(net_path);
  auto dual = graph::build_dual(primal);
  synth::gen_traffic(dual, cfg);
  io::save_speeds_csv(dual, (fs::path(common.out_dir) / "speeds.csv").string());
  io::save_volumes_csv(dual, (fs::path(common.out_dir) / "volumes.csv").string());
  save_resolved(kv, common.out_dir, "gen-traffic");
  write_status(common.out_dir, "gen-traffic", 0, "");
  std::cout << "gen-traffic: " << dual.num_nodes() << " nodes, " << dual.labeled_set().size() << " sensors, "
            << dual.num_days() << " day columns\n";
  return 0;
}

int cmd_build_dual(const CLI::App* cmd, const CommonOpts& common, const std::string& net_path,
                   const std::string& volumes_path, bool unify) {
  KvConfig kv = resolve_config(cmd, common);
  kv.set("build_dual.unify", unify);
  prepare_out_dir(common.out_dir);
  auto primal = graph::load_primal(net_path);
  if (unify) primal = graph::unify_segments(primal);
  auto dual = graph::build_dual(primal);
  if (!volumes_path.empty()) {
    // sensor flags need a day layout; a single synthetic layout suffices here
    dual.T = 96;
    dual.day_weekday = {0, 1, 2, 3, 4, 5, 6};
    dual.speeds.assign(static_cast<size_t>(dual.num_nodes()) * 7 * 96, 0.0);
    io::load_volumes_csv(dual, volumes_path);
  }
  {
    std::ofstream nodes((fs::path(common.out_dir) / "dual_nodes.csv").string(), std::ios::trunc);
    if (!nodes) throw DataError("cannot write dual_nodes.csv");
    graph::export_dual_nodes_csv(dual, nodes);
  }
  {
    std::ofstream edges((fs::path(common.out_dir) / "dual_edges.csv").string(), std::ios::trunc);
    if (!edges) throw DataError("cannot write dual_edges.csv");
    graph::export_dual_edges_csv(dual, edges);
  }
  save_resolved(kv, common.out_dir, "build-dual");
  write_status(common.out_dir, "build-dual", 0, "");
  std::cout << "build-dual: " << dual.num_nodes() << " nodes, " << dual.edges.size() << " edges\n";
  return 0;
}

int cmd_train(const CLI::App* cmd, const CommonOpts& common, const std::string& net_path,
              const std::string& speeds_path, const std::string& volumes_path, int n_seeds,
              const std::string& variant) {
  KvConfig kv = resolve_config(cmd, common);
  if (!variant.empty()) kv.set("model.variant", variant);
  auto mcfg = model::ModelConfig::from_kv(kv);
  auto tcfg = train::TrainConfig::from_kv(kv);
  if (cmd->count("--seeds") > 0 || !kv.has("train.seeds")) tcfg.seeds = seed_list(kv, n_seeds);
  mcfg.to_kv(kv);
  tcfg.to_kv(kv);

  prepare_out_dir(common.out_dir);
  auto dual = load_graph_with_data(net_path, speeds_path, volumes_path);
  auto ds = synth::assemble_dataset(dual, mcfg.K);
  if (ds.skipped > 0)
    std::cerr << "warning: skipped " << ds.skipped << " (sensor, day) pairs with missing volumes\n";

  std::vector<train::ResultRow> rows;
  std::vector<train::MetricsReport> per_seed;
  for (std::uint64_t seed : tcfg.seeds) {
    diff::ParamStore store;
    auto res = train::run_seed(mcfg, tcfg, ds, seed, store);
    fs::path seed_dir = fs::path(common.out_dir) / ("seed_" + std::to_string(seed));
    prepare_out_dir(seed_dir.string());
    KvConfig extra;
    extra.set("run.seed", static_cast<std::int64_t>(seed));
    tcfg.to_kv(extra);
    train::save_checkpoint((seed_dir / "checkpoint").string(), store, mcfg, res.norm, &extra);
    train::write_loss_curve_csv((seed_dir / "loss_curve.csv").string(), res.train.curve);
    rows.push_back({mcfg.ablation.name(), std::to_string(seed), res.val_metrics});
    per_seed.push_back(res.val_metrics);
    std::cout << "seed " << seed << ": val GEH " << res.val_metrics.geh << ", best epoch "
              << res.train.best_epoch << "\n";
  }
  rows.push_back({mcfg.ablation.name(), "mean", train::mean_metrics(per_seed)});
  train::write_results_csv((fs::path(common.out_dir) / "results.csv").string(), rows);
  save_resolved(kv, common.out_dir, "train");
  write_status(common.out_dir, "train", 0, "");
  return 0;
}

int cmd_evaluate(const CLI::App* cmd, const CommonOpts& common, const std::string& net_path,
                 const std::string& speeds_path, const std::string& volumes_path, const std::string& ckpt,
                 const std::string& split) {
  KvConfig kv = resolve_config(cmd, common);
  prepare_out_dir(common.out_dir);

  diff::ParamStore store;
  model::ModelConfig mcfg;
  model::NormStats norm;
  train::load_checkpoint(ckpt, store, mcfg, norm);
  KvConfig ckpt_kv = KvConfig::load(ckpt + ".config");
  auto tcfg = train::TrainConfig::from_kv(ckpt_kv);
  std::uint64_t seed = cmd->count("--seed") > 0 ? common.seed : run_seed_of(ckpt_kv);
  kv.set("run.seed", static_cast<std::int64_t>(seed));
  auto model_ptr = model::attach_variant(mcfg, store);

  auto dual = load_graph_with_data(net_path, speeds_path, volumes_path);
  auto ds = synth::assemble_dataset(dual, mcfg.K);
  auto [train_sensors, val_sensors] = train::split_sensors(dual.labeled_set(), tcfg.val_fraction, seed);

  std::vector<int> idx;
  if (split == "val")
    idx = train::samples_of_sensors(ds, val_sensors);
  else if (split == "train")
    idx = train::samples_of_sensors(ds, train_sensors);
  else if (split == "all")
    for (size_t i = 0; i < ds.samples.size(); ++i) idx.push_back(static_cast<int>(i));
  else
    throw ConfigError("--split must be val, train or all");
  if (idx.empty()) throw DataError("evaluate: no samples in the requested split");

  auto metrics = train::evaluate_samples(*model_ptr, store, ds, idx, norm);
  train::write_results_csv((fs::path(common.out_dir) / "metrics.csv").string(),
                           {{mcfg.ablation.name(), split, metrics}});
  {
    std::ofstream pred((fs::path(common.out_dir) / "predictions.csv").string(), std::ios::trunc);
    if (!pred) throw DataError("cannot write predictions.csv");
    for (int i : idx) {
      const auto& s = ds.samples[static_cast<size_t>(i)];
      auto p = train::predict_profile(*model_ptr, store, s.sg, norm);
      pred << s.node << ',' << s.weekday;
      for (double x : p) pred << ',' << io::format_double(x);
      pred << '\n';
    }
  }
  save_resolved(kv, common.out_dir, "evaluate");
  write_status(common.out_dir, "evaluate", 0, "");
  std::cout << "evaluate[" << split << "]: rmse " << metrics.rmse << " mape " << metrics.mape << " geh "
            << metrics.geh << " %geh>5 " << metrics.pct_geh_gt5 << "\n";
  return 0;
}

int cmd_ablate(const CLI::App* cmd, const CommonOpts& common, const std::string& net_path,
               const std::string& speeds_path, const std::string& volumes_path, const std::string& speeds_raw,
               const std::string& volumes_raw, int n_seeds) {
  KvConfig kv = resolve_config(cmd, common);
  auto mcfg = model::ModelConfig::from_kv(kv);
  auto tcfg = train::TrainConfig::from_kv(kv);
  if (cmd->count("--seeds") > 0 || !kv.has("train.seeds")) tcfg.seeds = seed_list(kv, n_seeds);
  mcfg.to_kv(kv);
  tcfg.to_kv(kv);

  prepare_out_dir(common.out_dir);
  auto dual_avg = load_graph_with_data(net_path, speeds_path, volumes_path);
  auto ds_avg = synth::assemble_dataset(dual_avg, mcfg.K);
  auto dual_raw = load_graph_with_data(net_path, speeds_raw, volumes_raw);
  auto ds_raw = synth::assemble_dataset(dual_raw, mcfg.K);

  auto rows = train::run_ablations(ds_avg, ds_raw, mcfg, tcfg);
  std::vector<train::ResultRow> out_rows;
  for (const auto& r : rows) out_rows.push_back({r.model, "mean", r.metrics});
  train::write_results_csv((fs::path(common.out_dir) / "ablation.csv").string(), out_rows);
  save_resolved(kv, common.out_dir, "ablate");
  write_status(common.out_dir, "ablate", 0, "");
  for (const auto& r : rows) std::cout << r.model << ": geh " << r.metrics.geh << "\n";
  return 0;
}

int cmd_infer(const CLI::App* cmd, const CommonOpts& common, const std::string& net_path,
              const std::string& speeds_path, const std::string& ckpt, int weekday, int occurrence, int hour) {
  KvConfig kv = resolve_config(cmd, common);
  if (weekday < 0 || weekday > 6) throw ConfigError("--weekday must be 0..6");
  if (hour < 0 || hour > 23) throw ConfigError("--hour must be 0..23");
  kv.set("infer.weekday", weekday);
  kv.set("infer.hour", hour);
  prepare_out_dir(common.out_dir);

  diff::ParamStore store;
  model::ModelConfig mcfg;
  model::NormStats norm;
  train::load_checkpoint(ckpt, store, mcfg, norm);
  auto model_ptr = model::attach_variant(mcfg, store);

  auto dual = load_graph_with_data(net_path, speeds_path, "");
  int repeats = dual.num_days() / 7;
  if (occurrence < 0 || occurrence >= repeats) throw ConfigError("--day-occurrence out of range");
  int day = weekday * repeats + occurrence;

  auto profiles = train::infer_network(*model_ptr, store, dual, day, norm);
  {
    std::ofstream out((fs::path(common.out_dir) / "network_volumes.csv").string(), std::ios::trunc);
    if (!out) throw DataError("cannot write network_volumes.csv");
    for (int v = 0; v < dual.num_nodes(); ++v) {
      out << v << ',' << weekday;
      for (double x : profiles[static_cast<size_t>(v)]) out << ',' << io::format_double(x);
      out << '\n';
    }
  }
  {
    std::ofstream out((fs::path(common.out_dir) / "hour_slice.csv").string(), std::ios::trunc);
    if (!out) throw DataError("cannot write hour_slice.csv");
    out << "node_id,volume\n";
    for (int v = 0; v < dual.num_nodes(); ++v)
      out << v << ',' << io::format_double(profiles[static_cast<size_t>(v)][static_cast<size_t>(hour)]) << '\n';
  }
  save_resolved(kv, common.out_dir, "infer");
  write_status(common.out_dir, "infer", 0, "");
  std::cout << "infer: " << dual.num_nodes() << " node profiles for weekday " << weekday << "\n";
  return 0;
}

int cmd_report_features(const CLI::App* cmd, const CommonOpts& common, const std::string& net_path,
                        const std::string& volumes_path, const std::string& speeds_path) {
  KvConfig kv = resolve_config(cmd, common);
  prepare_out_dir(common.out_dir);
  auto dual = load_graph_with_data(net_path, speeds_path, "");
  if (speeds_path.empty()) {
    dual.T = 96;
    dual.day_weekday = {0, 1, 2, 3, 4, 5, 6};
    dual.speeds.assign(static_cast<size_t>(dual.num_nodes()) * 7 * 96, 0.0);
  }
  io::load_volumes_csv(dual, volumes_path);
  auto labeled = dual.labeled_set();
  auto unlabeled = dual.unlabeled_set();
  if (labeled.empty()) throw DataError("report-features: no labeled nodes");

  static const char* kFeatNames[graph::kNumStaticFeatures] = {
      "speed_limit", "lanes", "length", "free_flow_speed", "curvature", "slope_percent", "functional_class"};
  constexpr int kBins = 10;

  std::ofstream out((fs::path(common.out_dir) / "feature_histograms.csv").string(), std::ios::trunc);
  if (!out) throw DataError("cannot write feature_histograms.csv");
  out << "feature,bin_lo,bin_hi,labeled_count,unlabeled_count,labeled_frac,unlabeled_frac\n";
  for (int f = 0; f < graph::kNumStaticFeatures; ++f) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int v = 0; v < dual.num_nodes(); ++v) {
      double x = dual.node_features(v)[static_cast<size_t>(f)];
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    if (hi <= lo) hi = lo + 1.0;
    std::vector<int> lab_hist(kBins, 0), unlab_hist(kBins, 0);
    auto bin_of = [&](double x) {
      int b = static_cast<int>((x - lo) / (hi - lo) * kBins);
      return std::clamp(b, 0, kBins - 1);
    };
    for (int v : labeled) ++lab_hist[static_cast<size_t>(bin_of(dual.node_features(v)[static_cast<size_t>(f)]))];
    for (int v : unlabeled)
      ++unlab_hist[static_cast<size_t>(bin_of(dual.node_features(v)[static_cast<size_t>(f)]))];
    for (int b = 0; b < kBins; ++b) {
      double blo = lo + (hi - lo) * b / kBins;
      double bhi = lo + (hi - lo) * (b + 1) / kBins;
      out << kFeatNames[f] << ',' << io::format_double(blo) << ',' << io::format_double(bhi) << ','
          << lab_hist[static_cast<size_t>(b)] << ',' << unlab_hist[static_cast<size_t>(b)] << ','
          << io::format_double(static_cast<double>(lab_hist[static_cast<size_t>(b)]) / labeled.size()) << ','
          << io::format_double(unlabeled.empty()
                                   ? 0.0
                                   : static_cast<double>(unlab_hist[static_cast<size_t>(b)]) / unlabeled.size())
          << '\n';
    }
  }

  if (!speeds_path.empty()) {
    std::ofstream sp((fs::path(common.out_dir) / "speed_profile_means.csv").string(), std::ios::trunc);
    if (!sp) throw DataError("cannot write speed_profile_means.csv");
    sp << "weekday,t,labeled_mean,unlabeled_mean\n";
    int repeats = dual.num_days() / 7;
    for (int w = 0; w < 7; ++w)
      for (int t = 0; t < dual.T; ++t) {
        double lsum = 0.0, usum = 0.0;
        for (int r = 0; r < repeats; ++r) {
          int day = w * repeats + r;
          for (int v : labeled) lsum += dual.speed_profile(day, v)[t];
          for (int v : unlabeled) usum += dual.speed_profile(day, v)[t];
        }
        double lmean = labeled.empty() ? 0.0 : lsum / (static_cast<double>(labeled.size()) * repeats);
        double umean = unlabeled.empty() ? 0.0 : usum / (static_cast<double>(unlabeled.size()) * repeats);
        sp << w << ',' << t << ',' << io::format_double(lmean) << ',' << io::format_double(umean) << '\n';
      }
  }
  save_resolved(kv, common.out_dir, "report-features");
  write_status(common.out_dir, "report-features", 0, "");
  std::cout << "report-features: " << labeled.size() << " labeled vs " << unlabeled.size()
            << " unlabeled nodes\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"network-wide traffic volume estimation toolkit"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string grid = "5x5", mode = "averaged", split = "val", variant;
  std::string net_path, speeds_path, volumes_path, speeds_raw, volumes_raw, ckpt;
  double p_oneway = 0.3;
  int n_seeds = 5, weekday = 1, occurrence = 0, hour = 9;
  bool unify = false;

  auto* gen_net = app.add_subcommand("gen-net", "generate a synthetic grid road network");
  add_common(gen_net, common);
  gen_net->add_option("--grid", grid, "grid dimensions RxC");
  gen_net->add_option("--p-oneway", p_oneway, "probability a link is one-way");

  auto* gen_traffic = app.add_subcommand("gen-traffic", "generate paired speed/volume profiles");
  add_common(gen_traffic, common);
  gen_traffic->add_option("--net", net_path, "primal network file")->required();
  gen_traffic->add_option("--mode", mode, "averaged (typical weekdays) or raw (per-day jitter)");

  auto* build_dual = app.add_subcommand("build-dual", "export the directed segment graph as CSV");
  add_common(build_dual, common);
  build_dual->add_option("--net", net_path, "primal network file")->required();
  build_dual->add_option("--volumes", volumes_path, "volume csv to mark sensors");
  build_dual->add_flag("--unify", unify, "merge degree-2 chains before building");

  auto* train_cmd = app.add_subcommand("train", "train the volume model");
  add_common(train_cmd, common);
  train_cmd->add_option("--net", net_path)->required();
  train_cmd->add_option("--speeds", speeds_path)->required();
  train_cmd->add_option("--volumes", volumes_path)->required();
  train_cmd->add_option("--seeds", n_seeds, "number of seeds (seed, seed+1, ...)");
  train_cmd->add_option("--variant", variant, "model variant (full, no_speed_branch, ...)");

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a sensor split");
  add_common(evaluate, common);
  evaluate->add_option("--net", net_path)->required();
  evaluate->add_option("--speeds", speeds_path)->required();
  evaluate->add_option("--volumes", volumes_path)->required();
  evaluate->add_option("--checkpoint", ckpt, "checkpoint prefix (no extension)")->required();
  evaluate->add_option("--split", split, "val, train or all");

  auto* ablate = app.add_subcommand("ablate", "train the full model and every variant");
  add_common(ablate, common);
  ablate->add_option("--net", net_path)->required();
  ablate->add_option("--speeds", speeds_path)->required();
  ablate->add_option("--volumes", volumes_path)->required();
  ablate->add_option("--speeds-raw", speeds_raw, "raw-day speed csv")->required();
  ablate->add_option("--volumes-raw", volumes_raw, "raw-day volume csv")->required();
  ablate->add_option("--seeds", n_seeds, "number of seeds");

  auto* infer = app.add_subcommand("infer", "network-wide inference for one weekday");
  add_common(infer, common);
  infer->add_option("--net", net_path)->required();
  infer->add_option("--speeds", speeds_path)->required();
  infer->add_option("--checkpoint", ckpt)->required();
  infer->add_option("--weekday", weekday, "weekday 0..6");
  infer->add_option("--day-occurrence", occurrence, "raw-day occurrence index");
  infer->add_option("--hour", hour, "hour for the map slice export");

  auto* report = app.add_subcommand("report-features", "labeled vs unlabeled feature histograms");
  add_common(report, common);
  report->add_option("--net", net_path)->required();
  report->add_option("--volumes", volumes_path)->required();
  report->add_option("--speeds", speeds_path, "optional speed csv for profile means");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  std::string cmd_name = app.get_subcommands().front()->get_name();
  try {
    if (gen_net->parsed()) return cmd_gen_net(gen_net, common, grid, p_oneway);
    if (gen_traffic->parsed()) return cmd_gen_traffic(gen_traffic, common, net_path, mode);
    if (build_dual->parsed()) return cmd_build_dual(build_dual, common, net_path, volumes_path, unify);
    if (train_cmd->parsed())
      return cmd_train(train_cmd, common, net_path, speeds_path, volumes_path, n_seeds, variant);
    if (evaluate->parsed())
      return cmd_evaluate(evaluate, common, net_path, speeds_path, volumes_path, ckpt, split);
    if (ablate->parsed())
      return cmd_ablate(ablate, common, net_path, speeds_path, volumes_path, speeds_raw, volumes_raw, n_seeds);
    if (infer->parsed()) return cmd_infer(infer, common, net_path, speeds_path, ckpt, weekday, occurrence, hour);
    if (report->parsed()) return cmd_report_features(report, common, net_path, volumes_path, speeds_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    write_status(common.out_dir, cmd_name, 2, e.what());
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    write_status(common.out_dir, cmd_name, 3, e.what());
    return 3;
  } catch (const Error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    write_status(common.out_dir, cmd_name, 4, e.what());
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    write_status(common.out_dir, cmd_name, 1, e.what());
    return 1;
  }
  return 0;
}
