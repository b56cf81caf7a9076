#include "roadvol/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "roadvol/errors.hpp"
#include "roadvol/rng.hpp"

namespace roadvol::synth {

void SynthConfig::validate() const {
  if (grid_rows < 1 || grid_cols < 1) throw ConfigError("synth: grid dims must be >= 1");
  if (p_oneway < 0.0 || p_oneway > 1.0) throw ConfigError("synth: p_oneway must be in [0,1]");
  if (sensor_fraction <= 0.0 || sensor_fraction > 1.0) throw ConfigError("synth: sensor_fraction must be in (0,1]");
  if (cap_per_lane <= 0.0) throw ConfigError("synth: cap_per_lane must be positive");
  if (alpha <= 0.0 || beta <= 0.0) throw ConfigError("synth: alpha and beta must be positive");
  if (free_flow_threshold < 0.0 || free_flow_threshold >= 1.0)
    throw ConfigError("synth: free_flow_threshold must be in [0,1)");
  if (speed_noise < 0.0 || missing_rate < 0.0 || missing_rate >= 1.0)
    throw ConfigError("synth: invalid noise/missing parameters");
  if (raw_days && raw_days_per_weekday < 1) throw ConfigError("synth: raw_days_per_weekday must be >= 1");
  if (T < 1 || Tprime < 1 || T % Tprime != 0) throw ConfigError("synth: T must be a multiple of Tprime");
}

void SynthConfig::to_kv(KvConfig& kv, const std::string& prefix) const {
  kv.set(prefix + "grid_rows", grid_rows);
  kv.set(prefix + "grid_cols", grid_cols);
  kv.set(prefix + "p_oneway", p_oneway);
  kv.set(prefix + "sensor_fraction", sensor_fraction);
  kv.set(prefix + "cap_per_lane", cap_per_lane);
  kv.set(prefix + "alpha", alpha);
  kv.set(prefix + "beta", beta);
  kv.set(prefix + "free_flow_threshold", free_flow_threshold);
  kv.set(prefix + "speed_noise", speed_noise);
  kv.set(prefix + "demand_scale", demand_scale);
  kv.set(prefix + "upstream_mix", upstream_mix);
  kv.set(prefix + "node_factor_spread", node_factor_spread);
  kv.set(prefix + "missing_rate", missing_rate);
  kv.set(prefix + "raw_days", raw_days);
  kv.set(prefix + "raw_days_per_weekday", raw_days_per_weekday);
  kv.set(prefix + "raw_jitter", raw_jitter);
  kv.set(prefix + "T", T);
  kv.set(prefix + "Tprime", Tprime);
  kv.set(prefix + "seed", static_cast<std::int64_t>(seed));
}

SynthConfig SynthConfig::from_kv(const KvConfig& kv, const std::string& prefix) {
  SynthConfig c;
  c.grid_rows = kv.get_int(prefix + "grid_rows", c.grid_rows);
  c.grid_cols = kv.get_int(prefix + "grid_cols", c.grid_cols);
  c.p_oneway = kv.get_double(prefix + "p_oneway", c.p_oneway);
  c.sensor_fraction = kv.get_double(prefix + "sensor_fraction", c.sensor_fraction);
  c.cap_per_lane = kv.get_double(prefix + "cap_per_lane", c.cap_per_lane);
  c.alpha = kv.get_double(prefix + "alpha", c.alpha);
  c.beta = kv.get_double(prefix + "beta", c.beta);
  c.free_flow_threshold = kv.get_double(prefix + "free_flow_threshold", c.free_flow_threshold);
  c.speed_noise = kv.get_double(prefix + "speed_noise", c.speed_noise);
  c.demand_scale = kv.get_double(prefix + "demand_scale", c.demand_scale);
  c.upstream_mix = kv.get_double(prefix + "upstream_mix", c.upstream_mix);
  c.node_factor_spread = kv.get_double(prefix + "node_factor_spread", c.node_factor_spread);
  c.missing_rate = kv.get_double(prefix + "missing_rate", c.missing_rate);
  c.raw_days = kv.get_bool(prefix + "raw_days", c.raw_days);
  c.raw_days_per_weekday = kv.get_int(prefix + "raw_days_per_weekday", c.raw_days_per_weekday);
  c.raw_jitter = kv.get_double(prefix + "raw_jitter", c.raw_jitter);
  c.T = kv.get_int(prefix + "T", c.T);
  c.Tprime = kv.get_int(prefix + "Tprime", c.Tprime);
  c.seed = static_cast<std::uint64_t>(kv.get_double(prefix + "seed", static_cast<double>(c.seed)));
  c.validate();
  return c;
}

namespace {

double bump(double t, double mu, double sigma) {
  double z = (t - mu) / sigma;
  return std::exp(-0.5 * z * z);
}

constexpr double kFcScale[6] = {0.0, 1.0, 0.85, 0.7, 0.55, 0.4};

}  // namespace

double demand_profile(int functional_class, int weekday, int hour) {
  double t = static_cast<double>(hour);
  double shape;
  if (weekday < 5) {
    shape = 0.22 + 0.55 * bump(t, 8.0, 1.4) + 0.5 * bump(t, 17.5, 1.9) + 0.18 * bump(t, 12.5, 2.6);
  } else {
    double wk = weekday == 5 ? 1.0 : 0.85;
    shape = wk * (0.18 + 0.5 * bump(t, 13.5, 3.2) + 0.12 * bump(t, 19.0, 2.0));
  }
  int fc = std::clamp(functional_class, 1, 5);
  return std::min(1.0, shape) * kFcScale[fc];
}

double congestion_speed(double ffs, double utilization, double alpha, double beta, double threshold) {
  double u = std::max(0.0, utilization);
  if (u <= threshold) return ffs;
  double x = (u - threshold) / (1.0 - threshold);
  return ffs / (1.0 + alpha * std::pow(x, beta));
}

double invert_speed(double ffs, double v, double alpha, double beta) {
  if (v <= 0.0 || v > ffs) return v >= ffs ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  double x = (ffs / v - 1.0) / alpha;
  return x <= 0.0 ? 0.0 : std::pow(x, 1.0 / beta);
}

graph::PrimalGraph gen_network(const SynthConfig& cfg) {
  cfg.validate();
  graph::PrimalGraph g;
  const int R = cfg.grid_rows, C = cfg.grid_cols;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) g.intersections.push_back(r * C + c);

  int link_id = 0;
  auto add_link = [&](int a, int b) {
    graph::Link l;
    l.id = link_id++;
    Rng dir_rng = Rng::stream(cfg.seed, "net-dir", static_cast<std::uint64_t>(l.id));
    bool oneway = dir_rng.bernoulli(cfg.p_oneway);
    bool flip = oneway && dir_rng.bernoulli(0.5);
    l.from = flip ? b : a;
    l.to = flip ? a : b;
    l.dir = oneway ? graph::LinkDir::OneWay : graph::LinkDir::TwoWay;

    Rng ar = Rng::stream(cfg.seed, "net-attrs", static_cast<std::uint64_t>(l.id));
    double u = ar.uniform();
    int fc = u < 0.08 ? 1 : u < 0.25 ? 2 : u < 0.50 ? 3 : u < 0.75 ? 4 : 5;
    l.attrs.functional_class = fc;
    switch (fc) {
      case 1:
        l.attrs.lanes = 2 + static_cast<int>(ar.randint(3));  // 2..4
        l.attrs.speed_limit = 70.0 + 10.0 * static_cast<double>(ar.randint(4));  // 70..100
        break;
      case 2:
        l.attrs.lanes = 2 + static_cast<int>(ar.randint(2));  // 2..3
        l.attrs.speed_limit = 50.0 + 10.0 * static_cast<double>(ar.randint(3));  // 50..70
        break;
      case 3:
        l.attrs.lanes = 1 + static_cast<int>(ar.randint(2));  // 1..2
        l.attrs.speed_limit = 50.0;
        break;
      case 4:
        l.attrs.lanes = 1 + static_cast<int>(ar.randint(2));
        l.attrs.speed_limit = 30.0 + 20.0 * static_cast<double>(ar.randint(2));  // 30 or 50
        break;
      default:
        l.attrs.lanes = 1;
        l.attrs.speed_limit = 30.0;
        break;
    }
    l.attrs.free_flow_speed = std::clamp(l.attrs.speed_limit * ar.uniform(0.82, 1.02), 10.0, 120.0);
    l.attrs.length = ar.uniform(80.0, 400.0);
    l.attrs.curvature = ar.uniform(0.0, 0.05);
    l.attrs.slope_percent = std::clamp(ar.normal(0.0, 2.0), -10.0, 10.0);
    g.links.push_back(l);
  };

  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      if (c + 1 < C) add_link(r * C + c, r * C + c + 1);
      if (r + 1 < R) add_link(r * C + c, (r + 1) * C + c);
    }

  // explicit maneuver table: everything permitted except U-turns
  std::map<int, std::vector<std::pair<int, int>>> arrives, departs;  // isec -> (link, dir)
  for (const auto& l : g.links)
    for (int d : {graph::kForward, graph::kBackward}) {
      if (!graph::dir_feasible(l, d)) continue;
      arrives[graph::head_of(l, d)].emplace_back(l.id, d);
      departs[graph::tail_of(l, d)].emplace_back(l.id, d);
    }
  for (int isec : g.intersections) {
    auto ai = arrives.find(isec);
    auto di = departs.find(isec);
    if (ai == arrives.end() || di == departs.end()) continue;
    for (auto [il, id] : ai->second)
      for (auto [ol, od] : di->second) {
        bool uturn = il == ol && id != od;
        g.maneuvers.push_back({il, id, ol, od, !uturn});
      }
  }
  g.validate();
  return g;
}

namespace {

struct TrafficModel {
  const graph::DualGraph& dual;
  const SynthConfig& cfg;
  std::vector<double> capacity;     // per node
  std::vector<double> node_factor;  // per node demand factor

  TrafficModel(const graph::DualGraph& d, const SynthConfig& c) : dual(d), cfg(c) {
    const int V = d.num_nodes();
    capacity.resize(static_cast<size_t>(V));
    node_factor.resize(static_cast<size_t>(V));
    for (int v = 0; v < V; ++v) {
      const auto& a = d.nodes[static_cast<size_t>(v)].attrs;
      capacity[static_cast<size_t>(v)] = a.lanes * c.cap_per_lane;
      Rng r = Rng::stream(c.seed, "node-demand", static_cast<std::uint64_t>(v));
      node_factor[static_cast<size_t>(v)] = 1.0 + c.node_factor_spread * (2.0 * r.uniform() - 1.0);
    }
  }

  // Deterministic typical utilization: local demand mixed with the mean
  // demand of upstream (in-edge) neighbors. Flipping a one-way street
  // changes in-neighbor sets and therefore the ground truth.
  double utilization(int v, int weekday, int hour) const {
    const auto& a = dual.nodes[static_cast<size_t>(v)].attrs;
    double local = node_factor[static_cast<size_t>(v)] * demand_profile(a.functional_class, weekday, hour);
    const auto& ups = dual.in_adj[static_cast<size_t>(v)];
    double up = 0.0;
    if (!ups.empty()) {
      for (int u : ups) {
        const auto& au = dual.nodes[static_cast<size_t>(u)].attrs;
        up += node_factor[static_cast<size_t>(u)] * demand_profile(au.functional_class, weekday, hour);
      }
      up /= static_cast<double>(ups.size());
    }
    return cfg.demand_scale * ((1.0 - cfg.upstream_mix) * local + cfg.upstream_mix * up);
  }

  // Raw-day jitter factor; 1.0 in averaged mode.
  double day_jitter(int v, int day, int hour) const {
    if (!cfg.raw_days) return 1.0;
    Rng rd = Rng::stream(cfg.seed, "raw-day", static_cast<std::uint64_t>(v), static_cast<std::uint64_t>(day));
    double zd = rd.normal();
    Rng rh = Rng::stream(cfg.seed, "raw-hour", static_cast<std::uint64_t>(v), static_cast<std::uint64_t>(day),
                         static_cast<std::uint64_t>(hour));
    double zh = rh.normal();
    return std::max(0.05, 1.0 + cfg.raw_jitter * zd + 0.5 * cfg.raw_jitter * zh);
  }

  double volume(int v, int day, int weekday, int hour) const {
    return utilization(v, weekday, hour) * day_jitter(v, day, hour) * capacity[static_cast<size_t>(v)];
  }
};

}  // namespace

std::vector<double> true_volume_profile(const graph::DualGraph& dual, const SynthConfig& cfg, int node, int day) {
  TrafficModel tm(dual, cfg);
  int weekday = dual.day_weekday.empty() ? day % 7 : dual.day_weekday[static_cast<size_t>(day)];
  std::vector<double> q(static_cast<size_t>(cfg.Tprime));
  for (int h = 0; h < cfg.Tprime; ++h) q[static_cast<size_t>(h)] = tm.volume(node, day, weekday, h);
  return q;
}

void gen_traffic(graph::DualGraph& dual, const SynthConfig& cfg) {
  cfg.validate();
  if (dual.out_adj.size() != dual.nodes.size()) dual.build_adjacency();
  const int V = dual.num_nodes();
  if (V == 0) throw DataError("gen_traffic: empty dual graph");

  const int per_wd = cfg.raw_days ? cfg.raw_days_per_weekday : 1;
  const int D = 7 * per_wd;
  dual.day_weekday.clear();
  for (int w = 0; w < 7; ++w)
    for (int j = 0; j < per_wd; ++j) dual.day_weekday.push_back(w);

  dual.T = cfg.T;
  dual.Tprime = cfg.Tprime;
  dual.speeds.assign(static_cast<size_t>(D) * V * cfg.T, 0.0);
  dual.volumes.clear();

  TrafficModel tm(dual, cfg);
  const int steps_per_hour = cfg.T / cfg.Tprime;
  const double noise_bound = 4.0 * cfg.speed_noise;

  for (int day = 0; day < D; ++day) {
    int weekday = dual.day_weekday[static_cast<size_t>(day)];
    for (int v = 0; v < V; ++v) {
      const auto& attrs = dual.nodes[static_cast<size_t>(v)].attrs;
      double cap = tm.capacity[static_cast<size_t>(v)];
      double* speed_row = dual.speeds.data() + (static_cast<size_t>(day) * V + v) * cfg.T;
      for (int t = 0; t < cfg.T; ++t) {
        int hour = t / steps_per_hour;
        double q = tm.volume(v, day, weekday, hour);
        double speed =
            congestion_speed(attrs.free_flow_speed, q / cap, cfg.alpha, cfg.beta, cfg.free_flow_threshold);
        if (cfg.speed_noise > 0.0) {
          Rng nr = Rng::stream(cfg.seed, "speed-noise", static_cast<std::uint64_t>(v),
                               static_cast<std::uint64_t>(day), static_cast<std::uint64_t>(t));
          speed *= 1.0 + cfg.speed_noise * nr.normal();
          speed = std::clamp(speed, 1.0, attrs.free_flow_speed * (1.0 + noise_bound));
        }
        speed_row[t] = speed;
      }
    }
  }

  // sensor selection: deterministic shuffle, first round(fraction * V)
  int n_sensors = std::max(1, static_cast<int>(std::llround(cfg.sensor_fraction * V)));
  n_sensors = std::min(n_sensors, V);
  std::vector<int> order(static_cast<size_t>(V));
  for (int v = 0; v < V; ++v) order[static_cast<size_t>(v)] = v;
  Rng sr = Rng::stream(cfg.seed, "sensors");
  for (int i = V - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)], order[sr.randint(static_cast<std::uint64_t>(i + 1))]);
  std::vector<int> sensors(order.begin(), order.begin() + n_sensors);
  std::sort(sensors.begin(), sensors.end());

  for (int v : sensors) {
    auto& profiles = dual.volumes[v];
    profiles.assign(static_cast<size_t>(D), {});
    for (int day = 0; day < D; ++day) {
      Rng mr = Rng::stream(cfg.seed, "missing", static_cast<std::uint64_t>(v), static_cast<std::uint64_t>(day));
      if (cfg.missing_rate > 0.0 && mr.bernoulli(cfg.missing_rate)) continue;  // missing record
      int weekday = dual.day_weekday[static_cast<size_t>(day)];
      std::vector<double> q(static_cast<size_t>(cfg.Tprime));
      for (int h = 0; h < cfg.Tprime; ++h) q[static_cast<size_t>(h)] = tm.volume(v, day, weekday, h);
      profiles[static_cast<size_t>(day)] = std::move(q);
    }
  }
  dual.mark_sensors_from_volumes();
}

Dataset assemble_dataset(const graph::DualGraph& dual, int K) {
  Dataset ds;
  ds.T = dual.T;
  ds.Tprime = dual.Tprime;
  auto labeled = dual.labeled_set();
  if (labeled.empty()) throw DataError("assemble_dataset: no labeled nodes");
  for (int v : labeled) {
    const auto& profiles = dual.volumes.at(v);
    for (int day = 0; day < dual.num_days(); ++day) {
      if (profiles[static_cast<size_t>(day)].empty()) {
        ++ds.skipped;
        continue;
      }
      Sample s;
      s.sg = graph::khop_subgraph(dual, v, K, day);
      s.target = profiles[static_cast<size_t>(day)];
      s.node = v;
      s.day = day;
      s.weekday = s.sg.weekday;
      s.target_fc = dual.nodes[static_cast<size_t>(v)].attrs.functional_class;
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

NormStats fit_norm_stats(const Dataset& ds, const std::vector<int>& train_idx,
                         std::vector<std::string>* warnings) {
  NormStats norm = NormStats::identity();
  if (train_idx.empty()) throw DataError("fit_norm_stats: empty training split");

  std::array<double, graph::kNumStaticFeatures> fsum{}, fsq{};
  double ssum = 0.0, ssq = 0.0, vsum = 0.0, vsq = 0.0;
  std::int64_t fn = 0, sn = 0, vn = 0;
  for (int idx : train_idx) {
    const Sample& s = ds.samples[static_cast<size_t>(idx)];
    const size_t n = s.sg.nodes.size();
    for (size_t i = 0; i < n; ++i)
      for (int f = 0; f < s.sg.n_features; ++f) {
        double x = s.sg.features[i * s.sg.n_features + static_cast<size_t>(f)];
        fsum[static_cast<size_t>(f)] += x;
        fsq[static_cast<size_t>(f)] += x * x;
      }
    fn += static_cast<std::int64_t>(n);
    for (double v : s.sg.speeds) {
      ssum += v;
      ssq += v * v;
    }
    sn += static_cast<std::int64_t>(s.sg.speeds.size());
    for (double q : s.target) {
      vsum += q;
      vsq += q * q;
    }
    vn += static_cast<std::int64_t>(s.target.size());
  }

  auto finish = [&](double sum, double sq, std::int64_t n, double& mean, double& std_out, const std::string& what) {
    mean = sum / static_cast<double>(n);
    double var = sq / static_cast<double>(n) - mean * mean;
    double sd = var > 0.0 ? std::sqrt(var) : 0.0;
    if (sd < 1e-12) {
      if (warnings) warnings->push_back("zero-variance " + what + "; scale kept at 1");
      sd = 1.0;
    }
    std_out = sd;
  };

  for (int f = 0; f < graph::kNumStaticFeatures; ++f)
    finish(fsum[static_cast<size_t>(f)], fsq[static_cast<size_t>(f)], fn, norm.feat_mean[static_cast<size_t>(f)],
           norm.feat_std[static_cast<size_t>(f)], "static feature " + std::to_string(f));
  finish(ssum, ssq, sn, norm.speed_mean, norm.speed_std, "speed channel");

  double vmean = vsum / static_cast<double>(vn);
  double vvar = vsq / static_cast<double>(vn) - vmean * vmean;
  double vsd = vvar > 0.0 ? std::sqrt(vvar) : 0.0;
  if (vsd < 1e-12) {
    if (warnings) warnings->push_back("zero-variance volumes; scale kept at 1");
    vsd = 1.0;
  }
  norm.vol_scale = vsd;
  return norm;
}

}  // namespace roadvol::synth
