#include <doctest.h>

#include <cmath>
#include <sstream>

#include "roadvol/csvio.hpp"
#include "roadvol/synth.hpp"

using namespace roadvol;
using synth::SynthConfig;

namespace {

SynthConfig grid_cfg(int rows, int cols, std::uint64_t seed = 1) {
  SynthConfig cfg;
  cfg.grid_rows = rows;
  cfg.grid_cols = cols;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("synth");

TEST_CASE("degenerate and counted grids") {
  auto cfg = grid_cfg(1, 1);
  auto g = synth::gen_network(cfg);
  CHECK(g.intersections.size() == 1);
  CHECK(g.links.empty());

  // n x n fully two-way grid has 2*n*(n-1) links and twice as many dual nodes
  auto cfg5 = grid_cfg(5, 5);
  cfg5.p_oneway = 0.0;
  auto g5 = synth::gen_network(cfg5);
  CHECK(g5.links.size() == 40);
  auto dual = graph::build_dual(g5);
  CHECK(dual.num_nodes() == 80);

  CHECK_THROWS_AS(synth::gen_network([] {
                    auto c = grid_cfg(0, 3);
                    return c;
                  }()),
                  ConfigError);
}

TEST_CASE("network generation is seed-deterministic") {
  auto a = synth::gen_network(grid_cfg(4, 3, 9));
  auto b = synth::gen_network(grid_cfg(4, 3, 9));
  std::ostringstream sa, sb;
  graph::write_primal(a, sa);
  graph::write_primal(b, sb);
  CHECK(sa.str() == sb.str());
  auto c = synth::gen_network(grid_cfg(4, 3, 10));
  std::ostringstream sc;
  graph::write_primal(c, sc);
  CHECK(sa.str() != sc.str());
}

TEST_CASE("static attributes stay inside catalog ranges") {
  auto g = synth::gen_network(grid_cfg(6, 6, 123));
  for (const auto& l : g.links) CHECK_NOTHROW(l.attrs.validate());
}

TEST_CASE("congestion curve closed forms") {
  CHECK(synth::congestion_speed(80.0, 1.0, 1.0, 1.0, 0.0) == doctest::Approx(40.0));  // v = ffs/2 at capacity
  CHECK(synth::congestion_speed(80.0, 0.0, 1.0, 2.0, 0.0) == doctest::Approx(80.0));
  CHECK(synth::congestion_speed(80.0, 0.3, 1.0, 2.0, 0.5) == doctest::Approx(80.0));  // free-flow plateau
  CHECK(synth::congestion_speed(80.0, 0.6, 1.0, 1.0, 0.5) < 80.0);
  CHECK(synth::invert_speed(80.0, 40.0, 1.0, 1.0) == doctest::Approx(1.0));
  CHECK(synth::invert_speed(80.0, 80.0, 1.0, 2.0) == doctest::Approx(0.0));
}

TEST_CASE("demand profiles are positive, bounded and class-ordered") {
  for (int fc = 1; fc <= 5; ++fc)
    for (int w = 0; w < 7; ++w)
      for (int h = 0; h < 24; ++h) {
        double d = synth::demand_profile(fc, w, h);
        CHECK(d > 0.0);
        CHECK(d <= 1.0);
      }
  CHECK(synth::demand_profile(1, 1, 8) > synth::demand_profile(5, 1, 8));
}

TEST_CASE("zero demand gives free-flow speeds and zero volumes") {
  auto cfg = grid_cfg(3, 3, 4);
  cfg.demand_scale = 0.0;
  cfg.sensor_fraction = 0.5;
  auto dual = graph::build_dual(synth::gen_network(cfg));
  synth::gen_traffic(dual, cfg);
  for (int v = 0; v < dual.num_nodes(); ++v) {
    const auto& a = dual.nodes[static_cast<size_t>(v)].attrs;
    for (int d = 0; d < dual.num_days(); ++d)
      for (int t = 0; t < dual.T; ++t) CHECK(dual.speed_profile(d, v)[t] == doctest::Approx(a.free_flow_speed));
  }
  for (const auto& [v, profiles] : dual.volumes)
    for (const auto& q : profiles)
      for (double x : q) CHECK(x == 0.0);
}

TEST_CASE("traffic is reproducible and respects speed bounds") {
  auto cfg = grid_cfg(4, 4, 6);
  cfg.speed_noise = 0.05;
  cfg.demand_scale = 0.8;
  auto dual1 = graph::build_dual(synth::gen_network(cfg));
  auto dual2 = graph::build_dual(synth::gen_network(cfg));
  synth::gen_traffic(dual1, cfg);
  synth::gen_traffic(dual2, cfg);
  CHECK(dual1.speeds == dual2.speeds);
  CHECK(dual1.volumes == dual2.volumes);
  const double bound = 1.0 + 4.0 * cfg.speed_noise;
  for (int v = 0; v < dual1.num_nodes(); ++v) {
    const auto& a = dual1.nodes[static_cast<size_t>(v)].attrs;
    for (int d = 0; d < dual1.num_days(); ++d)
      for (int t = 0; t < dual1.T; ++t) {
        double s = dual1.speed_profile(d, v)[t];
        CHECK(s > 0.0);
        CHECK(s <= a.free_flow_speed * bound + 1e-12);
      }
  }
  for (const auto& [v, profiles] : dual1.volumes)
    for (const auto& q : profiles)
      for (double x : q) CHECK(x >= 0.0);
}

TEST_CASE("noiseless speeds invert exactly back to volumes") {
  auto cfg = grid_cfg(4, 4, 11);
  cfg.speed_noise = 0.0;
  cfg.free_flow_threshold = 0.0;
  cfg.demand_scale = 0.7;
  auto dual = graph::build_dual(synth::gen_network(cfg));
  synth::gen_traffic(dual, cfg);
  for (const auto& [v, profiles] : dual.volumes) {
    const auto& a = dual.nodes[static_cast<size_t>(v)].attrs;
    double cap = a.lanes * cfg.cap_per_lane;
    for (int d = 0; d < dual.num_days(); ++d)
      for (int h = 0; h < dual.Tprime; ++h) {
        double speed = dual.speed_profile(d, v)[h * 4];
        double q_hat = synth::invert_speed(a.free_flow_speed, speed, cfg.alpha, cfg.beta) * cap;
        double q = profiles[static_cast<size_t>(d)][static_cast<size_t>(h)];
        CHECK(q_hat == doctest::Approx(q).epsilon(1e-8));
      }
  }
}

TEST_CASE("flipping a one-way street changes neighbors' ground truth") {
  auto cfg = grid_cfg(3, 3, 13);
  cfg.p_oneway = 1.0;
  auto primal = synth::gen_network(cfg);
  // drop the explicit maneuver rows so both graphs use the same default rule
  // (the generator's rows encode the same everything-but-U-turns policy)
  primal.maneuvers.clear();
  auto flipped = primal;
  std::swap(flipped.links[4].from, flipped.links[4].to);

  auto d1 = graph::build_dual(primal);
  auto d2 = graph::build_dual(flipped);
  d1.day_weekday = {0};
  d2.day_weekday = {0};
  REQUIRE(d1.num_nodes() == d2.num_nodes());
  bool other_node_changed = false;
  for (int v = 0; v < d1.num_nodes(); ++v) {
    if (d1.nodes[static_cast<size_t>(v)].segment_id == flipped.links[4].id) continue;
    auto q1 = synth::true_volume_profile(d1, cfg, v, 0);
    auto q2 = synth::true_volume_profile(d2, cfg, v, 0);
    for (size_t h = 0; h < q1.size(); ++h)
      if (std::abs(q1[h] - q2[h]) > 1e-9) other_node_changed = true;
  }
  CHECK(other_node_changed);
}

TEST_CASE("dataset assembly counts sensors times days, skipping missing pairs") {
  auto cfg = grid_cfg(4, 4, 3);
  cfg.sensor_fraction = 0.25;
  auto dual = graph::build_dual(synth::gen_network(cfg));
  synth::gen_traffic(dual, cfg);
  auto labeled = dual.labeled_set();
  auto ds = synth::assemble_dataset(dual, 2);
  CHECK(ds.samples.size() == labeled.size() * 7);
  CHECK(ds.skipped == 0);
  for (const auto& s : ds.samples) {
    CHECK(std::binary_search(s.sg.nodes.begin(), s.sg.nodes.end(), s.node));  // target inside its subgraph
    CHECK(s.target == dual.volumes.at(s.node)[static_cast<size_t>(s.day)]);
    CHECK(s.target.size() == 24);
  }

  auto cfg_missing = cfg;
  cfg_missing.missing_rate = 0.2;
  auto dual2 = graph::build_dual(synth::gen_network(cfg_missing));
  synth::gen_traffic(dual2, cfg_missing);
  auto ds2 = synth::assemble_dataset(dual2, 2);
  CHECK(ds2.skipped > 0);
  CHECK(ds2.samples.size() + static_cast<size_t>(ds2.skipped) == dual2.labeled_set().size() * 7);
}

TEST_CASE("raw-day mode widens the day axis and jitters volumes") {
  auto cfg = grid_cfg(3, 3, 5);
  cfg.raw_days = true;
  cfg.raw_days_per_weekday = 3;
  auto dual = graph::build_dual(synth::gen_network(cfg));
  synth::gen_traffic(dual, cfg);
  CHECK(dual.num_days() == 21);
  CHECK(dual.day_weekday[0] == 0);
  CHECK(dual.day_weekday[2] == 0);
  CHECK(dual.day_weekday[3] == 1);
  REQUIRE(!dual.volumes.empty());
  const auto& profiles = dual.volumes.begin()->second;
  CHECK(profiles[0] != profiles[1]);  // same weekday, different day draw
}

TEST_CASE("volume csv roundtrip preserves missing profiles") {
  auto cfg = grid_cfg(3, 3, 8);
  cfg.missing_rate = 0.3;
  cfg.sensor_fraction = 0.5;
  auto dual = graph::build_dual(synth::gen_network(cfg));
  synth::gen_traffic(dual, cfg);
  std::ostringstream sp, vol;
  io::write_speeds_csv(dual, sp);
  io::write_volumes_csv(dual, vol);

  auto dual2 = graph::build_dual(synth::gen_network(cfg));
  std::istringstream spi(sp.str()), voli(vol.str());
  io::read_speeds_csv(dual2, spi);
  io::read_volumes_csv(dual2, voli);
  CHECK(dual2.speeds == dual.speeds);
  CHECK(dual2.volumes == dual.volumes);
  CHECK(dual2.labeled_set() == dual.labeled_set());
  for (int v : dual2.labeled_set()) CHECK(dual2.nodes[static_cast<size_t>(v)].is_sensor);
}

TEST_CASE("csv readers report line numbers") {
  auto cfg = grid_cfg(2, 2, 1);
  auto dual = graph::build_dual(synth::gen_network(cfg));
  std::istringstream bad("0,9,1,2\n");
  CHECK_THROWS_WITH_AS(io::read_speeds_csv(dual, bad), doctest::Contains("line 1"), DataError);
}

TEST_CASE("normalization: roundtrip identity and constant-column handling") {
  auto cfg = grid_cfg(4, 4, 21);
  auto dual = graph::build_dual(synth::gen_network(cfg));
  synth::gen_traffic(dual, cfg);
  auto ds = synth::assemble_dataset(dual, 1);
  std::vector<int> train_idx;
  for (size_t i = 0; i < ds.samples.size() / 2; ++i) train_idx.push_back(static_cast<int>(i));
  std::vector<std::string> warnings;
  auto norm = synth::fit_norm_stats(ds, train_idx, &warnings);

  for (int f = 0; f < graph::kNumStaticFeatures; ++f) {
    double x = 37.25;
    double z = (x - norm.feat_mean[static_cast<size_t>(f)]) / norm.feat_std[static_cast<size_t>(f)];
    double back = z * norm.feat_std[static_cast<size_t>(f)] + norm.feat_mean[static_cast<size_t>(f)];
    CHECK(std::abs(back - x) < 1e-12);
  }
  double q = 523.75;
  CHECK(std::abs(q / norm.vol_scale * norm.vol_scale - q) < 1e-12);
  CHECK(norm.vol_scale > 0.0);

  // constant column: z-scores collapse to zero with scale 1
  auto ds_const = ds;
  for (auto& s : ds_const.samples)
    for (size_t i = 0; i < s.sg.nodes.size(); ++i) s.sg.features[i * 7 + 4] = 0.125;  // curvature column
  warnings.clear();
  auto norm_c = synth::fit_norm_stats(ds_const, train_idx, &warnings);
  CHECK(norm_c.feat_std[4] == 1.0);
  bool warned = false;
  for (const auto& w : warnings) warned = warned || w.find("zero-variance") != std::string::npos;
  CHECK(warned);
  auto enc = model::encode_static_input(ds_const.samples[0].sg, norm_c);
  for (size_t i = 0; i < ds_const.samples[0].sg.nodes.size(); ++i) CHECK(enc[i * 7 + 4] == doctest::Approx(0.0));
}

TEST_CASE("normalization ignores everything outside the training split") {
  auto cfg = grid_cfg(4, 4, 22);
  auto dual = graph::build_dual(synth::gen_network(cfg));
  synth::gen_traffic(dual, cfg);
  auto ds = synth::assemble_dataset(dual, 1);
  std::vector<int> train_idx;
  for (size_t i = 0; i < ds.samples.size() / 2; ++i) train_idx.push_back(static_cast<int>(i));
  auto norm1 = synth::fit_norm_stats(ds, train_idx);

  // corrupt every non-training sample; fitted stats must not move
  auto ds2 = ds;
  for (size_t i = ds.samples.size() / 2; i < ds.samples.size(); ++i) {
    for (auto& q : ds2.samples[i].target) q *= 5.0;
    for (auto& v : ds2.samples[i].sg.speeds) v *= 3.0;
    for (auto& f : ds2.samples[i].sg.features) f += 100.0;
  }
  auto norm2 = synth::fit_norm_stats(ds2, train_idx);
  CHECK(norm1.vol_scale == norm2.vol_scale);
  CHECK(norm1.speed_mean == norm2.speed_mean);
  CHECK(norm1.speed_std == norm2.speed_std);
  for (int f = 0; f < 7; ++f) {
    CHECK(norm1.feat_mean[static_cast<size_t>(f)] == norm2.feat_mean[static_cast<size_t>(f)]);
    CHECK(norm1.feat_std[static_cast<size_t>(f)] == norm2.feat_std[static_cast<size_t>(f)]);
  }
}

TEST_CASE("synth config kv roundtrip") {
  SynthConfig cfg = grid_cfg(7, 3, 99);
  cfg.raw_days = true;
  cfg.free_flow_threshold = 0.45;
  KvConfig kv;
  cfg.to_kv(kv);
  auto back = SynthConfig::from_kv(kv);
  CHECK(back.grid_rows == 7);
  CHECK(back.grid_cols == 3);
  CHECK(back.seed == 99);
  CHECK(back.raw_days);
  CHECK(back.free_flow_threshold == doctest::Approx(0.45));
}

TEST_SUITE_END();
