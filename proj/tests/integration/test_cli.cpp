// End-to-end pipeline checks against the installed CLI binary: command
// composability, exit codes, and byte-level determinism of reruns.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kCli = ROADVOL_CLI_PATH;

int run(const std::string& args) {
  std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int count_lines(const fs::path& p) {
  auto s = slurp(p);
  return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("roadvol_it_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string s(const std::string& sub) const { return (path / sub).string(); }
};

const std::string kTiny =
    " --set model.hidden=8 --set model.heads=2 --set model.K=1 --set model.kernel=3"
    " --set train.epochs=2 --set train.batch_size=16";

}  // namespace

TEST_CASE("cli pipeline: generate, train, evaluate, infer, report") {
  TempDir tmp;
  REQUIRE(run("gen-net --grid 3x3 --seed 5 --out-dir " + tmp.s("net")) == 0);
  REQUIRE(fs::exists(tmp.path / "net" / "network.txt"));
  REQUIRE(fs::exists(tmp.path / "net" / "gen-net.config"));
  REQUIRE(slurp(tmp.path / "net" / "gen-net.status") == "0\n");

  REQUIRE(run("gen-traffic --net " + tmp.s("net/network.txt") + " --seed 5 --out-dir " + tmp.s("traffic")) == 0);
  REQUIRE(fs::exists(tmp.path / "traffic" / "speeds.csv"));
  REQUIRE(fs::exists(tmp.path / "traffic" / "volumes.csv"));

  REQUIRE(run("gen-traffic --net " + tmp.s("net/network.txt") + " --seed 5 --mode raw --out-dir " +
              tmp.s("traffic_raw")) == 0);

  REQUIRE(run("build-dual --net " + tmp.s("net/network.txt") + " --volumes " + tmp.s("traffic/volumes.csv") +
              " --out-dir " + tmp.s("dual")) == 0);
  REQUIRE(count_lines(tmp.path / "dual" / "dual_nodes.csv") > 1);
  REQUIRE(count_lines(tmp.path / "dual" / "dual_edges.csv") > 1);

  std::string data_args = " --net " + tmp.s("net/network.txt") + " --speeds " + tmp.s("traffic/speeds.csv") +
                          " --volumes " + tmp.s("traffic/volumes.csv");
  REQUIRE(run("train" + data_args + " --seed 2 --seeds 2 --out-dir " + tmp.s("run") + kTiny) == 0);
  REQUIRE(fs::exists(tmp.path / "run" / "seed_2" / "checkpoint.bin"));
  REQUIRE(fs::exists(tmp.path / "run" / "seed_3" / "checkpoint.bin"));
  REQUIRE(fs::exists(tmp.path / "run" / "seed_2" / "loss_curve.csv"));
  // per-seed rows plus the mean row plus the header
  CHECK(count_lines(tmp.path / "run" / "results.csv") == 4);

  REQUIRE(run("evaluate" + data_args + " --checkpoint " + tmp.s("run/seed_2/checkpoint") + " --out-dir " +
              tmp.s("eval")) == 0);
  REQUIRE(fs::exists(tmp.path / "eval" / "metrics.csv"));
  REQUIRE(fs::exists(tmp.path / "eval" / "predictions.csv"));

  REQUIRE(run("infer --net " + tmp.s("net/network.txt") + " --speeds " + tmp.s("traffic/speeds.csv") +
              " --checkpoint " + tmp.s("run/seed_2/checkpoint") + " --weekday 2 --hour 9 --out-dir " +
              tmp.s("inf")) == 0);
  int dual_nodes = count_lines(tmp.path / "dual" / "dual_nodes.csv") - 1;
  CHECK(count_lines(tmp.path / "inf" / "network_volumes.csv") == dual_nodes);
  CHECK(count_lines(tmp.path / "inf" / "hour_slice.csv") == dual_nodes + 1);

  REQUIRE(run("report-features --net " + tmp.s("net/network.txt") + " --volumes " + tmp.s("traffic/volumes.csv") +
              " --speeds " + tmp.s("traffic/speeds.csv") + " --out-dir " + tmp.s("rep")) == 0);
  CHECK(count_lines(tmp.path / "rep" / "feature_histograms.csv") == 7 * 10 + 1);
  REQUIRE(fs::exists(tmp.path / "rep" / "speed_profile_means.csv"));
}

TEST_CASE("cli reruns are byte-identical") {
  TempDir tmp;
  REQUIRE(run("gen-net --grid 3x3 --seed 11 --out-dir " + tmp.s("a")) == 0);
  REQUIRE(run("gen-net --grid 3x3 --seed 11 --out-dir " + tmp.s("b")) == 0);
  CHECK(slurp(tmp.path / "a" / "network.txt") == slurp(tmp.path / "b" / "network.txt"));

  REQUIRE(run("gen-traffic --net " + tmp.s("a/network.txt") + " --seed 11 --out-dir " + tmp.s("ta")) == 0);
  REQUIRE(run("gen-traffic --net " + tmp.s("a/network.txt") + " --seed 11 --out-dir " + tmp.s("tb")) == 0);
  CHECK(slurp(tmp.path / "ta" / "speeds.csv") == slurp(tmp.path / "tb" / "speeds.csv"));
  CHECK(slurp(tmp.path / "ta" / "volumes.csv") == slurp(tmp.path / "tb" / "volumes.csv"));

  std::string data = " --net " + tmp.s("a/network.txt") + " --speeds " + tmp.s("ta/speeds.csv") + " --volumes " +
                     tmp.s("ta/volumes.csv");
  REQUIRE(run("train" + data + " --seed 4 --seeds 1 --out-dir " + tmp.s("r1") + kTiny) == 0);
  REQUIRE(run("train" + data + " --seed 4 --seeds 1 --out-dir " + tmp.s("r2") + kTiny) == 0);
  CHECK(slurp(tmp.path / "r1" / "seed_4" / "checkpoint.bin") == slurp(tmp.path / "r2" / "seed_4" / "checkpoint.bin"));
  CHECK(slurp(tmp.path / "r1" / "seed_4" / "loss_curve.csv") == slurp(tmp.path / "r2" / "seed_4" / "loss_curve.csv"));
  CHECK(slurp(tmp.path / "r1" / "results.csv") == slurp(tmp.path / "r2" / "results.csv"));
}

TEST_CASE("ablate emits the seven-variant table") {
  TempDir tmp;
  REQUIRE(run("gen-net --grid 3x3 --seed 6 --out-dir " + tmp.s("net")) == 0);
  REQUIRE(run("gen-traffic --net " + tmp.s("net/network.txt") + " --seed 6 --out-dir " + tmp.s("avg")) == 0);
  REQUIRE(run("gen-traffic --net " + tmp.s("net/network.txt") + " --seed 6 --mode raw --set "
              "synth.raw_days_per_weekday=2 --out-dir " +
              tmp.s("raw")) == 0);
  REQUIRE(run("ablate --net " + tmp.s("net/network.txt") + " --speeds " + tmp.s("avg/speeds.csv") +
              " --volumes " + tmp.s("avg/volumes.csv") + " --speeds-raw " + tmp.s("raw/speeds.csv") +
              " --volumes-raw " + tmp.s("raw/volumes.csv") + " --seed 1 --seeds 1 --out-dir " + tmp.s("abl") +
              kTiny + " --set train.epochs=1") == 0);
  auto table = slurp(tmp.path / "abl" / "ablation.csv");
  CHECK(count_lines(tmp.path / "abl" / "ablation.csv") == 8);  // header + 7 rows
  CHECK(table.find("model,seed,rmse,mape,geh,pct_geh_gt5") == 0);
  for (const char* name : {"full", "no_speed_branch", "no_static_branch", "no_neighborhood", "single_branch",
                           "undirected", "full_raw"})
    CHECK(table.find(name) != std::string::npos);
}

TEST_CASE("cli error handling and exit codes") {
  TempDir tmp;
  CHECK(run("gen-net --grid banana --out-dir " + tmp.s("x")) == 2);  // config error
  CHECK(run("gen-traffic --net " + tmp.s("missing.txt") + " --out-dir " + tmp.s("y")) == 3);  // data error
  CHECK(run("train --net a --speeds b --volumes c") == 2);  // missing required --out-dir
  CHECK(run("nonsense-command") == 2);
  CHECK(run("--help") == 0);

  // malformed csv row reports its line number through the data-error path
  REQUIRE(run("gen-net --grid 3x3 --seed 2 --out-dir " + tmp.s("net")) == 0);
  std::ofstream bad(tmp.s("bad_speeds.csv"));
  bad << "0,0,1,2,3\n";
  bad.close();
  CHECK(run("train --net " + tmp.s("net/network.txt") + " --speeds " + tmp.s("bad_speeds.csv") + " --volumes " +
            tmp.s("bad_speeds.csv") + " --out-dir " + tmp.s("z") + kTiny) == 3);

  // conflicting variant flag
  CHECK(run("gen-net --grid 3x3 --out-dir " + tmp.s("w") + " --set synth.sensor_fraction=1.5") == 2);
}

TEST_CASE("config file merging with flag overrides") {
  TempDir tmp;
  std::ofstream cfg(tmp.s("base.config"));
  cfg << "synth.grid_rows=4\nsynth.grid_cols=2\nsynth.p_oneway=0\n";
  cfg.close();
  REQUIRE(run("gen-net --config " + tmp.s("base.config") + " --seed 3 --out-dir " + tmp.s("n1")) == 0);
  auto resolved = slurp(tmp.path / "n1" / "gen-net.config");
  CHECK(resolved.find("synth.grid_rows=4") != std::string::npos);
  // --set wins over the file
  REQUIRE(run("gen-net --config " + tmp.s("base.config") + " --set synth.grid_rows=2 --seed 3 --out-dir " +
              tmp.s("n2")) == 0);
  auto resolved2 = slurp(tmp.path / "n2" / "gen-net.config");
  CHECK(resolved2.find("synth.grid_rows=2") != std::string::npos);
}
