#include "roadvol/csvio.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "roadvol/errors.hpp"

namespace roadvol::io {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

[[noreturn]] void fail(int line_no, const std::string& what) {
  throw DataError("line " + std::to_string(line_no) + ": " + what);
}

struct ProfileRow {
  int node = -1;
  int weekday = -1;
  bool missing = false;
  std::vector<double> values;
};

// Shared reader for both profile CSVs. `width` is the expected value count;
// rows whose value fields are all empty are flagged missing.
std::vector<ProfileRow> read_profile_rows(std::istream& in, int width) {
  std::vector<ProfileRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto f = split_csv(line);
    if (static_cast<int>(f.size()) != width + 2)
      fail(line_no, "expected " + std::to_string(width + 2) + " fields, got " + std::to_string(f.size()));
    ProfileRow r;
    try {
      r.node = std::stoi(f[0]);
      r.weekday = std::stoi(f[1]);
    } catch (const std::exception&) {
      fail(line_no, "bad node or weekday field");
    }
    if (r.weekday < 0 || r.weekday > 6) fail(line_no, "weekday out of range 0..6");
    bool any_empty = false, all_empty = true;
    for (int i = 0; i < width; ++i) {
      const std::string& s = f[static_cast<size_t>(i) + 2];
      if (s.empty()) {
        any_empty = true;
        continue;
      }
      all_empty = false;
      try {
        r.values.push_back(std::stod(s));
      } catch (const std::exception&) {
        fail(line_no, "bad value field '" + s + "'");
      }
    }
    if (any_empty) {
      if (!all_empty) fail(line_no, "partially empty profile row");
      r.missing = true;
      r.values.clear();
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

void write_speeds_csv(const graph::DualGraph& dual, std::ostream& out) {
  for (int v = 0; v < dual.num_nodes(); ++v)
    for (int day = 0; day < dual.num_days(); ++day) {
      out << v << ',' << dual.day_weekday[static_cast<size_t>(day)];
      const double* row = dual.speed_profile(day, v);
      for (int t = 0; t < dual.T; ++t) out << ',' << format_double(row[t]);
      out << '\n';
    }
}

void read_speeds_csv(graph::DualGraph& dual, std::istream& in) {
  constexpr int kT = 96;
  auto rows = read_profile_rows(in, kT);
  if (rows.empty()) throw DataError("speed csv: no rows");
  // derive the day-column layout from per-(node, weekday) repeat counts
  std::map<std::pair<int, int>, int> seen;  // (node, weekday) -> occurrences so far
  int repeats = 0;
  for (const auto& r : rows) {
    if (r.missing) throw DataError("speed csv: speeds must cover every day (missing row for node " +
                                   std::to_string(r.node) + ")");
    if (r.node < 0 || r.node >= dual.num_nodes())
      throw DataError("speed csv: node " + std::to_string(r.node) + " not in dual graph");
    repeats = std::max(repeats, ++seen[{r.node, r.weekday}]);
  }
  const int D = 7 * repeats;
  dual.T = kT;
  dual.day_weekday.clear();
  for (int w = 0; w < 7; ++w)
    for (int j = 0; j < repeats; ++j) dual.day_weekday.push_back(w);
  dual.speeds.assign(static_cast<size_t>(D) * dual.num_nodes() * kT, -1.0);

  seen.clear();
  for (const auto& r : rows) {
    int k = seen[{r.node, r.weekday}]++;
    int day = r.weekday * repeats + k;
    double* dst = dual.speeds.data() + (static_cast<size_t>(day) * dual.num_nodes() + r.node) * kT;
    std::copy(r.values.begin(), r.values.end(), dst);
  }
  for (double s : dual.speeds)
    if (s < 0.0) throw DataError("speed csv: incomplete coverage (every node needs every day column)");
}

void write_volumes_csv(const graph::DualGraph& dual, std::ostream& out) {
  for (const auto& [v, profiles] : dual.volumes)
    for (int day = 0; day < dual.num_days(); ++day) {
      out << v << ',' << dual.day_weekday[static_cast<size_t>(day)];
      const auto& q = profiles[static_cast<size_t>(day)];
      if (q.empty()) {
        for (int h = 0; h < dual.Tprime; ++h) out << ',';
      } else {
        for (double x : q) out << ',' << format_double(x);
      }
      out << '\n';
    }
}

void read_volumes_csv(graph::DualGraph& dual, std::istream& in) {
  constexpr int kTprime = 24;
  if (dual.num_days() == 0) throw StateError("volume csv: attach speeds first (day layout unknown)");
  auto rows = read_profile_rows(in, kTprime);
  if (rows.empty()) throw DataError("volume csv: no rows");
  int repeats = dual.num_days() / 7;
  dual.Tprime = kTprime;
  dual.volumes.clear();
  std::map<std::pair<int, int>, int> seen;
  for (const auto& r : rows) {
    if (r.node < 0 || r.node >= dual.num_nodes())
      throw DataError("volume csv: node " + std::to_string(r.node) + " not in dual graph");
    int k = seen[{r.node, r.weekday}]++;
    if (k >= repeats)
      throw DataError("volume csv: more rows for node " + std::to_string(r.node) + " weekday " +
                      std::to_string(r.weekday) + " than day columns");
    int day = r.weekday * repeats + k;
    auto& profiles = dual.volumes[r.node];
    if (profiles.empty()) profiles.assign(static_cast<size_t>(dual.num_days()), {});
    if (!r.missing) profiles[static_cast<size_t>(day)] = r.values;
  }
  // prune nodes whose every profile is missing
  for (auto it = dual.volumes.begin(); it != dual.volumes.end();) {
    bool any = false;
    for (const auto& p : it->second) any = any || !p.empty();
    it = any ? std::next(it) : dual.volumes.erase(it);
  }
  dual.mark_sensors_from_volumes();
}

void save_speeds_csv(const graph::DualGraph& dual, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  write_speeds_csv(dual, out);
  if (!out) throw DataError("short write: " + path);
}

void load_speeds_csv(graph::DualGraph& dual, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    read_speeds_csv(dual, in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void save_volumes_csv(const graph::DualGraph& dual, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  write_volumes_csv(dual, out);
  if (!out) throw DataError("short write: " + path);
}

void load_volumes_csv(graph::DualGraph& dual, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    read_volumes_csv(dual, in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace roadvol::io
