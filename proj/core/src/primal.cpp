#include "roadvol/primal.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace roadvol::graph {

void StaticAttrs::validate() const {
  auto bad = [](const std::string& what) { return DataError("static attribute out of range: " + what); };
  if (speed_limit < 10.0 || speed_limit > 130.0) throw bad("speed_limit " + std::to_string(speed_limit));
  if (lanes < 1 || lanes > 4) throw bad("lanes " + std::to_string(lanes));
  if (length < 2.0 || length > 2127.0) throw bad("length " + std::to_string(length));
  if (free_flow_speed < 10.0 || free_flow_speed > 120.0)
    throw bad("free_flow_speed " + std::to_string(free_flow_speed));
  if (curvature < 0.0 || curvature > 1000.0) throw bad("curvature " + std::to_string(curvature));
  if (slope_percent < -100.0 || slope_percent > 100.0) throw bad("slope_percent " + std::to_string(slope_percent));
  if (functional_class < 1 || functional_class > 5)
    throw bad("functional_class " + std::to_string(functional_class));
}

std::array<double, kNumStaticFeatures> feature_row(const StaticAttrs& a) {
  return {a.speed_limit,       static_cast<double>(a.lanes),
          a.length,            a.free_flow_speed,
          a.curvature,         a.slope_percent,
          static_cast<double>(a.functional_class)};
}

int head_of(const Link& link, int travel_dir) { return travel_dir == kForward ? link.to : link.from; }
int tail_of(const Link& link, int travel_dir) { return travel_dir == kForward ? link.from : link.to; }

bool dir_feasible(const Link& link, int travel_dir) {
  return link.dir == LinkDir::TwoWay || travel_dir == kForward;
}

const Link* PrimalGraph::find_link(int id) const {
  for (const auto& l : links)
    if (l.id == id) return &l;
  return nullptr;
}

void PrimalGraph::validate() const {
  std::set<int> isec(intersections.begin(), intersections.end());
  if (isec.size() != intersections.size()) throw DataError("duplicate intersection ids");
  std::map<int, const Link*> by_id;
  for (const auto& l : links) {
    if (!by_id.emplace(l.id, &l).second) throw DataError("duplicate link id " + std::to_string(l.id));
    if (!isec.count(l.from) || !isec.count(l.to))
      throw DataError("link " + std::to_string(l.id) + " references unknown intersection");
    if (l.from == l.to) throw DataError("link " + std::to_string(l.id) + " is a self-loop");
    l.attrs.validate();
  }
  for (const auto& m : maneuvers) {
    auto in_it = by_id.find(m.in_link);
    auto out_it = by_id.find(m.out_link);
    if (in_it == by_id.end() || out_it == by_id.end())
      throw DataError("maneuver references unknown link " +
                      std::to_string(in_it == by_id.end() ? m.in_link : m.out_link));
    if (m.in_dir != kForward && m.in_dir != kBackward) throw DataError("maneuver in_dir must be 0 or 1");
    if (m.out_dir != kForward && m.out_dir != kBackward) throw DataError("maneuver out_dir must be 0 or 1");
    if (!dir_feasible(*in_it->second, m.in_dir) || !dir_feasible(*out_it->second, m.out_dir))
      throw DataError("maneuver uses a direction not feasible on a one-way link " +
                      std::to_string(m.in_link) + "->" + std::to_string(m.out_link));
    if (head_of(*in_it->second, m.in_dir) != tail_of(*out_it->second, m.out_dir))
      throw DataError("maneuver links " + std::to_string(m.in_link) + "->" + std::to_string(m.out_link) +
                      " do not share a common intersection in the given directions");
  }
}

StaticAttrs aggregate_links(std::span<const StaticAttrs> chain, MeanMode mode) {
  if (chain.empty()) throw DataError("aggregate_links: empty chain");
  StaticAttrs out = chain[0];
  double total_len = 0.0;
  double ffs = 0.0, curv = 0.0, slope = 0.0;
  for (const auto& a : chain) {
    out.speed_limit = std::min(out.speed_limit, a.speed_limit);
    out.lanes = std::min(out.lanes, a.lanes);
    out.functional_class = std::min(out.functional_class, a.functional_class);
    total_len += a.length;
    double w = mode == MeanMode::LengthWeighted ? a.length : 1.0;
    ffs += w * a.free_flow_speed;
    curv += w * a.curvature;
    slope += w * a.slope_percent;
  }
  double denom = mode == MeanMode::LengthWeighted ? total_len : static_cast<double>(chain.size());
  out.length = total_len;
  out.free_flow_speed = ffs / denom;
  out.curvature = curv / denom;
  out.slope_percent = slope / denom;
  return out;
}

std::vector<double> average_profiles(const std::vector<std::vector<double>>& profiles) {
  if (profiles.empty()) throw DataError("average_profiles: no profiles");
  size_t n = profiles[0].size();
  std::vector<double> out(n, 0.0);
  for (const auto& p : profiles) {
    if (p.size() != n) throw DataError("average_profiles: length mismatch");
    for (size_t i = 0; i < n; ++i) out[i] += p[i];
  }
  for (auto& x : out) x /= static_cast<double>(profiles.size());
  return out;
}

namespace {

struct Incidence {
  std::vector<int> link_idx;  // indices into g.links
};

// A degree-2 intersection is an interior point of a contractible chain when
// its two links are both two-way, or both one-way forming a through-path.
bool contractible(const PrimalGraph& g, const Incidence& inc, int isec) {
  if (inc.link_idx.size() != 2) return false;
  const Link& a = g.links[static_cast<size_t>(inc.link_idx[0])];
  const Link& b = g.links[static_cast<size_t>(inc.link_idx[1])];
  if (a.dir == LinkDir::TwoWay && b.dir == LinkDir::TwoWay) return true;
  if (a.dir == LinkDir::OneWay && b.dir == LinkDir::OneWay) {
    bool a_in = a.to == isec;
    bool b_in = b.to == isec;
    return a_in != b_in;  // exactly one flows in, one flows out
  }
  return false;
}

}  // namespace

PrimalGraph unify_segments(const PrimalGraph& g, MeanMode mode) {
  g.validate();

  std::map<int, Incidence> inc;
  for (int isec : g.intersections) inc[isec];
  for (size_t i = 0; i < g.links.size(); ++i) {
    inc[g.links[i].from].link_idx.push_back(static_cast<int>(i));
    inc[g.links[i].to].link_idx.push_back(static_cast<int>(i));
  }

  std::map<int, bool> interior;
  for (int isec : g.intersections) interior[isec] = contractible(g, inc[isec], isec);

  PrimalGraph out;
  std::vector<char> used(g.links.size(), 0);
  // (old link id, old travel dir) -> (new link id, new travel dir) for chain ends
  std::map<std::pair<int, int>, std::pair<int, int>> remap;
  std::set<int> dropped_isec;

  auto other_end = [&](const Link& l, int isec) { return l.from == isec ? l.to : l.from; };

  auto emit_chain = [&](std::vector<int> chain_idx, int start_isec, int end_isec) {
    // Chain walked start->end; chain_idx holds link indices in walk order.
    if (chain_idx.size() == 1) {
      out.links.push_back(g.links[static_cast<size_t>(chain_idx[0])]);
      return;
    }
    std::vector<StaticAttrs> attrs;
    attrs.reserve(chain_idx.size());
    bool all_two_way = true;
    for (int li : chain_idx) {
      attrs.push_back(g.links[static_cast<size_t>(li)].attrs);
      all_two_way = all_two_way && g.links[static_cast<size_t>(li)].dir == LinkDir::TwoWay;
    }
    Link merged;
    merged.id = g.links[static_cast<size_t>(chain_idx[0])].id;
    for (int li : chain_idx) merged.id = std::min(merged.id, g.links[static_cast<size_t>(li)].id);
    merged.attrs = aggregate_links(attrs, mode);
    if (all_two_way) {
      merged.dir = LinkDir::TwoWay;
      merged.from = start_isec;
      merged.to = end_isec;
    } else {
      // contractible() guarantees an all-one-way chain here; orient along the flow
      merged.dir = LinkDir::OneWay;
      bool walk_follows_flow = g.links[static_cast<size_t>(chain_idx.front())].from == start_isec;
      merged.from = walk_follows_flow ? start_isec : end_isec;
      merged.to = walk_follows_flow ? end_isec : start_isec;
    }
    // remap the chain-end (link, travel dir) pairs onto the merged link
    const Link& first = g.links[static_cast<size_t>(chain_idx.front())];
    const Link& last = g.links[static_cast<size_t>(chain_idx.back())];
    for (int d : {kForward, kBackward}) {
      if (!dir_feasible(first, d)) continue;
      if (tail_of(first, d) == start_isec)
        remap[{first.id, d}] = {merged.id, tail_of(merged, kForward) == start_isec ? kForward : kBackward};
      else if (head_of(first, d) == start_isec)
        remap[{first.id, d}] = {merged.id, head_of(merged, kForward) == start_isec ? kForward : kBackward};
    }
    for (int d : {kForward, kBackward}) {
      if (!dir_feasible(last, d)) continue;
      if (tail_of(last, d) == end_isec)
        remap[{last.id, d}] = {merged.id, tail_of(merged, kForward) == end_isec ? kForward : kBackward};
      else if (head_of(last, d) == end_isec)
        remap[{last.id, d}] = {merged.id, head_of(merged, kForward) == end_isec ? kForward : kBackward};
    }
    // interior intersections disappear
    int cur = start_isec;
    for (size_t k = 0; k + 1 < chain_idx.size(); ++k) {
      cur = other_end(g.links[static_cast<size_t>(chain_idx[k])], cur);
      dropped_isec.insert(cur);
    }
    out.links.push_back(merged);
  };

  // walk chains outward from every anchor intersection
  for (int isec : g.intersections) {
    if (interior[isec]) continue;
    for (int li : inc[isec].link_idx) {
      if (used[static_cast<size_t>(li)]) continue;
      std::vector<int> chain{li};
      used[static_cast<size_t>(li)] = 1;
      int prev = isec;
      int cur = other_end(g.links[static_cast<size_t>(li)], isec);
      while (interior[cur] && cur != isec) {
        const auto& cand = inc[cur].link_idx;
        int next = cand[0] == chain.back() ? cand[1] : cand[0];
        if (used[static_cast<size_t>(next)]) break;
        used[static_cast<size_t>(next)] = 1;
        chain.push_back(next);
        prev = cur;
        cur = other_end(g.links[static_cast<size_t>(next)], cur);
      }
      (void)prev;
      if (cur == isec && chain.size() > 1) {
        // loop anchored at a single intersection: keep links unmerged
        for (int k : chain) out.links.push_back(g.links[static_cast<size_t>(k)]);
      } else {
        emit_chain(std::move(chain), isec, cur);
      }
    }
  }

  // leftover unvisited links form anchorless degree-2 rings
  for (size_t i = 0; i < g.links.size(); ++i) {
    if (used[i]) continue;
    std::vector<int> cycle_isec;
    int start = g.links[i].from;
    int cur = start;
    int prev_link = -1;
    do {
      cycle_isec.push_back(cur);
      const auto& cand = inc[cur].link_idx;
      int next = cand[0] == prev_link ? cand[1] : cand[0];
      if (prev_link == -1) next = static_cast<int>(i);
      used[static_cast<size_t>(next)] = 1;
      prev_link = next;
      cur = other_end(g.links[static_cast<size_t>(next)], cur);
    } while (cur != start);
    std::ostringstream os;
    os << "unify_segments: degree-2 ring with no anchor intersection:";
    for (int s : cycle_isec) os << ' ' << s;
    throw DataError(os.str());
  }

  for (int isec : g.intersections)
    if (!dropped_isec.count(isec)) out.intersections.push_back(isec);

  // remap maneuvers at surviving intersections; drop interior ones
  std::map<int, const Link*> by_id;
  for (const auto& l : g.links) by_id[l.id] = &l;
  for (const auto& m : g.maneuvers) {
    int common = head_of(*by_id[m.in_link], m.in_dir);
    if (dropped_isec.count(common)) continue;
    Maneuver nm = m;
    if (auto it = remap.find({m.in_link, m.in_dir}); it != remap.end()) {
      nm.in_link = it->second.first;
      nm.in_dir = it->second.second;
    }
    if (auto it = remap.find({m.out_link, m.out_dir}); it != remap.end()) {
      nm.out_link = it->second.first;
      nm.out_dir = it->second.second;
    }
    out.maneuvers.push_back(nm);
  }

  std::sort(out.links.begin(), out.links.end(), [](const Link& a, const Link& b) { return a.id < b.id; });
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// text format
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

[[noreturn]] void parse_fail(int line_no, const std::string& what) {
  throw DataError("line " + std::to_string(line_no) + ": " + what);
}

double to_double(const std::string& s, int line_no) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    parse_fail(line_no, "expected number, got '" + s + "'");
  }
}

int to_int(const std::string& s, int line_no) {
  try {
    size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    parse_fail(line_no, "expected integer, got '" + s + "'");
  }
}

}  // namespace

PrimalGraph parse_primal(std::istream& in) {
  PrimalGraph g;
  enum Section { None, Intersections, Links, Maneuvers } sec = None;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line.erase(0, start);
    if (line == "[INTERSECTIONS]") {
      sec = Intersections;
      continue;
    }
    if (line == "[LINKS]") {
      sec = Links;
      continue;
    }
    if (line == "[MANEUVERS]") {
      sec = Maneuvers;
      continue;
    }
    switch (sec) {
      case None:
        parse_fail(line_no, "content before any section header");
      case Intersections:
        g.intersections.push_back(to_int(line, line_no));
        break;
      case Links: {
        auto f = split_csv(line);
        if (f.size() != 11) parse_fail(line_no, "expected 11 link fields, got " + std::to_string(f.size()));
        Link l;
        l.id = to_int(f[0], line_no);
        l.from = to_int(f[1], line_no);
        l.to = to_int(f[2], line_no);
        int d = to_int(f[3], line_no);
        if (d != 1 && d != 2) parse_fail(line_no, "link dir must be 1 or 2");
        l.dir = d == 1 ? LinkDir::OneWay : LinkDir::TwoWay;
        l.attrs.speed_limit = to_double(f[4], line_no);
        l.attrs.lanes = to_int(f[5], line_no);
        l.attrs.length = to_double(f[6], line_no);
        l.attrs.free_flow_speed = to_double(f[7], line_no);
        l.attrs.curvature = to_double(f[8], line_no);
        l.attrs.slope_percent = to_double(f[9], line_no);
        l.attrs.functional_class = to_int(f[10], line_no);
        g.links.push_back(l);
        break;
      }
      case Maneuvers: {
        auto f = split_csv(line);
        if (f.size() != 5) parse_fail(line_no, "expected 5 maneuver fields, got " + std::to_string(f.size()));
        Maneuver m;
        m.in_link = to_int(f[0], line_no);
        m.in_dir = to_int(f[1], line_no);
        m.out_link = to_int(f[2], line_no);
        m.out_dir = to_int(f[3], line_no);
        int p = to_int(f[4], line_no);
        if (p != 0 && p != 1) parse_fail(line_no, "permitted flag must be 0 or 1");
        m.permitted = p == 1;
        g.maneuvers.push_back(m);
        break;
      }
    }
  }
  g.validate();
  return g;
}

PrimalGraph load_primal(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return parse_primal(in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_primal(const PrimalGraph& g, std::ostream& out) {
  out << "[INTERSECTIONS]\n";
  for (int i : g.intersections) out << i << "\n";
  out << "[LINKS]\n";
  char buf[256];
  for (const auto& l : g.links) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%d\n", l.id, l.from, l.to,
                  l.dir == LinkDir::OneWay ? 1 : 2, l.attrs.speed_limit, l.attrs.lanes, l.attrs.length,
                  l.attrs.free_flow_speed, l.attrs.curvature, l.attrs.slope_percent, l.attrs.functional_class);
    out << buf;
  }
  out << "[MANEUVERS]\n";
  for (const auto& m : g.maneuvers)
    out << m.in_link << ',' << m.in_dir << ',' << m.out_link << ',' << m.out_dir << ',' << (m.permitted ? 1 : 0)
        << "\n";
}

void save_primal(const PrimalGraph& g, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  write_primal(g, out);
  if (!out) throw DataError("short write: " + path);
}

}  // namespace roadvol::graph
