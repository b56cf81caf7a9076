#include "roadvol/dual.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <ostream>
#include <set>

namespace roadvol::graph {

int DualGraph::find_node(int segment_id, int direction) const {
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].segment_id == segment_id && nodes[i].direction == direction) return static_cast<int>(i);
  return -1;
}

std::vector<int> DualGraph::labeled_set() const {
  std::vector<int> out;
  for (const auto& [v, profiles] : volumes) {
    bool any = false;
    for (const auto& p : profiles) any = any || !p.empty();
    if (any) out.push_back(v);
  }
  return out;  // map iteration is already sorted
}

std::vector<int> DualGraph::unlabeled_set() const {
  std::vector<int> lab = labeled_set();
  std::set<int> labset(lab.begin(), lab.end());
  std::vector<int> out;
  for (int v = 0; v < num_nodes(); ++v)
    if (!labset.count(v)) out.push_back(v);
  return out;
}

void DualGraph::mark_sensors_from_volumes() {
  for (auto& n : nodes) n.is_sensor = false;
  for (int v : labeled_set()) nodes[static_cast<size_t>(v)].is_sensor = true;
}

void DualGraph::build_adjacency() {
  out_adj.assign(nodes.size(), {});
  in_adj.assign(nodes.size(), {});
  for (auto [u, v] : edges) {
    out_adj[static_cast<size_t>(u)].push_back(v);
    in_adj[static_cast<size_t>(v)].push_back(u);
  }
  for (auto& a : out_adj) std::sort(a.begin(), a.end());
  for (auto& a : in_adj) std::sort(a.begin(), a.end());
}

ManeuverTable::ManeuverTable(const PrimalGraph& g) {
  for (const auto& m : g.maneuvers) entries_[{m.in_link, m.in_dir, m.out_link, m.out_dir}] = m.permitted;
}

bool ManeuverTable::permitted(int in_link, int in_dir, int out_link, int out_dir) const {
  auto it = entries_.find({in_link, in_dir, out_link, out_dir});
  if (it != entries_.end()) return it->second;
  // unlisted pairs default to permitted, except U-turns
  return !(in_link == out_link && in_dir != out_dir);
}

DualGraph build_dual(const PrimalGraph& primal) {
  primal.validate();
  DualGraph g;
  for (const auto& l : primal.links) {
    g.nodes.push_back({l.id, kForward, l.attrs, false});
    if (l.dir == LinkDir::TwoWay) g.nodes.push_back({l.id, kBackward, l.attrs, false});
  }

  // index dual nodes by the intersections their travel ends at / starts from
  std::map<int, std::vector<int>> ends_at;    // intersection -> dual nodes with head there
  std::map<int, std::vector<int>> starts_at;  // intersection -> dual nodes with tail there
  std::map<int, const Link*> by_id;
  for (const auto& l : primal.links) by_id[l.id] = &l;
  for (int v = 0; v < g.num_nodes(); ++v) {
    const Link& l = *by_id[g.nodes[static_cast<size_t>(v)].segment_id];
    int d = g.nodes[static_cast<size_t>(v)].direction;
    ends_at[head_of(l, d)].push_back(v);
    starts_at[tail_of(l, d)].push_back(v);
  }

  ManeuverTable table(primal);
  for (int isec : primal.intersections) {
    auto ins = ends_at.find(isec);
    auto outs = starts_at.find(isec);
    if (ins == ends_at.end() || outs == starts_at.end()) continue;
    for (int u : ins->second) {
      const DualNode& nu = g.nodes[static_cast<size_t>(u)];
      for (int w : outs->second) {
        const DualNode& nw = g.nodes[static_cast<size_t>(w)];
        if (u == w) continue;
        if (table.permitted(nu.segment_id, nu.direction, nw.segment_id, nw.direction)) g.edges.emplace_back(u, w);
      }
    }
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  g.build_adjacency();
  return g;
}

Subgraph khop_subgraph(const DualGraph& dual, int v, int K, int day) {
  if (v < 0 || v >= dual.num_nodes())
    throw DataError("khop_subgraph: node " + std::to_string(v) + " not found");
  if (K < 0) throw DataError("khop_subgraph: negative hop count");
  if (day < 0 || day >= dual.num_days())
    throw DataError("khop_subgraph: day " + std::to_string(day) + " out of range");
  if (dual.out_adj.size() != dual.nodes.size())
    throw StateError("khop_subgraph: adjacency not built");

  // undirected BFS for membership
  std::map<int, int> dist;
  dist[v] = 0;
  std::deque<int> queue{v};
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    int du = dist[u];
    if (du == K) continue;
    auto visit = [&](int w) {
      if (!dist.count(w)) {
        dist[w] = du + 1;
        queue.push_back(w);
      }
    };
    for (int w : dual.out_adj[static_cast<size_t>(u)]) visit(w);
    for (int w : dual.in_adj[static_cast<size_t>(u)]) visit(w);
  }

  Subgraph sg;
  for (const auto& [node, d] : dist) {
    (void)d;
    sg.nodes.push_back(node);
  }
  std::sort(sg.nodes.begin(), sg.nodes.end());
  std::map<int, int> local;
  for (size_t i = 0; i < sg.nodes.size(); ++i) local[sg.nodes[i]] = static_cast<int>(i);
  sg.target_global = v;
  sg.target_local = local[v];

  for (auto [a, b] : dual.edges) {
    auto ia = local.find(a);
    auto ib = local.find(b);
    if (ia != local.end() && ib != local.end()) sg.edges.emplace_back(ia->second, ib->second);
  }
  std::sort(sg.edges.begin(), sg.edges.end());

  sg.n_features = kNumStaticFeatures;
  sg.features.resize(sg.nodes.size() * kNumStaticFeatures);
  for (size_t i = 0; i < sg.nodes.size(); ++i) {
    auto row = dual.node_features(sg.nodes[i]);
    std::copy(row.begin(), row.end(), sg.features.begin() + static_cast<std::ptrdiff_t>(i * kNumStaticFeatures));
  }

  sg.T = dual.T;
  sg.day = day;
  sg.weekday = dual.day_weekday[static_cast<size_t>(day)];
  if (dual.T > 0 && !dual.speeds.empty()) {
    sg.speeds.resize(sg.nodes.size() * static_cast<size_t>(dual.T));
    for (size_t i = 0; i < sg.nodes.size(); ++i) {
      const double* src = dual.speed_profile(day, sg.nodes[i]);
      std::copy(src, src + dual.T, sg.speeds.begin() + static_cast<std::ptrdiff_t>(i * dual.T));
    }
  }
  return sg;
}

void export_dual_nodes_csv(const DualGraph& g, std::ostream& out) {
  out << "node_id,segment_id,direction,speed_limit,lanes,length,free_flow_speed,curvature,slope_percent,"
         "functional_class,is_sensor\n";
  char buf[320];
  for (int v = 0; v < g.num_nodes(); ++v) {
    const DualNode& n = g.nodes[static_cast<size_t>(v)];
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%d,%d\n", v, n.segment_id,
                  n.direction, n.attrs.speed_limit, n.attrs.lanes, n.attrs.length, n.attrs.free_flow_speed,
                  n.attrs.curvature, n.attrs.slope_percent, n.attrs.functional_class, n.is_sensor ? 1 : 0);
    out << buf;
  }
}

void export_dual_edges_csv(const DualGraph& g, std::ostream& out) {
  out << "src,dst\n";
  for (auto [u, v] : g.edges) out << u << ',' << v << "\n";
}

}  // namespace roadvol::graph
