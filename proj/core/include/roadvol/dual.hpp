#pragma once
#include <array>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "roadvol/primal.hpp"

namespace roadvol::graph {

// One node per (road segment, travel direction).
struct DualNode {
  int segment_id = -1;
  int direction = kForward;
  StaticAttrs attrs;
  bool is_sensor = false;
};

// Directed segment-connectivity graph: an edge u->v means traffic can flow
// off segment-direction u onto segment-direction v through their shared
// intersection under the maneuver table. Edges are structural and carry no
// features. Speed/volume payloads are attached after construction; graphs
// are immutable once built and safe for concurrent reads.
struct DualGraph {
  std::vector<DualNode> nodes;
  std::vector<std::pair<int, int>> edges;  // directed (u, v), no self-loops
  std::vector<std::vector<int>> out_adj;
  std::vector<std::vector<int>> in_adj;

  // speed tensor: [day][node][t], day_weekday tags each day column 0..6
  int T = 0;
  std::vector<int> day_weekday;
  std::vector<double> speeds;

  // observed volumes per labeled node: one profile per day column; an empty
  // profile marks a missing (sensor, day) record
  int Tprime = 0;
  std::map<int, std::vector<std::vector<double>>> volumes;

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int num_days() const { return static_cast<int>(day_weekday.size()); }

  int find_node(int segment_id, int direction) const;

  std::array<double, kNumStaticFeatures> node_features(int v) const {
    return roadvol::graph::feature_row(nodes[static_cast<size_t>(v)].attrs);
  }

  const double* speed_profile(int day, int v) const {
    return speeds.data() + (static_cast<size_t>(day) * nodes.size() + static_cast<size_t>(v)) * T;
  }

  // Sorted node ids carrying at least one observed volume profile.
  std::vector<int> labeled_set() const;
  std::vector<int> unlabeled_set() const;

  void mark_sensors_from_volumes();
  void build_adjacency();
};

DualGraph build_dual(const PrimalGraph& primal);

// Whether the maneuver table permits in -> out; pairs not listed default to
// permitted except U-turns (same segment, opposite direction).
class ManeuverTable {
 public:
  explicit ManeuverTable(const PrimalGraph& g);
  bool permitted(int in_link, int in_dir, int out_link, int out_dir) const;

 private:
  std::map<std::array<int, 4>, bool> entries_;
};

// K-hop neighborhood sample around one node for one day column. Membership
// uses undirected hop distance (upstream and downstream context both count);
// the induced edge list keeps its orientation. Self-loops are not stored
// here; layers add one per node when materializing messages.
struct Subgraph {
  std::vector<int> nodes;  // local -> global, ascending
  std::vector<std::pair<int, int>> edges;  // induced, local indices, directed
  int target_local = -1;
  int target_global = -1;
  int n_features = kNumStaticFeatures;
  std::vector<double> features;  // |N| x n_features, raw units
  int T = 0;
  std::vector<double> speeds;  // |N| x T, raw km/h
  int day = -1;
  int weekday = -1;
};

Subgraph khop_subgraph(const DualGraph& dual, int v, int K, int day);

// node CSV: node_id,segment_id,direction,<7 attrs>,is_sensor; edge CSV: src,dst
void export_dual_nodes_csv(const DualGraph& g, std::ostream& out);
void export_dual_edges_csv(const DualGraph& g, std::ostream& out);

}  // namespace roadvol::graph
