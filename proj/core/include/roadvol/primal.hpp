#pragma once
#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "roadvol/errors.hpp"

namespace roadvol::graph {

// Static per-segment descriptors. Ranges follow the road-attribute catalog
// used throughout (speed limit 10-130 km/h, 1-4 lanes, 2-2127 m, free-flow
// 10-120 km/h, curvature 0-1000 1/m, slope -100..100 %, class 1-5).
struct StaticAttrs {
  double speed_limit = 50.0;  // km/h
  int lanes = 1;
  double length = 100.0;  // m
  double free_flow_speed = 45.0;  // km/h
  double curvature = 0.0;  // 1/m
  double slope_percent = 0.0;
  int functional_class = 5;  // 1 = major artery .. 5 = local street

  void validate() const;
};

inline constexpr int kNumStaticFeatures = 7;

std::array<double, kNumStaticFeatures> feature_row(const StaticAttrs& a);

enum class LinkDir : int { OneWay = 1, TwoWay = 2 };

// Travel direction along a link; Forward means from -> to.
inline constexpr int kForward = 0;
inline constexpr int kBackward = 1;

struct Link {
  int id = -1;
  int from = -1;
  int to = -1;
  LinkDir dir = LinkDir::TwoWay;
  StaticAttrs attrs;
};

// Permitted or forbidden transition between two directed links at their
// shared intersection.
struct Maneuver {
  int in_link = -1;
  int in_dir = kForward;
  int out_link = -1;
  int out_dir = kForward;
  bool permitted = true;
};

struct PrimalGraph {
  std::vector<int> intersections;
  std::vector<Link> links;
  std::vector<Maneuver> maneuvers;

  // Checks structural invariants: endpoints exist, no duplicate link ids,
  // no self-loop links, maneuver pairs share their common intersection and
  // use directions feasible for the link orientation.
  void validate() const;

  const Link* find_link(int id) const;
};

// Intersection a directed traversal of `link` ends at / starts from.
int head_of(const Link& link, int travel_dir);
int tail_of(const Link& link, int travel_dir);

// Whether travelling `link` in `travel_dir` is allowed by its orientation.
bool dir_feasible(const Link& link, int travel_dir);

enum class MeanMode {
  LengthWeighted,  // default: free_flow_speed/curvature/slope weighted by link length
  Arithmetic       // plain mean of the catalog rule, selectable via config
};

// Per-field aggregation for a chain of links merged into one segment:
// speed_limit MIN, lanes MIN, length SUM, free_flow_speed MEAN,
// curvature MEAN, slope MEAN, functional_class MIN.
StaticAttrs aggregate_links(std::span<const StaticAttrs> chain, MeanMode mode = MeanMode::LengthWeighted);

// Unweighted elementwise mean of equally long profiles (speed profiles of
// merged links are averaged).
std::vector<double> average_profiles(const std::vector<std::vector<double>>& profiles);

// Replaces every maximal chain of links whose interior intersections have
// degree 2 and a consistent direction pattern by a single link. Maneuvers at
// surviving intersections are remapped; interior ones are dropped. A ring of
// degree-2 intersections with no anchor is an error listing the cycle.
// Chains that loop back to their only anchor are kept unmerged.
PrimalGraph unify_segments(const PrimalGraph& g, MeanMode mode = MeanMode::LengthWeighted);

// Text format: `[INTERSECTIONS]` id per line, `[LINKS]`
// id,from,to,dir(1|2),speed_limit,lanes,length,ffs,curvature,slope,fc and
// `[MANEUVERS]` in_link,in_dir,out_link,out_dir,permitted(0|1). `#` comments.
PrimalGraph parse_primal(std::istream& in);
PrimalGraph load_primal(const std::string& path);
void write_primal(const PrimalGraph& g, std::ostream& out);
void save_primal(const PrimalGraph& g, const std::string& path);

}  // namespace roadvol::graph
