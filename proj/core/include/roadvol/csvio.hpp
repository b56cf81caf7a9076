#pragma once
#include <iosfwd>
#include <string>
#include <vector>

#include "roadvol/dual.hpp"

namespace roadvol::io {

// Speed profile CSV: node_id,weekday,v0..v95 (km/h), one row per (node, day
// column). Raw-day data repeats (node, weekday) rows; the k-th row of a
// weekday maps to day column weekday*R+k where R is the repeat count.
void write_speeds_csv(const graph::DualGraph& dual, std::ostream& out);
void read_speeds_csv(graph::DualGraph& dual, std::istream& in);

// Volume CSV: node_id,weekday,q0..q23 (veh/h); a missing profile is a row
// with empty value fields. Only labeled nodes appear.
void write_volumes_csv(const graph::DualGraph& dual, std::ostream& out);
void read_volumes_csv(graph::DualGraph& dual, std::istream& in);

void save_speeds_csv(const graph::DualGraph& dual, const std::string& path);
void load_speeds_csv(graph::DualGraph& dual, const std::string& path);
void save_volumes_csv(const graph::DualGraph& dual, const std::string& path);
void load_volumes_csv(graph::DualGraph& dual, const std::string& path);

std::string format_double(double v);

}  // namespace roadvol::io
