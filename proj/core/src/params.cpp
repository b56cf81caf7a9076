#include "roadvol/params.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "roadvol/errors.hpp"

namespace roadvol::diff {

int ParamStore::add(std::string name, Shape shape, std::vector<double> init) {
  if (find(name) >= 0) throw StateError("ParamStore: duplicate parameter name " + name);
  if (static_cast<std::int64_t>(init.size()) != numel(shape))
    throw ShapeError("ParamStore: init size " + std::to_string(init.size()) + " does not match " + shape_str(shape));
  Entry e;
  e.name = std::move(name);
  e.shape = std::move(shape);
  e.value = std::move(init);
  e.grad.assign(e.value.size(), 0.0);
  entries_.push_back(std::move(e));
  return static_cast<int>(entries_.size()) - 1;
}

int ParamStore::add_uniform(std::string name, Shape shape, int fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return add(std::move(name), std::move(shape), std::move(v));
}

int ParamStore::add_normal(std::string name, Shape shape, double mean, double stddev, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = rng.normal(mean, stddev);
  return add(std::move(name), std::move(shape), std::move(v));
}

int ParamStore::add_zeros(std::string name, Shape shape) {
  std::vector<double> v(static_cast<size_t>(numel(shape)), 0.0);
  return add(std::move(name), std::move(shape), std::move(v));
}

int ParamStore::find(const std::string& name) const {
  for (size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return static_cast<int>(i);
  return -1;
}

std::int64_t ParamStore::total_size() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::int64_t>(e.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) std::fill(e.grad.begin(), e.grad.end(), 0.0);
}

void ParamStore::accumulate_grads(const Tape& tape) {
  for (size_t id = 0; id < tape.node_count(); ++id) {
    int tag = tape.param_tag(static_cast<int>(id));
    if (tag < 0) continue;
    auto g = tape.grad(static_cast<int>(id));
    auto& dst = entries_[static_cast<size_t>(tag)].grad;
    if (g.size() != dst.size()) throw ShapeError("accumulate_grads: leased shape drifted for " +
                                                 entries_[static_cast<size_t>(tag)].name);
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

std::int64_t ParamStore::flat_offset(int id) const {
  std::int64_t off = 0;
  for (int i = 0; i < id; ++i) off += static_cast<std::int64_t>(entries_[static_cast<size_t>(i)].value.size());
  return off;
}

void ParamStore::accumulate_grads_flat(const Tape& tape, std::vector<double>& flat) const {
  if (static_cast<std::int64_t>(flat.size()) != total_size())
    throw ShapeError("accumulate_grads_flat: buffer size mismatch");
  std::vector<std::int64_t> offsets(entries_.size() + 1, 0);
  for (size_t i = 0; i < entries_.size(); ++i)
    offsets[i + 1] = offsets[i] + static_cast<std::int64_t>(entries_[i].value.size());
  for (size_t id = 0; id < tape.node_count(); ++id) {
    int tag = tape.param_tag(static_cast<int>(id));
    if (tag < 0) continue;
    auto g = tape.grad(static_cast<int>(id));
    double* dst = flat.data() + offsets[static_cast<size_t>(tag)];
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

void ParamStore::add_flat_to_grads(const std::vector<double>& flat) {
  if (static_cast<std::int64_t>(flat.size()) != total_size())
    throw ShapeError("add_flat_to_grads: buffer size mismatch");
  size_t pos = 0;
  for (auto& e : entries_) {
    for (size_t i = 0; i < e.grad.size(); ++i) e.grad[i] += flat[pos + i];
    pos += e.grad.size();
  }
}

void ParamStore::save(const std::string& bin_path, const std::string& manifest_path) const {
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw DataError("cannot write " + bin_path);
  std::ofstream man(manifest_path, std::ios::trunc);
  if (!man) throw DataError("cannot write " + manifest_path);
  std::int64_t offset = 0;
  for (const auto& e : entries_) {
    bin.write(reinterpret_cast<const char*>(e.value.data()),
              static_cast<std::streamsize>(e.value.size() * sizeof(double)));
    man << e.name;
    for (int d : e.shape) man << ' ' << d;
    man << " @" << offset << " n" << e.value.size() << "\n";
    offset += static_cast<std::int64_t>(e.value.size() * sizeof(double));
  }
  if (!bin || !man) throw DataError("short write while saving checkpoint");
}

void ParamStore::load(const std::string& bin_path, const std::string& manifest_path) {
  std::ifstream man(manifest_path);
  if (!man) throw DataError("cannot read " + manifest_path);
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw DataError("cannot read " + bin_path);
  entries_.clear();
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string name;
    is >> name;
    Shape shape;
    std::string tok;
    std::int64_t offset = -1, n = -1;
    while (is >> tok) {
      if (tok.size() > 1 && tok[0] == '@')
        offset = std::stoll(tok.substr(1));
      else if (tok.size() > 1 && tok[0] == 'n')
        n = std::stoll(tok.substr(1));
      else
        shape.push_back(std::stoi(tok));
    }
    if (name.empty() || offset < 0 || n < 0 || numel(shape) != n)
      throw DataError("malformed manifest line: " + line);
    std::vector<double> v(static_cast<size_t>(n));
    bin.seekg(offset);
    bin.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!bin) throw DataError("checkpoint binary truncated for " + name);
    add(name, std::move(shape), std::move(v));
  }
}

std::vector<double> ParamStore::snapshot_values() const {
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(total_size()));
  for (const auto& e : entries_) flat.insert(flat.end(), e.value.begin(), e.value.end());
  return flat;
}

void ParamStore::restore_values(std::span<const double> flat) {
  size_t pos = 0;
  for (auto& e : entries_) {
    if (pos + e.value.size() > flat.size()) throw ShapeError("restore_values: snapshot too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
              flat.begin() + static_cast<std::ptrdiff_t>(pos + e.value.size()), e.value.begin());
    pos += e.value.size();
  }
  if (pos != flat.size()) throw ShapeError("restore_values: snapshot size mismatch");
}

}  // namespace roadvol::diff
