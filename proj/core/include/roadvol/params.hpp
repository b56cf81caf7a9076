#pragma once
#include <span>
#include <string>
#include <vector>

#include "roadvol/rng.hpp"
#include "roadvol/tensor.hpp"

namespace roadvol::diff {

// Named, persistent parameter arrays. Tapes are transient (one per sample);
// parameters are leased onto a tape as leaves and their gradients are
// accumulated back after backward(). Checkpoint format: a flat binary file
// of float64 arrays plus a text manifest (name, shape, byte offset, count).
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
  };

  int add(std::string name, Shape shape, std::vector<double> init);

  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
  int add_uniform(std::string name, Shape shape, int fan_in, Rng& rng);
  int add_normal(std::string name, Shape shape, double mean, double stddev, Rng& rng);
  int add_zeros(std::string name, Shape shape);

  int find(const std::string& name) const;  // -1 when absent

  size_t count() const { return entries_.size(); }
  Entry& entry(int id) { return entries_[static_cast<size_t>(id)]; }
  const Entry& entry(int id) const { return entries_[static_cast<size_t>(id)]; }

  std::int64_t total_size() const;

  void zero_grad();

  // Leases parameter `id` onto `tape` as a tagged leaf.
  Tensor lease(Tape& tape, int id) const {
    const Entry& e = entries_[static_cast<size_t>(id)];
    return tape.tagged_leaf(e.shape, std::span<const double>(e.value), id);
  }

  // Adds tape gradients of every leased parameter into store grads.
  void accumulate_grads(const Tape& tape);

  // Same, but into an external flat buffer of total_size() doubles (one
  // contiguous block per entry, in entry order). Workers accumulate into
  // private buffers which are then reduced in fixed order.
  void accumulate_grads_flat(const Tape& tape, std::vector<double>& flat) const;
  void add_flat_to_grads(const std::vector<double>& flat);
  std::int64_t flat_offset(int id) const;

  void save(const std::string& bin_path, const std::string& manifest_path) const;
  void load(const std::string& bin_path, const std::string& manifest_path);

  // Flat copy of all values (used for best-checkpoint bookkeeping).
  std::vector<double> snapshot_values() const;
  void restore_values(std::span<const double> flat);

 private:
  std::vector<Entry> entries_;
};

// Hands parameter slots to layer constructors. In create mode new entries
// are initialized from the rng; in bind mode existing entries (a loaded
// checkpoint) are looked up by name and shape-checked.
class ParamRegistry {
 public:
  static ParamRegistry create(ParamStore& store, Rng& rng) { return ParamRegistry(store, &rng); }
  static ParamRegistry bind(ParamStore& store) { return ParamRegistry(store, nullptr); }

  int uniform(const std::string& name, Shape shape, int fan_in) {
    if (!rng_) return find_checked(name, shape);
    return store_.add_uniform(name, std::move(shape), fan_in, *rng_);
  }
  int normal(const std::string& name, Shape shape, double mean, double stddev) {
    if (!rng_) return find_checked(name, shape);
    return store_.add_normal(name, std::move(shape), mean, stddev, *rng_);
  }
  int zeros(const std::string& name, Shape shape) {
    if (!rng_) return find_checked(name, shape);
    return store_.add_zeros(name, std::move(shape));
  }

  ParamStore& store() { return store_; }

 private:
  ParamRegistry(ParamStore& store, Rng* rng) : store_(store), rng_(rng) {}

  int find_checked(const std::string& name, const Shape& shape) {
    int id = store_.find(name);
    if (id < 0) throw DataError("checkpoint is missing parameter " + name);
    if (store_.entry(id).shape != shape)
      throw ShapeError("checkpoint parameter " + name + " has shape " + shape_str(store_.entry(id).shape) +
                       ", expected " + shape_str(shape));
    return id;
  }

  ParamStore& store_;
  Rng* rng_;
};

}  // namespace roadvol::diff
