#pragma once
#include <iosfwd>
#include <map>
#include <string>

namespace roadvol {

// Flat key=value text config. Keys are written sorted so serialized configs
// are diffable and byte-stable.
class KvConfig {
 public:
  static KvConfig parse(std::istream& in);
  static KvConfig load(const std::string& path);

  void write(std::ostream& out) const;
  void save(const std::string& path) const;

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  void set(const std::string& key, int value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, double value);
  void set(const std::string& key, bool value);

  // Getters with defaults.
  std::string get_str(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Strict getters; throw ConfigError when the key is missing or malformed.
  std::string require_str(const std::string& key) const;
  int require_int(const std::string& key) const;
  double require_double(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

  // Copies every entry of `other` over this one (used for flag overrides).
  void merge_from(const KvConfig& other);

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace roadvol
