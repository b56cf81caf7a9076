#include "roadvol/kvconfig.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "roadvol/errors.hpp"

namespace roadvol {

KvConfig KvConfig::parse(std::istream& in) {
  KvConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line.erase(0, start);
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" + line + "'");
    cfg.kv_[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return cfg;
}

KvConfig KvConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse(in);
}

void KvConfig::write(std::ostream& out) const {
  for (const auto& [k, v] : kv_) out << k << '=' << v << "\n";
}

void KvConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  write(out);
}

void KvConfig::set(const std::string& key, int value) { kv_[key] = std::to_string(value); }
void KvConfig::set(const std::string& key, std::int64_t value) { kv_[key] = std::to_string(value); }
void KvConfig::set(const std::string& key, bool value) { kv_[key] = value ? "1" : "0"; }

void KvConfig::set(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  kv_[key] = buf;
}

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

int KvConfig::get_int(const std::string& key, int fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected integer, got '" + it->second + "'");
  }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected number, got '" + it->second + "'");
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  if (it->second == "1" || it->second == "true") return true;
  if (it->second == "0" || it->second == "false") return false;
  throw ConfigError("config key " + key + ": expected boolean, got '" + it->second + "'");
}

std::string KvConfig::require_str(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("missing config key " + key);
  return it->second;
}

int KvConfig::require_int(const std::string& key) const {
  if (!has(key)) throw ConfigError("missing config key " + key);
  return get_int(key, 0);
}

double KvConfig::require_double(const std::string& key) const {
  if (!has(key)) throw ConfigError("missing config key " + key);
  return get_double(key, 0.0);
}

void KvConfig::merge_from(const KvConfig& other) {
  for (const auto& [k, v] : other.kv_) kv_[k] = v;
}

}  // namespace roadvol
