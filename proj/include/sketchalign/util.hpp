#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sketchalign {

/// splitmix64 mixing for derived RNG streams (rollout i of step s, etc.).
uint64_t seed_mix(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0);

/// Runs fn(i) for i in [0, count) across a fixed static partition. Results
/// must be written to per-index slots; the partition shape is deterministic
/// for a given (count, threads), so merged float sums stay reproducible.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

/// key=value file with '#' comments; later keys override earlier ones.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig from_file(const std::string& path);
  static KeyValueConfig from_string(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  double get(const std::string& key, double fallback) const;
  int get(const std::string& key, int fallback) const;
  bool get(const std::string& key, bool fallback) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

std::vector<std::string> read_lines(const std::string& path);

}  // namespace sketchalign
