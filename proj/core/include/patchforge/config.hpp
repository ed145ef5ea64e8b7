#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "patchforge/common.hpp"

namespace patchforge {

// Flat `key = value` text config. `#` starts a comment, blank lines are
// skipped. Reads are tracked so a run can reject keys it never consumed
// (unknown keys are configuration errors, not silent no-ops).
class KeyValueConfig {
public:
  KeyValueConfig() = default;

  static KeyValueConfig load(const std::filesystem::path& file);
  static KeyValueConfig from_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key);
  std::string get_string(const std::string& key, const std::string& fallback);
  int64_t get_int(const std::string& key);
  int64_t get_int(const std::string& key, int64_t fallback);
  double get_double(const std::string& key);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key);
  bool get_bool(const std::string& key, bool fallback);
  // comma-separated integer list, e.g. "500,1000,2000"
  std::vector<int64_t> get_int_list(const std::string& key, const std::string& fallback);

  // keys matching `prefix` that were never read; used to reject typos
  std::vector<std::string> unread_keys() const;
  void require_all_read() const;

  // every effective setting, including defaults applied by the consumer
  void note_default(const std::string& key, const std::string& value);
  void write_resolved(const std::filesystem::path& file) const;

  const std::string& origin() const { return origin_; }

private:
  std::string raw(const std::string& key);
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> read_;
  std::map<std::string, std::string> defaults_;
  std::string origin_;
};

}  // namespace patchforge
