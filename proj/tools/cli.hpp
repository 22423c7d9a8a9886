#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace povrate::cli {

struct KeySpec {
  const char* key;
  const char* default_value;
  const char* help;
};

// Every configuration key with its default, in display order.
const std::vector<KeySpec>& config_keys();

// Flat "section.key" -> value view of a run configuration.
class RunConfig {
 public:
  RunConfig();  // all defaults

  // INI file with [section] headers; unknown keys are rejected.
  void merge_ini(const std::string& path);
  // "section.key=value"
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  // FNV-1a over the sorted key=value lines, omitting locations (output
  // directory, catalog endpoint) so artifacts do not depend on where they live.
  std::string hash() const;
  // Hashed keys only, as written next to every artifact.
  std::string to_ini() const;

 private:
  std::map<std::string, std::string> values_;
};

// Runs one invocation; returns the process exit code. Errors are written to
// `err` as a single line: error code=<Errc> message="<text>".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace povrate::cli
