#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fva/error.hpp"

namespace fva {

// Bad invocation: unknown key, malformed config line or flag value. The CLI
// maps it to exit status 2.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error("cli", message) {}
};

struct ConfigKey {
  const char* name;  // kebab-case, same spelling in config files and flags
  const char* default_value;
  const char* help;
  bool is_path;  // excluded from the digest
};

const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_config_key(const std::string& name);

// Parses `key = value` lines; '#' starts a comment line. Underscores in keys
// are accepted as hyphens.
std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& source = "config");

class RunConfig {
 public:
  // Registry defaults only.
  RunConfig();

  // Precedence: flags, then config file, then FVA_SEED (seed only), then
  // defaults.
  static RunConfig resolve(const std::map<std::string, std::string>& flags,
                           const std::map<std::string, std::string>& file,
                           const std::optional<std::string>& env_seed);

  void set(const std::string& key, const std::string& value);

  const std::string& str(const std::string& key) const;
  bool has(const std::string& key) const { return !str(key).empty(); }
  // Non-empty path value, else UsageError naming the flag.
  const std::string& path(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;
  std::vector<std::uint64_t> u64_list(const std::string& key) const;

  // FNV-1a over the sorted non-path settings, as 16 hex digits.
  std::string digest() const;
  // `key = value` for every key, sorted.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace fva
