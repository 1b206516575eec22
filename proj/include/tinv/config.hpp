#ifndef TINV_CONFIG_HPP
#define TINV_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace tinv {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat "section.key = value" configuration. Layers merge left to right:
/// defaults, then a config file, then command-line flags.
class RunConfig {
 public:
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Later layer wins; keys absent from `defaults` are rejected when
  /// `strict` is set so typos do not pass silently.
  void merge(const RunConfig& layer, bool strict = false);

  /// Lines "key = value"; '#' starts a comment; blank lines ignored.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  /// Canonical text: sorted "key = value" lines.
  std::string to_text() const;
  std::string hash() const;

  /// Writes config.txt and config.sha256 into `dir`.
  void persist(const std::filesystem::path& dir) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Desk-scale defaults; `paper_scale` restores the paper's counts
/// (50,000 embedding steps, 6,250 classifier batches, 100 samples per cell).
RunConfig default_config(bool paper_scale = false);

}  // namespace tinv

#endif  // TINV_CONFIG_HPP
