#pragma once

// Flat key=value run configuration. One entry per line, '#' starts a comment.
// Every key has a built-in default; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace lavig {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Config {
 public:
  /// All keys at their default values.
  Config();

  static Config from_file(const std::filesystem::path& path);
  /// Applies overrides from text; throws ConfigError on unknown keys or syntax errors.
  void merge_text(const std::string& text, const std::string& origin = "<text>");
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& str(const std::string& key) const;
  std::int64_t i64(const std::string& key) const;
  int i32(const std::string& key) const { return static_cast<int>(i64(key)); }
  double f64(const std::string& key) const;
  float f32(const std::string& key) const { return static_cast<float>(f64(key)); }
  std::vector<int> int_list(const std::string& key) const;

  /// Sorted key=value lines; parses back to an equal Config.
  std::string to_text() const;
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace lavig
