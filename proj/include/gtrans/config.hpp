#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace gtrans {

/// Flat `key = value` configuration text. Blank lines and `#` comments are
/// ignored; keys are unique. Serialization is sorted by key.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::string& path);

  std::string serialize() const;

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;

  /// Overlays `other` on top of this set.
  void merge(const KeyValues& other);

 private:
  std::map<std::string, std::string> values_;
};

/// Shortest decimal text that reads back to the same double.
std::string format_double(double value);
std::string format_float(float value);

}  // namespace gtrans
