#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace mldr {

/// Flat key-value text configuration.
///
///     # comment
///     train.epochs = 30
///     [loss]              # section header: prefixes following keys
///     temperature = 4
///     [data.noise]        # sections nest with dots
///     sigma = 1.0
///
/// Keys are unique; a repeated key is an error naming both lines.
class KeyValueConfig {
 public:
  struct Entry {
    std::string value;
    int line = 0;  // 0 = set programmatically (e.g. --override)
  };

  static KeyValueConfig parse(std::string_view text, const std::string& source = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  /// Replaces or inserts; `line` 0 marks an override.
  void set(const std::string& key, std::string value, int line = 0);
  /// Parses "key=value" and applies it.
  void apply_override(std::string_view assignment);

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }
  /// Keys in first-seen order.
  const std::vector<std::string>& order() const noexcept { return order_; }
  const std::string& source() const noexcept { return source_; }

  /// Serializes every key as "key = value", sorted.
  std::string dump() const;

 private:
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
  std::string source_;
};

/// Comma-separated list, whitespace-trimmed.
std::vector<std::string> split_list(std::string_view text);
std::string trim(std::string_view text);

}  // namespace mldr
