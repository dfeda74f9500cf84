#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace edgediff::io {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);
double parse_double(std::string_view s, const std::string& context);
long long parse_int(std::string_view s, const std::string& context);

std::vector<std::string_view> split_tabs(std::string_view line);
std::string join_doubles(std::span<const double> values, char sep = ',');
std::vector<double> split_doubles(std::string_view s, const std::string& context, char sep = ',');

/// Whole-file reads; missing or unreadable files raise an Io error.
std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);
void ensure_dir(const std::filesystem::path& dir);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Little-endian float64 packing, independent of host byte order.
void append_f64_le(std::string& out, std::span<const double> values);
std::vector<double> read_f64_le(std::string_view bytes, std::size_t count, const std::string& context);

/// Ordered key=value manifest, one pair per line.
class Manifest {
 public:
  void set(std::string key, std::string value);
  bool has(std::string_view key) const;
  const std::string& get(std::string_view key) const;
  long long get_int(std::string_view key) const;
  double get_double(std::string_view key) const;

  std::string serialize() const;
  static Manifest parse(std::string_view text, const std::string& context);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::string context_ = "manifest";
};

}  // namespace edgediff::io
