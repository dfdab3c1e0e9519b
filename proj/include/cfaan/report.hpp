#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace cfaan {

/// Fixed-point text of a double, e.g. format_fixed(0.1234, 3) == "0.123".
std::string format_fixed(double v, int precision);

/// Column-aligned text table; the first column is left-aligned, the rest right-aligned.
class TextTable {
 public:
  explicit TextTable(std::vector<std::string> header);

  void add_row(std::vector<std::string> cells);
  std::size_t rows() const { return rows_.size(); }
  void print(std::ostream& os) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Machine-readable block: "key=value" lines between two "---" lines.
class KeyValueBlock {
 public:
  void add(const std::string& key, const std::string& value);
  void add(const std::string& key, const char* value) { add(key, std::string(value)); }
  void add(const std::string& key, double value, int precision = 6);
  void add(const std::string& key, std::uint64_t value);
  void add(const std::string& key, std::int64_t value);
  void add(const std::string& key, int value) { add(key, std::int64_t{value}); }
  void add(const std::string& key, bool value);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  void print(std::ostream& os) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace cfaan
