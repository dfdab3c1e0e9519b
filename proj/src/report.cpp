#include "cfaan/report.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "cfaan/errors.hpp"

namespace cfaan {

std::string format_fixed(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

TextTable::TextTable(std::vector<std::string> header) : header_(std::move(header)) {
  if (header_.empty()) throw ValidationError("table needs at least one column");
}

void TextTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != header_.size()) {
    throw ValidationError("table row has " + std::to_string(cells.size()) + " cells, expected " +
                          std::to_string(header_.size()));
  }
  rows_.push_back(std::move(cells));
}

void TextTable::print(std::ostream& os) const {
  std::vector<std::size_t> width(header_.size());
  for (std::size_t c = 0; c < header_.size(); ++c) width[c] = header_[c].size();
  for (const auto& r : rows_)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c > 0) os << "  ";
      if (c == 0) {
        os << std::left << std::setw(int(width[c])) << cells[c];
      } else {
        os << std::right << std::setw(int(width[c])) << cells[c];
      }
    }
    os << std::left << '\n';
  };
  line(header_);
  std::size_t total = 0;
  for (std::size_t w : width) total += w;
  os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& r : rows_) line(r);
}

void KeyValueBlock::add(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of("= \n") != std::string::npos) {
    throw ValidationError("invalid report key '" + key + "'");
  }
  if (value.find('\n') != std::string::npos) throw ValidationError("report value spans lines");
  entries_.emplace_back(key, value);
}

void KeyValueBlock::add(const std::string& key, double value, int precision) {
  std::ostringstream os;
  os << std::setprecision(precision) << value;
  add(key, os.str());
}

void KeyValueBlock::add(const std::string& key, std::uint64_t value) {
  add(key, std::to_string(value));
}

void KeyValueBlock::add(const std::string& key, std::int64_t value) {
  add(key, std::to_string(value));
}

void KeyValueBlock::add(const std::string& key, bool value) { add(key, value ? "true" : "false"); }

void KeyValueBlock::print(std::ostream& os) const {
  os << "---\n";
  for (const auto& [k, v] : entries_) os << k << '=' << v << '\n';
  os << "---\n";
}

}  // namespace cfaan
