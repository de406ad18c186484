#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sero/csv.hpp"
#include "sero/error.hpp"

namespace sero {

struct VaccineCatalogEntry {
  int id = 0;                 // dense, 1..K
  std::string manufacturer;
  int doses = 1;              // required doses for full vaccination, 1..3
  int interval_days = 0;      // first-to-last dose interval; 0 for single-dose vaccines

  bool operator==(const VaccineCatalogEntry&) const = default;
};

class Catalog {
 public:
  Catalog() = default;

  explicit Catalog(std::vector<VaccineCatalogEntry> entries) : entries_(std::move(entries)) {
    for (std::size_t k = 0; k < entries_.size(); ++k) {
      const auto& e = entries_[k];
      const std::string who = "catalog entry '" + e.manufacturer + "'";
      if (e.id != static_cast<int>(k + 1))
        throw Error(ErrorCode::InvariantViolation, who + ": ids must be dense 1..K in order");
      if (e.doses < 1 || e.doses > 3) throw Error(ErrorCode::InvariantViolation, who + ": type must be 1, 2 or 3");
      if (e.doses == 1 && e.interval_days != 0)
        throw Error(ErrorCode::InvariantViolation, who + ": single-dose vaccine with a dose interval");
      if (e.doses >= 2 && e.interval_days <= 0)
        throw Error(ErrorCode::InvariantViolation, who + ": multi-dose vaccine needs a positive interval");
    }
  }

  std::size_t size() const noexcept { return entries_.size(); }
  const VaccineCatalogEntry& operator[](std::size_t k) const { return entries_.at(k); }
  const std::vector<VaccineCatalogEntry>& entries() const noexcept { return entries_; }

  /// Zero-based index for a manufacturer name or a numeric id.
  std::optional<std::size_t> find(const std::string& key) const {
    if (auto id = csv::parse_number<int>(key)) {
      if (*id >= 1 && *id <= static_cast<int>(entries_.size())) return static_cast<std::size_t>(*id - 1);
      return std::nullopt;
    }
    for (std::size_t k = 0; k < entries_.size(); ++k)
      if (entries_[k].manufacturer == key) return k;
    return std::nullopt;
  }

  int doses(std::size_t k) const { return entries_.at(k).doses; }
  int interval(std::size_t k) const { return entries_.at(k).interval_days; }

  bool operator==(const Catalog&) const = default;

 private:
  std::vector<VaccineCatalogEntry> entries_;
};

inline Catalog load_catalog(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_id = table.require_column("id");
  const auto c_name = table.require_column("manufacturer");
  const auto c_type = table.require_column("type");
  const auto c_int = table.require_column("interval_days");
  std::vector<VaccineCatalogEntry> entries;
  for (const auto& row : table.rows) {
    auto id = csv::parse_number<int>(row.cells[c_id]);
    auto type = csv::parse_number<int>(row.cells[c_type]);
    auto interval = row.cells[c_int].empty() ? std::optional<int>(0) : csv::parse_number<int>(row.cells[c_int]);
    if (!id || !type || !interval)
      throw Error(ErrorCode::MalformedRow, path.string() + ":" + std::to_string(row.line) + ": bad catalog row");
    entries.push_back({*id, row.cells[c_name], *type, *interval});
  }
  return Catalog(std::move(entries));
}

inline void write_catalog(const Catalog& catalog, std::ostream& out) {
  csv::write_row(out, {"id", "manufacturer", "type", "interval_days"});
  for (const auto& e : catalog.entries())
    csv::write_row(out, {std::to_string(e.id), e.manufacturer, std::to_string(e.doses), std::to_string(e.interval_days)});
}

}  // namespace sero
