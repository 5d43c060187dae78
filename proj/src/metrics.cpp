#include "clasp/metrics.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clasp/error.hpp"

namespace clasp {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<double> row_values(const MetricsRow& r) {
  std::vector<double> v;
  v.push_back(static_cast<double>(r.step));
  v.push_back(r.losses.dino);
  v.push_back(r.losses.part);
  v.push_back(r.losses.attribute);
  v.push_back(r.losses.balancing);
  v.push_back(r.losses.total);
  for (double c : r.cv2_stage) v.push_back(c);
  v.push_back(r.gcr);
  v.push_back(r.ead_dino_part);
  v.push_back(r.ead_dino_attr);
  v.push_back(r.ead_part_attr);
  v.push_back(r.wall_time_ms);
  return v;
}

nlohmann::ordered_json summary_for(const std::vector<std::string>& columns,
                                   const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw Error("metrics summary requires at least one row");
  nlohmann::ordered_json out;
  out["rows"] = rows.size();
  nlohmann::ordered_json cols;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    double final_v = rows.back()[c];
    double min_v = rows[0][c];
    double max_v = rows[0][c];
    for (const auto& r : rows) {
      if (r[c] < min_v) min_v = r[c];
      if (r[c] > max_v) max_v = r[c];
    }
    nlohmann::ordered_json entry;
    entry["final"] = fmt_double(final_v);
    entry["min"] = fmt_double(min_v);
    entry["max"] = fmt_double(max_v);
    cols[columns[c]] = entry;
  }
  out["columns"] = cols;
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open for writing: " + path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw Error("write failed: " + path);
}

}  // namespace

std::vector<std::string> metrics_columns(std::size_t n_stages) {
  std::vector<std::string> cols = {"step",      "loss_dino", "loss_part",
                                   "loss_attr", "loss_balancing", "loss_total"};
  for (std::size_t s = 0; s < n_stages; ++s)
    cols.push_back("cv2_s" + std::to_string(s));
  cols.push_back("gcr");
  cols.push_back("ead_dino_part");
  cols.push_back("ead_dino_attr");
  cols.push_back("ead_part_attr");
  cols.push_back("wall_time_ms");
  return cols;
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  if (rows.empty()) throw Error("metrics export requires at least one row");
  const std::size_t n_stages = rows[0].cv2_stage.size();
  for (const auto& r : rows)
    if (r.cv2_stage.size() != n_stages)
      throw Error("metrics rows disagree on stage count");
  auto cols = metrics_columns(n_stages);
  std::ostringstream out;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (c) out << ',';
    out << cols[c];
  }
  out << '\n';
  for (const auto& r : rows) {
    auto vals = row_values(r);
    out << r.step;
    for (std::size_t c = 1; c < vals.size(); ++c) out << ',' << fmt_double(vals[c]);
    out << '\n';
  }
  return out.str();
}

void write_metrics_csv(const std::vector<MetricsRow>& rows,
                       const std::string& path) {
  write_text(path, metrics_to_csv(rows));
}

std::string metrics_summary_json(const std::vector<MetricsRow>& rows) {
  if (rows.empty()) throw Error("metrics summary requires at least one row");
  const std::size_t n_stages = rows[0].cv2_stage.size();
  std::vector<std::vector<double>> values;
  values.reserve(rows.size());
  for (const auto& r : rows) values.push_back(row_values(r));
  return summary_for(metrics_columns(n_stages), values).dump(1) + "\n";
}

void write_metrics_summary(const std::vector<MetricsRow>& rows,
                           const std::string& path) {
  write_text(path, metrics_summary_json(rows));
}

MetricsTable read_metrics_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open metrics csv: " + path);
  MetricsTable table;
  std::string line;
  if (!std::getline(f, line)) throw Error("metrics csv is empty: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) table.columns.push_back(cell);
  }
  if (table.columns.empty()) throw Error("metrics csv has no columns: " + path);
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        row.push_back(v);
      } catch (const std::exception&) {
        throw Error("metrics csv has a non-numeric cell: '" + cell + "'");
      }
    }
    if (row.size() != table.columns.size())
      throw Error("metrics csv row width mismatch in " + path);
    table.rows.push_back(std::move(row));
  }
  if (table.rows.empty()) throw Error("metrics csv has no data rows: " + path);
  return table;
}

std::string metrics_table_to_csv(const MetricsTable& table) {
  std::ostringstream out;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (c) out << ',';
    out << table.columns[c];
  }
  out << '\n';
  for (const auto& row : table.rows) {
    // Column 0 is the integer step counter.
    out << static_cast<long long>(row[0]);
    for (std::size_t c = 1; c < row.size(); ++c) out << ',' << fmt_double(row[c]);
    out << '\n';
  }
  return out.str();
}

std::string metrics_table_summary_json(const MetricsTable& table) {
  return summary_for(table.columns, table.rows).dump(1) + "\n";
}

}  // namespace clasp
