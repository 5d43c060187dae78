#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "clasp/losses.hpp"

namespace clasp {

// One training-step record. Column order in the CSV is fixed:
// step, loss_dino, loss_part, loss_attr, loss_balancing, loss_total,
// cv2_s0..cv2_s{k-1}, gcr, ead_dino_part, ead_dino_attr, ead_part_attr,
// wall_time_ms.
struct MetricsRow {
  long step = 0;
  LossBreakdown losses;
  std::vector<double> cv2_stage;
  double gcr = 0.0;
  double ead_dino_part = 0.0;
  double ead_dino_attr = 0.0;
  double ead_part_attr = 0.0;
  double wall_time_ms = 0.0;
};

std::vector<std::string> metrics_columns(std::size_t n_stages);

// Floats are rendered with %.17g so re-export is byte-stable.
std::string metrics_to_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::vector<MetricsRow>& rows,
                       const std::string& path);

// Per-column {final, min, max} of a nonempty history.
std::string metrics_summary_json(const std::vector<MetricsRow>& rows);
void write_metrics_summary(const std::vector<MetricsRow>& rows,
                           const std::string& path);

// Reads a CSV produced by write_metrics_csv (used by the export command).
struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};
MetricsTable read_metrics_csv(const std::string& path);
std::string metrics_table_to_csv(const MetricsTable& table);
std::string metrics_table_summary_json(const MetricsTable& table);

}  // namespace clasp
