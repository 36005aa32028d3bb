#ifndef SYNSEG_REPORT_HPP
#define SYNSEG_REPORT_HPP

#include <array>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "synseg/common.hpp"
#include "synseg/metrics.hpp"

namespace synseg {

struct ReportRow {
  std::string method;
  MetricsReport report;
};

// Table columns, paper-style ordering. HD95 and ASSD rank lower-is-better.
enum class ReportColumn { miou = 0, dice, hd95, precision, recall, assd };
constexpr int kReportColumns = 6;

inline const char* column_name(int c) {
  static const char* names[kReportColumns] = {"mIoU", "Dice", "HD95", "Precision", "Recall", "ASSD"};
  return names[c];
}

inline bool column_lower_is_better(int c) {
  return c == static_cast<int>(ReportColumn::hd95) || c == static_cast<int>(ReportColumn::assd);
}

inline std::optional<double> column_value(const MetricsReport& r, int c) {
  switch (static_cast<ReportColumn>(c)) {
    case ReportColumn::miou: return r.aggregate.iou * 100.0;
    case ReportColumn::dice: return r.aggregate.dice * 100.0;
    case ReportColumn::hd95: return r.aggregate.hd95_mm;
    case ReportColumn::precision: return r.aggregate.precision * 100.0;
    case ReportColumn::recall: return r.aggregate.recall * 100.0;
    case ReportColumn::assd: return r.aggregate.assd_mm;
  }
  return std::nullopt;
}

struct ColumnMarking {
  int best = -1;    // row index
  int second = -1;
};

// Ties break toward the lexicographically smaller method name.
inline std::array<ColumnMarking, kReportColumns> column_markings(const std::vector<ReportRow>& rows) {
  std::array<ColumnMarking, kReportColumns> marks;
  for (int c = 0; c < kReportColumns; ++c) {
    const bool lower = column_lower_is_better(c);
    std::vector<std::pair<double, int>> ranked;
    for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
      const auto v = column_value(rows[static_cast<std::size_t>(i)].report, c);
      if (v) ranked.push_back({*v, i});
    }
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return lower ? a.first < b.first : a.first > b.first;
      return rows[static_cast<std::size_t>(a.second)].method <
             rows[static_cast<std::size_t>(b.second)].method;
    });
    if (!ranked.empty()) marks[static_cast<std::size_t>(c)].best = ranked[0].second;
    if (ranked.size() > 1) marks[static_cast<std::size_t>(c)].second = ranked[1].second;
  }
  return marks;
}

namespace detail {

inline std::string format_cell(const std::optional<double>& v, bool best, bool second) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", *v);
  if (best) return "**" + std::string(buf) + "**";
  if (second) return "*" + std::string(buf) + "*";
  return buf;
}

}  // namespace detail

// Plain-text comparison table; best values are wrapped in ** and second-best
// in *. Overlap metrics are percentages, distances are millimetres.
inline std::string render_table(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw InvalidArgument("render_table needs at least one report");
  const auto marks = column_markings(rows);

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header = {"Method"};
  for (int c = 0; c < kReportColumns; ++c) header.push_back(column_name(c));
  cells.push_back(header);
  for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
    std::vector<std::string> line = {rows[static_cast<std::size_t>(i)].method};
    for (int c = 0; c < kReportColumns; ++c) {
      const auto& mk = marks[static_cast<std::size_t>(c)];
      line.push_back(detail::format_cell(column_value(rows[static_cast<std::size_t>(i)].report, c),
                                         mk.best == i, mk.second == i));
    }
    cells.push_back(line);
  }

  std::vector<std::size_t> widths(cells[0].size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], line[c].size());

  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const std::string& cell = cells[r][c];
      if (c == 0) {
        out += cell + std::string(widths[c] - cell.size(), ' ');
      } else {
        out += "  " + std::string(widths[c] - cell.size(), ' ') + cell;
      }
    }
    out += '\n';
    if (r == 0) {
      std::size_t total = widths[0];
      for (std::size_t c = 1; c < widths.size(); ++c) total += widths[c] + 2;
      out += std::string(total, '-') + '\n';
    }
  }
  return out;
}

// Same values as the text table, unmarked.
inline std::string render_csv(const std::vector<ReportRow>& rows) {
  std::string out = "method,miou,dice,hd95,precision,recall,assd\n";
  for (const auto& row : rows) {
    out += row.method;
    for (int c = 0; c < kReportColumns; ++c) {
      const auto v = column_value(row.report, c);
      char buf[32];
      if (v)
        std::snprintf(buf, sizeof(buf), ",%.2f", *v);
      else
        std::snprintf(buf, sizeof(buf), ",");
      out += buf;
    }
    out += '\n';
  }
  return out;
}

// Builds a report carrying only aggregate values (fixture rows and external
// baselines); overlap metrics are given as percentages.
inline MetricsReport report_from_aggregates(double miou_pct, double dice_pct, double hd95_mm,
                                            double precision_pct, double recall_pct, double assd_mm) {
  MetricsReport r;
  r.aggregate.iou = miou_pct / 100.0;
  r.aggregate.dice = dice_pct / 100.0;
  r.aggregate.precision = precision_pct / 100.0;
  r.aggregate.recall = recall_pct / 100.0;
  r.aggregate.hd95_mm = hd95_mm;
  r.aggregate.assd_mm = assd_mm;
  return r;
}

}  // namespace synseg

#endif
