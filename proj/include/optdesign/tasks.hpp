#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "optdesign/error.hpp"
#include "optdesign/oracles.hpp"
#include "optdesign/posterior.hpp"
#include "optdesign/rng.hpp"
#include "optdesign/selectors.hpp"

namespace optdesign {

enum class TaskKind { Classification, Regression, Vector };
enum class Normalize { None, UnitNorm, Standardize };

[[nodiscard]] inline std::string_view task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::Classification: return "classification";
    case TaskKind::Regression: return "regression";
    case TaskKind::Vector: return "vector";
  }
  return "?";
}

[[nodiscard]] inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "classification") return TaskKind::Classification;
  if (s == "regression") return TaskKind::Regression;
  if (s == "vector") return TaskKind::Vector;
  throw InvalidArgument("unknown task kind '" + std::string(s) + "'");
}

[[nodiscard]] inline Normalize parse_normalize(std::string_view s) {
  if (s == "none") return Normalize::None;
  if (s == "unit_norm") return Normalize::UnitNorm;
  if (s == "standardize") return Normalize::Standardize;
  throw InvalidArgument("unknown normalization '" + std::string(s) + "'");
}

struct Dataset {
  Matrix features;  // n × d
  Matrix labels;    // n × d_y
  TaskKind kind = TaskKind::Regression;
  std::vector<std::string> feature_names;
  std::vector<std::string> label_names;
  /// Optional per-row class or pattern id; drives class-balanced test draws.
  std::vector<int> groups;

  [[nodiscard]] std::size_t rows() const noexcept { return static_cast<std::size_t>(features.rows()); }
  [[nodiscard]] Eigen::Index dim() const noexcept { return features.cols(); }
  [[nodiscard]] Eigen::Index label_dim() const noexcept { return labels.cols(); }
  [[nodiscard]] Vector feature_row(std::size_t i) const { return features.row(static_cast<Eigen::Index>(i)).transpose(); }
  [[nodiscard]] Vector label_row(std::size_t i) const { return labels.row(static_cast<Eigen::Index>(i)).transpose(); }

  [[nodiscard]] bool integer_labels() const {
    return (labels.array() == labels.array().round()).all();
  }

  void validate() const {
    if (features.rows() != labels.rows()) throw InvalidArgument("dataset: feature and label row counts differ");
    if (labels.cols() < 1) throw InvalidArgument("dataset: need at least one label column");
    if (!features.allFinite() || !labels.allFinite()) throw InvalidArgument("dataset: non-finite values");
    if (kind == TaskKind::Classification && (labels.cols() != 1 || !integer_labels())) {
      throw InvalidArgument("dataset: classification labels must be a single integer column");
    }
    if (!groups.empty() && groups.size() != rows()) throw InvalidArgument("dataset: groups length mismatch");
  }
};

/// Scales rows to unit length or columns to zero mean/unit variance.
/// `row_label` maps a row index to a human-readable location for errors.
template <class RowLabel>
void normalize_features(Matrix& x, Normalize mode, RowLabel row_label) {
  if (mode == Normalize::UnitNorm) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double n = x.row(i).norm();
      if (n == 0.0) throw InvalidArgument("unit_norm: " + row_label(static_cast<std::size_t>(i)) + " has zero norm");
      x.row(i) /= n;
    }
  } else if (mode == Normalize::Standardize) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double mean = x.col(j).mean();
      x.col(j).array() -= mean;
      const double sd = x.rows() > 1 ? std::sqrt(x.col(j).squaredNorm() / static_cast<double>(x.rows() - 1)) : 0.0;
      // Constant columns are only centred.
      if (sd > 0.0) x.col(j) /= sd;
    }
  }
}

inline void normalize_features(Matrix& x, Normalize mode) {
  normalize_features(x, mode, [](std::size_t i) { return "row " + std::to_string(i); });
}

struct CsvOptions {
  /// Label column names (or 0-based indices without a header). A trailing
  /// '*' matches a prefix. Empty selects the last column.
  std::vector<std::string> label_cols;
  bool has_header = true;
  Normalize normalize = Normalize::None;
  std::optional<TaskKind> kind;
  /// Column holding class/pattern ids, excluded from features.
  std::optional<std::string> group_col;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline bool column_matches(const std::string& pattern, const std::string& name) {
  if (!pattern.empty() && pattern.back() == '*') {
    return name.compare(0, pattern.size() - 1, pattern, 0, pattern.size() - 1) == 0;
  }
  return pattern == name;
}

inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

}  // namespace detail

/// Raw numeric table: column names (indices when headerless), rows, and the
/// source line of each row.
struct NumericTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> lines;
};

[[nodiscard]] inline NumericTable read_numeric_csv(const std::string& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  NumericTable tab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (tab.names.empty()) {
      if (has_header) {
        for (auto c : cells) tab.names.emplace_back(c);
        continue;
      }
      for (std::size_t j = 0; j < cells.size(); ++j) tab.names.push_back(std::to_string(j));
    }
    if (cells.size() != tab.names.size()) {
      throw InvalidArgument(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(tab.names.size()) +
                            " cells, got " + std::to_string(cells.size()));
    }
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const auto v = detail::parse_double(cells[j]);
      if (!v) {
        throw InvalidArgument(path + ":" + std::to_string(line_no) + ": column '" + tab.names[j] +
                              "' is not a finite number: '" + std::string(cells[j]) + "'");
      }
      row[j] = *v;
    }
    tab.rows.push_back(std::move(row));
    tab.lines.push_back(line_no);
  }
  if (tab.names.empty()) throw InvalidArgument(path + ": empty file");
  if (tab.rows.empty()) throw InvalidArgument(path + ": no data rows");
  return tab;
}

/// Every column of a numeric CSV as one feature vector per row.
[[nodiscard]] inline std::vector<Vector> load_feature_rows(const std::string& path, bool has_header = true) {
  const auto tab = read_numeric_csv(path, has_header);
  std::vector<Vector> out;
  for (const auto& r : tab.rows) out.push_back(Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(r.size())));
  return out;
}

/// Reads a numeric CSV. Non-label, non-group columns become features.
/// Task kind, unless given: several label columns → vector; all-integer
/// single column → classification; otherwise regression.
[[nodiscard]] inline Dataset load_csv(const std::string& path, const CsvOptions& opt) {
  auto tab = read_numeric_csv(path, opt.has_header);
  const auto& names = tab.names;
  const auto& rows = tab.rows;
  const auto& row_lines = tab.lines;
  auto where = [&](std::size_t ln) { return path + ":" + std::to_string(ln); };

  std::vector<bool> is_label(names.size(), false);
  std::optional<std::size_t> group_idx;
  if (opt.label_cols.empty()) {
    is_label.back() = true;
  } else {
    for (const auto& pat : opt.label_cols) {
      bool hit = false;
      for (std::size_t j = 0; j < names.size(); ++j) {
        if (detail::column_matches(pat, names[j])) is_label[j] = hit = true;
      }
      if (!hit) throw InvalidArgument(path + ": label column '" + pat + "' not found");
    }
  }
  if (opt.group_col) {
    const auto it = std::find(names.begin(), names.end(), *opt.group_col);
    if (it == names.end()) throw InvalidArgument(path + ": group column '" + *opt.group_col + "' not found");
    group_idx = static_cast<std::size_t>(it - names.begin());
    if (is_label[*group_idx]) throw InvalidArgument(path + ": group column cannot also be a label");
  }

  Dataset ds;
  std::vector<std::size_t> fcols, lcols;
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (is_label[j]) {
      lcols.push_back(j);
      ds.label_names.push_back(names[j]);
    } else if (!group_idx || j != *group_idx) {
      fcols.push_back(j);
      ds.feature_names.push_back(names[j]);
    }
  }
  if (fcols.empty()) throw InvalidArgument(path + ": no feature columns");
  const auto n = static_cast<Eigen::Index>(rows.size());
  ds.features.resize(n, static_cast<Eigen::Index>(fcols.size()));
  ds.labels.resize(n, static_cast<Eigen::Index>(lcols.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < fcols.size(); ++j) ds.features(i, static_cast<Eigen::Index>(j)) = r[fcols[j]];
    for (std::size_t j = 0; j < lcols.size(); ++j) ds.labels(i, static_cast<Eigen::Index>(j)) = r[lcols[j]];
    if (group_idx) {
      const double g = r[*group_idx];
      if (g != std::round(g)) throw InvalidArgument(where(row_lines[static_cast<std::size_t>(i)]) + ": group id must be integer");
      ds.groups.push_back(static_cast<int>(g));
    }
  }
  if (opt.kind) {
    ds.kind = *opt.kind;
  } else if (ds.labels.cols() > 1) {
    ds.kind = TaskKind::Vector;
  } else {
    ds.kind = ds.integer_labels() ? TaskKind::Classification : TaskKind::Regression;
  }
  if (ds.kind == TaskKind::Classification && ds.groups.empty()) {
    for (Eigen::Index i = 0; i < n; ++i) ds.groups.push_back(static_cast<int>(ds.labels(i, 0)));
  }
  normalize_features(ds.features, opt.normalize, [&](std::size_t i) {
    return "row " + std::to_string(i) + " (" + where(row_lines[i]) + ")";
  });
  ds.validate();
  return ds;
}

[[nodiscard]] inline Dataset load_csv(const std::string& path, std::vector<std::string> label_cols,
                                      bool has_header = true) {
  CsvOptions opt;
  opt.label_cols = std::move(label_cols);
  opt.has_header = has_header;
  return load_csv(path, opt);
}

/// Writes features, then a "pattern" column if groups are set and the task
/// is not classification, then labels. Shortest round-trip formatting.
inline void write_csv(const std::string& path, const Dataset& ds) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  const bool with_groups = !ds.groups.empty() && ds.kind != TaskKind::Classification;
  auto name = [](const std::vector<std::string>& names, Eigen::Index j, const char* prefix) {
    return static_cast<std::size_t>(j) < names.size() ? names[static_cast<std::size_t>(j)]
                                                      : prefix + std::to_string(j);
  };
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < ds.dim(); ++j) header.push_back(name(ds.feature_names, j, "x"));
  if (with_groups) header.emplace_back("pattern");
  for (Eigen::Index j = 0; j < ds.label_dim(); ++j) header.push_back(name(ds.label_names, j, "y"));
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) out << (j ? "," : "") << detail::format_double(ds.features(i, j));
    if (with_groups) out << ',' << ds.groups[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < ds.label_dim(); ++j) out << ',' << detail::format_double(ds.labels(i, j));
    out << '\n';
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Synthetic pattern tasks. Row i uses stream i of the seed, so the first rows
// do not depend on n; classes alternate (even rows class 0, odd rows class 1).

enum class ArcKind { ExpandContract, Rotate };
enum class PcfgKind { AddSubtract, Repeat };

namespace arc {

using Grid = std::array<double, 16>;

constexpr std::size_t at(std::size_t r, std::size_t c) { return 4 * r + c; }

/// Corner cells in clockwise order: TL, TR, BR, BL.
inline constexpr std::array<std::size_t, 4> kCorners = {at(0, 0), at(0, 3), at(3, 3), at(3, 0)};
/// Centre cells, each aligned with the corner it expands to.
inline constexpr std::array<std::size_t, 4> kCentre = {at(1, 1), at(1, 2), at(2, 2), at(2, 1)};

inline Grid expand(const Grid& in) {
  Grid out{};
  for (std::size_t k = 0; k < 4; ++k) out[kCorners[k]] = in[kCentre[k]];
  return out;
}

inline Grid contract(const Grid& in) {
  Grid out{};
  for (std::size_t k = 0; k < 4; ++k) out[kCentre[k]] = in[kCorners[k]];
  return out;
}

/// Corner values advance one step clockwise; other cells are dropped.
inline Grid rotate_cw(const Grid& in) {
  Grid out{};
  for (std::size_t k = 0; k < 4; ++k) out[kCorners[(k + 1) % 4]] = in[kCorners[k]];
  return out;
}

inline Grid rotate_ccw(const Grid& in) {
  Grid out{};
  for (std::size_t k = 0; k < 4; ++k) out[kCorners[(k + 3) % 4]] = in[kCorners[k]];
  return out;
}

}  // namespace arc

namespace pcfg {

using Seq = std::array<double, 4>;
using Out = std::array<double, 5>;

/// Odd class: append last + 1. Even class: append last − 1.
inline Out add_subtract(const Seq& s, bool odd) {
  return {s[0], s[1], s[2], s[3], odd ? s[3] + 1.0 : s[3] - 1.0};
}

/// Odd class: repeat the first element. Even class: repeat the second.
inline Out repeat(const Seq& s, bool odd) { return {s[0], s[1], s[2], s[3], odd ? s[0] : s[1]}; }

}  // namespace pcfg

namespace detail {

inline void require_even(std::size_t n, const char* what) {
  if (n == 0 || n % 2 != 0) throw InvalidArgument(std::string(what) + ": n must be even and positive");
}

inline std::vector<std::string> numbered(const char* prefix, std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < count; ++j) out.push_back(prefix + std::to_string(j));
  return out;
}

}  // namespace detail

/// 4×4 grids, flattened row-major (d = d_y = 16), nonzero cells in 1..9.
/// ExpandContract: class 0 moves the centre block to the corners, class 1
/// the reverse. Rotate: corner values move one corner clockwise (class 0)
/// or counter-clockwise (class 1).
[[nodiscard]] inline Dataset gen_arc(ArcKind kind, std::size_t n, std::uint64_t seed) {
  detail::require_even(n, "gen_arc");
  const Rng base(seed);
  Dataset ds;
  ds.kind = TaskKind::Vector;
  ds.features.resize(static_cast<Eigen::Index>(n), 16);
  ds.labels.resize(static_cast<Eigen::Index>(n), 16);
  ds.feature_names = detail::numbered("x", 16);
  ds.label_names = detail::numbered("y", 16);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = base.split(i);
    const int cls = static_cast<int>(i % 2);
    arc::Grid in{};
    const auto& cells = (kind == ArcKind::ExpandContract && cls == 0) ? arc::kCentre : arc::kCorners;
    for (auto c : cells) in[c] = static_cast<double>(1 + rng.index(9));
    arc::Grid out;
    if (kind == ArcKind::ExpandContract) {
      out = cls == 0 ? arc::expand(in) : arc::contract(in);
    } else {
      out = cls == 0 ? arc::rotate_cw(in) : arc::rotate_ccw(in);
    }
    for (Eigen::Index j = 0; j < 16; ++j) {
      ds.features(static_cast<Eigen::Index>(i), j) = in[static_cast<std::size_t>(j)];
      ds.labels(static_cast<Eigen::Index>(i), j) = out[static_cast<std::size_t>(j)];
    }
    ds.groups.push_back(cls);
  }
  return ds;
}

/// Length-4 sequences of odd values from {1,3,5,7,9} (class 0) or even values
/// from {2,4,6,8} (class 1); labels are length-5 continuations.
[[nodiscard]] inline Dataset gen_pcfg(PcfgKind kind, std::size_t n, std::uint64_t seed) {
  detail::require_even(n, "gen_pcfg");
  const Rng base(seed);
  Dataset ds;
  ds.kind = TaskKind::Vector;
  ds.features.resize(static_cast<Eigen::Index>(n), 4);
  ds.labels.resize(static_cast<Eigen::Index>(n), 5);
  ds.feature_names = detail::numbered("x", 4);
  ds.label_names = detail::numbered("y", 5);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = base.split(i);
    const bool odd = i % 2 == 0;
    pcfg::Seq s{};
    for (auto& v : s) v = odd ? static_cast<double>(2 * rng.index(5) + 1) : static_cast<double>(2 * rng.index(4) + 2);
    const auto out = kind == PcfgKind::AddSubtract ? pcfg::add_subtract(s, odd) : pcfg::repeat(s, odd);
    for (Eigen::Index j = 0; j < 4; ++j) ds.features(static_cast<Eigen::Index>(i), j) = s[static_cast<std::size_t>(j)];
    for (Eigen::Index j = 0; j < 5; ++j) ds.labels(static_cast<Eigen::Index>(i), j) = out[static_cast<std::size_t>(j)];
    ds.groups.push_back(odd ? 0 : 1);
  }
  return ds;
}

/// Task names accepted by `gen-task`.
[[nodiscard]] inline Dataset gen_task(std::string_view name, std::size_t n, std::uint64_t seed) {
  if (name == "arc-expand-contract") return gen_arc(ArcKind::ExpandContract, n, seed);
  if (name == "arc-rotate") return gen_arc(ArcKind::Rotate, n, seed);
  if (name == "pcfg-add-subtract") return gen_pcfg(PcfgKind::AddSubtract, n, seed);
  if (name == "pcfg-repeat") return gen_pcfg(PcfgKind::Repeat, n, seed);
  throw InvalidArgument("unknown task '" + std::string(name) +
                        "' (expected arc-expand-contract, arc-rotate, pcfg-add-subtract or pcfg-repeat)");
}

// ---------------------------------------------------------------------------
// Splits.

struct SplitSpec {
  std::size_t k_test = 20;
  std::size_t trials = 10;
  std::uint64_t seed = 0;
  Normalize normalize = Normalize::None;
};

struct TrialSplit {
  Pool pool;
  TestSet tests;
  std::vector<Vector> test_labels;
  DatasetReplayOracle oracle;
  /// Dataset row of each pool index / test query.
  std::vector<std::size_t> pool_rows;
  std::vector<std::size_t> test_rows;
};

namespace detail {

inline void fisher_yates(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

}  // namespace detail

/// Test rows for one trial. With groups, classes are visited round-robin in
/// ascending id order, each contributing its next shuffled row.
[[nodiscard]] inline std::vector<std::size_t> draw_test_rows(const Dataset& ds, std::size_t k_test, Rng& rng) {
  const std::size_t n = ds.rows();
  if (k_test == 0) throw InvalidArgument("split: k_test must be >= 1");
  if (k_test >= n) {
    throw InvalidArgument("split: k_test (" + std::to_string(k_test) + ") must be < n (" + std::to_string(n) + ")");
  }
  std::vector<std::size_t> picked;
  if (ds.groups.empty()) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    detail::fisher_yates(all, rng);
    picked.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k_test));
  } else {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[ds.groups[i]].push_back(i);
    for (auto& [cls, rows] : by_class) detail::fisher_yates(rows, rng);
    std::map<int, std::size_t> cursor;
    while (picked.size() < k_test) {
      for (auto& [cls, rows] : by_class) {
        auto& c = cursor[cls];
        if (c < rows.size() && picked.size() < k_test) picked.push_back(rows[c++]);
      }
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

/// Disjoint test/train draw for `trial`; the pool holds the remaining rows in
/// ascending order, and its replay oracle answers with their labels.
[[nodiscard]] inline TrialSplit make_split(const Dataset& ds, const SplitSpec& spec, std::size_t trial) {
  ds.validate();
  Rng rng = Rng(spec.seed).split(trial);
  const auto test_rows = draw_test_rows(ds, spec.k_test, rng);
  Matrix x = ds.features;
  normalize_features(x, spec.normalize);

  TrialSplit out;
  out.test_rows = test_rows;
  std::vector<Vector> pool_x, pool_y, test_x;
  std::size_t t = 0;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    const Vector xi = x.row(static_cast<Eigen::Index>(i)).transpose();
    if (t < test_rows.size() && test_rows[t] == i) {
      test_x.push_back(xi);
      out.test_labels.push_back(ds.label_row(i));
      ++t;
    } else {
      pool_x.push_back(xi);
      pool_y.push_back(ds.label_row(i));
      out.pool_rows.push_back(i);
    }
  }
  out.tests = TestSet(std::move(test_x));
  out.oracle = DatasetReplayOracle(pool_x, std::move(pool_y));
  out.pool = Pool(std::move(pool_x));
  return out;
}

}  // namespace optdesign
