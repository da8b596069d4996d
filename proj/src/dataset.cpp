#include "beta/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <iterator>
#include <set>
#include <unordered_map>

#include "beta/rng.hpp"

namespace beta {
namespace {

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == "?";
}

bool parse_number(const std::string& cell, double& out) {
  std::size_t b = 0, e = cell.size();
  while (b < e && (cell[b] == ' ' || cell[b] == '\t')) ++b;
  while (e > b && (cell[e - 1] == ' ' || cell[e - 1] == '\t')) --e;
  if (b == e) return false;
  if (cell[b] == '+') ++b;
  const auto res = std::from_chars(cell.data() + b, cell.data() + e, out);
  return res.ec == std::errc() && res.ptr == cell.data() + e && std::isfinite(out);
}

}  // namespace

CsvError::CsvError(const std::string& message, std::size_t line)
    : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}

CsvTable parse_csv(std::istream& in) {
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  CsvTable table;
  std::vector<std::vector<std::string>> records;
  std::vector<std::size_t> starts;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false, record_open = false;
  std::size_t line = 1, record_line = 1;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    // A line holding nothing at all is skipped.
    if (!(record.size() == 1 && record[0].empty())) {
      records.push_back(std::move(record));
      starts.push_back(record_line);
    }
    record.clear();
    record_open = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (!record_open) {
      record_open = true;
      record_line = line;
    }
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line;
        field += ch;
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (field_started) throw CsvError("quote inside an unquoted field", line);
        quoted = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;
        [[fallthrough]];
      case '\n':
        end_record();
        ++line;
        break;
      default:
        field += ch;
        field_started = true;
    }
  }
  if (quoted) throw CsvError("unterminated quoted field", record_line);
  if (record_open) end_record();
  if (records.empty()) throw CsvError("file is empty; a header row is required", 1);

  table.header = std::move(records[0]);
  std::set<std::string> seen;
  for (const auto& name : table.header) {
    if (!seen.insert(name).second) throw CsvError("duplicate column name '" + name + "'", starts[0]);
  }
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      throw CsvError("expected " + std::to_string(table.header.size()) + " fields, found " +
                         std::to_string(records[r].size()),
                     starts[r]);
    }
    table.rows.push_back(std::move(records[r]));
    table.lines.push_back(starts[r]);
  }
  return table;
}

Dataset ingest_csv(std::istream& in, const std::string& target, const std::map<std::string, ColumnKind>& kinds) {
  CsvTable table = parse_csv(in);
  const std::size_t cols = table.header.size(), n = table.rows.size();
  std::size_t target_col = cols;
  for (std::size_t j = 0; j < cols; ++j)
    if (table.header[j] == target) target_col = j;
  if (target_col == cols) throw std::invalid_argument("target column '" + target + "' not found in header");
  for (const auto& [name, kind] : kinds) {
    if (std::find(table.header.begin(), table.header.end(), name) == table.header.end()) {
      throw std::invalid_argument("column kind given for unknown column '" + name + "'");
    }
  }
  if (n == 0) throw CsvError("no data rows", 1);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (is_missing(table.rows[r][j])) {
        throw CsvError("missing value in column '" + table.header[j] + "'", table.lines[r]);
      }
    }
  }

  Dataset ds;
  std::vector<std::size_t> feature_cols;
  for (std::size_t j = 0; j < cols; ++j)
    if (j != target_col) feature_cols.push_back(j);
  ds.x = Tensor<double>({n, feature_cols.size()});
  for (std::size_t f = 0; f < feature_cols.size(); ++f) {
    const std::size_t j = feature_cols[f];
    const std::string& name = table.header[j];
    ColumnKind kind = ColumnKind::numerical;
    double v = 0;
    if (auto it = kinds.find(name); it != kinds.end()) {
      kind = it->second;
    } else {
      for (std::size_t r = 0; r < n; ++r)
        if (!parse_number(table.rows[r][j], v)) kind = ColumnKind::categorical;
    }
    ds.names.push_back(name);
    ds.kinds.push_back(kind);
    ds.levels.emplace_back();
    if (kind == ColumnKind::numerical) {
      for (std::size_t r = 0; r < n; ++r) {
        if (!parse_number(table.rows[r][j], v)) {
          throw CsvError("column '" + name + "' is numerical but holds '" + table.rows[r][j] + "'", table.lines[r]);
        }
        ds.x.at(r, f) = v;
      }
    } else {
      std::unordered_map<std::string, std::size_t> index;
      for (std::size_t r = 0; r < n; ++r) {
        auto [it, fresh] = index.emplace(table.rows[r][j], ds.levels.back().size());
        if (fresh) ds.levels.back().push_back(table.rows[r][j]);
        ds.x.at(r, f) = static_cast<double>(it->second);
      }
    }
  }
  std::unordered_map<std::string, int> classes;
  for (std::size_t r = 0; r < n; ++r) {
    auto [it, fresh] = classes.emplace(table.rows[r][target_col], static_cast<int>(ds.class_names.size()));
    if (fresh) ds.class_names.push_back(table.rows[r][target_col]);
    ds.y.push_back(it->second);
  }
  return ds;
}

Dataset ingest_csv_file(const std::string& path, const std::string& target,
                        const std::map<std::string, ColumnKind>& kinds) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return ingest_csv(in, target, kinds);
}

Split split_rows(std::size_t n, std::uint64_t seed, double test_fraction, double val_fraction) {
  if (!(test_fraction >= 0 && test_fraction < 1 && val_fraction >= 0 && val_fraction < 1)) {
    throw std::invalid_argument("split fractions must lie in [0, 1)");
  }
  SplitMix64 rng(seed);
  const auto order = permutation(n, rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n - n_test)));
  Split s;
  s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
               order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), order.end());
  return s;
}

std::size_t Preprocessor::output_width() const {
  std::size_t w = 0;
  for (std::size_t j = 0; j < kinds.size(); ++j) w += kinds[j] == ColumnKind::numerical ? 1 : level_counts[j];
  return w;
}

Tensor<float> Preprocessor::transform(const Tensor<double>& x) const {
  if (x.rank() != 2 || x.shape()[1] != kinds.size()) {
    throw ShapeError("preprocess: expected " + std::to_string(kinds.size()) + " columns, got " +
                     shape_to_string(x.shape()));
  }
  const std::size_t n = x.shape()[0], width = output_width();
  Tensor<float> out({n, width});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t o = 0;
    for (std::size_t j = 0; j < kinds.size(); ++j) {
      if (kinds[j] == ColumnKind::numerical) {
        out.at(i, o++) = scale[j] > 0 ? static_cast<float>((x.at(i, j) - mean[j]) / scale[j]) : 0.0f;
      } else {
        const auto level = static_cast<std::size_t>(x.at(i, j));
        if (level >= level_counts[j]) throw std::out_of_range("preprocess: unseen categorical level");
        out.at(i, o + level) = 1.0f;
        o += level_counts[j];
      }
    }
  }
  return out;
}

Preprocessor fit_standardizer(const Tensor<double>& x, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw std::invalid_argument("preprocess: the train split is empty");
  const std::size_t d = x.shape()[1];
  Preprocessor p;
  p.kinds.assign(d, ColumnKind::numerical);
  p.mean.assign(d, 0.0);
  p.scale.assign(d, 0.0);
  p.level_counts.assign(d, 0);
  const double n = static_cast<double>(rows.size());
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0;
    for (std::size_t r : rows) m += x.at(r, j);
    m /= n;
    double v = 0;
    for (std::size_t r : rows) v += (x.at(r, j) - m) * (x.at(r, j) - m);
    p.mean[j] = m;
    p.scale[j] = std::sqrt(v / n);
  }
  return p;
}

Preprocessor fit_preprocessor(const Dataset& ds, const std::vector<std::size_t>& rows) {
  Preprocessor p = fit_standardizer(ds.x, rows);
  for (std::size_t j = 0; j < ds.width(); ++j) {
    if (ds.kinds[j] == ColumnKind::categorical) {
      p.kinds[j] = ColumnKind::categorical;
      p.mean[j] = 0;
      p.scale[j] = 0;
      p.level_counts[j] = ds.levels[j].size();
    }
  }
  return p;
}

PreparedData prepare(const Dataset& ds, const Split& split) {
  PreparedData out;
  out.preprocessor = fit_preprocessor(ds, split.train);
  auto part = [&](const std::vector<std::size_t>& rows) {
    LabeledSet s{out.preprocessor.transform(gather_rows(ds.x, std::span<const std::size_t>(rows))),
                 gather(std::span<const int>(ds.y), std::span<const std::size_t>(rows)), ds.n_classes()};
    return s;
  };
  out.train = part(split.train);
  out.val = part(split.val);
  out.test = part(split.test);
  return out;
}

}  // namespace beta
