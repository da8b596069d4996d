#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "beta/episode.hpp"
#include "beta/tensor.hpp"

namespace beta {

enum class ColumnKind { numerical, categorical };

/// Raised for malformed CSV input. `line` is the 1-based physical line of the offending record.
class CsvError : public std::runtime_error {
 public:
  CsvError(const std::string& message, std::size_t line);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Parse RFC 4180 style CSV: quoted fields may hold commas, newlines and doubled quotes.
/// Returns the records with the 1-based line on which each starts.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;
};
CsvTable parse_csv(std::istream& in);

/// Typed table. Categorical cells hold the index of their level.
struct Dataset {
  std::vector<std::string> names;
  std::vector<ColumnKind> kinds;
  std::vector<std::vector<std::string>> levels;  // per column; empty for numerical columns
  Tensor<double> x;                              // N × d
  std::vector<int> y;
  std::vector<std::string> class_names;          // first-appearance order

  std::size_t size() const noexcept { return y.size(); }
  std::size_t width() const noexcept { return names.size(); }
  std::size_t n_classes() const noexcept { return class_names.size(); }
};

/// Load a CSV with a header row. Columns are numerical when every cell parses as a number
/// unless `kinds` says otherwise. Empty, "NA", "NaN" and "?" cells are missing values and
/// are rejected.
Dataset ingest_csv(std::istream& in, const std::string& target, const std::map<std::string, ColumnKind>& kinds = {});
Dataset ingest_csv_file(const std::string& path, const std::string& target,
                        const std::map<std::string, ColumnKind>& kinds = {});

/// Row assignment: test is the first 20% of a seeded permutation, val 20% of the rest.
struct Split {
  std::vector<std::size_t> train, val, test;
};
Split split_rows(std::size_t n, std::uint64_t seed, double test_fraction = 0.2, double val_fraction = 0.2);

/// Train-split statistics: per numerical column mean and population std; categorical
/// columns expand to one indicator per level.
struct Preprocessor {
  std::vector<ColumnKind> kinds;
  std::vector<double> mean, scale;       // per input column; scale 0 maps the column to zeros
  std::vector<std::size_t> level_counts;  // per input column; 0 for numerical

  std::size_t output_width() const;
  Tensor<float> transform(const Tensor<double>& x) const;
};

/// Fit on the given rows of `ds`, which must be nonempty.
Preprocessor fit_preprocessor(const Dataset& ds, const std::vector<std::size_t>& rows);

/// Numerical-only shortcut: standardize columns of `x` with statistics of `rows`.
Preprocessor fit_standardizer(const Tensor<double>& x, const std::vector<std::size_t>& rows);

struct PreparedData {
  LabeledSet train, val, test;
  Preprocessor preprocessor;
};

/// Split, fit on train, transform all three parts.
PreparedData prepare(const Dataset& ds, const Split& split);

}  // namespace beta
