#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "beta/dataset.hpp"
#include "beta/rng.hpp"

using namespace beta;

namespace {

Dataset ingest(const std::string& text, const std::string& target = "y",
               const std::map<std::string, ColumnKind>& kinds = {}) {
  std::istringstream in(text);
  return ingest_csv(in, target, kinds);
}

std::size_t error_line(const std::string& text) {
  try {
    ingest(text);
  } catch (const CsvError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST_CASE("three rows, two numeric columns and a label") {
  const Dataset ds = ingest("a,b,y\n1,2,0\n3,4,1\n5,6,0\n");
  CHECK(ds.size() == 3);
  CHECK(ds.width() == 2);
  CHECK(ds.kinds == std::vector<ColumnKind>{ColumnKind::numerical, ColumnKind::numerical});
  CHECK(ds.x.at(2, 1) == 6.0);
  CHECK(ds.y == std::vector<int>{0, 1, 0});
}

TEST_CASE("label values map densely in first-appearance order") {
  const Dataset ds = ingest("x,y\n1,a\n2,b\n3,a\n");
  CHECK(ds.y == std::vector<int>{0, 1, 0});
  CHECK(ds.n_classes() == 2);
  CHECK(ds.class_names == std::vector<std::string>{"a", "b"});

  const Dataset numeric = ingest("x,y\n1,7\n2,3\n3,7\n4,5\n");
  CHECK(numeric.y == std::vector<int>{0, 1, 0, 2});
}

TEST_CASE("the target may sit in any column") {
  const Dataset ds = ingest("y,x\nb,1\na,2\n");
  CHECK(ds.names == std::vector<std::string>{"x"});
  CHECK(ds.y == std::vector<int>{0, 1});
}

TEST_CASE("categorical columns") {
  const Dataset ds = ingest("c,x,y\nred,1,0\nblue,2,1\nred,3,0\ngreen,4,1\n");
  CHECK(ds.kinds[0] == ColumnKind::categorical);
  CHECK(ds.levels[0] == std::vector<std::string>{"red", "blue", "green"});
  CHECK(ds.x.at(3, 0) == 2.0);

  const Dataset forced = ingest("c,y\n1,0\n2,1\n1,0\n", "y", {{"c", ColumnKind::categorical}});
  CHECK(forced.kinds[0] == ColumnKind::categorical);
  CHECK(forced.levels[0] == std::vector<std::string>{"1", "2"});
  CHECK_THROWS_AS(ingest("c,y\nred,0\n", "y", {{"c", ColumnKind::numerical}}), CsvError);
}

TEST_CASE("malformed tables are rejected") {
  CHECK_THROWS_AS(ingest("a,a,y\n1,2,0\n"), CsvError);
  CHECK_THROWS_AS(ingest("a,b\n1,2\n"), std::invalid_argument);  // no target column
  CHECK_THROWS_AS(ingest(""), CsvError);
  CHECK_THROWS_AS(ingest("a,y\n\"1,0\n"), CsvError);  // unterminated quote
}

TEST_CASE("ragged rows report their line number") {
  CHECK(error_line("a,b,y\n1,2,0\n3,4,1\n5,6\n7,8,1\n") == 4);
  CHECK(error_line("a,b,y\n1,2,0,9\n") == 2);
  // Blank lines still count.
  CHECK(error_line("a,b,y\n\n1,2,0\n\n1,2\n") == 5);
}

TEST_CASE("missing values are rejected with their line") {
  for (const std::string token : {"", "NA", "NaN", "nan", "?"}) {
    CAPTURE(token);
    CHECK(error_line("a,b,y\n1,2,0\n3," + token + ",1\n") == 3);
  }
  CHECK(error_line("a,y\n1,\n") == 2);  // missing label
}

TEST_CASE("quoted fields") {
  const Dataset ds = ingest("\"a,b\",y\n\"1\",\"x \"\"q\"\"\"\n2,\"line\nbreak\"\r\n3,\"x \"\"q\"\"\"\r\n");
  CHECK(ds.names == std::vector<std::string>{"a,b"});
  CHECK(ds.class_names == std::vector<std::string>{"x \"q\"", "line\nbreak"});
  CHECK(ds.y == std::vector<int>{0, 1, 0});
  CHECK(ds.x.at(2, 0) == 3.0);

  std::istringstream in("h1,h2\n\"a\nb\",c\nd,e\n");
  const CsvTable t = parse_csv(in);
  CHECK(t.lines == std::vector<std::size_t>{2, 4});
}

TEST_CASE("split is 64/16/20 and a partition") {
  const Split s = split_rows(1000, 7);
  CHECK(s.test.size() == 200);
  CHECK(s.val.size() == 160);
  CHECK(s.train.size() == 640);
  std::vector<std::size_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(all.end(), part->begin(), part->end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(1000);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(all == expect);

  const Split again = split_rows(1000, 7);
  CHECK(again.test == s.test);
  CHECK(split_rows(1000, 8).test != s.test);
}

TEST_CASE("standardization uses population std") {
  Tensor<double> x({3, 1});
  x.at(0, 0) = 1;
  x.at(1, 0) = 2;
  x.at(2, 0) = 3;
  const Preprocessor p = fit_standardizer(x, {0, 1, 2});
  const Tensor<float> z = p.transform(x);
  const double s = std::sqrt(2.0 / 3.0);
  CHECK(z.at(0, 0) == doctest::Approx(-1.0 / s).epsilon(1e-6));
  CHECK(z.at(0, 0) == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(z.at(1, 0) == doctest::Approx(0.0));
  CHECK(z.at(2, 0) == doctest::Approx(1.2247).epsilon(1e-4));
}

TEST_CASE("constant columns map to zeros") {
  Tensor<double> x({3, 2});
  for (std::size_t i = 0; i < 3; ++i) {
    x.at(i, 0) = 5;
    x.at(i, 1) = static_cast<double>(i);
  }
  const Tensor<float> z = fit_standardizer(x, {0, 1, 2}).transform(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(z.at(i, 0) == 0.0f);
}

TEST_CASE("categorical columns expand to one indicator per level") {
  const Dataset ds = ingest("c,x,y\nr,1,0\ng,2,1\nb,3,0\nr,4,1\n");
  const Preprocessor p = fit_preprocessor(ds, {0, 1, 2, 3});
  CHECK(p.output_width() == 4);
  const Tensor<float> z = p.transform(ds.x);
  CHECK(z.shape() == std::vector<std::size_t>{4, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    const float sum = z.at(i, 0) + z.at(i, 1) + z.at(i, 2);
    CHECK(sum == 1.0f);
  }
  CHECK(z.at(1, 1) == 1.0f);
  CHECK(z.at(2, 2) == 1.0f);
}

TEST_CASE("statistics come from the train split only") {
  SplitMix64 rng(3);
  std::ostringstream csv;
  csv << "a,b,y\n";
  for (int i = 0; i < 50; ++i) csv << rng.normal() * 3 + 1 << ',' << rng.uniform() * 10 << ',' << (i % 2) << '\n';
  const Dataset ds = ingest(csv.str());
  const Split split = split_rows(ds.size(), 5);
  const PreparedData p = prepare(ds, split);

  // Recompute the train statistics directly and apply them to every part.
  for (std::size_t j = 0; j < 2; ++j) {
    double mean = 0;
    for (std::size_t i : split.train) mean += ds.x.at(i, j);
    mean /= static_cast<double>(split.train.size());
    double var = 0;
    for (std::size_t i : split.train) var += (ds.x.at(i, j) - mean) * (ds.x.at(i, j) - mean);
    const double sd = std::sqrt(var / static_cast<double>(split.train.size()));
    CHECK(p.preprocessor.mean[j] == doctest::Approx(mean).epsilon(1e-12));
    for (std::size_t r = 0; r < split.test.size(); ++r) {
      const double want = (ds.x.at(split.test[r], j) - mean) / sd;
      CHECK(p.test.x.at(r, j) == doctest::Approx(want).epsilon(1e-5));
    }
    for (std::size_t r = 0; r < split.val.size(); ++r) {
      const double want = (ds.x.at(split.val[r], j) - mean) / sd;
      CHECK(p.val.x.at(r, j) == doctest::Approx(want).epsilon(1e-5));
    }
  }
  CHECK(p.train.size() + p.val.size() + p.test.size() == ds.size());
  CHECK(p.test.y[0] == ds.y[split.test[0]]);
}
