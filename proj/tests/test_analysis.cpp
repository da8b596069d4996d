#include <doctest.h>

#include <cmath>
#include <sstream>

#include "beta/analysis.hpp"
#include "fixtures.hpp"

using namespace beta;
using testing::tiny_backbone;

namespace {

StudyDataset small_task(std::size_t d, std::size_t classes, std::uint64_t seed) {
  SyntheticTask t;
  t.n = 150;
  t.d = d;
  t.classes = classes;
  t.informative = std::min<std::size_t>(d, 3);
  t.separation = 1.5;
  t.seed = seed;
  t.name = "small";
  return make_synthetic(t);
}

VariantSpec quick(VariantKind kind) {
  VariantSpec s = VariantSpec::make(kind, 40);
  s.contexts = 4;
  s.shuffles = 3;
  s.finetune.batch_size = 32;
  s.finetune.max_epochs = 2;
  s.finetune.encoder.n_paths = 2;
  s.finetune.encoder.hidden = 8;
  s.finetune.encoder.out = tiny_backbone().config().d_max;
  s.finetune.encoder.n_frequencies = 2;
  return s;
}

void check_rows(const Tensor<double>& p) {
  for (std::size_t i = 0; i < p.shape()[0]; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < p.shape()[1]; ++j) s += p.at(i, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

}  // namespace

TEST_CASE("two opposite replicates decompose by hand") {
  auto rep = decompose({Tensor<double>::matrix(1, 2, {1, 0}), Tensor<double>::matrix(1, 2, {0, 1})}, std::vector<int>{0});
  CHECK(rep.variance == 0.5);
  CHECK(rep.bias2 == 0.5);
  CHECK(rep.gen_error == 1.0);
  CHECK(rep.replicates == 2);
}

TEST_CASE("identical replicates have no variance") {
  auto p = Tensor<double>::matrix(2, 3, {0.1, 0.7, 0.2, 0.3, 0.3, 0.4});
  auto rep = decompose({p, p, p}, std::vector<int>{1, 2});
  CHECK(rep.variance == 0.0);
  CHECK(rep.gen_error == doctest::Approx(rep.bias2).epsilon(1e-15));
  CHECK_THROWS_AS(decompose({p}, std::vector<int>{1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(decompose({p, p}, std::vector<int>{1}), ShapeError);
}

TEST_CASE("decomposition identity on random predictions") {
  SplitMix64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 2 + rng.index(10), n = 1 + rng.index(20), c = 2 + rng.index(5);
    std::vector<Tensor<double>> preds;
    for (std::size_t r = 0; r < m; ++r) {
      Tensor<double> t({n, c});
      for (std::size_t i = 0; i < n; ++i) {
        double z = 0;
        for (std::size_t j = 0; j < c; ++j) z += t.at(i, j) = rng.uniform();
        for (std::size_t j = 0; j < c; ++j) t.at(i, j) /= z;
      }
      preds.push_back(t);
    }
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.index(c));
    auto rep = decompose(preds, y);
    CHECK(std::abs(rep.gen_error - rep.bias2 - rep.variance) <= 1e-6);
    CHECK(rep.bias2 >= 0);
    CHECK(rep.variance >= 0);
  }
}

TEST_CASE("a deterministic variant on identical training sets has zero variance") {
  auto task = small_task(5, 2, 1);
  auto spec = quick(VariantKind::tabpfn_full);
  auto rep = bias_variance_estimate(spec, tiny_backbone(), task.train, task.test, 3, 5, false);
  CHECK(rep.variance == 0.0);
  CHECK(rep.context_size == task.train.size());
  CHECK_THROWS_AS(bias_variance_estimate(spec, tiny_backbone(), task.train, task.test, 1, 5), std::invalid_argument);
}

TEST_CASE("every variant yields test distributions") {
  auto task = small_task(12, 3, 2);  // wider than the tiny backbone
  for (auto kind : {VariantKind::tabpfn_full, VariantKind::tabpfn_1000, VariantKind::tabpfn_en16,
                    VariantKind::tabpfn_knn, VariantKind::tabpfn_finetune, VariantKind::tabpfn_bagging,
                    VariantKind::beta}) {
    CAPTURE(variant_name(kind));
    auto p = run_variant(quick(kind), tiny_backbone(), task.train, task.test.x, 3);
    CHECK(p.shape() == Shape{task.test.size(), 3});
    check_rows(p);
  }
}

TEST_CASE("bias-variance reports are reproducible across worker counts") {
  auto task = small_task(4, 2, 3);
  auto spec = quick(VariantKind::tabpfn_bagging);
  auto a = bias_variance_estimate(spec, tiny_backbone(), task.train, task.test, 4, 9);
  spec.workers = 3;
  auto b = bias_variance_estimate(spec, tiny_backbone(), task.train, task.test, 4, 9);
  CHECK(a.variance == b.variance);
  CHECK(a.bias2 == b.bias2);
  CHECK(std::abs(a.gen_error - a.bias2 - a.variance) <= 1e-6);
  CHECK(a.variance > 0);
}

TEST_CASE("variant study table") {
  std::vector<StudyDataset> data{small_task(4, 2, 4), small_task(3, 2, 5)};
  data[1].name = "other";
  auto reports = run_variant_study({quick(VariantKind::tabpfn_1000), quick(VariantKind::tabpfn_bagging)}, data,
                                   {20, 40}, 2, 1, tiny_backbone());
  REQUIRE(reports.size() == 8);
  CHECK(reports[0].variant == "tabpfn-1000");
  CHECK(reports[1].context_size == 40);
  CHECK(reports[2].dataset == "other");
  CHECK(reports[7].variant == "tabpfn-bagging");
  for (const auto& r : reports) CHECK(std::abs(r.gen_error - r.bias2 - r.variance) <= 1e-6);

  std::ostringstream out;
  write_report(out, {reports[0]});
  std::string header;
  std::getline(std::istringstream(out.str()) >> std::ws, header);
  CHECK(header == "variant\tdataset\tcontext_size\tM\tbias2\tvariance\tgen_error");
  CHECK(out.str().find("tabpfn-1000\tsmall\t20\t2\t") != std::string::npos);
}

TEST_CASE("variant names and defaults") {
  CHECK(parse_variant("bagging") == VariantKind::tabpfn_bagging);
  CHECK(parse_variant("tabpfn-en16") == VariantKind::tabpfn_en16);
  CHECK(parse_variant("1000") == VariantKind::tabpfn_1000);
  CHECK(parse_variant("beta") == VariantKind::beta);
  CHECK_THROWS_AS(parse_variant("tabpfn"), std::invalid_argument);
  CHECK(VariantSpec::make(VariantKind::tabpfn_finetune).finetune.lr == 1e-5);
  CHECK(VariantSpec::make(VariantKind::beta).finetune.lr == 0.003);
  CHECK(VariantSpec::make(VariantKind::tabpfn_bagging).contexts == 16);
  CHECK(VariantSpec::make(VariantKind::tabpfn_en16).shuffles == 16);
}

TEST_CASE("synthetic tasks are standardized on train rows and deterministic") {
  SyntheticTask t;
  t.n = 500;
  t.d = 7;
  t.classes = 4;
  t.informative = 3;
  t.informative_offset = 4;
  t.seed = 8;
  auto a = make_synthetic(t);
  CHECK(a.train.size() == 400);
  CHECK(a.test.size() == 100);
  for (std::size_t j = 0; j < 7; ++j) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 400; ++i) m += a.train.x.at(i, j);
    m /= 400;
    for (std::size_t i = 0; i < 400; ++i) v += std::pow(a.train.x.at(i, j) - m, 2);
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::sqrt(v / 400) == doctest::Approx(1.0).epsilon(1e-4));
  }
  auto b = make_synthetic(t);
  CHECK(a.train.x == b.train.x);
  CHECK(a.test.y == b.test.y);
  t.kind = SyntheticTask::Kind::teacher;
  auto teacher = make_synthetic(t);
  std::vector<int> counts(4);
  for (int y : teacher.train.y) counts[y]++;
  for (int c : counts) CHECK(c > 0);
  t.informative_offset = 5;
  CHECK_THROWS_AS(make_synthetic(t), std::invalid_argument);
}

TEST_CASE("adaptation tasks match their descriptions") {
  auto tasks = adaptation_tasks(1);
  REQUIRE(tasks.size() == 4);
  CHECK(tasks[0].d == 150);
  CHECK(tasks[1].d == 5000);
  CHECK(tasks[2].kind == SyntheticTask::Kind::teacher);
  CHECK(tasks[3].classes == 15);
  for (const auto& t : tasks) CHECK(t.n == 2000);
  auto studies = study_datasets(10, 2000, 3);
  CHECK(studies.size() == 10);
  for (const auto& s : studies) CHECK(s.train.size() + s.test.size() == 2000);
}
