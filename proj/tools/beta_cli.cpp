// beta: pretrain a backbone, fine-tune the adapter, predict, and run the variant studies.

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "beta/analysis.hpp"
#include "beta/checkpoint.hpp"
#include "beta/config.hpp"
#include "beta/dataset.hpp"
#include "beta/inference.hpp"

namespace {

using namespace beta;

struct Options {
  std::string config, data, model, out, target, strategy, log;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k_paths, context_size, workers, replicates;
  std::vector<std::string> settings;
  std::string variants;
};

void add_common(CLI::App& cmd, Options& o) {
  cmd.add_option("--config", o.config, "run-config file (key = value under [section] headers)");
  cmd.add_option("--data", o.data, "CSV file with a header row");
  cmd.add_option("--model", o.model, "checkpoint to read");
  cmd.add_option("--out", o.out, "output file");
  cmd.add_option("--seed", o.seed, "run seed");
  cmd.add_option("--target", o.target, "label column of --data");
  cmd.add_option("--strategy", o.strategy, "context strategy: full, subsample, knn or bootstrap");
  cmd.add_option("--k-paths", o.k_paths, "encoder paths K");
  cmd.add_option("--context-size", o.context_size, "support size for training and prediction");
  cmd.add_option("--workers", o.workers, "worker threads; results do not depend on it");
  cmd.add_option("--set", o.settings, "override one config key: section.name=value")->take_all();
  cmd.add_option("--log", o.log, "epoch / step log file (default stderr)");
}

/// Defaults, then the config file, then --set, then the named flags.
RunConfig resolve(const Options& o) {
  RunConfig cfg;
  if (!o.config.empty()) apply_config_file(cfg, o.config);
  for (const auto& s : o.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (!o.target.empty()) cfg.target = o.target;
  if (!o.strategy.empty()) apply_setting(cfg, "inference.strategy", o.strategy);
  if (o.k_paths) cfg.finetune.encoder.n_paths = *o.k_paths;
  if (o.context_size) {
    cfg.finetune.context_size = *o.context_size;
    cfg.strategy.n_sub = *o.context_size;
    cfg.strategy.k = *o.context_size;
    cfg.context_sizes = {*o.context_size};
  }
  if (o.workers) cfg.workers = *o.workers;
  if (o.replicates) cfg.replicates = *o.replicates;
  if (!o.variants.empty()) apply_setting(cfg, "biasvar.variants", o.variants);

  cfg.pretrain.seed = cfg.seed;
  cfg.finetune.seed = cfg.seed;
  cfg.finetune.workers = cfg.workers;
  cfg.strategy.seed = cfg.seed;
  return cfg;
}

void log_config(const std::string& command, const RunConfig& cfg) {
  std::cerr << "# beta " << command << ": resolved config\n";
  std::ostringstream s;
  write_config(s, cfg);
  std::istringstream lines(s.str());
  for (std::string line; std::getline(lines, line);) std::cerr << "#   " << line << '\n';
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw std::invalid_argument(std::string("missing required flag ") + flag);
}

/// Epoch logs go to --log when given, otherwise to stderr.
class LogSink {
 public:
  explicit LogSink(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw std::runtime_error("cannot open log file '" + path + "'");
    }
  }
  std::ostream& get() { return file_ ? *file_ : std::cerr; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

char separator_for(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0 ? ',' : '\t';
}

PreparedData load_data(const RunConfig& cfg, const std::string& path) {
  const Dataset ds = ingest_csv_file(path, cfg.target);
  return prepare(ds, split_rows(ds.size(), cfg.seed, cfg.test_fraction, cfg.val_fraction));
}

BackboneWeights<float> backbone_for_study(const RunConfig& cfg, const std::string& model, std::ostream& log) {
  if (!model.empty()) return load_checkpoint(model).backbone;
  std::cerr << "# no --model given: pretraining a backbone from the resolved config\n";
  return pretrain_backbone(cfg.backbone, cfg.prior, cfg.pretrain, &log);
}

std::vector<VariantSpec> variant_specs(const RunConfig& cfg, std::size_t d_max) {
  std::vector<VariantSpec> out;
  for (const auto& name : cfg.variants) {
    VariantSpec s = VariantSpec::make(parse_variant(name), cfg.context_sizes.front());
    const double lr = s.finetune.lr;
    s.finetune = cfg.finetune;
    if (s.kind == VariantKind::tabpfn_finetune) s.finetune.lr = lr;
    s.finetune.encoder.out = d_max;
    s.contexts = cfg.strategy.contexts;
    s.val_fraction = cfg.val_fraction;
    s.code_length = cfg.finetune.code_length;
    s.workers = cfg.workers;
    out.push_back(s);
  }
  return out;
}

int run_pretrain(const Options& o) {
  const RunConfig cfg = resolve(o);
  log_config("pretrain", cfg);
  require(o.out, "--out");
  LogSink log(o.log);
  const auto theta = pretrain_backbone(cfg.backbone, cfg.prior, cfg.pretrain, &log.get());
  save_checkpoint(o.out, theta);
  return 0;
}

int run_finetune(const Options& o) {
  RunConfig cfg = resolve(o);
  require(o.model, "--model");
  require(o.data, "--data");
  require(o.out, "--out");
  const auto ckpt = load_checkpoint(o.model);
  cfg.finetune.encoder.out = ckpt.backbone.config().d_max;
  log_config("finetune", cfg);
  const PreparedData data = load_data(cfg, o.data);
  LogSink log(o.log);
  const FinetuneResult result = finetune(ckpt.backbone, data.train, data.val, cfg.finetune, &log.get());
  std::cerr << "# best epoch " << result.best_epoch << '\n';
  save_checkpoint(o.out, ckpt.backbone, &result.model);
  return 0;
}

int run_predict(const Options& o) {
  const RunConfig cfg = resolve(o);
  log_config("predict", cfg);
  require(o.model, "--model");
  require(o.data, "--data");
  require(o.out, "--out");
  const auto ckpt = load_checkpoint(o.model);
  const PreparedData data = load_data(cfg, o.data);
  ContextStrategy strategy = cfg.strategy;
  strategy.validate();
  AggregationRule rule;
  rule.mode = cfg.aggregation;
  const Tensor<double> probs =
      ckpt.model ? bagged_predict(*ckpt.model, ckpt.backbone, data.train, data.test.x, strategy, rule, cfg.workers)
                 : pfn_predict(ckpt.backbone, data.train, data.test.x, strategy, rule, cfg.workers,
                               cfg.finetune.code_length);
  const char sep = separator_for(o.out);
  atomic_write(o.out, [&](std::ostream& out) { write_predictions(out, probs, sep); });
  return 0;
}

int run_biasvar(const Options& o) {
  const RunConfig cfg = resolve(o);
  log_config("biasvar", cfg);
  require(o.out, "--out");
  LogSink log(o.log);
  const auto theta = backbone_for_study(cfg, o.model, log.get());
  std::vector<StudyDataset> datasets;
  if (!o.data.empty()) {
    const Dataset ds = ingest_csv_file(o.data, cfg.target);
    const PreparedData p = prepare(ds, split_rows(ds.size(), cfg.seed, cfg.test_fraction, 0.0));
    datasets.push_back({o.data, p.train, p.test});
  } else {
    datasets = study_datasets(cfg.study_datasets, cfg.study_rows, cfg.seed);
  }
  const auto reports = run_variant_study(variant_specs(cfg, theta.config().d_max), datasets, cfg.context_sizes,
                                         cfg.replicates, cfg.seed, theta, &std::cerr);
  atomic_write(o.out, [&](std::ostream& out) { write_report(out, reports); });
  return 0;
}

double accuracy(const Tensor<double>& probs, std::span<const int> labels) {
  const auto pred = argmax_rows(probs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += static_cast<int>(pred[i]) == labels[i];
  return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

// Test accuracy of each variant on each task. Timings go to stderr so the table stays reproducible.
int run_bench(const Options& o) {
  const RunConfig cfg = resolve(o);
  log_config("bench", cfg);
  require(o.out, "--out");
  LogSink log(o.log);
  const auto theta = backbone_for_study(cfg, o.model, log.get());
  std::vector<StudyDataset> tasks;
  if (!o.data.empty()) {
    const Dataset ds = ingest_csv_file(o.data, cfg.target);
    const PreparedData p = prepare(ds, split_rows(ds.size(), cfg.seed, cfg.test_fraction, 0.0));
    tasks.push_back({o.data, p.train, p.test});
  } else {
    for (const auto& t : adaptation_tasks(cfg.seed, cfg.study_rows)) tasks.push_back(make_synthetic(t));
  }
  std::ostringstream table;
  table << "task\tvariant\tn_train\tn_test\td\tclasses\taccuracy\n" << std::setprecision(6);
  for (const auto& task : tasks) {
    for (const auto& spec : variant_specs(cfg, theta.config().d_max)) {
      const auto t0 = std::chrono::steady_clock::now();
      std::string acc;
      try {
        std::ostringstream s;
        s << std::setprecision(6) << accuracy(run_variant(spec, theta, task.train, task.test.x, cfg.seed), task.test.y);
        acc = s.str();
      } catch (const std::invalid_argument& e) {
        std::cerr << "# " << task.name << " " << variant_name(spec.kind) << ": " << e.what() << '\n';
        acc = "NA";
      }
      const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << "# " << task.name << " " << variant_name(spec.kind) << " " << acc << " (" << sec << " s)\n";
      table << task.name << '\t' << variant_name(spec.kind) << '\t' << task.train.size() << '\t' << task.test.size()
            << '\t' << task.train.width() << '\t' << task.train.n_classes << '\t' << acc << '\n';
    }
  }
  atomic_write(o.out, [&](std::ostream& out) { out << table.str(); });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-context tabular classification with a frozen backbone and a bagged adapter"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  Options o;
  auto* pretrain = app.add_subcommand("pretrain", "pretrain the backbone on the synthetic prior");
  auto* tune = app.add_subcommand("finetune", "train the encoder paths against a frozen backbone");
  auto* predict = app.add_subcommand("predict", "write class probabilities for the test split");
  auto* biasvar = app.add_subcommand("biasvar", "bias-variance study of the inference variants");
  auto* bench = app.add_subcommand("bench", "test accuracy of the variants on the downstream tasks");
  for (auto* cmd : {pretrain, tune, predict, biasvar, bench}) add_common(*cmd, o);
  for (auto* cmd : {biasvar, bench}) {
    cmd->add_option("--variants", o.variants, "comma-separated: full, 1000, en16, knn, finetune, bagging, beta");
    cmd->add_option("--replicates", o.replicates, "training resamples M");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      app.exit(e);
      return 0;
    }
    std::cerr << "beta: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*pretrain) return run_pretrain(o);
    if (*tune) return run_finetune(o);
    if (*predict) return run_predict(o);
    if (*biasvar) return run_biasvar(o);
    if (*bench) return run_bench(o);
  } catch (const ConfigError& e) {
    std::cerr << "beta: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "beta: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
