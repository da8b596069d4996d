#include "beta/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

namespace beta {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  T out{};
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("config '" + key + "': cannot parse '" + text + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config '" + key + "': expected true or false, got '" + text + "'");
}

template <class T>
std::string show(T v) {
  char tmp[64];
  auto res = std::to_chars(tmp, tmp + sizeof tmp, v);
  return std::string(tmp, res.ptr);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Access>
Field number(std::string key, Access access) {
  return {key,
          [key, access](RunConfig& c, const std::string& v) { access(c) = parse_value<T>(key, v); },
          [access](const RunConfig& c) { return show(access(const_cast<RunConfig&>(c))); }};
}

template <class Access>
Field flag(std::string key, Access access) {
  return {key, [key, access](RunConfig& c, const std::string& v) { access(c) = parse_bool(key, v); },
          [access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

#define BETA_FIELD(T, key, member) number<T>(key, [](RunConfig& c) -> T& { return c.member; })
#define BETA_FLAG(key, member) flag(key, [](RunConfig& c) -> bool& { return c.member; })

const std::vector<Field>& fields() {
  using S = std::size_t;
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        BETA_FIELD(std::uint64_t, "run.seed", seed),
        BETA_FIELD(S, "run.workers", workers),
        {"data.target", [](RunConfig& c, const std::string& v) { c.target = v; },
         [](const RunConfig& c) { return c.target; }},
        BETA_FIELD(double, "data.test_fraction", test_fraction),
        BETA_FIELD(double, "data.val_fraction", val_fraction),
        BETA_FIELD(S, "backbone.d_max", backbone.d_max),
        BETA_FIELD(S, "backbone.d_token", backbone.d_token),
        BETA_FIELD(S, "backbone.n_layers", backbone.n_layers),
        BETA_FIELD(S, "backbone.n_heads", backbone.n_heads),
        BETA_FIELD(S, "backbone.c_max", backbone.c_max),
        BETA_FIELD(S, "backbone.mlp_width", backbone.mlp_width),
        BETA_FIELD(double, "backbone.dropout", backbone.dropout),
        BETA_FIELD(S, "prior.d_lo", prior.d_lo),
        BETA_FIELD(S, "prior.d_hi", prior.d_hi),
        BETA_FIELD(S, "prior.c_lo", prior.c_lo),
        BETA_FIELD(S, "prior.c_hi", prior.c_hi),
        BETA_FIELD(S, "prior.n_support_lo", prior.n_support_lo),
        BETA_FIELD(S, "prior.n_support_hi", prior.n_support_hi),
        BETA_FIELD(S, "prior.n_query_lo", prior.n_query_lo),
        BETA_FIELD(S, "prior.n_query_hi", prior.n_query_hi),
        BETA_FIELD(double, "prior.gaussian_weight", prior.gaussian_weight),
        BETA_FIELD(double, "prior.mlp_weight", prior.mlp_weight),
        BETA_FIELD(double, "prior.noise", prior.noise),
        BETA_FIELD(double, "prior.separation", prior.separation),
        BETA_FIELD(S, "prior.max_informative", prior.max_informative),
        BETA_FIELD(S, "prior.teacher_hidden", prior.teacher_hidden),
        BETA_FLAG("prior.standardize", prior.standardize),
        BETA_FIELD(S, "pretrain.steps", pretrain.steps),
        BETA_FIELD(S, "pretrain.episodes_per_step", pretrain.episodes_per_step),
        BETA_FIELD(double, "pretrain.lr", pretrain.lr),
        BETA_FIELD(double, "pretrain.weight_decay", pretrain.weight_decay),
        BETA_FIELD(S, "pretrain.warmup", pretrain.warmup),
        BETA_FIELD(double, "pretrain.grad_clip", pretrain.grad_clip),
        BETA_FIELD(S, "pretrain.log_every", pretrain.log_every),
        BETA_FIELD(double, "finetune.lr", finetune.lr),
        BETA_FIELD(double, "finetune.weight_decay", finetune.weight_decay),
        BETA_FIELD(S, "finetune.batch_size", finetune.batch_size),
        BETA_FIELD(S, "finetune.context_size", finetune.context_size),
        BETA_FIELD(S, "finetune.max_epochs", finetune.max_epochs),
        BETA_FIELD(S, "finetune.patience", finetune.patience),
        BETA_FIELD(S, "finetune.steps_per_epoch", finetune.steps_per_epoch),
        BETA_FIELD(double, "finetune.grad_clip", finetune.grad_clip),
        {"finetune.wide_head",
         [](RunConfig& c, const std::string& v) {
           try {
             c.finetune.wide_head = parse_head_mode(v);
           } catch (const std::invalid_argument& e) {
             throw ConfigError(std::string("config 'finetune.wide_head': ") + e.what());
           }
         },
         [](const RunConfig& c) { return std::string(head_mode_name(c.finetune.wide_head)); }},
        BETA_FLAG("finetune.extended_head", finetune.extended_head),
        BETA_FIELD(S, "finetune.code_length", finetune.code_length),
        BETA_FIELD(S, "encoder.n_paths", finetune.encoder.n_paths),
        BETA_FIELD(S, "encoder.hidden", finetune.encoder.hidden),
        BETA_FLAG("encoder.periodic", finetune.encoder.periodic),
        BETA_FIELD(S, "encoder.n_frequencies", finetune.encoder.n_frequencies),
        BETA_FIELD(double, "encoder.frequency_scale", finetune.encoder.frequency_scale),
        BETA_FIELD(S, "encoder.periodic_max_features", finetune.encoder.periodic_max_features),
        BETA_FIELD(double, "encoder.dropout", finetune.encoder.dropout),
        {"inference.strategy",
         [](RunConfig& c, const std::string& v) {
           try {
             c.strategy.kind = parse_strategy(v);
           } catch (const std::invalid_argument& e) {
             throw ConfigError(std::string("config 'inference.strategy': ") + e.what());
           }
         },
         [](const RunConfig& c) { return std::string(strategy_name(c.strategy.kind)); }},
        BETA_FIELD(S, "inference.n_sub", strategy.n_sub),
        BETA_FIELD(S, "inference.k", strategy.k),
        BETA_FIELD(S, "inference.contexts", strategy.contexts),
        {"inference.aggregation",
         [](RunConfig& c, const std::string& v) {
           if (v == "uniform") c.aggregation = AggregationRule::Mode::uniform;
           else if (v == "weighted") c.aggregation = AggregationRule::Mode::weighted;
           else throw ConfigError("config 'inference.aggregation': expected uniform or weighted, got '" + v + "'");
         },
         [](const RunConfig& c) {
           return std::string(c.aggregation == AggregationRule::Mode::uniform ? "uniform" : "weighted");
         }},
        {"biasvar.variants", [](RunConfig& c, const std::string& v) { c.variants = split_list(v); },
         [](const RunConfig& c) {
           std::string s;
           for (const auto& v : c.variants) s += (s.empty() ? "" : ",") + v;
           return s;
         }},
        BETA_FIELD(S, "biasvar.replicates", replicates),
        {"biasvar.context_sizes",
         [](RunConfig& c, const std::string& v) {
           c.context_sizes.clear();
           for (const auto& item : split_list(v)) c.context_sizes.push_back(parse_value<S>("biasvar.context_sizes", item));
         },
         [](const RunConfig& c) {
           std::string s;
           for (auto v : c.context_sizes) s += (s.empty() ? "" : ",") + show(v);
           return s;
         }},
        BETA_FIELD(S, "biasvar.datasets", study_datasets),
        BETA_FIELD(S, "biasvar.rows", study_rows),
    };
    return f;
  }();
  return table;
}

#undef BETA_FIELD
#undef BETA_FLAG

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(cfg, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config(RunConfig& cfg, std::istream& in) {
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string name = trim(line.substr(0, eq));
    const std::string key = section.empty() ? name : section + "." + name;
    try {
      apply_setting(cfg, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  apply_config(cfg, in);
}

void write_config(std::ostream& out, const RunConfig& cfg) {
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace beta
