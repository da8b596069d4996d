#include "beta/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <ostream>
#include <sstream>
#include <vector>

namespace beta {
namespace {

constexpr char magic[4] = {'B', 'P', 'F', 'N'};

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::string format_double(double v) {
  char tmp[64];
  auto res = std::to_chars(tmp, tmp + sizeof tmp, v);
  return std::string(tmp, res.ptr);
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  const char* take(std::size_t n, const char* what) {
    if (n > data_.size() - pos_) {
      throw CheckpointError("checkpoint truncated while reading " + std::string(what) + " (needs " +
                            std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", " +
                            std::to_string(data_.size() - pos_) + " remain)");
    }
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4, what));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(8, what));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) { return std::string(take(n, what), n); }
  bool done() const noexcept { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

void put_tensor(std::string& buf, const std::string& name, const Tensor<float>& t) {
  put_u32(buf, static_cast<std::uint32_t>(name.size()));
  buf += name;
  put_u32(buf, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u64(buf, d);
  for (float v : t.values()) put_u32(buf, std::bit_cast<std::uint32_t>(v));
}

std::vector<std::pair<std::string, const Tensor<float>*>> named_tensors(const BackboneWeights<float>& backbone,
                                                                        const BetaModel* model) {
  std::vector<std::pair<std::string, const Tensor<float>*>> out;
  for (const auto& p : backbone.parameters()) out.emplace_back(p.name, &p.value);
  if (model) {
    for (const auto* p : model->stack.parameters()) out.emplace_back(p->name, &p->value);
    if (model->extended) {
      out.emplace_back(model->extended->w.name, &model->extended->w.value);
      out.emplace_back(model->extended->b.name, &model->extended->b.value);
    }
  }
  return out;
}

std::string config_block(const BackboneWeights<float>& backbone, const BetaModel* model) {
  const auto& c = backbone.config();
  std::ostringstream s;
  s << "backbone.d_max=" << c.d_max << "\nbackbone.d_token=" << c.d_token << "\nbackbone.n_layers=" << c.n_layers
    << "\nbackbone.n_heads=" << c.n_heads << "\nbackbone.c_max=" << c.c_max << "\nbackbone.mlp_width=" << c.mlp_width
    << "\nbackbone.dropout=" << format_double(c.dropout) << '\n';
  if (model) {
    const auto& e = model->stack.config;
    s << "model.n_classes=" << model->n_classes << "\nmodel.head=" << head_mode_name(model->head)
      << "\nmodel.n_features=" << model->stack.n_features << "\nencoder.n_paths=" << e.n_paths
      << "\nencoder.hidden=" << e.hidden << "\nencoder.out=" << e.out << "\nencoder.periodic=" << (e.periodic ? 1 : 0)
      << "\nencoder.n_frequencies=" << e.n_frequencies << "\nencoder.frequency_scale=" << format_double(e.frequency_scale)
      << "\nencoder.periodic_max_features=" << e.periodic_max_features
      << "\nencoder.dropout=" << format_double(e.dropout) << '\n';
    if (model->codebook) {
      s << "ecoc.length=" << model->codebook->length << "\necoc.bits=";
      for (auto b : model->codebook->bits) s << static_cast<int>(b);
      s << '\n';
    }
  }
  return s.str();
}

std::map<std::string, std::string> parse_block(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("checkpoint config line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw CheckpointError("checkpoint config lacks '" + key + "'");
  return it->second;
}

std::size_t as_size(const std::map<std::string, std::string>& kv, const std::string& key) {
  const std::string& v = require(kv, key);
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw CheckpointError("checkpoint config '" + key + "' is not a count: " + v);
  }
  return out;
}

double as_double(const std::map<std::string, std::string>& kv, const std::string& key) {
  const std::string& v = require(kv, key);
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw CheckpointError("checkpoint config '" + key + "' is not a number: " + v);
  }
  return out;
}

void fill(Reader& r, const std::string& expected_name, Tensor<float>& target) {
  const std::uint32_t name_len = r.u32("tensor name length");
  const std::string name = r.bytes(name_len, "tensor name");
  if (name != expected_name) {
    throw CheckpointError("checkpoint tensor '" + name + "' found where '" + expected_name + "' was expected");
  }
  const std::uint32_t rank = r.u32("tensor rank");
  Shape shape(rank);
  for (auto& d : shape) d = r.u64("tensor dims");
  if (shape != target.shape()) {
    throw CheckpointError("checkpoint tensor '" + name + "' has shape " + shape_to_string(shape) + ", expected " +
                          shape_to_string(target.shape()));
  }
  const char* p = r.take(4 * target.size(), "tensor values");
  for (std::size_t i = 0; i < target.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[4 * i + b])) << (8 * b);
    target[i] = std::bit_cast<float>(bits);
  }
}

}  // namespace

void write_checkpoint(std::ostream& out, const BackboneWeights<float>& backbone, const BetaModel* model) {
  std::string buf(magic, 4);
  put_u32(buf, checkpoint_version);
  const std::string block = config_block(backbone, model);
  put_u32(buf, static_cast<std::uint32_t>(block.size()));
  buf += block;
  const auto tensors = named_tensors(backbone, model);
  put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) put_tensor(buf, name, *t);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("failed to write checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  Reader r(std::string{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
  if (std::memcmp(r.take(4, "magic"), magic, 4) != 0) throw CheckpointError("not a checkpoint: bad magic bytes");
  const std::uint32_t version = r.u32("version");
  if (version != checkpoint_version) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (this build reads " +
                          std::to_string(checkpoint_version) + ")");
  }
  const std::uint32_t block_len = r.u32("config length");
  const auto kv = parse_block(r.bytes(block_len, "config block"));

  BackboneConfig bc;
  bc.d_max = as_size(kv, "backbone.d_max");
  bc.d_token = as_size(kv, "backbone.d_token");
  bc.n_layers = as_size(kv, "backbone.n_layers");
  bc.n_heads = as_size(kv, "backbone.n_heads");
  bc.c_max = as_size(kv, "backbone.c_max");
  bc.mlp_width = as_size(kv, "backbone.mlp_width");
  bc.dropout = as_double(kv, "backbone.dropout");
  try {
    bc.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint backbone config is invalid: ") + e.what());
  }
  Checkpoint ck{BackboneWeights<float>(bc), std::nullopt};

  if (kv.count("model.n_classes")) {
    EncoderConfig ec;
    ec.n_paths = as_size(kv, "encoder.n_paths");
    ec.hidden = as_size(kv, "encoder.hidden");
    ec.out = as_size(kv, "encoder.out");
    ec.periodic = as_size(kv, "encoder.periodic") != 0;
    ec.n_frequencies = as_size(kv, "encoder.n_frequencies");
    ec.frequency_scale = as_double(kv, "encoder.frequency_scale");
    ec.periodic_max_features = as_size(kv, "encoder.periodic_max_features");
    ec.dropout = as_double(kv, "encoder.dropout");
    BetaModel m;
    m.n_classes = as_size(kv, "model.n_classes");
    try {
      m.head = parse_head_mode(require(kv, "model.head"));
      m.stack = init_stack<float>(as_size(kv, "model.n_features"), ec, 0);
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(std::string("checkpoint model config is invalid: ") + e.what());
    }
    if (m.head == HeadMode::extended) {
      m.extended = ExtendedHead{{"head_ext.w", Tensor<float>({bc.d_token, m.n_classes}), true},
                                {"head_ext.b", Tensor<float>({m.n_classes}), true}};
    }
    if (m.head == HeadMode::ecoc) {
      EcocCodebook code;
      code.n_classes = m.n_classes;
      code.length = as_size(kv, "ecoc.length");
      const std::string& bits = require(kv, "ecoc.bits");
      if (bits.size() != code.n_classes * code.length) throw CheckpointError("checkpoint ECOC bits have the wrong size");
      for (char b : bits) {
        if (b != '0' && b != '1') throw CheckpointError("checkpoint ECOC bits must be 0 or 1");
        code.bits.push_back(static_cast<std::uint8_t>(b - '0'));
      }
      m.codebook = std::move(code);
    }
    ck.model = std::move(m);
  }

  std::vector<std::pair<std::string, Tensor<float>*>> targets;
  for (auto& p : ck.backbone.parameters()) targets.emplace_back(p.name, &p.value);
  if (ck.model) {
    for (auto* p : ck.model->stack.parameters()) targets.emplace_back(p->name, &p->value);
    if (ck.model->extended) {
      targets.emplace_back(ck.model->extended->w.name, &ck.model->extended->w.value);
      targets.emplace_back(ck.model->extended->b.name, &ck.model->extended->b.value);
    }
  }
  const std::uint32_t count = r.u32("tensor count");
  if (count != targets.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, its config needs " +
                          std::to_string(targets.size()));
  }
  for (auto& [name, t] : targets) fill(r, name, *t);
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes after the last tensor");
  return ck;
}

void atomic_write(const std::string& path, const std::function<void(std::ostream&)>& write) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    write(out);
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw std::runtime_error("failed writing '" + tmp + "'");
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw std::runtime_error("cannot move '" + tmp + "' to '" + path + "'");
  }
}

void save_checkpoint(const std::string& path, const BackboneWeights<float>& backbone, const BetaModel* model) {
  atomic_write(path, [&](std::ostream& out) { write_checkpoint(out, backbone, model); });
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace beta
