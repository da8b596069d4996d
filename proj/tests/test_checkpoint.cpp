#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "beta/checkpoint.hpp"
#include "beta/ecoc.hpp"

using namespace beta;

namespace {

BackboneConfig small_config() {
  BackboneConfig cfg;
  cfg.d_max = 6;
  cfg.d_token = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.mlp_width = 12;
  cfg.dropout = 0.25;
  return cfg;
}

BetaModel small_model(HeadMode head, std::size_t classes) {
  EncoderConfig enc;
  enc.n_paths = 3;
  enc.hidden = 5;
  enc.out = small_config().d_max;
  enc.n_frequencies = 2;
  BetaModel m;
  m.stack = init_stack<float>(4, enc, 9);
  m.n_classes = classes;
  m.head = head;
  if (head == HeadMode::extended) {
    ExtendedHead h{{"head_ext.w", Tensor<float>({8, classes})}, {"head_ext.b", Tensor<float>({classes})}};
    for (std::size_t i = 0; i < h.w.value.size(); ++i) h.w.value[i] = 0.01f * static_cast<float>(i) - 0.1f;
    h.b.value[1] = 0.5f;
    m.extended = h;
  }
  if (head == HeadMode::ecoc) m.codebook = ecoc_build(classes, 3, 4);
  return m;
}

std::string serialize(const BackboneWeights<float>& w, const BetaModel* m = nullptr) {
  std::ostringstream out;
  write_checkpoint(out, w, m);
  return out.str();
}

Checkpoint parse(const std::string& bytes) {
  std::istringstream in(bytes);
  return read_checkpoint(in);
}

void set_u32(std::string& bytes, std::size_t offset, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes[offset + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
}

std::uint32_t get_u32(const std::string& bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  return v;
}

}  // namespace

TEST_CASE("file begins with the magic and version") {
  const std::string bytes = serialize(BackboneWeights<float>(small_config(), 1));
  CHECK(bytes.substr(0, 4) == "BPFN");
  CHECK(get_u32(bytes, 4) == checkpoint_version);
}

TEST_CASE("backbone round trip is exact") {
  const BackboneWeights<float> w(small_config(), 3);
  const std::string bytes = serialize(w);
  const Checkpoint c = parse(bytes);
  CHECK(c.backbone.config() == w.config());
  CHECK_FALSE(c.model.has_value());
  REQUIRE(c.backbone.parameters().size() == w.parameters().size());
  for (std::size_t i = 0; i < w.parameters().size(); ++i) {
    CHECK(c.backbone.parameters()[i].name == w.parameters()[i].name);
    CHECK(c.backbone.parameters()[i].value == w.parameters()[i].value);
  }
  CHECK(serialize(c.backbone) == bytes);
}

TEST_CASE("model round trip for every head") {
  const BackboneWeights<float> w(small_config(), 3);
  for (auto [head, classes] : {std::pair{HeadMode::native, std::size_t{3}}, std::pair{HeadMode::extended, std::size_t{4}},
                               std::pair{HeadMode::ecoc, std::size_t{5}}}) {
    CAPTURE(head_mode_name(head));
    const BetaModel m = small_model(head, classes);
    const std::string bytes = serialize(w, &m);
    const Checkpoint c = parse(bytes);
    REQUIRE(c.model.has_value());
    CHECK(c.model->head == head);
    CHECK(c.model->n_classes == classes);
    CHECK(c.model->stack.config == m.stack.config);
    CHECK(c.model->stack.first.w.value == m.stack.first.w.value);
    CHECK(c.model->stack.second.b.value == m.stack.second.b.value);
    CHECK(c.model->codebook == m.codebook);
    CHECK(c.model->extended.has_value() == m.extended.has_value());
    if (m.extended) CHECK(c.model->extended->w.value == m.extended->w.value);
    CHECK(serialize(c.backbone, &*c.model) == bytes);
  }
}

TEST_CASE("denormal, negative zero and large values survive") {
  BackboneWeights<float> w(small_config(), 3);
  auto& t = w.parameters()[0].value;
  t[0] = 1e-45f;
  t[1] = -0.0f;
  t[2] = 3.4e38f;
  const Checkpoint c = parse(serialize(w));
  CHECK(c.backbone.parameters()[0].value == t);
  CHECK(std::signbit(c.backbone.parameters()[0].value[1]));
}

TEST_CASE("corrupted length prefix is a truncation error") {
  const std::string good = serialize(BackboneWeights<float>(small_config(), 3));
  std::string bad = good;
  set_u32(bad, 8, get_u32(good, 8) + 1000000);  // config block length
  CHECK_THROWS_WITH_AS(parse(bad), doctest::Contains("truncated"), CheckpointError);

  // The first tensor name length follows the config block and the tensor count.
  const std::size_t name_at = 12 + get_u32(good, 8) + 4;
  bad = good;
  set_u32(bad, name_at, 0x7FFFFFFF);
  CHECK_THROWS_WITH_AS(parse(bad), doctest::Contains("truncated"), CheckpointError);

  for (std::size_t cut : {std::size_t{2}, std::size_t{7}, good.size() / 2, good.size() - 1}) {
    CAPTURE(cut);
    CHECK_THROWS_WITH_AS(parse(good.substr(0, cut)), doctest::Contains("truncated"), CheckpointError);
  }
}

TEST_CASE("bad magic, version and trailing bytes are rejected") {
  const std::string good = serialize(BackboneWeights<float>(small_config(), 3));
  std::string bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse(bad), CheckpointError);
  bad = good;
  set_u32(bad, 4, checkpoint_version + 1);
  CHECK_THROWS_WITH_AS(parse(bad), doctest::Contains("version"), CheckpointError);
  CHECK_THROWS_AS(parse(good + "x"), CheckpointError);
}

TEST_CASE("save, load, save gives identical files") {
  const auto dir = std::filesystem::temp_directory_path() / "beta_checkpoint_test";
  std::filesystem::create_directories(dir);
  const std::string a = (dir / "a.bpfn").string(), b = (dir / "b.bpfn").string();
  const BackboneWeights<float> w(small_config(), 11);
  const BetaModel m = small_model(HeadMode::ecoc, 6);
  save_checkpoint(a, w, &m);
  CHECK_FALSE(std::filesystem::exists(a + ".tmp"));
  const Checkpoint c = load_checkpoint(a);
  save_checkpoint(b, c.backbone, c.model ? &*c.model : nullptr);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(a) == slurp(b));
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.bpfn").string()), CheckpointError);
  std::filesystem::remove_all(dir);
}
