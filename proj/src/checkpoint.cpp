#include "hern/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace hern {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'H', 'E', 'R', 'N'};
constexpr std::uint8_t kDtypeF32 = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    str(name);
    u8(kDtypeF32);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u32(static_cast<std::uint32_t>(d));
    bytes(t.data(), t.size() * sizeof(float));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void bytes(void* p, std::size_t n) {
    if (n > in_.size() - pos_) throw IoError("checkpoint: truncated file");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > in_.size() - pos_) throw IoError("checkpoint: truncated file");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::pair<std::string, Tensor<float>> tensor() {
    std::string name = str();
    if (u8() != kDtypeF32) throw IoError("checkpoint: tensor '" + name + "' has unknown dtype");
    const std::uint32_t rank = u32();
    if (rank > 8) throw IoError("checkpoint: tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = u32();
    const std::size_t n = shape_elements(shape);
    if (n > (in_.size() - pos_) / sizeof(float)) throw IoError("checkpoint: truncated file");
    std::vector<float> data(n);
    bytes(data.data(), n * sizeof(float));
    return {std::move(name), Tensor<float>(std::move(shape), std::move(data))};
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

const std::string kParamPrefix = "param/";
const std::string kMomentPrefix = "adam.m/";
const std::string kVelocityPrefix = "adam.v/";

}  // namespace

AdamState AdamState::zeros_like(const ModelParams<float>& params) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

Checkpoint Checkpoint::fresh(const ModelConfig& config, std::uint64_t init_seed) {
  Checkpoint c;
  c.config = config;
  c.params = init_params(config, init_seed);
  c.optimizer = AdamState::zeros_like(c.params);
  return c;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(ckpt.format_version);
  const nlohmann::json header{{"config", to_json(ckpt.config)},
                              {"stage_index", ckpt.stage_index},
                              {"epoch_index", ckpt.epoch_index},
                              {"adam_step", ckpt.optimizer.step}};
  w.str(header.dump());
  w.u32(static_cast<std::uint32_t>(ckpt.params.size() + ckpt.optimizer.m.size() +
                                   ckpt.optimizer.v.size()));
  for (const auto& [name, t] : ckpt.params) w.tensor(kParamPrefix + name, t);
  for (const auto& [name, t] : ckpt.optimizer.m) w.tensor(kMomentPrefix + name, t);
  for (const auto& [name, t] : ckpt.optimizer.v) w.tensor(kVelocityPrefix + name, t);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw IoError("checkpoint: bad magic bytes");
  Checkpoint c;
  c.format_version = r.u32();
  if (c.format_version != Checkpoint::kFormatVersion) {
    throw IoError("checkpoint: format version " + std::to_string(c.format_version) +
                  " is not supported (expected " + std::to_string(Checkpoint::kFormatVersion) +
                  ")");
  }
  try {
    const auto header = nlohmann::json::parse(r.str());
    c.config = model_config_from_json(header.at("config"));
    c.stage_index = header.at("stage_index").get<int>();
    c.epoch_index = header.at("epoch_index").get<int>();
    c.optimizer.step = header.at("adam_step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = r.tensor();
    if (name.starts_with(kParamPrefix)) {
      c.params.add(name.substr(kParamPrefix.size()), std::move(t));
    } else if (name.starts_with(kMomentPrefix)) {
      c.optimizer.m.add(name.substr(kMomentPrefix.size()), std::move(t));
    } else if (name.starts_with(kVelocityPrefix)) {
      c.optimizer.v.add(name.substr(kVelocityPrefix.size()), std::move(t));
    } else {
      throw IoError("checkpoint: unexpected tensor '" + name + "'");
    }
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes after the last tensor");
  check_params(c.params, c.config);
  check_params(c.optimizer.m, c.config);
  check_params(c.optimizer.v, c.config);
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  // `path` is replaced atomically via a temporary sibling.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  Checkpoint c = deserialize_checkpoint(bytes);
  if (expected) check_params(c.params, *expected);
  return c;
}

}  // namespace hern
