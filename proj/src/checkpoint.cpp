#include "p2t/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include "json.hpp"

namespace p2t {

namespace {

constexpr char kMagic[8] = {'P', '2', 'T', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }
  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  template <typename U>
  void scalar(U v) {
    bytes(&v, sizeof(U));
  }
  void string(const std::string& s) {
    scalar<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw IoError("write failed for " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path.string());
  }
  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (!in_) throw IoError(path_.string() + ": truncated checkpoint");
  }
  template <typename U>
  U scalar() {
    U v;
    bytes(&v, sizeof(U));
    return v;
  }
  std::string string(std::size_t limit) {
    const auto n = scalar<std::uint32_t>();
    if (n > limit) throw IoError(path_.string() + ": implausible string length " + std::to_string(n));
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, ModelState<float>& model) {
  Writer w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.scalar<std::uint32_t>(kCheckpointVersion);
  const nlohmann::json manifest{{"format_version", kCheckpointVersion},
                                {"seed", model.seed},
                                {"config", nlohmann::json::parse(to_json(model.config))}};
  w.string(manifest.dump());
  const auto params = model.parameters();
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.string(p->name);
    const auto& shape = p->value.shape();
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) w.scalar<std::uint64_t>(e);
    w.bytes(p->value.data().data(), p->value.numel() * sizeof(float));
  }
  w.finish(path);
}

ModelState<float> load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError(path.string() + ": not a checkpoint file");
  const auto version = r.scalar<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw IoError(path.string() + ": unsupported format version " + std::to_string(version));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(r.string(1u << 24));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed manifest: " + e.what());
  }
  const auto cfg = model_config_from_json(manifest.at("config").dump());
  auto model = build_model<float>(cfg, manifest.at("seed").get<std::uint64_t>());

  std::map<std::string, Parameter<float>*> by_name;
  for (auto* p : model.parameters()) by_name.emplace(p->name, p);
  const auto count = r.scalar<std::uint32_t>();
  if (count != by_name.size())
    throw IoError(path.string() + ": expected " + std::to_string(by_name.size()) + " parameters, found " +
                  std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.string(4096);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError(path.string() + ": unexpected parameter '" + name + "'");
    const auto rank = r.scalar<std::uint32_t>();
    if (rank > 8) throw IoError(path.string() + ": implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.scalar<std::uint64_t>());
    auto& p = *it->second;
    if (shape != p.value.shape())
      throw IoError(path.string() + ": parameter '" + name + "' has shape " + to_string(shape) + ", expected " +
                    to_string(p.value.shape()));
    r.bytes(p.value.data().data(), p.value.numel() * sizeof(float));
    by_name.erase(it);
  }
  if (!r.at_end()) throw IoError(path.string() + ": trailing bytes after parameter table");
  return model;
}

}  // namespace p2t
