#include "lilac/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>

#include "lilac/error.hpp"

namespace lilac {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'L', 'L', 'C', 'K'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename T>
  T get(const char* what) {
    T v;
    take(&v, sizeof(T), what);
    return v;
  }
  void take(void* out, std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw IntegrityError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                           std::to_string(pos_));
    }
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(ckpt.kind));
  const std::string meta = ckpt.metadata.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.put_bytes(meta.data(), meta.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xffff) throw ContractError("tensor name too long: " + t.name);
    if (t.shape.size() > 0xff) throw ContractError("tensor rank too large: " + t.name);
    if (shape_numel(t.shape) != t.values.size()) throw DimensionError("tensor " + t.name + " size differs from shape");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name.data(), t.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.put<std::uint64_t>(d);
    w.put_bytes(t.values.data(), t.values.size() * sizeof(float));
  }
  return std::move(w.bytes);
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  if (bytes.size() < 4) {
    if (std::memcmp(bytes.data(), kMagic, bytes.size()) == 0) throw IntegrityError("checkpoint truncated inside the magic");
    throw FormatError("not a checkpoint: file shorter than the magic");
  }
  r.take(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  const auto kind = r.get<std::uint8_t>("kind");
  if (kind > 1) throw FormatError("unknown checkpoint kind " + std::to_string(kind));
  ckpt.kind = static_cast<CheckpointKind>(kind);
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  std::string meta(meta_len, '\0');
  r.take(meta.data(), meta_len, "metadata");
  try {
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    const auto name_len = r.get<std::uint16_t>("tensor name length");
    t.name.resize(name_len);
    r.take(t.name.data(), name_len, "tensor name");
    const auto rank = r.get<std::uint8_t>("tensor rank");
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>("tensor dims");
      if (d != 0 && n > bytes.size() / d) throw IntegrityError("tensor " + t.name + " declares an impossible size");
      n *= d;
      t.shape.push_back(d);
    }
    if (n > bytes.size() / sizeof(float)) throw IntegrityError("tensor " + t.name + " declares an impossible size");
    t.values.resize(n);
    r.take(t.values.data(), n * sizeof(float), "tensor data");
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw IntegrityError("checkpoint has trailing bytes after " + std::to_string(count) + " tensors");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

std::string sha256_hex(const void* data, std::size_t size) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char out[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data, size) != 1 || EVP_DigestFinal_ex(ctx.get(), out, &len) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(out[i]);
  return os.str();
}

std::string sha256_hex(const std::string& text) { return sha256_hex(text.data(), text.size()); }

template <typename Real>
std::string parameter_digest(const NamedTensors<Real>& params) {
  Writer w;
  for (const auto& [name, t] : params) {
    w.put_bytes(name.data(), name.size());
    w.put<std::uint8_t>(0);
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
    w.put_bytes(t.data().data(), t.numel() * sizeof(Real));
  }
  return sha256_hex(w.bytes.data(), w.bytes.size());
}

std::string stored_digest(const Checkpoint& ckpt) {
  Checkpoint bare;
  bare.metadata = nlohmann::json::object();
  bare.tensors = ckpt.tensors;
  const auto bytes = serialize_checkpoint(bare);
  return sha256_hex(bytes.data(), bytes.size());
}

nlohmann::json to_json(const BackboneConfig& c) {
  return {{"latent_channels", c.latent_channels}, {"levels", c.levels},
          {"blocks_per_level", c.blocks_per_level}, {"embed_dim", c.embed_dim},
          {"context_channels", c.context_channels}, {"num_styles", c.num_styles},
          {"fourier_features", c.fourier_features}, {"frame_rate_hz", c.frame_rate_hz}};
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  try {
    BackboneConfig c;
    c.latent_channels = j.at("latent_channels").get<std::size_t>();
    c.levels = j.at("levels").get<std::vector<std::size_t>>();
    c.blocks_per_level = j.at("blocks_per_level").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.context_channels = j.at("context_channels").get<std::size_t>();
    c.num_styles = j.at("num_styles").get<std::size_t>();
    c.fourier_features = j.at("fourier_features").get<std::size_t>();
    c.frame_rate_hz = j.at("frame_rate_hz").get<double>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint backbone config: ") + e.what());
  }
}

nlohmann::json to_json(const AdaptorVariant& v) {
  return {{"name", v.name()}, {"head", v.head}, {"tail", v.tail}, {"residual", v.residual}};
}

AdaptorVariant variant_from_json(const nlohmann::json& j) {
  try {
    auto v = AdaptorVariant::parse(j.at("name").get<std::string>());
    if (v.head != j.at("head").get<bool>() || v.tail != j.at("tail").get<bool>() ||
        v.residual != j.at("residual").get<bool>()) {
      throw FormatError("checkpoint variant flags disagree with variant name");
    }
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint variant: ") + e.what());
  }
}

template <typename Real>
Checkpoint make_checkpoint(CheckpointKind kind, const NamedTensors<Real>& params, nlohmann::json metadata) {
  Checkpoint ckpt;
  ckpt.kind = kind;
  ckpt.metadata = std::move(metadata);
  for (const auto& [name, t] : params) {
    StoredTensor s{name, t.shape(), std::vector<float>(t.numel())};
    for (std::size_t i = 0; i < t.numel(); ++i) s.values[i] = static_cast<float>(t.data()[i]);
    ckpt.tensors.push_back(std::move(s));
  }
  return ckpt;
}

template <typename Real>
void assign_parameters(const Checkpoint& ckpt, const NamedTensors<Real>& params) {
  std::map<std::string, const StoredTensor*> by_name;
  for (const auto& t : ckpt.tensors) {
    if (!by_name.emplace(t.name, &t).second) throw IntegrityError("duplicate tensor " + t.name);
  }
  if (by_name.size() != params.size()) {
    throw IntegrityError("checkpoint holds " + std::to_string(by_name.size()) + " tensors, model expects " +
                         std::to_string(params.size()));
  }
  for (const auto& [name, t] : params) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw IntegrityError("checkpoint is missing tensor " + name);
    if (it->second->shape != t.shape()) {
      throw IntegrityError("tensor " + name + " has shape " + shape_str(it->second->shape) + ", model expects " +
                           shape_str(t.shape()));
    }
  }
  for (const auto& [name, t] : params) {
    const auto& src = by_name.at(name)->values;
    auto dst = const_cast<Tensor<Real>&>(t).mutable_data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<Real>(src[i]);
  }
}

template <typename Real>
void save_backbone(const std::filesystem::path& path, Backbone<Real>& backbone, nlohmann::json extra) {
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["kind"] = "backbone";
  meta["backbone"] = to_json(backbone.config());
  save_checkpoint(path, make_checkpoint(CheckpointKind::Backbone, backbone.named_parameters(), meta));
}

template <typename Real>
Backbone<Real> load_backbone(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path);
  if (ckpt.kind != CheckpointKind::Backbone) throw FormatError(path.string() + " is not a backbone checkpoint");
  if (!ckpt.metadata.contains("backbone")) throw FormatError(path.string() + ": metadata lacks the backbone config");
  Backbone<Real> backbone(backbone_config_from_json(ckpt.metadata.at("backbone")), 0);
  assign_parameters(ckpt, backbone.named_parameters());
  return backbone;
}

template <typename Real>
void save_adaptor(const std::filesystem::path& path, AdaptorBranch<Real>& branch, Backbone<Real>& backbone,
                  nlohmann::json extra) {
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["kind"] = "adaptor";
  meta["variant"] = to_json(branch.variant());
  meta["condition_channels"] = branch.condition_channels();
  meta["backbone"] = to_json(backbone.config());
  meta["backbone_digest"] =
      stored_digest(make_checkpoint(CheckpointKind::Backbone, backbone.named_parameters(), nlohmann::json{}));
  save_checkpoint(path, make_checkpoint(CheckpointKind::Adaptor, branch.named_parameters(), meta));
}

template <typename Real>
AdaptorBranch<Real> load_adaptor(const std::filesystem::path& path, Backbone<Real>& backbone) {
  const auto ckpt = load_checkpoint(path);
  if (ckpt.kind != CheckpointKind::Adaptor) throw FormatError(path.string() + " is not an adaptor checkpoint");
  const auto& meta = ckpt.metadata;
  if (!meta.contains("variant") || !meta.contains("backbone_digest")) {
    throw FormatError(path.string() + ": metadata lacks the variant or backbone digest");
  }
  const auto digest =
      stored_digest(make_checkpoint(CheckpointKind::Backbone, backbone.named_parameters(), nlohmann::json{}));
  if (meta.at("backbone_digest").get<std::string>() != digest) {
    throw ConfigError(path.string() + " was trained against a different backbone");
  }
  AdaptorBranch<Real> branch(backbone, variant_from_json(meta.at("variant")),
                             meta.value("condition_channels", std::size_t{kPitchClasses}));
  assign_parameters(ckpt, branch.named_parameters());
  return branch;
}

#define LILAC_INSTANTIATE_CKPT(R)                                                                              \
  template std::string parameter_digest(const NamedTensors<R>&);                                              \
  template Checkpoint make_checkpoint(CheckpointKind, const NamedTensors<R>&, nlohmann::json);                \
  template void assign_parameters(const Checkpoint&, const NamedTensors<R>&);                                 \
  template void save_backbone(const std::filesystem::path&, Backbone<R>&, nlohmann::json);                    \
  template Backbone<R> load_backbone<R>(const std::filesystem::path&);                                        \
  template void save_adaptor(const std::filesystem::path&, AdaptorBranch<R>&, Backbone<R>&, nlohmann::json);  \
  template AdaptorBranch<R> load_adaptor(const std::filesystem::path&, Backbone<R>&);

LILAC_INSTANTIATE_CKPT(float)
LILAC_INSTANTIATE_CKPT(double)

#undef LILAC_INSTANTIATE_CKPT

}  // namespace lilac
