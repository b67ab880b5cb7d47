#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lilac/adaptors.hpp"
#include "lilac/backbone.hpp"
#include "lilac/conditions.hpp"

namespace lilac {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint8_t { Backbone = 0, Adaptor = 1 };

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::Backbone;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<StoredTensor> tensors;
};

// "LLCK" container. Writes go to a temporary file that is renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);

// Parses the whole file before returning. FormatError on bad magic,
// VersionError on an unknown version, IntegrityError on truncation or count mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes);

// Hex SHA-256.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& text);

// Digest over names, shapes and raw values of a parameter set.
template <typename Real>
std::string parameter_digest(const NamedTensors<Real>& params);

nlohmann::json to_json(const BackboneConfig& config);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AdaptorVariant& variant);
AdaptorVariant variant_from_json(const nlohmann::json& j);

// Digest of the tensors exactly as stored (32-bit values).
std::string stored_digest(const Checkpoint& ckpt);

template <typename Real>
Checkpoint make_checkpoint(CheckpointKind kind, const NamedTensors<Real>& params, nlohmann::json metadata);

// Copies stored values into params by name. Every name and shape must match;
// nothing is written unless the whole set does.
template <typename Real>
void assign_parameters(const Checkpoint& ckpt, const NamedTensors<Real>& params);

template <typename Real>
void save_backbone(const std::filesystem::path& path, Backbone<Real>& backbone, nlohmann::json extra = {});
template <typename Real>
Backbone<Real> load_backbone(const std::filesystem::path& path);

template <typename Real>
void save_adaptor(const std::filesystem::path& path, AdaptorBranch<Real>& branch, Backbone<Real>& backbone,
                  nlohmann::json extra = {});
// Rebuilds the branch against `backbone`; ConfigError if the stored backbone digest differs.
template <typename Real>
AdaptorBranch<Real> load_adaptor(const std::filesystem::path& path, Backbone<Real>& backbone);

}  // namespace lilac
