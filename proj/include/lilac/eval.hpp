#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lilac/adaptors.hpp"
#include "lilac/backbone.hpp"
#include "lilac/conditions.hpp"
#include "lilac/synthetic.hpp"

namespace lilac {

// Conflict-study settings: style and control from the same sample, from
// different samples (rotation by one), or style omitted.
enum class ConflictSetting { Aligned, Misaligned, None };

std::string to_string(ConflictSetting setting);
ConflictSetting parse_conflict_setting(const std::string& name);

struct EvalConfig {
  std::size_t samples = 200;
  std::size_t batch_size = 50;
  SamplerConfig sampler;
  double cfg_weight = 1.0;
  std::uint64_t seed = 7;

  void validate() const;
};

struct EvalRow {
  std::string model;      // variant label or "unconditioned"
  std::string condition;  // condition kind the branch was trained on, "-" for the backbone alone
  std::string setting;
  std::size_t params = 0;
  double cmse = 0;
  double cs = 0;
  std::size_t samples = 0;
};

struct EvalReport {
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<EvalRow> rows;
};

// Rotation-by-one pairing: sample i takes the style of sample (i + 1) mod n.
std::vector<std::size_t> misaligned_pairing(std::size_t n);

// Per-sample scores of a batch of generated latents against the test samples they were drawn for.
struct SampleScores {
  std::vector<double> cmse;
  std::vector<double> cs;
};

// Generates one latent per test sample and scores it: cMSE against the sample's
// own chroma, CS against the style of the sample that supplied the style.
// branch == nullptr evaluates the bare backbone with every condition dropped.
template <typename Real>
SampleScores score_generations(const Backbone<Real>& backbone, const AdaptorBranch<Real>* branch,
                               const std::vector<SyntheticSample>& tests, const LatentCodec& codec,
                               ConditionKind kind, ConflictSetting setting, const EvalConfig& config);

template <typename Real>
EvalRow eval_adherence(const Backbone<Real>& backbone, AdaptorBranch<Real>* branch,
                       const std::vector<SyntheticSample>& tests, const LatentCodec& codec, ConditionKind kind,
                       const EvalConfig& config);

template <typename Real>
EvalRow eval_conflict(const Backbone<Real>& backbone, AdaptorBranch<Real>& branch,
                      const std::vector<SyntheticSample>& tests, const LatentCodec& codec, ConditionKind kind,
                      ConflictSetting setting, const EvalConfig& config);

// cMSE of each test sample's own latent through decode_probe; the harness floor.
double probe_floor(const std::vector<SyntheticSample>& tests, const LatentCodec& codec);

struct ParamRow {
  std::string variant;
  std::string component;  // "total" for the whole branch
  std::size_t params = 0;
  double ratio_to_controlnet = 0;
};

template <typename Real>
std::vector<ParamRow> report_params(const BackboneConfig& config, const std::vector<AdaptorVariant>& variants);

// CSV with a "# seed=... config_digest=..." header line.
void write_eval_report(std::ostream& os, const EvalReport& report);
void write_eval_report(const std::filesystem::path& path, const EvalReport& report);
void write_param_report(std::ostream& os, const std::vector<ParamRow>& rows, std::uint64_t seed,
                        const std::string& config_digest);

}  // namespace lilac
