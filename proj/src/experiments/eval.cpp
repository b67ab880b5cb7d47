#include "lilac/eval.hpp"

#include <fstream>
#include <ostream>

#include "lilac/error.hpp"
#include "lilac/rng.hpp"
#include "lilac/trainer.hpp"

namespace lilac {

std::string to_string(ConflictSetting setting) {
  switch (setting) {
    case ConflictSetting::Aligned:
      return "aligned";
    case ConflictSetting::Misaligned:
      return "misaligned";
    case ConflictSetting::None:
      return "none";
  }
  return "aligned";
}

ConflictSetting parse_conflict_setting(const std::string& name) {
  if (name == "aligned") return ConflictSetting::Aligned;
  if (name == "misaligned") return ConflictSetting::Misaligned;
  if (name == "none") return ConflictSetting::None;
  throw ConfigError("unknown setting '" + name + "' (aligned, misaligned, none)");
}

void EvalConfig::validate() const {
  if (samples == 0 || batch_size == 0) throw ConfigError("eval: samples and batch_size must be positive");
  if (sampler.steps == 0) throw ConfigError("eval: sampler steps must be >= 1");
  if (!(sampler.sigma_min > 0 && sampler.sigma_min < sampler.sigma_max)) {
    throw ConfigError("eval: need 0 < sigma_min < sigma_max");
  }
  if (cfg_weight < 0) throw ConfigError("eval: cfg_weight must be >= 0");
}

std::vector<std::size_t> misaligned_pairing(std::size_t n) {
  if (n < 2) throw ContractError("misaligned pairing needs at least 2 samples");
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = (i + 1) % n;
  return p;
}

template <typename Real>
SampleScores score_generations(const Backbone<Real>& backbone, const AdaptorBranch<Real>* branch,
                               const std::vector<SyntheticSample>& tests, const LatentCodec& codec,
                               ConditionKind kind, ConflictSetting setting, const EvalConfig& config) {
  config.validate();
  const std::size_t n = std::min(config.samples, tests.size());
  if (n == 0) throw ContractError("eval: empty test set");
  const std::size_t C = backbone.config().latent_channels;
  const std::size_t T = tests.front().frames;
  const std::size_t S = codec.num_styles();
  std::vector<std::size_t> provider(n);
  for (std::size_t i = 0; i < n; ++i) provider[i] = i;
  if (setting == ConflictSetting::Misaligned) provider = misaligned_pairing(n);

  SampleScores scores;
  const Rng root(config.seed);
  for (std::size_t start = 0, batch_index = 0; start < n; start += config.batch_size, ++batch_index) {
    const std::size_t B = std::min(config.batch_size, n - start);
    Conditions<Real> cond;
    Tensor<Real> control;
    if (branch) {
      std::vector<Real> ctx(B * C * T), ctl(B * kPitchClasses * T);
      for (std::size_t b = 0; b < B; ++b) {
        const auto& s = tests[start + b];
        const auto z = codec.encode_context(s);
        std::copy(z.begin(), z.end(), ctx.begin() + static_cast<std::ptrdiff_t>(b * C * T));
        const auto c = condition_values(s, kind);
        std::copy(c.begin(), c.end(), ctl.begin() + static_cast<std::ptrdiff_t>(b * kPitchClasses * T));
        cond.style.push_back(setting == ConflictSetting::None ? -1 : tests[provider[start + b]].style_id);
      }
      cond.context = Tensor<Real>::from({B, C, T}, std::move(ctx));
      cond.keep_context.assign(B, true);
      control = Tensor<Real>::from({B, kPitchClasses, T}, std::move(ctl));
    } else {
      cond.style.assign(B, -1);
    }
    const std::uint64_t seed = root.split(batch_index).next_u64();
    const auto out = generate<Real>(backbone, branch, cond, control, B, T, config.sampler, config.cfg_weight, seed);

    for (std::size_t b = 0; b < B; ++b) {
      const auto& s = tests[start + b];
      std::vector<double> z(out.data().begin() + static_cast<std::ptrdiff_t>(b * C * T),
                            out.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * C * T));
      const auto probe = codec.decode_probe(z, T);
      const auto target = chroma_from_noteroll(s.note_roll, T, 0.0);
      scores.cmse.push_back(cmse(std::span<const double>(probe.chroma.values), std::span<const double>(target.values)));
      const int style = setting == ConflictSetting::Misaligned && branch ? tests[provider[start + b]].style_id
                                                                        : s.style_id;
      scores.cs.push_back(style_similarity(probe.style_scores, T, style, S));
    }
  }
  return scores;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double acc = 0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

template <typename Real>
EvalRow summarize(const SampleScores& scores, AdaptorBranch<Real>* branch, ConditionKind kind,
                  ConflictSetting setting) {
  EvalRow row;
  row.model = branch ? branch->variant().label() : "unconditioned";
  row.condition = branch ? to_string(kind) : "-";
  row.setting = to_string(setting);
  row.params = branch ? branch->parameter_count() : 0;
  row.cmse = mean_of(scores.cmse);
  row.cs = mean_of(scores.cs);
  row.samples = scores.cmse.size();
  return row;
}

}  // namespace

template <typename Real>
EvalRow eval_adherence(const Backbone<Real>& backbone, AdaptorBranch<Real>* branch,
                       const std::vector<SyntheticSample>& tests, const LatentCodec& codec, ConditionKind kind,
                       const EvalConfig& config) {
  const auto scores = score_generations<Real>(backbone, branch, tests, codec, kind, ConflictSetting::Aligned, config);
  auto row = summarize(scores, branch, kind, ConflictSetting::Aligned);
  if (!branch) row.setting = "none";
  return row;
}

template <typename Real>
EvalRow eval_conflict(const Backbone<Real>& backbone, AdaptorBranch<Real>& branch,
                      const std::vector<SyntheticSample>& tests, const LatentCodec& codec, ConditionKind kind,
                      ConflictSetting setting, const EvalConfig& config) {
  const auto scores = score_generations<Real>(backbone, &branch, tests, codec, kind, setting, config);
  return summarize(scores, &branch, kind, setting);
}

double probe_floor(const std::vector<SyntheticSample>& tests, const LatentCodec& codec) {
  if (tests.empty()) throw ContractError("eval: empty test set");
  double worst = 0;
  for (const auto& s : tests) {
    const auto probe = codec.decode_probe(codec.encode(s), s.frames);
    const auto target = chroma_from_noteroll(s.note_roll, s.frames, 0.0);
    worst = std::max(worst, cmse(probe.chroma, target));
  }
  return worst;
}

template <typename Real>
std::vector<ParamRow> report_params(const BackboneConfig& config, const std::vector<AdaptorVariant>& variants) {
  Backbone<Real> backbone(config, 0);
  std::size_t controlnet_total = AdaptorBranch<Real>(backbone, AdaptorVariant::controlnet()).parameter_count();
  std::vector<ParamRow> rows;
  for (const auto& v : variants) {
    AdaptorBranch<Real> branch(backbone, v);
    const auto census = branch.census();
    for (const auto& [name, count] : census.components) {
      rows.push_back({v.name(), name, count, static_cast<double>(count) / static_cast<double>(controlnet_total)});
    }
    rows.push_back({v.name(), "total", census.total(),
                    static_cast<double>(census.total()) / static_cast<double>(controlnet_total)});
  }
  return rows;
}

void write_eval_report(std::ostream& os, const EvalReport& report) {
  os.precision(9);
  os << "# seed=" << report.seed << " config_digest=" << report.config_digest << '\n';
  os << "model,condition,setting,params,cmse,cs,samples\n";
  for (const auto& r : report.rows) {
    os << r.model << ',' << r.condition << ',' << r.setting << ',' << r.params << ',' << r.cmse << ',' << r.cs
       << ',' << r.samples << '\n';
  }
}

void write_eval_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  write_eval_report(os, report);
  if (!os) throw IoError("failed writing " + path.string());
}

void write_param_report(std::ostream& os, const std::vector<ParamRow>& rows, std::uint64_t seed,
                        const std::string& config_digest) {
  os.precision(6);
  os << "# seed=" << seed << " config_digest=" << config_digest << '\n';
  os << "variant,component,params,ratio_to_controlnet\n";
  for (const auto& r : rows) os << r.variant << ',' << r.component << ',' << r.params << ',' << r.ratio_to_controlnet << '\n';
}

#define LILAC_INSTANTIATE_EVAL(R)                                                                                  \
  template SampleScores score_generations(const Backbone<R>&, const AdaptorBranch<R>*,                            \
                                          const std::vector<SyntheticSample>&, const LatentCodec&, ConditionKind, \
                                          ConflictSetting, const EvalConfig&);                                    \
  template EvalRow eval_adherence(const Backbone<R>&, AdaptorBranch<R>*, const std::vector<SyntheticSample>&,     \
                                  const LatentCodec&, ConditionKind, const EvalConfig&);                          \
  template EvalRow eval_conflict(const Backbone<R>&, AdaptorBranch<R>&, const std::vector<SyntheticSample>&,      \
                                 const LatentCodec&, ConditionKind, ConflictSetting, const EvalConfig&);          \
  template std::vector<ParamRow> report_params<R>(const BackboneConfig&, const std::vector<AdaptorVariant>&);

LILAC_INSTANTIATE_EVAL(float)
LILAC_INSTANTIATE_EVAL(double)

#undef LILAC_INSTANTIATE_EVAL

}  // namespace lilac
