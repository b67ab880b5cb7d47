// lilac: command-line driver for data generation, training, sampling and evaluation.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "lilac/adaptors.hpp"
#include "lilac/backbone.hpp"
#include "lilac/checkpoint.hpp"
#include "lilac/conditions.hpp"
#include "lilac/config.hpp"
#include "lilac/error.hpp"
#include "lilac/eval.hpp"
#include "lilac/gradcheck.hpp"
#include "lilac/synthetic.hpp"
#include "lilac/trainer.hpp"

namespace fs = std::filesystem;
using namespace lilac;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::string precision = "f32";

  std::string variant = "h";
  std::string condition = "chroma";
  std::string setting = "aligned";
  std::string backbone_path;
  std::vector<std::string> adaptor_paths;
  std::size_t index = 0;
  std::optional<double> cfg_weight;
  std::optional<std::size_t> steps;
  std::size_t inputs = 50;
  std::string grad_variant = "htr";
};

struct Context {
  AppConfig config;
  std::string digest;
  fs::path out;
  std::uint64_t seed = 0;
};

Context make_context(const Options& opt) {
  Context ctx;
  ctx.config = opt.config_path.empty() ? default_config() : load_config(opt.config_path);
  if (opt.seed) {
    ctx.config.train.seed = *opt.seed;
    ctx.config.backbone_train.seed = *opt.seed;
    ctx.config.eval.seed = *opt.seed;
  }
  if (opt.steps) {
    ctx.config.train.steps = *opt.steps;
    ctx.config.backbone_train.steps = *opt.steps;
  }
  if (opt.cfg_weight) ctx.config.eval.cfg_weight = *opt.cfg_weight;
  ctx.config.validate();
  ctx.digest = config_digest(ctx.config);
  ctx.out = opt.out;
  ctx.seed = ctx.config.train.seed;
  fs::create_directories(ctx.out);
  return ctx;
}

fs::path backbone_file(const Options& opt, const Context& ctx) {
  return opt.backbone_path.empty() ? ctx.out / "backbone.llck" : fs::path(opt.backbone_path);
}

fs::path adaptor_file(const Context& ctx, const std::string& variant, const std::string& condition) {
  return ctx.out / ("adaptor_" + variant + "_" + condition + ".llck");
}

ProgressFn progress_printer(std::size_t steps) {
  return [steps](const TrainLogRow& r) {
    if (r.step % 100 == 0 || r.step == steps) {
      std::fprintf(stderr, "step %zu/%zu lr %.3g loss %.5f (%.1f s)\n", r.step, steps, r.lr, r.loss,
                   r.wall_ms / 1000.0);
    }
  };
}

nlohmann::json run_metadata(const Context& ctx, std::uint64_t seed) {
  return {{"config_digest", ctx.digest}, {"seed", seed}};
}

int cmd_gen_data(const Options&, const Context& ctx) {
  const auto train = train_split(ctx.config);
  const auto test = test_split(ctx.config);
  const auto dir = ctx.out / "data";
  fs::create_directories(dir / "conditions");
  std::ofstream os(dir / "summary.csv");
  if (!os) throw IoError("cannot write " + (dir / "summary.csv").string());
  os << "# seed=" << ctx.config.data.seed << " config_digest=" << ctx.digest << '\n';
  os << "split,index,style,passing_frames\n";
  auto row = [&](const char* split, std::size_t i, const SyntheticSample& s) {
    std::size_t passing = 0;
    for (bool p : s.passing) passing += p;
    os << split << ',' << i << ',' << s.style_id << ',' << passing << '\n';
  };
  for (std::size_t i = 0; i < train.size(); ++i) row("train", i, train[i]);
  for (std::size_t i = 0; i < test.size(); ++i) row("test", i, test[i]);
  const double rate = ctx.config.backbone.frame_rate_hz;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto chroma = chroma_from_noteroll(test[i].note_roll, test[i].frames, rate);
    const auto stem = dir / "conditions" / ("test_" + std::to_string(i));
    write_condition_csv(stem.string() + "_chroma.csv", to_condition(chroma));
    write_condition_csv(stem.string() + "_thresh.csv", threshold_chroma(chroma));
    write_condition_csv(stem.string() + "_chord.csv", encode_chords(test[i].chord_truth, test[i].frames, rate));
  }
  std::printf("wrote %zu train / %zu test samples to %s\n", train.size(), test.size(), dir.c_str());
  return 0;
}

template <typename Real>
int cmd_train_backbone(const Options&, const Context& ctx) {
  const auto& c = ctx.config;
  const auto data = build_latent_dataset<Real>(train_split(c), make_codec(c), ConditionKind::Chroma);
  Backbone<Real> backbone(c.backbone, c.backbone_train.seed);
  const auto result = train_backbone(backbone, data, c.backbone_train, progress_printer(c.backbone_train.steps));
  write_train_log(ctx.out / "backbone_train_log.csv", result);
  const auto path = ctx.out / "backbone.llck";
  save_backbone(path, backbone, run_metadata(ctx, c.backbone_train.seed));
  std::printf("backbone: %zu params, loss %.5f -> %.5f, saved %s\n", backbone.parameter_count(),
              result.initial_loss(), result.final_loss(), path.c_str());
  return 0;
}

template <typename Real>
int cmd_train_adaptor(const Options& opt, const Context& ctx) {
  const auto& c = ctx.config;
  const auto variant = AdaptorVariant::parse(opt.variant);
  const auto kind = parse_condition_kind(opt.condition);
  auto backbone = load_backbone<Real>(backbone_file(opt, ctx));
  const auto before = parameter_digest(backbone.named_parameters());
  const auto data = build_latent_dataset<Real>(train_split(c), make_codec(c), kind);
  AdaptorBranch<Real> branch(backbone, variant);
  const auto result = train_adaptor(backbone, branch, data, c.train, progress_printer(c.train.steps));
  const auto after = parameter_digest(backbone.named_parameters());
  if (before != after) throw TrainingError("backbone parameters changed during adaptor training");
  const std::string stem = "adaptor_" + variant.name() + "_" + to_string(kind);
  write_train_log(ctx.out / (stem + "_train_log.csv"), result);
  auto meta = run_metadata(ctx, c.train.seed);
  meta["condition"] = to_string(kind);
  const auto path = adaptor_file(ctx, variant.name(), to_string(kind));
  save_adaptor(path, branch, backbone, meta);
  std::printf("%s (%s): %zu params, loss %.5f -> %.5f, backbone digest %s unchanged, saved %s\n",
              variant.label().c_str(), to_string(kind).c_str(), branch.parameter_count(), result.initial_loss(),
              result.final_loss(), after.substr(0, 16).c_str(), path.c_str());
  return 0;
}

ConditionKind adaptor_condition(const fs::path& path) {
  const auto ckpt = load_checkpoint(path);
  return parse_condition_kind(ckpt.metadata.value("condition", std::string("chroma")));
}

template <typename Real>
int cmd_sample(const Options& opt, const Context& ctx) {
  const auto& c = ctx.config;
  auto backbone = load_backbone<Real>(backbone_file(opt, ctx));
  const auto tests = test_split(c);
  if (opt.index >= tests.size()) throw ContractError("--index beyond the test split");
  const auto codec = make_codec(c);
  std::optional<AdaptorBranch<Real>> branch;
  ConditionKind kind = ConditionKind::Chroma;
  if (!opt.adaptor_paths.empty()) {
    branch.emplace(load_adaptor<Real>(opt.adaptor_paths.front(), backbone));
    kind = adaptor_condition(opt.adaptor_paths.front());
  }
  EvalConfig ec = c.eval;
  ec.samples = 1;
  ec.batch_size = 1;
  const std::vector<SyntheticSample> one{tests[opt.index]};
  const auto scores = score_generations<Real>(backbone, branch ? &*branch : nullptr, one, codec, kind,
                                              parse_conflict_setting(opt.setting), ec);

  // Regenerate the latent itself for the output file (same seed, same path).
  const std::size_t C = c.backbone.latent_channels, T = one[0].frames;
  Conditions<Real> cond;
  Tensor<Real> control;
  if (branch) {
    const auto z = codec.encode_context(one[0]);
    cond.context = Tensor<Real>::from({1, C, T}, std::vector<Real>(z.begin(), z.end()));
    cond.keep_context = {true};
    const auto v = condition_values(one[0], kind);
    control = Tensor<Real>::from({1, kPitchClasses, T}, std::vector<Real>(v.begin(), v.end()));
    cond.style = {opt.setting == "none" ? -1 : one[0].style_id};
  } else {
    cond.style = {-1};
  }
  const auto out = generate<Real>(backbone, branch ? &*branch : nullptr, cond, control, 1, T, ec.sampler,
                                  ec.cfg_weight, Rng(ec.seed).split(0).next_u64());
  const auto probe = codec.decode_probe(std::vector<double>(out.data().begin(), out.data().end()), T);
  auto chroma = probe.chroma;
  chroma.frame_rate_hz = c.backbone.frame_rate_hz;
  const auto path = ctx.out / ("sample_" + std::to_string(opt.index) + "_chroma.csv");
  write_condition_csv(path, to_condition(chroma));
  std::printf("sample %zu: cmse %.6f cs %.6f, decoded chroma written to %s\n", opt.index, scores.cmse[0],
              scores.cs[0], path.c_str());
  return 0;
}

std::vector<fs::path> default_adaptors(const Context& ctx, const std::vector<std::string>& conditions,
                                       const std::vector<std::string>& variants) {
  std::vector<fs::path> out;
  for (const auto& k : conditions) {
    for (const auto& v : variants) {
      const auto p = adaptor_file(ctx, v, k);
      if (fs::exists(p)) out.push_back(p);
    }
  }
  return out;
}

template <typename Real>
int cmd_eval_adherence(const Options& opt, const Context& ctx) {
  const auto& c = ctx.config;
  auto backbone = load_backbone<Real>(backbone_file(opt, ctx));
  const auto tests = test_split(c);
  const auto codec = make_codec(c);
  std::vector<fs::path> paths(opt.adaptor_paths.begin(), opt.adaptor_paths.end());
  if (paths.empty()) {
    std::vector<std::string> names;
    for (const auto& v : all_variants()) names.push_back(v.name());
    paths = default_adaptors(ctx, {"chroma"}, names);
  }
  EvalReport report{c.eval.seed, ctx.digest, {}};
  report.rows.push_back(eval_adherence<Real>(backbone, nullptr, tests, codec, ConditionKind::Chroma, c.eval));
  for (const auto& p : paths) {
    auto branch = load_adaptor<Real>(p, backbone);
    report.rows.push_back(eval_adherence<Real>(backbone, &branch, tests, codec, adaptor_condition(p), c.eval));
  }
  write_eval_report(ctx.out / "adherence.csv", report);
  write_eval_report(std::cout, report);
  return 0;
}

template <typename Real>
int cmd_eval_conflict(const Options& opt, const Context& ctx) {
  const auto& c = ctx.config;
  const auto setting = parse_conflict_setting(opt.setting);
  auto backbone = load_backbone<Real>(backbone_file(opt, ctx));
  const auto tests = test_split(c);
  const auto codec = make_codec(c);
  std::vector<fs::path> paths(opt.adaptor_paths.begin(), opt.adaptor_paths.end());
  if (paths.empty()) paths = default_adaptors(ctx, {"chroma", "thresh", "chord"}, {opt.variant});
  if (paths.empty()) throw IoError("no adaptor checkpoints found in " + ctx.out.string());
  EvalReport report{c.eval.seed, ctx.digest, {}};
  report.rows.push_back(eval_adherence<Real>(backbone, nullptr, tests, codec, ConditionKind::Chroma, c.eval));
  for (const auto& p : paths) {
    auto branch = load_adaptor<Real>(p, backbone);
    report.rows.push_back(eval_conflict<Real>(backbone, branch, tests, codec, adaptor_condition(p), setting, c.eval));
  }
  write_eval_report(ctx.out / ("conflict_" + to_string(setting) + ".csv"), report);
  write_eval_report(std::cout, report);
  return 0;
}

int cmd_params(const Options& opt, const Context& ctx) {
  std::vector<AdaptorVariant> variants;
  if (opt.variant == "all") {
    variants = all_variants();
  } else {
    variants.push_back(AdaptorVariant::parse(opt.variant));
  }
  write_param_report(std::cout, report_params<double>(ctx.config.backbone, variants), ctx.seed, ctx.digest);
  return 0;
}

template <typename Real>
int cmd_init_check(const Options& opt, const Context& ctx) {
  const auto& c = ctx.config;
  const auto variant = AdaptorVariant::parse(opt.variant);
  const auto path = backbone_file(opt, ctx);
  Backbone<Real> backbone = fs::exists(path) ? load_backbone<Real>(path) : Backbone<Real>(c.backbone, ctx.seed);
  AdaptorBranch<Real> branch(backbone, variant);
  Rng rng(ctx.seed);
  const std::size_t C = c.backbone.latent_channels, T = c.data.frames;
  double worst = 0;
  NoGradGuard guard;
  for (std::size_t n = 0; n < opt.inputs; ++n) {
    auto normal = [&](Shape s, double scale) {
      std::vector<Real> v(shape_numel(s));
      for (auto& x : v) x = static_cast<Real>(scale * rng.normal());
      return Tensor<Real>::from(std::move(s), std::move(v));
    };
    const auto x = normal({2, C, T}, 1.0);
    const std::vector<Real> sigma{static_cast<Real>(sample_noise_level(rng)), static_cast<Real>(sample_noise_level(rng))};
    Conditions<Real> cond;
    cond.style = {static_cast<int>(rng.below(c.backbone.num_styles)), -1};
    cond.context = normal({2, C, T}, 0.5);
    cond.keep_context = {true, false};
    const auto control = normal({2, kPitchClasses, T}, 1.0);
    const auto plain = backbone.denoise(x, sigma, cond);
    const auto controlled = branch.controlled_denoise(backbone, x, sigma, cond, control);
    for (std::size_t i = 0; i < plain.numel(); ++i) {
      const double a = plain.data()[i], b = controlled.data()[i];
      worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a), 1e-12));
    }
  }
  const double tol = sizeof(Real) == 8 ? 0.0 : 1e-6;
  const bool ok = worst <= tol;
  std::printf("init-check %s (%s): max relative difference %.3g over %zu inputs, tolerance %.1g: %s\n",
              variant.label().c_str(), opt.precision.c_str(), worst, opt.inputs, tol, ok ? "ok" : "FAILED");
  return ok ? 0 : 1;
}

int cmd_grad_check(const Options& opt, const Context& ctx) {
  BackboneConfig toy;
  toy.latent_channels = 12;
  toy.levels = {16, 32};
  toy.embed_dim = 8;
  toy.context_channels = 12;
  toy.fourier_features = 4;
  Backbone<double> backbone(toy, ctx.seed);
  const auto variant = AdaptorVariant::parse(opt.grad_variant);
  AdaptorBranch<double> branch(backbone, variant);
  // Move the branch away from its zero initialization so every path carries gradient.
  Rng rng(ctx.seed + 1);
  branch.visit([&](const std::string&, Tensor<double>& t) {
    auto d = t.mutable_data();
    for (auto& v : d) v += 0.1 * rng.normal();
  });
  branch.set_requires_grad(true);
  backbone.set_requires_grad(false);
  const std::size_t T = 8, B = 2;
  auto normal = [&](Shape s) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = rng.normal();
    return Tensor<double>::from(std::move(s), std::move(v));
  };
  Batch<double> batch;
  batch.clean = normal({B, toy.latent_channels, T});
  batch.cond.style = {0, -1};
  batch.cond.context = normal({B, toy.latent_channels, T});
  batch.cond.keep_context = {true, false};
  batch.control = normal({B, kPitchClasses, T});
  const std::vector<double> sigma{0.4, 1.7};
  const auto noise = normal({B, toy.latent_channels, T});
  auto params = branch.named_parameters();
  std::vector<Tensor<double>> tensors;
  for (auto& [name, t] : params) tensors.push_back(t);
  const auto result = grad_check(
      [&] { return edm_loss<double>(backbone, &branch, batch, std::span<const double>(sigma), noise); }, tensors,
      1e-5, 24);
  const bool ok = result.max_rel_error <= 1e-4;
  std::printf("grad-check %s loss: %zu elements, max relative error %.3g at %s[%zu] (analytic %.6g, numeric %.6g): %s\n",
              variant.label().c_str(), result.checked, result.max_rel_error,
              params[result.worst_param].first.c_str(), result.worst_index, result.worst_analytic,
              result.worst_numeric, ok ? "ok" : "FAILED");
  return ok ? 0 : 1;
}

template <typename Real>
int dispatch(const std::string& cmd, const Options& opt, const Context& ctx) {
  if (cmd == "gen-data") return cmd_gen_data(opt, ctx);
  if (cmd == "train-backbone") return cmd_train_backbone<Real>(opt, ctx);
  if (cmd == "train-adaptor") return cmd_train_adaptor<Real>(opt, ctx);
  if (cmd == "sample") return cmd_sample<Real>(opt, ctx);
  if (cmd == "eval-adherence") return cmd_eval_adherence<Real>(opt, ctx);
  if (cmd == "eval-conflict") return cmd_eval_conflict<Real>(opt, ctx);
  if (cmd == "params") return cmd_params(opt, ctx);
  if (cmd == "init-check") return cmd_init_check<Real>(opt, ctx);
  if (cmd == "grad-check") return cmd_grad_check(opt, ctx);
  throw ContractError("unknown subcommand " + cmd);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiLAC adaptors on a desk-scale diffusion backbone"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Options opt;
  app.add_option("--config", opt.config_path, "TOML config file");
  app.add_option("--seed", opt.seed, "override the training and evaluation seeds");
  app.add_option("--out", opt.out, "output directory")->capture_default_str();
  app.add_option("--precision", opt.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();

  const std::vector<std::string> variant_names{"controlnet", "h", "ht", "hr", "htr", "lilac-star"};
  const std::vector<std::string> kinds{"chroma", "thresh", "chord"};
  const std::vector<std::string> settings{"aligned", "misaligned", "none"};
  auto backbone_opt = [&](CLI::App* sub) {
    sub->add_option("--backbone", opt.backbone_path, "backbone checkpoint (default <out>/backbone.llck)");
  };

  app.add_subcommand("gen-data", "generate the synthetic dataset and write test condition maps");
  auto* tb = app.add_subcommand("train-backbone", "pre-train the backbone");
  tb->add_option("--steps", opt.steps, "override training steps");
  auto* ta = app.add_subcommand("train-adaptor", "train an adaptor against the frozen backbone");
  ta->add_option("--variant", opt.variant)->check(CLI::IsMember(variant_names))->capture_default_str();
  ta->add_option("--condition", opt.condition)->check(CLI::IsMember(kinds))->capture_default_str();
  ta->add_option("--steps", opt.steps, "override training steps");
  backbone_opt(ta);
  auto* sa = app.add_subcommand("sample", "generate one latent for a test sample and decode its chroma");
  sa->add_option("--index", opt.index, "test sample index")->capture_default_str();
  sa->add_option("--adaptor", opt.adaptor_paths, "adaptor checkpoint")->expected(0, 1);
  sa->add_option("--setting", opt.setting)->check(CLI::IsMember(settings))->capture_default_str();
  sa->add_option("--cfg", opt.cfg_weight, "guidance weight");
  backbone_opt(sa);
  auto* ea = app.add_subcommand("eval-adherence", "cMSE / CS of trained adaptors against the unconditioned backbone");
  ea->add_option("--adaptor", opt.adaptor_paths, "adaptor checkpoints (default: every chroma adaptor in --out)");
  ea->add_option("--cfg", opt.cfg_weight, "guidance weight");
  backbone_opt(ea);
  auto* ec = app.add_subcommand("eval-conflict", "conflicting style / control conditions");
  ec->add_option("--setting", opt.setting)->check(CLI::IsMember(settings))->capture_default_str();
  ec->add_option("--variant", opt.variant)->check(CLI::IsMember(variant_names))->capture_default_str();
  ec->add_option("--adaptor", opt.adaptor_paths, "adaptor checkpoints (default: <variant> for every condition)");
  ec->add_option("--cfg", opt.cfg_weight, "guidance weight");
  backbone_opt(ec);
  auto* pa = app.add_subcommand("params", "parameter census CSV");
  pa->add_option("--variant", opt.variant, "variant or 'all'")->capture_default_str();
  auto* ic = app.add_subcommand("init-check", "check that an untrained adaptor leaves the backbone output unchanged");
  ic->add_option("--variant", opt.variant)->check(CLI::IsMember(variant_names))->capture_default_str();
  ic->add_option("--inputs", opt.inputs, "number of random inputs")->capture_default_str();
  backbone_opt(ic);
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the adaptor loss gradient (64-bit)");
  gc->add_option("--variant", opt.grad_variant)->check(CLI::IsMember(variant_names))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    const auto ctx = make_context(opt);
    if (opt.precision == "f64") return dispatch<double>(cmd, opt, ctx);
    return dispatch<float>(cmd, opt, ctx);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
