#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "lilac/config.hpp"
#include "lilac/error.hpp"
#include "lilac/eval.hpp"
#include "lilac/synthetic.hpp"
#include "test_util.hpp"

using namespace lilac;
using namespace lilac::test;

namespace {

DataConfig small_data(std::size_t n = 64) {
  DataConfig d;
  d.samples = n;
  d.test_samples = 8;
  d.frames = 16;
  return d;
}

std::string read_text(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const std::string kGolden = LILAC_TEST_DATA_DIR;

}  // namespace

TEST_CASE("dataset generation is seed-deterministic") {
  const auto dc = small_data();
  const auto a = generate_dataset(32, dc, 9), b = generate_dataset(32, dc, 9), c = generate_dataset(32, dc, 10);
  bool differs = false;
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(a[i].note_roll == b[i].note_roll);
    CHECK(a[i].context_roll == b[i].context_roll);
    CHECK(a[i].style_id == b[i].style_id);
    CHECK(a[i].texture_seed == b[i].texture_seed);
    differs |= a[i].note_roll != c[i].note_roll;
  }
  CHECK(differs);
}

TEST_CASE("samples: chords cover all frames, rolls agree with chords, values in range") {
  const auto dc = small_data();
  for (const auto& s : generate_dataset(200, dc, 11)) {
    REQUIRE(!s.chord_truth.events.empty());
    CHECK(s.chord_truth.events.front().start_frame == 0);
    CHECK_NOTHROW(encode_chords(s.chord_truth, s.frames));
    CHECK(s.style_id >= 0);
    CHECK(s.style_id < static_cast<int>(dc.num_styles));
    for (double v : s.note_roll) CHECK((v >= 0 && v <= 1));
    for (double v : s.context_roll) CHECK((v >= 0 && v <= 1));
    const auto chords = encode_chords(s.chord_truth, s.frames);
    for (std::size_t t = 0; t < s.frames; ++t) {
      double mx = 0;
      for (std::size_t pc = 0; pc < 12; ++pc) {
        const double v = s.note_roll[pc * s.frames + t];
        mx = std::max(mx, v);
        if (v > 0 && chords.at(pc, t) == 0) CHECK(s.passing[t]);
      }
      CHECK((mx == 0 || mx == 1));
    }
  }
}

TEST_CASE("style ids are uniform within 3%") {
  const auto dc = small_data();
  std::vector<double> counts(dc.num_styles, 0);
  const std::size_t n = 10000;
  for (const auto& s : generate_dataset(n, dc, 12)) counts[static_cast<std::size_t>(s.style_id)] += 1;
  for (double c : counts) CHECK(std::abs(c / n - 1.0 / static_cast<double>(dc.num_styles)) <= 0.03);
}

TEST_CASE("style envelope range") {
  for (int s = 0; s < 3; ++s)
    for (std::size_t t = 0; t < 64; ++t) {
      const double e = style_envelope(s, t, 3);
      CHECK((e >= 0.5 && e <= 1.0));
    }
}

TEST_CASE("codec: orthonormal, exact round trip, zero input") {
  const auto dc = small_data();
  const LatentCodec codec(16, 3, 0.1, 13);
  const auto& q = codec.mixing();
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < 16; ++k) dot += q[k * 16 + i] * q[k * 16 + j];
      CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) <= 1e-6);
    }
  for (const auto& s : generate_dataset(100, dc, 14)) {
    const auto p = codec.decode_probe(codec.encode(s), s.frames);
    for (std::size_t i = 0; i < s.note_roll.size(); ++i) CHECK(std::abs(p.chroma.values[i] - s.note_roll[i]) <= 1e-6);
    std::vector<double> mean(3, 0);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t t = 0; t < s.frames; ++t) mean[k] += p.style_scores[k * s.frames + t];
    CHECK(std::max_element(mean.begin(), mean.end()) - mean.begin() == s.style_id);
    CHECK(style_similarity(p.style_scores, s.frames, s.style_id, 3) > 0.99);
  }
  const auto z = codec.decode_probe(std::vector<double>(16 * 8, 0.0), 8);
  for (double v : z.chroma.values) CHECK(v == 0.0);
  for (double v : z.style_scores) CHECK(v == 0.0);
  CHECK_THROWS_AS(LatentCodec(14, 3, 0.1, 1), ConfigError);
}

TEST_CASE("codec: silent roll without texture has latent norm equal to the envelope") {
  const LatentCodec codec(16, 3, 0.0, 15);
  SyntheticSample s;
  s.frames = 8;
  s.note_roll.assign(12 * 8, 0.0);
  s.context_roll.assign(12 * 8, 0.0);
  s.style_id = 2;
  s.chord_truth.events.push_back({0, 0, {0, 4, 7}});
  s.passing.assign(8, false);
  const auto z = codec.encode(s);
  for (std::size_t t = 0; t < 8; ++t) {
    double n2 = 0;
    for (std::size_t c = 0; c < 16; ++c) n2 += z[c * 8 + t] * z[c * 8 + t];
    CHECK(std::sqrt(n2) == doctest::Approx(style_envelope(2, t, 3)).epsilon(1e-12));
  }
}

TEST_CASE("codec: changing only the style changes only the style rows") {
  const auto dc = small_data();
  const LatentCodec codec(16, 3, 0.1, 16);
  auto a = generate_dataset(1, dc, 17)[0];
  auto b = a;
  b.style_id = (a.style_id + 1) % 3;
  const auto fa = codec.features(codec.encode(a), a.frames);
  const auto fb = codec.features(codec.encode(b), b.frames);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t t = 0; t < a.frames; ++t) {
      const double d = std::abs(fa[r * a.frames + t] - fb[r * a.frames + t]);
      if (r >= 12 && r < 15) continue;
      CHECK(d <= 1e-12);
    }
  double style_diff = 0;
  for (std::size_t r = 12; r < 15; ++r)
    for (std::size_t t = 0; t < a.frames; ++t) style_diff += std::abs(fa[r * a.frames + t] - fb[r * a.frames + t]);
  CHECK(style_diff > 1.0);
}

TEST_CASE("codec: latent noise of amplitude 0.01 moves decoded chroma by under 0.02 RMS") {
  const auto dc = small_data();
  const LatentCodec codec(16, 3, 0.1, 18);
  Rng rng(19);
  for (const auto& s : generate_dataset(50, dc, 20)) {
    auto z = codec.encode(s);
    const auto clean = codec.decode_probe(z, s.frames).chroma;
    for (auto& v : z) v += 0.01 * rng.normal();
    const auto noisy = codec.decode_probe(z, s.frames).chroma;
    CHECK(std::sqrt(cmse(clean, noisy)) < 0.02);
  }
}

TEST_CASE("probe floor and misaligned pairing") {
  const auto cfg = default_config();
  const LatentCodec codec(cfg.backbone.latent_channels, cfg.data.num_styles, cfg.data.texture_amplitude, cfg.data.seed);
  CHECK(probe_floor(generate_dataset(200, cfg.data, 21), codec) <= 1e-6);
  for (std::size_t n : {2, 3, 10, 200}) {
    const auto p = misaligned_pairing(n);
    std::set<std::size_t> seen(p.begin(), p.end());
    CHECK(seen.size() == n);
    for (std::size_t i = 0; i < n; ++i) CHECK(p[i] != i);
    CHECK(p == misaligned_pairing(n));
  }
  CHECK_THROWS_AS(misaligned_pairing(1), ContractError);
  CHECK(parse_conflict_setting(to_string(ConflictSetting::Misaligned)) == ConflictSetting::Misaligned);
  CHECK_THROWS_AS(parse_conflict_setting("partial"), ConfigError);
}

TEST_CASE("config: defaults, overrides and errors") {
  const auto d = default_config();
  CHECK_NOTHROW(d.validate());
  CHECK(d.train.steps == 2000);
  CHECK(d.train.batch_size == 16);
  CHECK(d.data.samples == 2000);
  CHECK(d.eval.samples == 200);

  const auto c = parse_config(R"(
[backbone]
levels = [32, 64]

[train]
steps = 500
base_lr = 2e-3

[train.backbone]
steps = 900

[eval]
cfg_weight = 2.0
)");
  CHECK(c.backbone.levels == std::vector<std::size_t>{32, 64});
  CHECK(c.train.steps == 500);
  CHECK(c.train.base_lr == 2e-3);
  CHECK(c.backbone_train.steps == 900);
  CHECK(c.backbone_train.base_lr == 2e-3);
  CHECK(c.eval.cfg_weight == 2.0);

  CHECK_THROWS_AS(parse_config("[training]\nsteps = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nstep = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nsteps = -4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nsteps = \n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[data]\nframes = 31\n"), ConfigError);
  try {
    parse_config("\n\n[train]\nbogus = 1\n");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }
  CHECK_THROWS_AS(load_config("/nonexistent/lilac.toml"), IoError);
}

TEST_CASE("config digest ignores formatting and key order, tracks values") {
  const auto a = parse_config("[train]\nsteps = 500\nseed = 3\n");
  const auto b = parse_config("# comment\n[train]\n  seed=3\n\n  steps =   500\n");
  const auto c = parse_config("[train]\nsteps = 501\nseed = 3\n");
  CHECK(config_digest(a) == config_digest(b));
  CHECK(config_digest(a) != config_digest(c));
  CHECK(config_digest(default_config()) == config_digest(parse_config("")));
  CHECK(config_digest(default_config()).size() == 64);
}

TEST_CASE("report schemas match the golden files") {
  EvalReport r;
  r.seed = 7;
  r.config_digest = "abc123";
  r.rows.push_back({"unconditioned", "-", "none", 0, 0.25, 0.5, 200});
  r.rows.push_back({"LiLAC^H", "chroma", "aligned", 7296, 0.0625, 0.875, 200});
  std::ostringstream os;
  write_eval_report(os, r);
  CHECK(os.str() == read_text(kGolden + "/eval_report.csv"));

  std::ostringstream ps;
  write_param_report(ps, report_params<float>(default_config().backbone, {AdaptorVariant::lilac(false, false)}), 0,
                     "abc123");
  CHECK(ps.str() == read_text(kGolden + "/params_h.csv"));
}

TEST_CASE("evaluation is bit-reproducible and the backbone-only row ignores conditions") {
  BackboneConfig cfg = toy_config();
  cfg.latent_channels = cfg.context_channels = 16;
  Backbone<double> model(cfg, 22);
  AdaptorBranch<double> branch(model, AdaptorVariant::lilac(false, false));
  Rng rng(23);
  branch.visit([&](const std::string&, Tensor<double>& t) {
    for (auto& v : t.mutable_data()) v += 0.05 * rng.normal();
  });
  const auto dc = small_data();
  const auto tests = generate_dataset(6, dc, 24);
  const LatentCodec codec(16, 3, dc.texture_amplitude, dc.seed);
  EvalConfig ec;
  ec.samples = 6;
  ec.batch_size = 4;
  ec.sampler.steps = 4;
  for (auto setting : {ConflictSetting::Aligned, ConflictSetting::Misaligned, ConflictSetting::None}) {
    const auto a = score_generations<double>(model, &branch, tests, codec, ConditionKind::Chroma, setting, ec);
    const auto b = score_generations<double>(model, &branch, tests, codec, ConditionKind::Chroma, setting, ec);
    CHECK(a.cmse == b.cmse);
    CHECK(a.cs == b.cs);
    CHECK(a.cmse.size() == 6);
  }
  const auto u1 = score_generations<double>(model, nullptr, tests, codec, ConditionKind::Chroma,
                                            ConflictSetting::Aligned, ec);
  const auto u2 = score_generations<double>(model, nullptr, tests, codec, ConditionKind::Chord,
                                            ConflictSetting::None, ec);
  CHECK(u1.cmse == u2.cmse);
  CHECK(u1.cs == u2.cs);

  const auto row = eval_adherence<double>(model, nullptr, tests, codec, ConditionKind::Chroma, ec);
  CHECK(row.model == "unconditioned");
  CHECK(row.setting == "none");
  CHECK(row.samples == 6);
}
