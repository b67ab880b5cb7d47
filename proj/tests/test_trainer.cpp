#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "lilac/checkpoint.hpp"
#include "lilac/error.hpp"
#include "lilac/ops.hpp"
#include "lilac/trainer.hpp"
#include "test_util.hpp"

using namespace lilac;
using namespace lilac::test;
namespace fs = std::filesystem;

namespace {

// Smallest backbone that can carry the synthetic codec (C >= 12 + styles).
BackboneConfig codec_config() {
  BackboneConfig c = toy_config();
  c.latent_channels = 16;
  c.context_channels = 16;
  return c;
}

DataConfig small_data() {
  DataConfig d;
  d.samples = 48;
  d.test_samples = 8;
  d.frames = 16;
  return d;
}

template <typename Real>
LatentDataset<Real> small_dataset(ConditionKind kind = ConditionKind::Chroma) {
  const auto dc = small_data();
  const LatentCodec codec(16, dc.num_styles, dc.texture_amplitude, dc.seed);
  return build_latent_dataset<Real>(generate_dataset(dc.samples, dc, dc.seed), codec, kind);
}

TrainConfig quick_train(std::size_t steps = 30) {
  TrainConfig tc;
  tc.batch_size = 4;
  tc.steps = steps;
  tc.warmup_steps = 5;
  tc.base_lr = 1e-3;
  tc.seed = 3;
  return tc;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("lilac_test_" + name); }

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

template <typename Real>
std::vector<Tensor<Real>> snapshot(const NamedTensors<Real>& params) {
  std::vector<Tensor<Real>> out;
  for (const auto& [n, t] : params) out.push_back(t.clone());
  return out;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  tc.dropout_e = 1.5;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.steps = tc.warmup_steps;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("noise level distribution") {
  Rng rng(1);
  std::vector<double> s(100000);
  for (auto& v : s) v = sample_noise_level(rng);
  CHECK(std::all_of(s.begin(), s.end(), [](double v) { return v > 0; }));
  std::sort(s.begin(), s.end());
  CHECK(s[s.size() / 2] == doctest::Approx(std::exp(-1.2)).epsilon(0.02));
  CHECK(s[static_cast<std::size_t>(0.8413 * s.size())] == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("condition dropout rates and independence") {
  Rng rng(2);
  const auto none = draw_dropout(64, 0, 0, 0, rng);
  const auto all = draw_dropout(64, 1, 1, 1, rng);
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK((none.keep_context[i] && none.keep_e[i] && none.keep_c[i]));
    CHECK((!all.keep_context[i] && !all.keep_e[i] && !all.keep_c[i]));
  }
  const std::size_t n = 10000;
  const auto m = draw_dropout(n, 0.5, 0.5, 0.5, rng);
  double dx = 0, de = 0, dc = 0, xe = 0, xc = 0, ec = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool a = !m.keep_context[i], b = !m.keep_e[i], c = !m.keep_c[i];
    dx += a;
    de += b;
    dc += c;
    xe += a && b;
    xc += a && c;
    ec += b && c;
  }
  for (double r : {dx, de, dc}) CHECK(std::abs(r / n - 0.5) <= 0.02);
  for (double r : {xe, xc, ec}) CHECK(std::abs(r / n - 0.25) <= 0.02);
}

TEST_CASE("make_batch applies the mask") {
  const auto data = small_dataset<double>();
  const std::vector<std::size_t> idx{3, 7, 11};
  DropoutMask mask{{true, false, true}, {false, true, true}, {true, true, false}};
  const auto b = make_batch(data, idx, mask);
  const std::size_t C = data.channels, T = data.frames;
  CHECK(b.clean.shape() == Shape{3, C, T});
  CHECK(b.control.shape() == Shape{3, kPitchClasses, T});
  CHECK(b.cond.style == std::vector<int>{-1, data.styles[7], data.styles[11]});
  CHECK(b.cond.keep_context == std::vector<bool>{true, false, true});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t e = 0; e < C * T; ++e) {
      CHECK(b.clean.at(i * C * T + e) == data.latents[idx[i]][e]);
      CHECK(b.cond.context.at(i * C * T + e) == data.contexts[idx[i]][e]);
    }
    for (std::size_t e = 0; e < kPitchClasses * T; ++e)
      CHECK(b.control.at(i * kPitchClasses * T + e) == (i == 2 ? 0.0 : data.controls[idx[i]][e]));
  }
}

TEST_CASE("condition values per kind") {
  const auto dc = small_data();
  const auto s = generate_dataset(1, dc, 5)[0];
  const auto chroma = condition_values(s, ConditionKind::Chroma);
  const auto thresh = condition_values(s, ConditionKind::ChromaThresholded);
  const auto chord = condition_values(s, ConditionKind::Chord);
  const auto ref = chroma_from_noteroll(s.note_roll, s.frames, 1.0);
  CHECK(chroma == ref.values);
  CHECK(thresh == threshold_chroma(ref).values);
  CHECK(chord == encode_chords(s.chord_truth, s.frames).values);
}

TEST_CASE("EDM loss against a direct evaluation") {
  CHECK(EdmConstants::loss_weight(0.5) == doctest::Approx(8.0));
  const auto cfg = codec_config();
  Backbone<double> model(cfg, 4);
  const auto data = small_dataset<double>();
  Rng rng(5);
  const std::vector<std::size_t> idx{0, 1, 2};
  const auto batch = make_batch(data, idx, draw_dropout(3, 0.5, 0.5, 0.5, rng));
  const std::vector<double> sigma{0.1, 0.5, 3.0};
  const auto noise = random_tensor<double>(batch.clean.shape(), rng);
  const auto loss = edm_loss<double>(model, nullptr, batch, sigma, noise);
  CHECK(loss.numel() == 1);
  CHECK(loss.at(0) > 0);

  const std::size_t per = batch.clean.numel() / 3;
  std::vector<double> noisy(batch.clean.data().begin(), batch.clean.data().end());
  for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] += sigma[i / per] * noise.at(i);
  const auto d = model.denoise(Tensor<double>::from(batch.clean.shape(), noisy), sigma, batch.cond);
  double expect = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    double mse = 0;
    for (std::size_t e = 0; e < per; ++e) {
      const double diff = d.at(b * per + e) - batch.clean.at(b * per + e);
      mse += diff * diff;
    }
    expect += EdmConstants::loss_weight(sigma[b]) * mse / static_cast<double>(per);
  }
  CHECK(loss.at(0) == doctest::Approx(expect / 3).epsilon(1e-12));
}

TEST_CASE("initial loss with an untrained branch equals the bare backbone loss") {
  const auto cfg = codec_config();
  const auto data = small_dataset<double>();
  const auto dataf = small_dataset<float>();
  Backbone<double> model(cfg, 6);
  Backbone<float> modelf(cfg, 6);
  for (const auto& v : all_variants()) {
    AdaptorBranch<double> branch(model, v);
    AdaptorBranch<float> branchf(modelf, v);
    Rng r1(7), r2(7);
    const std::vector<std::size_t> idx{4, 5, 6, 7};
    const auto mask = draw_dropout(4, 0.5, 0.5, 0.5, r1);
    r2 = r1;
    const auto b = make_batch(data, idx, mask);
    Rng a1 = r1, a2 = r1;
    CHECK(edm_loss<double>(model, &branch, b, a1).at(0) == edm_loss<double>(model, nullptr, b, a2).at(0));
    const auto bf = make_batch(dataf, idx, mask);
    Rng f1 = r1, f2 = r1;
    const float lb = edm_loss<float>(modelf, &branchf, bf, f1).at(0);
    const float l0 = edm_loss<float>(modelf, nullptr, bf, f2).at(0);
    CHECK(std::abs(lb - l0) <= 1e-6f * l0);
  }
}

TEST_CASE("classifier-free guidance") {
  const auto cfg = codec_config();
  Backbone<double> model(cfg, 8);
  AdaptorBranch<double> branch(model, AdaptorVariant::lilac(true, true));
  Rng rng(9);
  branch.visit([&](const std::string&, Tensor<double>& t) {
    for (auto& v : t.mutable_data()) v += 0.05 * rng.normal();
  });
  const std::size_t B = 2, T = 8;
  const auto x = random_tensor<double>({B, cfg.latent_channels, T}, rng);
  const std::vector<double> sigma{0.4, 2.0};
  auto cond = random_conditions<double>(cfg, B, T, rng);
  cond.style = {0, 2};
  cond.keep_context = {true, true};
  const auto c = random_tensor<double>({B, kPitchClasses, T}, rng);
  for (const AdaptorBranch<double>* br : {static_cast<const AdaptorBranch<double>*>(nullptr),
                                          static_cast<const AdaptorBranch<double>*>(&branch)}) {
    const auto d_cond = conditioned_denoise<double>(model, br, x, sigma, cond, c);
    Conditions<double> null;
    null.style = {-1, -1};
    null.keep_context = {false, false};
    const auto d_null = conditioned_denoise<double>(model, br, x, sigma, null, Tensor<double>::zeros(c.shape()));
    CHECK(bit_equal(cfg_denoise<double>(model, br, x, sigma, cond, c, 1.0), d_cond));
    CHECK(bit_equal(cfg_denoise<double>(model, br, x, sigma, cond, c, 0.0), d_null));
    const auto two = cfg_denoise<double>(model, br, x, sigma, cond, c, 2.0);
    for (std::size_t i = 0; i < two.numel(); ++i)
      CHECK(two.at(i) == doctest::Approx(2 * d_cond.at(i) - d_null.at(i)).epsilon(1e-12));
    CHECK(max_abs_diff(d_cond, d_null) > 0);
    CHECK_THROWS_AS(cfg_denoise<double>(model, br, x, sigma, cond, c, -0.5), DomainError);
  }
}

TEST_CASE("non-finite loss aborts training") {
  const auto cfg = codec_config();
  Backbone<double> model(cfg, 10);
  auto data = small_dataset<double>();
  for (auto& z : data.latents) z[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train_backbone(model, data, quick_train()), TrainingError);
}

TEST_CASE("backbone training is deterministic and the log has the documented columns") {
  const auto cfg = codec_config();
  const auto data = small_dataset<float>();
  Backbone<float> a(cfg, 11), b(cfg, 11);
  const auto ra = train_backbone(a, data, quick_train());
  const auto rb = train_backbone(b, data, quick_train());
  REQUIRE(ra.log.size() == 30);
  for (std::size_t i = 0; i < 30; ++i) {
    CHECK(ra.log[i].step == i + 1);
    CHECK(ra.log[i].loss == rb.log[i].loss);
    CHECK(ra.log[i].lr == rb.log[i].lr);
  }
  CHECK(serialize_checkpoint(make_checkpoint(CheckpointKind::Backbone, a.named_parameters(), {})) ==
        serialize_checkpoint(make_checkpoint(CheckpointKind::Backbone, b.named_parameters(), {})));
  const auto p1 = temp_file("bb1.llck"), p2 = temp_file("bb2.llck");
  save_backbone(p1, a, {{"seed", 11}});
  save_backbone(p2, b, {{"seed", 11}});
  CHECK(read_bytes(p1) == read_bytes(p2));
  CHECK(!fs::exists(p1.string() + ".tmp"));

  const auto log = temp_file("log.csv");
  write_train_log(log, ra);
  std::ifstream is(log);
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  CHECK(header == "step,lr,loss,wall_ms");
  CHECK(row.rfind("1,", 0) == 0);
  CHECK(std::count(row.begin(), row.end(), ',') == 3);
  for (const auto& p : {p1, p2, log}) fs::remove(p);
}

TEST_CASE("adaptor training freezes the backbone and is deterministic") {
  const auto cfg = codec_config();
  const auto data = small_dataset<float>();
  Backbone<float> model(cfg, 12);
  const auto before = parameter_digest(model.named_parameters());
  std::vector<std::vector<std::uint8_t>> bytes;
  for (int run = 0; run < 2; ++run) {
    AdaptorBranch<float> branch(model, AdaptorVariant::lilac(false, false));
    const auto init = snapshot(branch.named_parameters());
    train_adaptor(model, branch, data, quick_train());
    CHECK(parameter_digest(model.named_parameters()) == before);
    std::size_t changed = 0, i = 0;
    for (auto& [n, t] : branch.named_parameters()) changed += !bit_equal(t, init[i++]);
    CHECK(changed > 0);
    const auto p = temp_file("adaptor.llck");
    save_adaptor(p, branch, model, {{"condition", "chroma"}});
    bytes.push_back(read_bytes(p));
    fs::remove(p);
  }
  CHECK(bytes[0] == bytes[1]);
}

TEST_CASE("adaptor training rejects mismatched condition data") {
  const auto cfg = codec_config();
  auto data = small_dataset<float>();
  data.condition_channels = 8;
  Backbone<float> model(cfg, 13);
  AdaptorBranch<float> branch(model, AdaptorVariant::lilac(false, false));
  CHECK_THROWS(train_adaptor(model, branch, data, quick_train()));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto cfg = codec_config();
  Backbone<float> model(cfg, 14);
  AdaptorBranch<float> branch(model, AdaptorVariant::lilac(true, true));
  Rng rng(15);
  branch.visit([&](const std::string&, Tensor<float>& t) {
    for (auto& v : t.mutable_data()) v += static_cast<float>(rng.normal());
  });
  const auto bp = temp_file("rt_backbone.llck"), ap = temp_file("rt_adaptor.llck");
  save_backbone(bp, model, {{"note", "x"}});
  save_adaptor(ap, branch, model, {{"condition", "chroma"}});
  auto loaded = load_backbone<float>(bp);
  CHECK(parameter_digest(loaded.named_parameters()) == parameter_digest(model.named_parameters()));
  CHECK(load_checkpoint(bp).metadata.at("note") == "x");
  auto lb = load_adaptor<float>(ap, loaded);
  CHECK(lb.variant() == branch.variant());
  auto orig = branch.named_parameters();
  auto back = lb.named_parameters();
  REQUIRE(orig.size() == back.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    CHECK(orig[i].first == back[i].first);
    CHECK(bit_equal(orig[i].second, back[i].second));
  }
  const auto ckpt = load_checkpoint(ap);
  CHECK(serialize_checkpoint(parse_checkpoint(serialize_checkpoint(ckpt))) == serialize_checkpoint(ckpt));

  // A branch refuses a backbone other than the one it was trained against.
  Backbone<float> other(cfg, 99);
  CHECK_THROWS_AS(load_adaptor<float>(ap, other), ConfigError);
  fs::remove(bp);
  fs::remove(ap);
}

TEST_CASE("checkpoint corruption raises distinct errors without partial state") {
  const auto cfg = codec_config();
  Backbone<float> model(cfg, 16);
  const auto good = serialize_checkpoint(make_checkpoint(CheckpointKind::Backbone, model.named_parameters(),
                                                         {{"config", to_json(cfg)}}));
  CHECK_NOTHROW(parse_checkpoint(good));

  auto magic = good;
  magic[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(magic), FormatError);
  auto version = good;
  version[4] = 2;
  CHECK_THROWS_AS(parse_checkpoint(version), VersionError);
  auto kind = good;
  kind[8] = 7;
  CHECK_THROWS_AS(parse_checkpoint(kind), FormatError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
    const std::vector<std::uint8_t> truncated(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(parse_checkpoint(truncated), IntegrityError);
  }
  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(parse_checkpoint(trailing), IntegrityError);

  const std::uint32_t meta_len = good[9] | good[10] << 8 | good[11] << 16 | static_cast<std::uint32_t>(good[12]) << 24;
  const std::size_t count_at = 13 + meta_len;
  auto more = good;
  more[count_at] += 1;
  CHECK_THROWS_AS(parse_checkpoint(more), IntegrityError);
  auto fewer = good;
  fewer[count_at] -= 1;
  CHECK_THROWS_AS(parse_checkpoint(fewer), IntegrityError);

  // Loading into a model with the wrong tensor set leaves it untouched.
  auto ckpt = parse_checkpoint(good);
  ckpt.tensors.pop_back();
  Backbone<float> target(cfg, 17);
  const auto before = parameter_digest(target.named_parameters());
  CHECK_THROWS(assign_parameters(ckpt, target.named_parameters()));
  CHECK(parameter_digest(target.named_parameters()) == before);
  auto bad_shape = parse_checkpoint(good);
  bad_shape.tensors.back().shape.push_back(1);
  CHECK_THROWS(assign_parameters(bad_shape, target.named_parameters()));
  CHECK(parameter_digest(target.named_parameters()) == before);

  const auto p = temp_file("corrupt.llck");
  {
    std::ofstream os(p, std::ios::binary);
    os.write(reinterpret_cast<const char*>(magic.data()), static_cast<std::streamsize>(magic.size()));
  }
  CHECK_THROWS_AS(load_backbone<float>(p), FormatError);
  fs::remove(p);
  CHECK_THROWS_AS(load_checkpoint(p), IoError);
}

TEST_CASE("sha256 matches known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
