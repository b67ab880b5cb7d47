#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "lilac/conditions.hpp"
#include "lilac/error.hpp"
#include "lilac/rng.hpp"

using namespace lilac;

namespace {

std::vector<double> sine_mix(const std::vector<double>& freqs, double sr, std::size_t n) {
  std::vector<double> s(n, 0.0);
  for (double f : freqs)
    for (std::size_t i = 0; i < n; ++i) s[i] += std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / sr);
  return s;
}

// Direct O(N^2) DFT chroma of one frame; bins folded by nearest MIDI pitch.
std::vector<double> dft_chroma(const std::vector<double>& x, double sr) {
  const std::size_t N = x.size();
  std::vector<double> pc(12, 0.0);
  for (std::size_t k = 1; k <= N / 2; ++k) {
    const double f = static_cast<double>(k) * sr / static_cast<double>(N);
    if (f < 27.5) continue;
    double re = 0, im = 0;
    for (std::size_t i = 0; i < N; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(N));
      const double a = -2 * std::numbers::pi * static_cast<double>(k * i % N) / static_cast<double>(N);
      re += w * x[i] * std::cos(a);
      im += w * x[i] * std::sin(a);
    }
    const double midi = 12 * std::log2(f / 440.0) + 69;
    const long m = std::lround(midi);
    pc[static_cast<std::size_t>(((m % 12) + 12) % 12)] += re * re + im * im;
  }
  const double mx = *std::max_element(pc.begin(), pc.end());
  for (auto& v : pc) v /= mx;
  return pc;
}

ChordSequence triad(int root, bool minor, std::size_t start = 0) {
  ChordEvent e;
  e.start_frame = start;
  e.root = root;
  e.tones = {root, (root + (minor ? 3 : 4)) % 12, (root + 7) % 12};
  return {{e}};
}

Chromagram random_chroma(std::size_t frames, Rng& rng) {
  Chromagram c;
  c.frames = frames;
  c.values.resize(12 * frames);
  for (auto& v : c.values) v = rng.uniform();
  return c;
}

}  // namespace

TEST_CASE("condition kind names") {
  for (auto k : {ConditionKind::Chroma, ConditionKind::ChromaThresholded, ConditionKind::Chord})
    CHECK(parse_condition_kind(to_string(k)) == k);
  CHECK(to_string(ConditionKind::ChromaThresholded) == "thresh");
  CHECK_THROWS_AS(parse_condition_kind("beats"), ConfigError);
}

TEST_CASE("audio chroma: C4 + G4 against a direct DFT") {
  const double sr = 22050;
  const auto x = sine_mix({261.6256, 391.9954}, sr, 4096);
  const auto ch = chromagram_from_audio(x, sr);
  REQUIRE(ch.frames == 1);
  const auto oracle = dft_chroma(x, sr);
  for (std::size_t pc = 0; pc < 12; ++pc) CHECK(ch.at(pc, 0) == doctest::Approx(oracle[pc]).epsilon(1e-9));
  CHECK(std::max(ch.at(0, 0), ch.at(7, 0)) == doctest::Approx(1.0));
  CHECK(std::min(ch.at(0, 0), ch.at(7, 0)) > 0.5);
  for (std::size_t pc = 0; pc < 12; ++pc)
    if (pc != 0 && pc != 7) CHECK(ch.at(pc, 0) <= 0.2);
}

TEST_CASE("audio chroma: 440 Hz peaks at A on every frame; silence stays zero") {
  const double sr = 16000;
  const auto a = chromagram_from_audio(sine_mix({440.0}, sr, 16000), sr);
  CHECK(a.frames == 1 + (16000 - 4096 + 2047) / 2048);
  CHECK(a.frame_rate_hz == doctest::Approx(sr / 2048));
  for (std::size_t t = 0; t < a.frames; ++t) {
    CHECK(a.at(9, t) == 1.0);
    for (std::size_t pc = 0; pc < 12; ++pc)
      if (pc != 9) CHECK(a.at(pc, t) < 1.0);
  }
  const auto s = chromagram_from_audio(std::vector<double>(9000, 0.0), sr);
  for (double v : s.values) CHECK(v == 0.0);
  CHECK_THROWS_AS(chromagram_from_audio(std::vector<double>{}, sr), ContractError);
  CHECK_THROWS_AS(chromagram_from_audio(std::vector<double>{1.0}, 0.0), ContractError);
}

TEST_CASE("note-roll chroma") {
  std::vector<double> roll(12 * 3, 0.0);
  roll[4 * 3 + 0] = 1.0;
  roll[0 * 3 + 1] = 0.5;
  roll[7 * 3 + 1] = 0.25;
  const auto c = chroma_from_noteroll(roll, 3, 11.7);
  CHECK(c.at(4, 0) == 1.0);
  CHECK(c.at(0, 1) == 1.0);
  CHECK(c.at(7, 1) == 0.5);
  for (std::size_t pc = 0; pc < 12; ++pc) CHECK(c.at(pc, 2) == 0.0);
  CHECK(c.frame_rate_hz == 11.7);
  roll[0] = 1.5;
  CHECK_THROWS_AS(chroma_from_noteroll(roll, 3, 11.7), ContractError);
  roll[0] = -0.1;
  CHECK_THROWS_AS(chroma_from_noteroll(roll, 3, 11.7), ContractError);
  CHECK_THROWS_AS(chroma_from_noteroll(roll, 4, 11.7), DimensionError);

  Rng rng(1);
  std::vector<double> onehot(12 * 16, 0.0);
  for (std::size_t t = 0; t < 16; ++t) onehot[rng.below(12) * 16 + t] = 1.0;
  CHECK(chroma_from_noteroll(onehot, 16, 1.0).values == onehot);
}

TEST_CASE("thresholding: examples, inclusive boundary, idempotence") {
  Chromagram c;
  c.frames = 5;
  c.values.assign(60, 0.0);
  c.values[0] = 0.95;
  c.values[1] = 0.9;
  c.values[2] = std::nextafter(0.9, 0.0);
  c.values[3] = 1.0;
  c.values[4] = 0.0;
  const auto t = threshold_chroma(c);
  CHECK(t.kind == ConditionKind::ChromaThresholded);
  CHECK(t.values[0] == 1.0);
  CHECK(t.values[1] == 1.0);
  CHECK(t.values[2] == 0.0);
  CHECK(t.values[3] == 1.0);
  CHECK(t.values[4] == 0.0);

  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = random_chroma(1 + rng.below(20), rng);
    const auto once = threshold_chroma(r);
    const auto twice = threshold_chroma(once);
    CHECK(once.values == twice.values);
    for (std::size_t i = 0; i < r.values.size(); ++i) CHECK(once.values[i] == (r.values[i] >= 0.9 ? 1.0 : 0.0));
  }
}

TEST_CASE("chord encoding: listed examples and NO_CHORD") {
  const auto cmaj = encode_chords(triad(0, false), 1);
  CHECK(cmaj.values == std::vector<double>{2, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0});
  const auto amin = encode_chords(triad(9, true), 1);
  CHECK(amin.values == std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 0, 2, 0, 0});
  ChordSequence none{{ChordEvent{0, kNoChord, {}}}};
  for (double v : encode_chords(none, 4).values) CHECK(v == 0.0);
  CHECK(cmaj.kind == ConditionKind::Chord);
}

TEST_CASE("chord encoding matches rule application for all 24 triads and NO_CHORD") {
  for (int root = 0; root < 12; ++root)
    for (bool minor : {false, true}) {
      ChordSequence seq = triad(root, minor);
      seq.events.push_back({2, kNoChord, {}});
      const auto m = encode_chords(seq, 4);
      for (std::size_t t = 0; t < 4; ++t)
        for (int pc = 0; pc < 12; ++pc) {
          const int third = (root + (minor ? 3 : 4)) % 12, fifth = (root + 7) % 12;
          double want = 0;
          if (t < 2) want = pc == root ? 2 : (pc == third || pc == fifth) ? 1 : 0;
          CHECK(m.at(static_cast<std::size_t>(pc), t) == want);
        }
    }
}

TEST_CASE("chord encoding: value set, single root, transposition rotates") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int root = static_cast<int>(rng.below(12));
    const bool minor = rng.bernoulli(0.5);
    const int k = static_cast<int>(rng.below(12));
    const auto a = encode_chords(triad(root, minor), 1);
    const auto b = encode_chords(triad((root + k) % 12, minor), 1);
    int twos = 0;
    for (std::size_t pc = 0; pc < 12; ++pc) {
      CHECK((a.values[pc] == 0 || a.values[pc] == 1 || a.values[pc] == 2));
      twos += a.values[pc] == 2;
      CHECK(b.values[(pc + static_cast<std::size_t>(k)) % 12] == a.values[pc]);
    }
    CHECK(twos == 1);
  }
}

TEST_CASE("chord encoding errors on uncovered frames") {
  ChordSequence late = triad(0, false, 2);
  CHECK_THROWS_AS(encode_chords(late, 4), ContractError);
  CHECK_THROWS_AS(encode_chords(ChordSequence{}, 4), ContractError);
}

TEST_CASE("cmse: examples, scalar-loop oracle and properties") {
  Chromagram ones, zeros;
  ones.frames = zeros.frames = 7;
  ones.values.assign(84, 1.0);
  zeros.values.assign(84, 0.0);
  CHECK(cmse(ones, zeros) == 1.0);
  CHECK(cmse(ones, ones) == 0.0);

  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 1 + rng.below(64);
    const auto a = random_chroma(T, rng), b = random_chroma(T, rng);
    double acc = 0;
    for (std::size_t pc = 0; pc < 12; ++pc)
      for (std::size_t t = 0; t < T; ++t) {
        const double d = a.at(pc, t) - b.at(pc, t);
        acc += d * d;
      }
    acc /= static_cast<double>(12 * T);
    CHECK(std::abs(cmse(a, b) - acc) <= 1e-9);
    CHECK(cmse(a, b) == cmse(b, a));
    CHECK(cmse(a, b) > 0);
    CHECK(cmse(a, b) <= 1.0);
  }
  Chromagram short_one = random_chroma(3, rng);
  CHECK_THROWS_AS(cmse(ones, short_one), ContractError);
}

TEST_CASE("resampling: listed examples and mean preservation") {
  ConditionMap m;
  m.kind = ConditionKind::Chroma;
  m.frames = 4;
  m.values.resize(48);
  for (std::size_t ch = 0; ch < 12; ++ch)
    for (std::size_t t = 0; t < 4; ++t) m.values[ch * 4 + t] = t < 2 ? 0.0 : 1.0;
  const auto avg = window_average(m.values, 12, 4, 2);
  for (std::size_t ch = 0; ch < 12; ++ch) {
    CHECK(avg[ch * 2] == 0.0);
    CHECK(avg[ch * 2 + 1] == 1.0);
  }
  CHECK(resample_condition(m, 4).values == m.values);

  ConditionMap constant = m;
  constant.kind = ConditionKind::ChromaThresholded;
  constant.values.assign(48, 1.0);
  for (std::size_t target : {1, 2, 3, 5, 9}) {
    const auto r = resample_condition(constant, target);
    CHECK(r.frames == target);
    for (double v : r.values) CHECK(v == doctest::Approx(1.0));
  }

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 1 + rng.below(40), target = 1 + rng.below(40);
    std::vector<double> v(12 * T);
    for (auto& x : v) x = rng.uniform();
    const auto w = window_average(v, 12, T, target);
    for (std::size_t ch = 0; ch < 12; ++ch) {
      double ms = 0, mt = 0;
      for (std::size_t t = 0; t < T; ++t) ms += v[ch * T + t];
      for (std::size_t t = 0; t < target; ++t) mt += w[ch * target + t];
      CHECK(mt / static_cast<double>(target) == doctest::Approx(ms / static_cast<double>(T)).epsilon(1e-12));
    }
  }

  const auto chords = encode_chords(triad(2, true), 6);
  const auto rc = resample_condition(chords, 4);
  for (double v : rc.values) CHECK((v == 0 || v == 1 || v == 2));
  CHECK_THROWS(resample_condition(chords, 0));
}

TEST_CASE("condition CSV round trip") {
  Rng rng(6);
  ConditionMap m = to_condition(random_chroma(9, rng));
  m.frame_rate_hz = 11.71875;
  const auto path = std::filesystem::temp_directory_path() / "lilac_condition_roundtrip.csv";
  write_condition_csv(path, m);
  const auto back = read_condition_csv(path);
  CHECK(back.kind == m.kind);
  CHECK(back.frames == m.frames);
  CHECK(back.frame_rate_hz == m.frame_rate_hz);
  CHECK(back.values == m.values);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_condition_csv(path), IoError);
}
