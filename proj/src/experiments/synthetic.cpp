#include "lilac/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lilac/error.hpp"
#include "lilac/rng.hpp"

namespace lilac {

namespace {

constexpr int kMajorScale[7] = {0, 2, 4, 5, 7, 9, 11};

enum class Voicing { Pad = 0, Arpeggio = 1, RootPulse = 2 };

struct Chord {
  int root;
  int tones[3];  // root, third, fifth
};

Chord diatonic_triad(int key, int degree) {
  Chord c{};
  for (int k = 0; k < 3; ++k) c.tones[k] = (key + kMajorScale[(degree + 2 * k) % 7]) % 12;
  c.root = c.tones[0];
  return c;
}

// Pattern value of chord tone `which` (0 root, 1 third, 2 fifth) at frame offset t.
double voicing_level(Voicing v, int which, std::size_t t, std::size_t phase, double coupling) {
  double pattern = 1.0;
  switch (v) {
    case Voicing::Pad:
      pattern = 1.0;
      break;
    case Voicing::Arpeggio: {
      static constexpr int order[4] = {0, 1, 2, 1};
      pattern = order[(t + phase) % 4] == which ? 1.0 : 0.0;
      break;
    }
    case Voicing::RootPulse:
      pattern = which == 0 ? 1.0 : ((t + phase) % 2 == 0 ? 0.5 : 0.0);
      break;
  }
  return (1.0 - coupling) + coupling * pattern;
}

void voice_stem(std::vector<double>& roll, std::size_t frames, const std::vector<Chord>& chords,
                std::size_t chord_frames, Voicing voicing, std::size_t phase, double coupling) {
  for (std::size_t t = 0; t < frames; ++t) {
    const Chord& c = chords[t / chord_frames];
    for (int k = 0; k < 3; ++k) {
      auto& cell = roll[static_cast<std::size_t>(c.tones[k]) * frames + t];
      cell = std::max(cell, voicing_level(voicing, k, t, phase, coupling));
    }
  }
}

}  // namespace

void DataConfig::validate() const {
  if (frames == 0 || chord_frames == 0) throw ConfigError("data: frames and chord_frames must be positive");
  if (num_styles < 2) throw ConfigError("data: need at least 2 styles");
  if (style_coupling < 0 || style_coupling > 1) throw ConfigError("data: style_coupling must lie in [0, 1]");
  if (passing_prob < 0 || passing_prob > 1) throw ConfigError("data: passing_prob must lie in [0, 1]");
  if (passing_level < 0 || passing_level > 1) throw ConfigError("data: passing_level must lie in [0, 1]");
  if (texture_amplitude < 0) throw ConfigError("data: texture_amplitude must be >= 0");
}

double style_envelope(int style, std::size_t t, std::size_t num_styles) {
  const double phase = 2.0 * std::numbers::pi * static_cast<double>(style) / static_cast<double>(num_styles);
  return 0.75 + 0.25 * std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / 8.0 + phase);
}

std::vector<SyntheticSample> generate_dataset(std::size_t n, const DataConfig& config, std::uint64_t seed) {
  config.validate();
  const Rng root(seed);
  const std::size_t T = config.frames;
  const std::size_t num_chords = (T + config.chord_frames - 1) / config.chord_frames;
  std::vector<SyntheticSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.split(i);
    SyntheticSample& s = out[i];
    s.frames = T;
    const int key = static_cast<int>(rng.below(12));
    std::vector<Chord> chords;
    for (std::size_t j = 0; j < num_chords; ++j) {
      const int degree = j == 0 ? 0 : static_cast<int>(rng.below(6));  // I..vi, no diminished triad
      chords.push_back(diatonic_triad(key, degree));
      s.chord_truth.events.push_back({j * config.chord_frames, chords.back().root,
                                      {chords.back().tones[0], chords.back().tones[1], chords.back().tones[2]}});
    }
    s.style_id = static_cast<int>(rng.below(config.num_styles));

    s.note_roll.assign(kPitchClasses * T, 0.0);
    voice_stem(s.note_roll, T, chords, config.chord_frames, static_cast<Voicing>(s.style_id % 3),
               rng.below(4), config.style_coupling);
    s.passing.assign(T, false);
    for (std::size_t t = 0; t < T; ++t) {
      if (!rng.bernoulli(config.passing_prob)) continue;
      const Chord& c = chords[t / config.chord_frames];
      std::vector<int> candidates;
      for (int deg : kMajorScale) {
        const int pc = (key + deg) % 12;
        if (pc != c.tones[0] && pc != c.tones[1] && pc != c.tones[2]) candidates.push_back(pc);
      }
      const int pc = candidates[rng.below(candidates.size())];
      auto& cell = s.note_roll[static_cast<std::size_t>(pc) * T + t];
      cell = std::max(cell, config.passing_level);
      s.passing[t] = true;
    }

    s.context_roll.assign(kPitchClasses * T, 0.0);
    const std::size_t stems = 1 + rng.below(3);
    for (std::size_t k = 0; k < stems; ++k) {
      std::vector<double> stem(kPitchClasses * T, 0.0);
      voice_stem(stem, T, chords, config.chord_frames, static_cast<Voicing>(rng.below(3)), rng.below(4),
                 config.style_coupling);
      for (std::size_t j = 0; j < stem.size(); ++j) s.context_roll[j] = std::min(1.0, s.context_roll[j] + stem[j]);
    }
    s.texture_seed = rng.next_u64();
  }
  return out;
}

LatentCodec::LatentCodec(std::size_t channels, std::size_t num_styles, double texture_amplitude, std::uint64_t seed)
    : channels_(channels), num_styles_(num_styles), texture_amplitude_(texture_amplitude) {
  if (channels < kPitchClasses + num_styles) {
    throw ConfigError("codec: " + std::to_string(channels) + " channels cannot hold 12 chroma + " +
                      std::to_string(num_styles) + " style rows");
  }
  // Modified Gram-Schmidt on the columns of a seeded Gaussian matrix.
  Rng rng(seed);
  const std::size_t C = channels;
  std::vector<double> a(C * C);
  for (auto& v : a) v = rng.normal();
  for (std::size_t j = 0; j < C; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0;
      for (std::size_t r = 0; r < C; ++r) dot += a[r * C + j] * a[r * C + k];
      for (std::size_t r = 0; r < C; ++r) a[r * C + j] -= dot * a[r * C + k];
    }
    double norm = 0;
    for (std::size_t r = 0; r < C; ++r) norm += a[r * C + j] * a[r * C + j];
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < C; ++r) a[r * C + j] /= norm;
  }
  q_ = std::move(a);
}

std::vector<double> LatentCodec::encode_features(const std::vector<double>& features, std::size_t frames) const {
  const std::size_t C = channels_;
  if (features.size() != C * frames) throw DimensionError("codec: features must be C x frames");
  std::vector<double> z(C * frames, 0.0);
  for (std::size_t r = 0; r < C; ++r) {
    for (std::size_t k = 0; k < C; ++k) {
      const double q = q_[r * C + k];
      for (std::size_t t = 0; t < frames; ++t) z[r * frames + t] += q * features[k * frames + t];
    }
  }
  return z;
}

std::vector<double> LatentCodec::features(const std::vector<double>& latent, std::size_t frames) const {
  const std::size_t C = channels_;
  if (latent.size() != C * frames) throw DimensionError("codec: latent must be C x frames");
  std::vector<double> f(C * frames, 0.0);
  for (std::size_t k = 0; k < C; ++k) {
    for (std::size_t r = 0; r < C; ++r) {
      const double q = q_[r * C + k];
      for (std::size_t t = 0; t < frames; ++t) f[k * frames + t] += q * latent[r * frames + t];
    }
  }
  return f;
}

std::vector<double> LatentCodec::encode(const SyntheticSample& sample) const {
  const std::size_t T = sample.frames;
  if (sample.style_id < 0 || static_cast<std::size_t>(sample.style_id) >= num_styles_) {
    throw ConfigError("codec: style id outside the codec's style rows");
  }
  std::vector<double> f(channels_ * T, 0.0);
  std::copy(sample.note_roll.begin(), sample.note_roll.end(), f.begin());
  const std::size_t style_row = kPitchClasses + static_cast<std::size_t>(sample.style_id);
  for (std::size_t t = 0; t < T; ++t) f[style_row * T + t] = style_envelope(sample.style_id, t, num_styles_);
  Rng noise(sample.texture_seed);
  for (std::size_t r = kPitchClasses + num_styles_; r < channels_; ++r) {
    for (std::size_t t = 0; t < T; ++t) f[r * T + t] = texture_amplitude_ * noise.normal();
  }
  return encode_features(f, T);
}

std::vector<double> LatentCodec::encode_context(const SyntheticSample& sample) const {
  std::vector<double> f(channels_ * sample.frames, 0.0);
  std::copy(sample.context_roll.begin(), sample.context_roll.end(), f.begin());
  return encode_features(f, sample.frames);
}

LatentCodec::Probe LatentCodec::decode_probe(const std::vector<double>& latent, std::size_t frames) const {
  const auto f = features(latent, frames);
  Probe p;
  p.chroma.frames = frames;
  p.chroma.values.assign(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(kPitchClasses * frames));
  for (auto& v : p.chroma.values) v = std::clamp(v, 0.0, 1.0);
  const auto style_begin = f.begin() + static_cast<std::ptrdiff_t>(kPitchClasses * frames);
  p.style_scores.assign(style_begin, style_begin + static_cast<std::ptrdiff_t>(num_styles_ * frames));
  return p;
}

double style_similarity(const std::vector<double>& style_scores, std::size_t frames, int style,
                        std::size_t num_styles) {
  if (style_scores.size() != num_styles * frames) throw DimensionError("style scores must be S x frames");
  double dot = 0, norm = 0;
  for (std::size_t s = 0; s < num_styles; ++s) {
    double m = 0;
    for (std::size_t t = 0; t < frames; ++t) m += style_scores[s * frames + t];
    m /= static_cast<double>(frames);
    norm += m * m;
    if (static_cast<int>(s) == style) dot = m;
  }
  return norm > 0 ? dot / std::sqrt(norm) : 0.0;
}

}  // namespace lilac
