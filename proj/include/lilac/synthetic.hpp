#pragma once

#include <cstdint>
#include <vector>

#include "lilac/conditions.hpp"

namespace lilac {

struct DataConfig {
  std::size_t samples = 2000;
  std::size_t test_samples = 200;
  std::size_t frames = 32;        // latent frames per sample
  std::size_t chord_frames = 8;   // frames per chord
  std::size_t num_styles = 3;
  double style_coupling = 0.6;    // how strongly a style's voicing pattern shows in the chroma (0 = not at all)
  double passing_prob = 0.1;      // per-frame probability of a passing tone
  double passing_level = 0.6;
  double texture_amplitude = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticSample {
  std::size_t frames = 0;
  std::vector<double> note_roll;     // 12 x frames, channel-major, per-frame max 1 or silent
  int style_id = 0;
  std::vector<double> context_roll;  // 12 x frames
  ChordSequence chord_truth;
  std::vector<bool> passing;         // per frame: a passing (non-chord) tone is present
  std::uint64_t texture_seed = 0;
};

// Deterministic amplitude of the style row at frame t; lies in [0.5, 1].
double style_envelope(int style, std::size_t t, std::size_t num_styles);

// Major-key diatonic progressions; each target stem voices its chords with the
// pattern of its style (sustained pad, arpeggio, root pulse), mixed with a plain
// pad by style_coupling. Context = clipped sum of 1-3 other stems over the same chords.
std::vector<SyntheticSample> generate_dataset(std::size_t n, const DataConfig& config, std::uint64_t seed);

// Fixed orthonormal linear codec. Feature rows: 0-11 chroma, 12..12+S-1 style
// one-hot times envelope, remaining rows texture noise.
class LatentCodec {
 public:
  LatentCodec(std::size_t channels, std::size_t num_styles, double texture_amplitude, std::uint64_t seed);

  std::size_t channels() const { return channels_; }
  std::size_t num_styles() const { return num_styles_; }
  const std::vector<double>& mixing() const { return q_; }  // C x C row-major

  // z_t = Q f_t for every frame; returns C x frames channel-major.
  std::vector<double> encode(const SyntheticSample& sample) const;
  // Context roll only (style and texture rows zero).
  std::vector<double> encode_context(const SyntheticSample& sample) const;
  std::vector<double> encode_features(const std::vector<double>& features, std::size_t frames) const;
  // f = Q^T z
  std::vector<double> features(const std::vector<double>& latent, std::size_t frames) const;

  struct Probe {
    Chromagram chroma;                // rows 0-11 of Q^T z clamped to [0, 1]
    std::vector<double> style_scores; // S x frames
  };
  Probe decode_probe(const std::vector<double>& latent, std::size_t frames) const;

 private:
  std::size_t channels_;
  std::size_t num_styles_;
  double texture_amplitude_;
  std::vector<double> q_;
};

// Cosine similarity between onehot(style) and the time-mean of the style scores.
double style_similarity(const std::vector<double>& style_scores, std::size_t frames, int style,
                        std::size_t num_styles);

}  // namespace lilac
