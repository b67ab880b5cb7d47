#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace lilac {

inline constexpr std::size_t kPitchClasses = 12;
inline constexpr int kNoChord = -1;

// 12 x frames pitch-class energies, channel-major (values[pc * frames + t]).
// Channel 0 = C, 9 = A, 11 = B. Each frame's maximum is 1 unless the frame is silent.
struct Chromagram {
  std::size_t frames = 0;
  double frame_rate_hz = 0;
  std::vector<double> values;

  double at(std::size_t pc, std::size_t t) const { return values[pc * frames + t]; }
};

struct ChordEvent {
  std::size_t start_frame = 0;
  int root = kNoChord;     // pitch class 0-11, or kNoChord
  std::vector<int> tones;  // pitch classes of the chord, root included
};

// Sorted, non-overlapping events; each lasts until the next event's start.
struct ChordSequence {
  std::vector<ChordEvent> events;
};

enum class ConditionKind { Chroma, ChromaThresholded, Chord };

std::string to_string(ConditionKind kind);  // chroma | thresh | chord
ConditionKind parse_condition_kind(const std::string& name);

// N x frames control feature map, channel-major. N is always 12.
struct ConditionMap {
  ConditionKind kind = ConditionKind::Chroma;
  std::size_t frames = 0;
  double frame_rate_hz = 0;
  std::vector<double> values;

  double at(std::size_t ch, std::size_t t) const { return values[ch * frames + t]; }
};

// Divides each frame by its maximum; all-zero frames stay zero.
void normalize_frames(std::span<double> values, std::size_t frames);

// Magnitude STFT with a Hann window. Each positive-frequency bin's power goes to
// pitch class round(12 log2(f / 440) + 69) mod 12; frames are then max-normalized.
// Bins below 27.5 Hz are ignored. Inputs shorter than one frame are zero-padded.
Chromagram chromagram_from_audio(std::span<const double> samples, double sample_rate,
                                 std::size_t frame_size = 4096, std::size_t hop = 2048);

// Roll values must lie in [0, 1]; the result is max-normalized per frame.
Chromagram chroma_from_noteroll(std::span<const double> roll, std::size_t frames, double frame_rate_hz);

ConditionMap to_condition(const Chromagram& chroma);
Chromagram to_chromagram(const ConditionMap& map);

// Area-weighted window average of each channel from frames to target_frames.
// Preserves each channel's mean.
std::vector<double> window_average(std::span<const double> values, std::size_t channels, std::size_t frames,
                                   std::size_t target_frames);

// Window average, then restore the kind's value constraint: chroma is renormalized,
// chord values are rounded to {0, 1, 2}, thresholded values to {0, 1}.
ConditionMap resample_condition(const ConditionMap& map, std::size_t target_frames);

// 1 where the chroma value is >= theta, else 0.
ConditionMap threshold_chroma(const Chromagram& chroma, double theta = 0.9);
ConditionMap threshold_chroma(const ConditionMap& map, double theta = 0.9);

// Root = 2, other chord tones = 1, rest = 0; NO_CHORD frames are all zero.
ConditionMap encode_chords(const ChordSequence& seq, std::size_t frames, double frame_rate_hz = 0);

// Mean over all 12 x T entries of the squared difference.
double cmse(const Chromagram& a, const Chromagram& b);
double cmse(std::span<const double> a, std::span<const double> b);

// CSV: optional "# kind=<chroma|chord|thresh> rate=<hz>" header, then one row of
// 12 comma-separated values per frame.
void write_condition_csv(const std::filesystem::path& path, const ConditionMap& map);
ConditionMap read_condition_csv(const std::filesystem::path& path);

}  // namespace lilac
