#include "lilac/conditions.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "lilac/error.hpp"

namespace lilac {

std::string to_string(ConditionKind kind) {
  switch (kind) {
    case ConditionKind::Chroma:
      return "chroma";
    case ConditionKind::ChromaThresholded:
      return "thresh";
    case ConditionKind::Chord:
      return "chord";
  }
  return "chroma";
}

ConditionKind parse_condition_kind(const std::string& name) {
  if (name == "chroma") return ConditionKind::Chroma;
  if (name == "thresh") return ConditionKind::ChromaThresholded;
  if (name == "chord") return ConditionKind::Chord;
  throw ConfigError("unknown condition kind '" + name + "'");
}

void normalize_frames(std::span<double> values, std::size_t frames) {
  if (frames == 0) return;
  const std::size_t channels = values.size() / frames;
  for (std::size_t t = 0; t < frames; ++t) {
    double peak = 0;
    for (std::size_t c = 0; c < channels; ++c) peak = std::max(peak, values[c * frames + t]);
    if (peak <= 0) continue;
    for (std::size_t c = 0; c < channels; ++c) values[c * frames + t] /= peak;
  }
}

namespace {

struct FftwPlan {
  std::size_t n;
  double* in;
  fftw_complex* out;
  fftw_plan plan;

  explicit FftwPlan(std::size_t size) : n(size) {
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  ~FftwPlan() {
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  FftwPlan(const FftwPlan&) = delete;
  FftwPlan& operator=(const FftwPlan&) = delete;
};

}  // namespace

Chromagram chromagram_from_audio(std::span<const double> samples, double sample_rate, std::size_t frame_size,
                                 std::size_t hop) {
  if (samples.empty()) throw ContractError("chromagram: empty waveform");
  if (!(sample_rate > 0)) throw ContractError("chromagram: sample rate must be positive");
  if (frame_size < 2 || hop == 0) throw ConfigError("chromagram: invalid frame size or hop");

  const std::size_t n = samples.size();
  const std::size_t frames = n <= frame_size ? 1 : 1 + (n - frame_size + hop - 1) / hop;

  std::vector<double> window(frame_size);
  for (std::size_t i = 0; i < frame_size; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(frame_size));
  }
  // pitch class per bin; -1 for ignored bins
  std::vector<int> bin_class(frame_size / 2 + 1, -1);
  for (std::size_t k = 1; k <= frame_size / 2; ++k) {
    const double f = static_cast<double>(k) * sample_rate / static_cast<double>(frame_size);
    if (f < 27.5) continue;
    const long midi = std::lround(12.0 * std::log2(f / 440.0) + 69.0);
    bin_class[k] = static_cast<int>(((midi % 12) + 12) % 12);
  }

  Chromagram out;
  out.frames = frames;
  out.frame_rate_hz = sample_rate / static_cast<double>(hop);
  out.values.assign(kPitchClasses * frames, 0.0);
  FftwPlan fft(frame_size);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t start = t * hop;
    for (std::size_t i = 0; i < frame_size; ++i) {
      fft.in[i] = start + i < n ? samples[start + i] * window[i] : 0.0;
    }
    fftw_execute(fft.plan);
    for (std::size_t k = 1; k <= frame_size / 2; ++k) {
      if (bin_class[k] < 0) continue;
      const double re = fft.out[k][0];
      const double im = fft.out[k][1];
      out.values[static_cast<std::size_t>(bin_class[k]) * frames + t] += re * re + im * im;
    }
  }
  normalize_frames(out.values, frames);
  return out;
}

Chromagram chroma_from_noteroll(std::span<const double> roll, std::size_t frames, double frame_rate_hz) {
  if (frames == 0 || roll.size() != kPitchClasses * frames) {
    throw DimensionError("note roll must be 12 x frames");
  }
  for (double v : roll) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("note roll values must lie in [0, 1]");
  }
  Chromagram out{frames, frame_rate_hz, std::vector<double>(roll.begin(), roll.end())};
  normalize_frames(out.values, frames);
  return out;
}

ConditionMap to_condition(const Chromagram& chroma) {
  return {ConditionKind::Chroma, chroma.frames, chroma.frame_rate_hz, chroma.values};
}

Chromagram to_chromagram(const ConditionMap& map) { return {map.frames, map.frame_rate_hz, map.values}; }

std::vector<double> window_average(std::span<const double> values, std::size_t channels, std::size_t frames,
                                   std::size_t target_frames) {
  if (target_frames == 0) throw ContractError("resample: target_frames must be >= 1");
  if (values.size() != channels * frames) throw DimensionError("resample: values do not match channels x frames");
  std::vector<double> out(channels * target_frames, 0.0);
  if (target_frames == frames) {
    std::copy(values.begin(), values.end(), out.begin());
    return out;
  }
  // Target frame j covers source interval [j * r, (j + 1) * r) with r = frames / target_frames.
  const double ratio = static_cast<double>(frames) / static_cast<double>(target_frames);
  for (std::size_t j = 0; j < target_frames; ++j) {
    const double lo = static_cast<double>(j) * ratio;
    const double hi = static_cast<double>(j + 1) * ratio;
    const auto first = static_cast<std::size_t>(std::floor(lo));
    const auto last = std::min(frames, static_cast<std::size_t>(std::ceil(hi)));
    for (std::size_t s = first; s < last; ++s) {
      const double overlap = std::min(hi, static_cast<double>(s + 1)) - std::max(lo, static_cast<double>(s));
      if (overlap <= 0) continue;
      for (std::size_t c = 0; c < channels; ++c) out[c * target_frames + j] += overlap * values[c * frames + s];
    }
    for (std::size_t c = 0; c < channels; ++c) out[c * target_frames + j] /= ratio;
  }
  return out;
}

ConditionMap resample_condition(const ConditionMap& map, std::size_t target_frames) {
  ConditionMap out = map;
  out.frames = target_frames;
  if (map.frames > 0 && map.frame_rate_hz > 0) {
    out.frame_rate_hz = map.frame_rate_hz * static_cast<double>(target_frames) / static_cast<double>(map.frames);
  }
  if (target_frames == map.frames) return out;
  out.values = window_average(map.values, kPitchClasses, map.frames, target_frames);
  switch (map.kind) {
    case ConditionKind::Chroma:
      normalize_frames(out.values, target_frames);
      break;
    case ConditionKind::ChromaThresholded:
      for (auto& v : out.values) v = v >= 0.5 ? 1.0 : 0.0;
      break;
    case ConditionKind::Chord:
      for (auto& v : out.values) v = std::clamp(std::round(v), 0.0, 2.0);
      break;
  }
  return out;
}

ConditionMap threshold_chroma(const Chromagram& chroma, double theta) {
  if (!(theta > 0.0 && theta <= 1.0)) throw ContractError("threshold must lie in (0, 1]");
  ConditionMap out{ConditionKind::ChromaThresholded, chroma.frames, chroma.frame_rate_hz, chroma.values};
  for (auto& v : out.values) v = v >= theta ? 1.0 : 0.0;
  return out;
}

ConditionMap threshold_chroma(const ConditionMap& map, double theta) { return threshold_chroma(to_chromagram(map), theta); }

ConditionMap encode_chords(const ChordSequence& seq, std::size_t frames, double frame_rate_hz) {
  if (seq.events.empty() || seq.events.front().start_frame != 0) {
    throw ContractError("chord sequence does not cover frame 0");
  }
  for (std::size_t i = 1; i < seq.events.size(); ++i) {
    if (seq.events[i].start_frame <= seq.events[i - 1].start_frame) {
      throw ContractError("chord events must be sorted and non-overlapping");
    }
  }
  if (seq.events.back().start_frame >= frames) throw ContractError("chord event starts beyond the last frame");

  ConditionMap out{ConditionKind::Chord, frames, frame_rate_hz, std::vector<double>(kPitchClasses * frames, 0.0)};
  for (std::size_t i = 0; i < seq.events.size(); ++i) {
    const auto& ev = seq.events[i];
    const std::size_t end = i + 1 < seq.events.size() ? seq.events[i + 1].start_frame : frames;
    if (ev.root == kNoChord) continue;
    if (ev.root < 0 || ev.root >= 12) throw ContractError("chord root must be a pitch class 0-11");
    for (std::size_t t = ev.start_frame; t < end; ++t) {
      for (int pc : ev.tones) {
        if (pc < 0 || pc >= 12) throw ContractError("chord tone must be a pitch class 0-11");
        out.values[static_cast<std::size_t>(pc) * frames + t] = 1.0;
      }
      out.values[static_cast<std::size_t>(ev.root) * frames + t] = 2.0;
    }
  }
  return out;
}

double cmse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ContractError("cmse: chromagram shapes differ");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

double cmse(const Chromagram& a, const Chromagram& b) {
  if (a.frames != b.frames) throw ContractError("cmse: chromagram lengths differ; resample first");
  return cmse(std::span<const double>(a.values), std::span<const double>(b.values));
}

void write_condition_csv(const std::filesystem::path& path, const ConditionMap& map) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os.precision(17);
  os << "# kind=" << to_string(map.kind) << " rate=" << map.frame_rate_hz << '\n';
  for (std::size_t t = 0; t < map.frames; ++t) {
    for (std::size_t c = 0; c < kPitchClasses; ++c) os << (c ? "," : "") << map.at(c, t);
    os << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

ConditionMap read_condition_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  ConditionMap map;
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string tok;
      while (hs >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const auto key = tok.substr(0, eq);
        const auto val = tok.substr(eq + 1);
        if (key == "kind") map.kind = parse_condition_kind(val);
        if (key == "rate") map.frame_rate_hz = std::stod(val);
      }
      continue;
    }
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("malformed value '" + cell + "' in " + path.string());
      }
    }
    if (row.size() != kPitchClasses) {
      throw IoError("expected 12 values per row in " + path.string() + ", got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  map.frames = rows.size();
  map.values.assign(kPitchClasses * map.frames, 0.0);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t c = 0; c < kPitchClasses; ++c) map.values[c * map.frames + t] = rows[t][c];
  }
  return map;
}

}  // namespace lilac
