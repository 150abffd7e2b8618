#pragma once

#include <litefew/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

namespace litefew {

inline constexpr int kSampleRate = 16000;

struct AudioClip {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = kSampleRate;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

inline void validate_clip(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate)
    throw ValidationError("audio must be 16 kHz, got " +
                          std::to_string(clip.sample_rate));
  if (clip.samples.empty()) throw ValidationError("audio clip is empty");
  for (double s : clip.samples)
    if (!std::isfinite(s)) throw ValidationError("audio clip contains non-finite samples");
}

// C x T real matrix plus its frame rate; houses latent and spectral features.
struct FeatureMap {
  Tensor values;  // C x T
  double frame_rate_hz = 0.0;

  int64_t channels() const { return values.dim(0); }
  int64_t frames() const { return values.dim(1); }
};

namespace dsp {

struct FbankConfig {
  int window_ms = 25;
  int hop_ms = 10;
  int n_mels = 40;
  int fft_size = 512;
  double preemphasis = 0.97;
  double log_floor = 1e-10;
  double mel_low_hz = 20.0;
  double mel_high_hz = 7600.0;
};

inline void validate_fbank_config(const FbankConfig& cfg) {
  if (cfg.window_ms <= cfg.hop_ms || cfg.hop_ms <= 0)
    throw ValidationError("fbank: need window_ms > hop_ms > 0");
  if (cfg.n_mels < 1) throw ValidationError("fbank: n_mels must be >= 1");
  const int win = cfg.window_ms * kSampleRate / 1000;
  if (cfg.fft_size < win || (cfg.fft_size & (cfg.fft_size - 1)) != 0)
    throw ValidationError("fbank: fft_size must be a power of two >= window length");
  if (cfg.log_floor <= 0) throw ValidationError("fbank: log_floor must be positive");
}

// in-place iterative radix-2 Cooley-Tukey
inline void fft(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// triangular filters, HTK mel scale; weights[m][k] over fft_size/2+1 bins
inline std::vector<std::vector<double>> mel_filterbank(const FbankConfig& cfg) {
  const int n_bins = cfg.fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.mel_low_hz);
  const double mel_hi = hz_to_mel(cfg.mel_high_hz);
  std::vector<double> edges(static_cast<size_t>(cfg.n_mels) + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));
  std::vector<std::vector<double>> w(cfg.n_mels, std::vector<double>(n_bins, 0.0));
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double f0 = edges[m], f1 = edges[m + 1], f2 = edges[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * kSampleRate / cfg.fft_size;
      if (f > f0 && f < f1)
        w[m][k] = (f - f0) / (f1 - f0);
      else if (f >= f1 && f < f2)
        w[m][k] = (f2 - f) / (f2 - f1);
    }
  }
  return w;
}

inline int64_t fbank_frame_count(int64_t n_samples, const FbankConfig& cfg) {
  const int64_t win = cfg.window_ms * kSampleRate / 1000;
  const int64_t hop = cfg.hop_ms * kSampleRate / 1000;
  if (n_samples < win) return 0;
  return 1 + (n_samples - win) / hop;
}

// log-Mel filterbank energies, n_mels x T at 1000/hop_ms frames per second
inline FeatureMap fbank(const AudioClip& clip, const FbankConfig& cfg) {
  validate_clip(clip);
  validate_fbank_config(cfg);
  const int64_t win = cfg.window_ms * kSampleRate / 1000;
  const int64_t hop = cfg.hop_ms * kSampleRate / 1000;
  const int64_t n = static_cast<int64_t>(clip.samples.size());
  if (n < win)
    throw ValidationError("fbank: clip has " + std::to_string(n) +
                          " samples, needs at least " + std::to_string(win));
  const int64_t t_out = fbank_frame_count(n, cfg);

  // global pre-emphasis
  std::vector<double> pre(clip.samples.size());
  pre[0] = clip.samples[0] * (1.0 - cfg.preemphasis);
  for (size_t i = 1; i < pre.size(); ++i)
    pre[i] = clip.samples[i] - cfg.preemphasis * clip.samples[i - 1];

  std::vector<double> hamming(static_cast<size_t>(win));
  for (int64_t i = 0; i < win; ++i)
    hamming[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (win - 1));

  const auto filters = mel_filterbank(cfg);
  const int n_bins = cfg.fft_size / 2 + 1;

  Tensor out = Tensor::zeros({cfg.n_mels, t_out});
  std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.fft_size));
  std::vector<double> power(static_cast<size_t>(n_bins));
  for (int64_t t = 0; t < t_out; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    const double* frame = pre.data() + t * hop;
    for (int64_t i = 0; i < win; ++i) buf[i] = frame[i] * hamming[i];
    fft(buf);
    for (int k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (int k = 0; k < n_bins; ++k) e += filters[m][k] * power[k];
      out.data()[m * t_out + t] = std::log(std::max(e, cfg.log_floor));
    }
  }
  return FeatureMap{out, 1000.0 / cfg.hop_ms};
}

struct VadConfig {
  int frame_ms = 10;
  double noise_percentile = 0.10;
  double threshold_ratio = 20.0;  // in energy, over the noise floor
  double peak_fraction = 0.5;     // cap: threshold never exceeds this x peak
  int hangover_frames = 5;
};

// Last 10 ms frame whose energy clears the adaptive threshold. The threshold
// is relative to the clip's own statistics (gain-invariant):
//   threshold = min(noise_floor * ratio, peak * peak_fraction)
// with noise_floor the 10th percentile of frame energies. The peak cap keeps
// clips with no quiet region (noise throughout) from reporting silence.
// Active runs separated by <= hangover frames merge into one segment; the
// returned end-point is the last raw-active frame of the final segment.
inline std::optional<int64_t> vad_endpoint(const AudioClip& clip,
                                           const VadConfig& cfg = {}) {
  validate_clip(clip);
  const int64_t frame_len = cfg.frame_ms * kSampleRate / 1000;
  const int64_t n_frames = static_cast<int64_t>(clip.samples.size()) / frame_len;
  if (n_frames == 0) return std::nullopt;

  std::vector<double> energy(static_cast<size_t>(n_frames));
  for (int64_t t = 0; t < n_frames; ++t) {
    double e = 0.0;
    const double* x = clip.samples.data() + t * frame_len;
    for (int64_t i = 0; i < frame_len; ++i) e += x[i] * x[i];
    energy[static_cast<size_t>(t)] = e;
  }
  std::vector<double> sorted = energy;
  std::sort(sorted.begin(), sorted.end());
  const auto idx = static_cast<size_t>(
      cfg.noise_percentile * static_cast<double>(n_frames - 1));
  const double noise_floor = sorted[idx];
  const double peak = sorted.back();
  const double threshold =
      std::min(noise_floor * cfg.threshold_ratio, peak * cfg.peak_fraction);

  int64_t last_active = -1;
  for (int64_t t = 0; t < n_frames; ++t)
    if (energy[static_cast<size_t>(t)] > threshold) last_active = t;
  if (last_active < 0) return std::nullopt;
  return last_active;
}

}  // namespace dsp
}  // namespace litefew
