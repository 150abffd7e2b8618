#pragma once

#include <litefew/dsp.hpp>
#include <litefew/rng.hpp>
#include <litefew/tensor.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace litefew::encoder {

inline constexpr int kLayers = 7;
inline constexpr std::array<int64_t, kLayers> kStrides = {5, 2, 2, 2, 2, 2, 2};
inline constexpr std::array<int64_t, kLayers> kKernels = {10, 3, 3, 3, 3, 2, 2};
inline constexpr int64_t kBaseChannels = 512;
inline constexpr int64_t kTotalStride = 320;  // product of kStrides

struct EncoderConfig {
  double alpha = 1.0;  // width multiplier in (0, 1]
  bool use_bias = false;
  bool first_block_norm = true;
  double norm_eps = 1e-5;

  int64_t channels() const {
    return static_cast<int64_t>(std::llround(alpha * kBaseChannels));
  }
};

inline void validate_encoder_config(const EncoderConfig& cfg) {
  if (!(cfg.alpha > 0.0) || cfg.alpha > 1.0)
    throw ValidationError("encoder: alpha must be in (0, 1]");
  if (cfg.channels() < 1) throw ValidationError("encoder: alpha gives zero channels");
}

inline int64_t out_frames(int64_t n_samples) {
  int64_t t = n_samples;
  for (int i = 0; i < kLayers; ++i) {
    t = ops::conv1d_out_len(t, kKernels[i], kStrides[i], 1);
    if (t < 1) return 0;
  }
  return t;
}

// smallest input length producing one output frame (the stack's receptive field)
inline int64_t min_input_samples() {
  int64_t need = 1;
  for (int i = kLayers - 1; i >= 0; --i)
    need = (need - 1) * kStrides[i] + kKernels[i];
  return need;
}

// exact weight count for the 7-layer stack; inner layers carry K*C^2 weights,
// so doubling alpha multiplies their count by 4
inline int64_t param_count(const EncoderConfig& cfg) {
  validate_encoder_config(cfg);
  const int64_t c = cfg.channels();
  int64_t total = 0;
  int64_t c_in = 1;
  for (int i = 0; i < kLayers; ++i) {
    total += kKernels[i] * c_in * c;
    if (cfg.use_bias) total += c;
    c_in = c;
  }
  if (cfg.first_block_norm) total += 2 * c;
  return total;
}

struct ConvFeatureEncoder {
  EncoderConfig config;
  std::vector<Tensor> weights;  // layer l: C x C_in(l) x K_l
  std::vector<Tensor> biases;   // empty unless config.use_bias
  Tensor norm_scale;            // present when first_block_norm
  Tensor norm_shift;
  bool frozen = false;

  std::vector<Tensor> trainable_params() const {
    std::vector<Tensor> out;
    if (frozen) return out;
    for (const auto& w : weights) out.push_back(w);
    for (const auto& b : biases) out.push_back(b);
    if (config.first_block_norm) {
      out.push_back(norm_scale);
      out.push_back(norm_shift);
    }
    return out;
  }

  void set_frozen(bool value) {
    frozen = value;
    for (auto& w : weights) w.set_requires_grad(!value);
    for (auto& b : biases) b.set_requires_grad(!value);
    if (config.first_block_norm) {
      norm_scale.set_requires_grad(!value);
      norm_shift.set_requires_grad(!value);
    }
  }
};

// centered uniform with fan-in scaling
inline Tensor kaiming_uniform(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-bound, bound);
  return t;
}

inline ConvFeatureEncoder make_encoder(const EncoderConfig& cfg, Rng& rng) {
  validate_encoder_config(cfg);
  ConvFeatureEncoder enc;
  enc.config = cfg;
  const int64_t c = cfg.channels();
  int64_t c_in = 1;
  for (int i = 0; i < kLayers; ++i) {
    enc.weights.push_back(
        kaiming_uniform({c, c_in, kKernels[i]}, c_in * kKernels[i], rng));
    enc.weights.back().set_requires_grad(true);
    if (cfg.use_bias) {
      enc.biases.push_back(Tensor::zeros({c}, true));
    }
    c_in = c;
  }
  if (cfg.first_block_norm) {
    enc.norm_scale = Tensor::zeros({c}, true);
    for (int64_t i = 0; i < c; ++i) enc.norm_scale.data()[i] = 1.0;
    enc.norm_shift = Tensor::zeros({c}, true);
  }
  return enc;
}

// 7 blocks of conv (valid, configured stride) -> [instance norm, block 1 only]
// -> gelu; emits frames at 16000/320 = 50 Hz
inline FeatureMap encode(Tape& tape, const ConvFeatureEncoder& enc,
                         const AudioClip& clip) {
  validate_clip(clip);
  const auto n = static_cast<int64_t>(clip.samples.size());
  if (out_frames(n) < 1)
    throw ValidationError("encode: clip has " + std::to_string(n) +
                          " samples, needs at least " +
                          std::to_string(min_input_samples()));
  Tensor x = Tensor::from({1, n}, clip.samples);
  for (int i = 0; i < kLayers; ++i) {
    x = ops::conv1d(tape, x, enc.weights[i], kStrides[i], 1, false);
    if (!enc.biases.empty()) x = ops::bias_add(tape, x, enc.biases[i]);
    if (i == 0 && enc.config.first_block_norm)
      x = ops::instance_norm(tape, x, enc.norm_scale, enc.norm_shift,
                             enc.config.norm_eps);
    x = ops::gelu(tape, x);
  }
  return FeatureMap{x, static_cast<double>(kSampleRate) / kTotalStride};
}

inline FeatureMap encode(const ConvFeatureEncoder& enc, const AudioClip& clip) {
  Tape scratch;
  return encode(scratch, enc, clip);
}

// Per-frame linear bottleneck over the teacher's channel axis. No hidden
// layer, no nonlinearity; encode projects C_T -> C_S, decode projects back.
struct AutoEncoder {
  Tensor enc_weight;  // C_S x C_T
  Tensor enc_bias;    // C_S
  Tensor dec_weight;  // C_T x C_S
  Tensor dec_bias;    // C_T

  int64_t teacher_channels() const { return enc_weight.dim(1); }
  int64_t student_channels() const { return enc_weight.dim(0); }

  std::vector<Tensor> trainable_params() const {
    return {enc_weight, enc_bias, dec_weight, dec_bias};
  }
  std::vector<Tensor> encoder_params() const { return {enc_weight, enc_bias}; }
  std::vector<Tensor> decoder_params() const { return {dec_weight, dec_bias}; }
};

inline AutoEncoder make_autoencoder(int64_t teacher_channels,
                                    int64_t student_channels, Rng& rng) {
  if (student_channels >= teacher_channels)
    throw ValidationError(
        "autoencoder: student must be narrower than teacher (C_S " +
        std::to_string(student_channels) + " >= C_T " +
        std::to_string(teacher_channels) + ")");
  AutoEncoder ae;
  ae.enc_weight =
      kaiming_uniform({student_channels, teacher_channels}, teacher_channels, rng);
  ae.dec_weight =
      kaiming_uniform({teacher_channels, student_channels}, student_channels, rng);
  ae.enc_bias = Tensor::zeros({student_channels});
  ae.dec_bias = Tensor::zeros({teacher_channels});
  for (auto& t : ae.trainable_params()) t.set_requires_grad(true);
  return ae;
}

struct AutoEncodeResult {
  FeatureMap z_r;    // compressed representation, C_S x T
  FeatureMap z_hat;  // reconstruction, C_T x T
};

inline AutoEncodeResult autoencode(Tape& tape, const AutoEncoder& ae,
                                   const FeatureMap& z_t) {
  if (z_t.channels() != ae.teacher_channels())
    throw ValidationError("autoencode: expected " +
                          std::to_string(ae.teacher_channels()) +
                          " channels, got " + std::to_string(z_t.channels()));
  Tensor zr = ops::bias_add(
      tape, ops::channel_linear(tape, z_t.values, ae.enc_weight), ae.enc_bias);
  Tensor zh = ops::bias_add(tape, ops::channel_linear(tape, zr, ae.dec_weight),
                            ae.dec_bias);
  return AutoEncodeResult{FeatureMap{zr, z_t.frame_rate_hz},
                          FeatureMap{zh, z_t.frame_rate_hz}};
}

}  // namespace litefew::encoder
