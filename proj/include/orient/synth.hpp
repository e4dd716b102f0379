#pragma once

// Synthetic onset/apex pairs with a controllable dominant motion axis.
//
// Each subject owns a smooth random texture plus brow and mouth features.
// A class moves one facial region by `motion_amplitude` pixels along
// sign * (sin rho, cos rho) in (column, row) coordinates, i.e. vertically for
// rho = 0. A subject-specific distractor moves the cheek regions along the
// orthogonal axis. The apex frame is the onset frame warped by the resulting
// displacement field with bilinear resampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "orient/tensor.hpp"

namespace orient {

struct DatasetSpec {
  std::size_t num_subjects = 8;
  std::size_t samples_per_subject = 30;
  std::size_t num_classes = 4;
  std::size_t image_size = 64;
  double motion_axis = 0.0;  // rho, radians
  double motion_amplitude = 1.5;
  double distractor_amplitude = 0.75;
  double noise_std = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticSample {
  Tensor onset;       // [1,H,W]
  Tensor apex;        // [1,H,W]
  Tensor difference;  // apex - onset
  std::array<std::uint8_t, 21> au_bits{};
  int label = 0;
  int subject = 0;
};

// A facial region in normalised (u = column, v = row) coordinates.
struct FaceRegion {
  double u, v;
};

struct ClassTemplate {
  const char* name;
  std::vector<FaceRegion> regions;
  double sign;  // +1 moves toward larger row index (down)
  std::vector<int> au_bits;
};

inline constexpr FaceRegion kLeftBrow{0.32, 0.30};
inline constexpr FaceRegion kRightBrow{0.68, 0.30};
inline constexpr FaceRegion kMouth{0.50, 0.72};
inline constexpr FaceRegion kMouthLeft{0.38, 0.72};
inline constexpr FaceRegion kMouthRight{0.62, 0.72};

// Bits 0-9 belong to upper-face regions, 10-20 to lower-face regions.
inline const std::vector<ClassTemplate>& class_templates() {
  static const std::vector<ClassTemplate> templates{
      {"upper-up", {kLeftBrow, kRightBrow}, -1.0, {0, 1}},
      {"upper-down", {kLeftBrow, kRightBrow}, +1.0, {3}},
      {"lower-down", {kMouth}, +1.0, {13, 17}},
      {"lower-up", {kMouth}, -1.0, {11}},
      {"upper-left-up", {kLeftBrow}, -1.0, {5}},
      {"upper-right-up", {kRightBrow}, -1.0, {6}},
      {"lower-left-down", {kMouthLeft}, +1.0, {15}},
      {"lower-right-down", {kMouthRight}, +1.0, {16}},
  };
  return templates;
}

inline void DatasetSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("data.num_classes must be >= 2");
  if (num_classes > class_templates().size()) {
    throw std::invalid_argument("data.num_classes " + std::to_string(num_classes) + " exceeds the " +
                                std::to_string(class_templates().size()) + " defined class templates");
  }
  if (num_subjects < 1) throw std::invalid_argument("data.num_subjects must be >= 1");
  if (samples_per_subject < 1) throw std::invalid_argument("data.samples_per_subject must be >= 1");
  if (image_size < 8) throw std::invalid_argument("data.image_size must be >= 8");
  if (motion_amplitude < 0.0 || distractor_amplitude < 0.0) throw std::invalid_argument("amplitudes must be >= 0");
  if (noise_std < 0.0) throw std::invalid_argument("data.noise_std must be >= 0");
}

inline std::array<std::uint8_t, 21> au_bits_for_label(int label) {
  std::array<std::uint8_t, 21> bits{};
  for (int b : class_templates().at(static_cast<std::size_t>(label)).au_bits) bits[static_cast<std::size_t>(b)] = 1;
  return bits;
}

// Bilinear sample of a [H,W] image at fractional (row, col), clamped to the border.
inline double bilinear(const std::vector<double>& img, std::size_t H, std::size_t W, double row, double col) {
  row = std::clamp(row, 0.0, static_cast<double>(H - 1));
  col = std::clamp(col, 0.0, static_cast<double>(W - 1));
  const auto r0 = static_cast<std::size_t>(std::floor(row));
  const auto c0 = static_cast<std::size_t>(std::floor(col));
  const std::size_t r1 = std::min(r0 + 1, H - 1), c1 = std::min(c0 + 1, W - 1);
  const double fr = row - static_cast<double>(r0), fc = col - static_cast<double>(c0);
  return (1 - fr) * ((1 - fc) * img[r0 * W + c0] + fc * img[r0 * W + c1]) +
         fr * ((1 - fc) * img[r1 * W + c0] + fc * img[r1 * W + c1]);
}

// apex(p) = onset(p - d(p)) for a displacement field given as (d_row, d_col).
inline std::vector<double> warp_backward(const std::vector<double>& img, std::size_t H, std::size_t W,
                                         const std::vector<double>& d_row, const std::vector<double>& d_col) {
  std::vector<double> out(H * W);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const std::size_t i = r * W + c;
      out[i] = bilinear(img, H, W, static_cast<double>(r) - d_row[i], static_cast<double>(c) - d_col[i]);
    }
  return out;
}

namespace detail {

// Appearance constants. Feature contrast is kept low relative to the blob
// texture so the motion, not the static face, carries the class.
inline constexpr int kDotsPerChain = 5;
inline constexpr double kDotSpacing = 0.07;
inline constexpr double kDotSigma = 0.025;
inline constexpr int kBlobCount = 24;
inline constexpr double kBlobAmplitude = 0.1;
inline constexpr double kFeatureContrast = 0.07;
inline constexpr double kCheekContrast = 0.15;
inline constexpr double kWindowAlong = 0.25;
inline constexpr double kWindowAcross = 0.06;

struct SubjectFace {
  std::vector<double> texture;  // [H*W] onset appearance
  double distractor_phase = 0.0;
  double feature_shift_u = 0.0, feature_shift_v = 0.0;
};

inline double gauss2(double du, double dv, double su, double sv) {
  return std::exp(-0.5 * (du * du / (su * su) + dv * dv / (sv * sv)));
}

// Unit vectors in (u, v) = (column, row) coordinates: the class axis and
// the orthogonal distractor axis.
struct Axes {
  double mu, mv, pu, pv;
};

inline Axes axes_for(double rho) { return {std::sin(rho), std::cos(rho), std::cos(rho), -std::sin(rho)}; }

// A chain of dark dots laid out along the class axis.
inline double dot_chain(double du, double dv, const Axes& ax, double contrast) {
  const int n = kDotsPerChain;
  const double spacing = kDotSpacing, sig = kDotSigma;
  const double a = du * ax.mu + dv * ax.mv;
  const double b = du * ax.pu + dv * ax.pv;
  double val = 0.0;
  for (int k = 0; k < n; ++k) {
    const double ak = (k - 0.5 * (n - 1)) * spacing;
    val += gauss2(a - ak, b, sig, sig);
  }
  return contrast * val;
}

inline std::vector<FaceRegion> active_regions(const DatasetSpec& spec) {
  std::vector<FaceRegion> out;
  for (std::size_t k = 0; k < spec.num_classes; ++k)
    for (const auto& r : class_templates()[k].regions) {
      bool seen = false;
      for (const auto& o : out) seen |= (o.u == r.u && o.v == r.v);
      if (!seen) out.push_back(r);
    }
  return out;
}

inline constexpr FaceRegion kLeftCheek{0.12, 0.55};
inline constexpr FaceRegion kRightCheek{0.88, 0.55};

inline SubjectFace make_subject(const DatasetSpec& spec, std::size_t subject) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(subject), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t N = spec.image_size;
  const Axes ax = axes_for(spec.motion_axis);
  SubjectFace face;
  face.texture.assign(N * N, 0.5);
  face.distractor_phase = 2.0 * std::numbers::pi * unit(rng);
  face.feature_shift_u = 0.04 * (unit(rng) - 0.5);
  face.feature_shift_v = 0.04 * (unit(rng) - 0.5);

  struct Blob {
    double u, v, s, a;
  };
  std::vector<Blob> blobs;
  for (int b = 0; b < kBlobCount; ++b) {
    const double u = unit(rng), v = unit(rng), s = 0.04 + 0.1 * unit(rng);
    blobs.push_back({u, v, s, kBlobAmplitude * (unit(rng) - 0.5)});
  }
  const double contrast = kFeatureContrast * (1.0 + 0.33 * unit(rng));
  const double cheek_contrast = kCheekContrast * (1.0 + 0.33 * unit(rng));
  const auto regions = active_regions(spec);

  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t c = 0; c < N; ++c) {
      const double u = (static_cast<double>(c) + 0.5) / static_cast<double>(N);
      const double v = (static_cast<double>(r) + 0.5) / static_cast<double>(N);
      double val = 0.5;
      for (const auto& b : blobs) val += b.a * gauss2(u - b.u, v - b.v, b.s, b.s);
      for (const auto& reg : regions)
        val -= dot_chain(u - reg.u - face.feature_shift_u, v - reg.v - face.feature_shift_v, ax, contrast);
      for (const auto& reg : {kLeftCheek, kRightCheek}) val -= dot_chain(u - reg.u, v - reg.v, ax, cheek_contrast);
      face.texture[r * N + c] = std::clamp(val, 0.0, 1.0);
    }
  return face;
}

// Smooth window elongated along the class axis.
inline double axis_window(double du, double dv, const Axes& ax, double along, double across) {
  const double a = du * ax.mu + dv * ax.mv;
  const double b = du * ax.pu + dv * ax.pv;
  return gauss2(a, b, along, across);
}

}  // namespace detail

inline SyntheticSample generate_sample(const DatasetSpec& spec, const detail::SubjectFace& face, std::size_t subject,
                                       std::size_t index) {
  const std::size_t N = spec.image_size;
  const int label = static_cast<int>(index % spec.num_classes);
  const ClassTemplate& tpl = class_templates()[static_cast<std::size_t>(label)];
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(subject), static_cast<std::uint32_t>(index), 0xa9e7u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  const double amp = spec.motion_amplitude * (0.75 + 0.5 * unit(rng));
  const double rho = spec.motion_axis;
  // Class axis (col, row) = (sin rho, cos rho); distractor axis orthogonal.
  const detail::Axes ax = detail::axes_for(rho);
  const double mc = ax.mu, mr = ax.mv, dc = ax.pu, dr = ax.pv;
  const double phase = face.distractor_phase + 2.0 * std::numbers::pi * static_cast<double>(label) /
                                                   static_cast<double>(spec.num_classes);
  const double distract = spec.distractor_amplitude * std::cos(phase + 0.3 * (unit(rng) - 0.5));
  const double jitter_u = 0.02 * (unit(rng) - 0.5), jitter_v = 0.02 * (unit(rng) - 0.5);

  std::vector<double> d_row(N * N, 0.0), d_col(N * N, 0.0);
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t c = 0; c < N; ++c) {
      const double u = (static_cast<double>(c) + 0.5) / static_cast<double>(N);
      const double v = (static_cast<double>(r) + 0.5) / static_cast<double>(N);
      double w_motion = 0.0;
      for (const auto& reg : tpl.regions) {
        w_motion = std::max(w_motion, detail::axis_window(u - reg.u - face.feature_shift_u - jitter_u,
                                                          v - reg.v - face.feature_shift_v - jitter_v, ax,
                                                          detail::kWindowAlong, detail::kWindowAcross));
      }
      // Distractor motion lives on the cheeks.
      const double w_distract = std::max(
          detail::axis_window(u - detail::kLeftCheek.u, v - detail::kLeftCheek.v, ax, detail::kWindowAlong,
                              detail::kWindowAcross),
          detail::axis_window(u - detail::kRightCheek.u, v - detail::kRightCheek.v, ax, detail::kWindowAlong,
                              detail::kWindowAcross));
      const std::size_t i = r * N + c;
      d_row[i] = tpl.sign * amp * mr * w_motion + distract * dr * w_distract;
      d_col[i] = tpl.sign * amp * mc * w_motion + distract * dc * w_distract;
    }

  std::vector<double> onset = face.texture;
  std::vector<double> apex = warp_backward(onset, N, N, d_row, d_col);
  for (auto* img : {&onset, &apex})
    for (auto& v : *img) v = std::clamp(v + spec.noise_std * noise(rng), 0.0, 1.0);

  SyntheticSample s;
  s.onset = Tensor({1, N, N}, onset);
  s.apex = Tensor({1, N, N}, apex);
  std::vector<double> diff(N * N);
  for (std::size_t i = 0; i < N * N; ++i) diff[i] = apex[i] - onset[i];
  s.difference = Tensor({1, N, N}, std::move(diff));
  s.au_bits = au_bits_for_label(label);
  s.label = label;
  s.subject = static_cast<int>(subject);
  return s;
}

// Ordered by subject, then sample index. Reproducible from spec.seed.
inline std::vector<SyntheticSample> generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  std::vector<SyntheticSample> out;
  out.reserve(spec.num_subjects * spec.samples_per_subject);
  for (std::size_t s = 0; s < spec.num_subjects; ++s) {
    const auto face = detail::make_subject(spec, s);
    for (std::size_t i = 0; i < spec.samples_per_subject; ++i) out.push_back(generate_sample(spec, face, s, i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Leave-one-subject-out folds
// ---------------------------------------------------------------------------

struct LosoFold {
  int test_subject = 0;
  std::vector<int> train_subjects;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

inline std::vector<int> subject_ids(const std::vector<SyntheticSample>& data) {
  std::vector<int> ids;
  for (const auto& s : data) ids.push_back(s.subject);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

inline std::vector<LosoFold> loso_folds(const std::vector<SyntheticSample>& data) {
  const auto ids = subject_ids(data);
  if (ids.size() < 2) throw std::invalid_argument("loso_folds: need at least 2 subjects, got " + std::to_string(ids.size()));
  std::vector<LosoFold> folds;
  for (int test : ids) {
    LosoFold f;
    f.test_subject = test;
    for (int s : ids)
      if (s != test) f.train_subjects.push_back(s);
    for (std::size_t i = 0; i < data.size(); ++i) (data[i].subject == test ? f.test_indices : f.train_indices).push_back(i);
    folds.push_back(std::move(f));
  }
  return folds;
}

}  // namespace orient
