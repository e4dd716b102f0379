#pragma once

// Discrete line geometry for orientation-aware pooling.
//
// A line family is described by an integer column step S per row. Pixel
// (i, c) of an H x W grid belongs to line j = c + offsets[i], where
//   offsets[i] = (H-1-i) * S   for theta < pi/2,
//   offsets[i] = i * S         for theta > pi/2,
// so the family covers L = S*(H-1) + W lines. S = 0 gives vertical columns.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "orient/autodiff.hpp"
#include "orient/tensor.hpp"

namespace orient {

inline constexpr double kOapEpsilon = 1e-8;
inline constexpr double kCotFloor = 1e-2;

enum class OapDenominator { count, height };

// Which side of vertical the line family leans to.
enum class Tilt { below_vertical, above_vertical };

struct OrientationGeometry {
  double theta = std::numbers::pi / 2;
  std::size_t step = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Tilt tilt = Tilt::below_vertical;
  std::vector<std::size_t> offsets;  // length height
  std::size_t length = 0;            // L
  std::vector<std::size_t> counts;   // in-bounds pixels per line, length L
  double epsilon = kOapEpsilon;

  std::size_t line_of(std::size_t row, std::size_t col) const noexcept { return col + offsets[row]; }
};

// |cot theta| floored at kCotFloor.
inline double cot_magnitude(double theta) {
  return std::max(std::abs(std::cos(theta) / std::sin(theta)), kCotFloor);
}

// Steps beyond W-1 put every row on its own set of lines; larger values only
// add empty lines.
inline std::size_t max_step(std::size_t width) { return std::max<std::size_t>(width > 0 ? width - 1 : 0, 1); }

inline Tilt tilt_of(double theta) { return theta > std::numbers::pi / 2 ? Tilt::above_vertical : Tilt::below_vertical; }

inline OrientationGeometry geometry_for_step(std::size_t step, Tilt tilt, std::size_t height, std::size_t width,
                                             double epsilon = kOapEpsilon, double theta = std::numbers::pi / 2) {
  if (height == 0 || width == 0) throw std::invalid_argument("geometry: H and W must be positive");
  OrientationGeometry g;
  g.theta = theta;
  g.step = std::min(step, max_step(width));
  g.height = height;
  g.width = width;
  g.tilt = tilt;
  g.epsilon = epsilon;
  g.offsets.resize(height);
  for (std::size_t i = 0; i < height; ++i) {
    g.offsets[i] = (tilt == Tilt::below_vertical ? (height - 1 - i) : i) * g.step;
  }
  g.length = g.step * (height - 1) + width;
  g.counts.assign(g.length, 0);
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t c = 0; c < width; ++c) ++g.counts[g.line_of(i, c)];
  return g;
}

// S = round(max(|cot theta|, 1e-2)), capped at max_step(W).
inline OrientationGeometry build_orientation(double theta, std::size_t height, std::size_t width,
                                             double epsilon = kOapEpsilon) {
  if (!std::isfinite(theta) || !(theta > 0.0) || !(theta < std::numbers::pi)) {
    throw std::invalid_argument("build_orientation: theta " + std::to_string(theta) + " outside (0, pi)");
  }
  const double s = cot_magnitude(theta);
  const double capped = std::min(s, static_cast<double>(max_step(width)));
  return geometry_for_step(static_cast<std::size_t>(std::llround(capped)), tilt_of(theta), height, width, epsilon,
                           theta);
}

namespace detail {

inline void check_geometry(const Tensor& x, const OrientationGeometry& geom, const char* op) {
  if (x.rank() != 4 || x.dim(2) != geom.height || x.dim(3) != geom.width) {
    throw std::invalid_argument(std::string(op) + ": tensor " + shape_str(x.shape()) + " does not match geometry " +
                                std::to_string(geom.height) + "x" + std::to_string(geom.width));
  }
}

inline std::vector<double> oap_denominators(const OrientationGeometry& geom, OapDenominator mode) {
  std::vector<double> d(geom.length);
  for (std::size_t j = 0; j < geom.length; ++j) {
    d[j] = mode == OapDenominator::count ? static_cast<double>(geom.counts[j]) + geom.epsilon
                                         : static_cast<double>(geom.height);
  }
  return d;
}

}  // namespace detail

// Mean along each line: [B,C,H,W] -> [B,C,1,L]. Sums run in row order.
inline Tensor oap_forward(const Tensor& x, const OrientationGeometry& geom,
                          OapDenominator mode = OapDenominator::count) {
  detail::check_geometry(x, geom, "oap_forward");
  const std::size_t B = x.dim(0), C = x.dim(1), H = geom.height, W = geom.width, L = geom.length;
  const auto denom = detail::oap_denominators(geom, mode);
  Tensor y({B, C, 1, L});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double* out = y.data().data() + (n * C + c) * L;
      for (std::size_t i = 0; i < H; ++i) {
        const double* row = x.data().data() + ((n * C + c) * H + i) * W;
        double* dst = out + geom.offsets[i];
        for (std::size_t w = 0; w < W; ++w) dst[w] += row[w];
      }
      for (std::size_t j = 0; j < L; ++j) out[j] /= denom[j];
    }
  return y;
}

inline Tensor oap_backward(const Tensor& gy, const OrientationGeometry& geom, std::size_t batch, std::size_t channels,
                           OapDenominator mode = OapDenominator::count) {
  const std::size_t H = geom.height, W = geom.width, L = geom.length;
  const auto denom = detail::oap_denominators(geom, mode);
  Tensor gx({batch, channels, H, W});
  for (std::size_t nc = 0; nc < batch * channels; ++nc) {
    const double* go = gy.data().data() + nc * L;
    for (std::size_t i = 0; i < H; ++i) {
      double* row = gx.data().data() + (nc * H + i) * W;
      for (std::size_t w = 0; w < W; ++w) {
        const std::size_t j = w + geom.offsets[i];
        row[w] = go[j] / denom[j];
      }
    }
  }
  return gx;
}

// Inverse of the line assignment: grid[c,i,w] = a[c, w + offsets[i]].
inline Tensor fold_back(const Tensor& a, const OrientationGeometry& geom) {
  if (a.rank() != 4 || a.dim(2) != 1 || a.dim(3) != geom.length) {
    throw std::invalid_argument("fold_back: attention " + shape_str(a.shape()) + " does not have length " +
                                std::to_string(geom.length));
  }
  const std::size_t B = a.dim(0), C = a.dim(1), H = geom.height, W = geom.width, L = geom.length;
  Tensor grid({B, C, H, W});
  for (std::size_t nc = 0; nc < B * C; ++nc) {
    const double* src = a.data().data() + nc * L;
    for (std::size_t i = 0; i < H; ++i) {
      double* row = grid.data().data() + (nc * H + i) * W;
      const double* s = src + geom.offsets[i];
      std::copy(s, s + W, row);
    }
  }
  return grid;
}

inline Tensor fold_back_backward(const Tensor& ggrid, const OrientationGeometry& geom) {
  const std::size_t B = ggrid.dim(0), C = ggrid.dim(1), H = geom.height, W = geom.width, L = geom.length;
  Tensor ga({B, C, 1, L});
  for (std::size_t nc = 0; nc < B * C; ++nc) {
    double* dst = ga.data().data() + nc * L;
    for (std::size_t i = 0; i < H; ++i) {
      const double* row = ggrid.data().data() + (nc * H + i) * W;
      double* d = dst + geom.offsets[i];
      for (std::size_t w = 0; w < W; ++w) d[w] += row[w];
    }
  }
  return ga;
}

namespace ad {

inline Var oap(Graph& g, Var x, const OrientationGeometry& geom, OapDenominator mode = OapDenominator::count) {
  Tensor y = oap_forward(g.value(x), geom, mode);
  return g.make(std::move(y), {x}, [x, geom, mode](Graph& gr, const Tensor& gy) {
    const Tensor& xv = gr.value(x);
    gr.accumulate(x, oap_backward(gy, geom, xv.dim(0), xv.dim(1), mode));
  });
}

inline Var fold_back(Graph& g, Var a, const OrientationGeometry& geom) {
  Tensor grid = orient::fold_back(g.value(a), geom);
  return g.make(std::move(grid), {a}, [a, geom](Graph& gr, const Tensor& gy) {
    gr.accumulate(a, fold_back_backward(gy, geom));
  });
}

}  // namespace ad

}  // namespace orient
