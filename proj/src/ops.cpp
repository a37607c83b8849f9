#include "mscount/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mscount::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer elements; larger convolutions run in column chunks.
constexpr std::size_t kMaxColumnElements = std::size_t{1} << 22;

void finish([[maybe_unused]] const Tensor& out) {
  assert(all_finite(out.data()) && "op produced a non-finite value");
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + a.str() + " and " +
                              b.str());
}

struct ConvGeometry {
  int channels, height, width, kernel, stride, pad, out_h, out_w;

  std::size_t rows() const {
    return static_cast<std::size_t>(channels) * kernel * kernel;
  }
  std::size_t positions() const { return static_cast<std::size_t>(out_h) * out_w; }
};

// Walks the output positions [p0, p0 + count) one output row at a time and
// reports, for kernel offset (ky, kx), the segments whose input pixel is in
// bounds: visit(j, iy, ix0, len) covers columns j..j+len of the chunk, reading
// input row iy from column ix0 with step g.stride. Out-of-bounds spans go to
// pad(j, len).
template <typename Visit, typename Pad>
void for_each_segment(const ConvGeometry& g, int ky, int kx, std::size_t p0,
                      std::size_t count, Visit visit, Pad pad) {
  // Output columns whose input column lies inside [0, width).
  const int lo_num = g.pad - kx;
  const int ox_lo = lo_num <= 0 ? 0 : (lo_num + g.stride - 1) / g.stride;
  const int hi_num = g.width - 1 + g.pad - kx;
  const int ox_hi = hi_num < 0 ? -1 : std::min(g.out_w - 1, hi_num / g.stride);
  std::size_t j = 0;
  while (j < count) {
    const std::size_t p = p0 + j;
    const int oy = static_cast<int>(p / g.out_w);
    const int ox0 = static_cast<int>(p % g.out_w);
    const int ox1 = static_cast<int>(std::min<std::size_t>(g.out_w, ox0 + (count - j)));
    const int iy = oy * g.stride - g.pad + ky;
    if (iy < 0 || iy >= g.height || ox_hi < ox_lo) {
      pad(j, static_cast<std::size_t>(ox1 - ox0));
    } else {
      const int a = std::clamp(ox_lo, ox0, ox1);
      const int b = std::clamp(ox_hi + 1, ox0, ox1);
      if (a > ox0) pad(j, static_cast<std::size_t>(a - ox0));
      if (b > a) {
        visit(j + (a - ox0), iy, a * g.stride - g.pad + kx, static_cast<std::size_t>(b - a));
      }
      if (ox1 > b) pad(j + (b - ox0), static_cast<std::size_t>(ox1 - b));
    }
    j += static_cast<std::size_t>(ox1 - ox0);
  }
}

// cols(r, j) = input value under kernel row r at output position p0 + j.
void im2col(const double* image, const ConvGeometry& g, std::size_t p0,
            std::size_t count, double* cols) {
  const int k = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    const double* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * count;
        for_each_segment(
            g, ky, kx, p0, count,
            [&](std::size_t j, int iy, int ix0, std::size_t len) {
              const double* src = plane + static_cast<std::size_t>(iy) * g.width + ix0;
              if (g.stride == 1) {
                std::copy_n(src, len, row + j);
              } else {
                for (std::size_t i = 0; i < len; ++i) row[j + i] = src[i * g.stride];
              }
            },
            [&](std::size_t j, std::size_t len) { std::fill_n(row + j, len, 0.0); });
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, std::size_t p0,
                std::size_t count, double* image) {
  const int k = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    double* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row =
            cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * count;
        for_each_segment(
            g, ky, kx, p0, count,
            [&](std::size_t j, int iy, int ix0, std::size_t len) {
              double* dst = plane + static_cast<std::size_t>(iy) * g.width + ix0;
              for (std::size_t i = 0; i < len; ++i) dst[i * g.stride] += row[j + i];
            },
            [](std::size_t, std::size_t) {});
      }
    }
  }
}

std::size_t chunk_size(const ConvGeometry& g) {
  return std::max<std::size_t>(1, std::min(g.positions(), kMaxColumnElements / g.rows()));
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weights,
              const Tensor& bias, int stride, int pad) {
  const Shape& xs = input.shape();
  const Shape& ws = weights.shape();
  if (ws.c != xs.c || ws.h != ws.w) shape_error("conv2d", xs, ws);
  if (bias.shape() != Shape{1, ws.n, 1, 1}) shape_error("conv2d bias", ws, bias.shape());
  if (stride < 1 || pad < 0) {
    throw std::invalid_argument("conv2d: stride must be positive and pad non-negative");
  }
  const int k = ws.h;
  const int out_h = (xs.h + 2 * pad - k) / stride + 1;
  const int out_w = (xs.w + 2 * pad - k) / stride + 1;
  if (xs.h + 2 * pad < k || xs.w + 2 * pad < k) shape_error("conv2d", xs, ws);

  const ConvGeometry g{xs.c, xs.h, xs.w, k, stride, pad, out_h, out_w};
  const int out_c = ws.n;
  Tensor out(Shape{xs.n, out_c, out_h, out_w});

  const std::size_t rows = g.rows();
  const std::size_t positions = g.positions();
  const std::size_t chunk = chunk_size(g);
  std::vector<double> cols(rows * chunk);
  ConstMap wmat(weights.data().data(), out_c, static_cast<Eigen::Index>(rows));

  for (int n = 0; n < xs.n; ++n) {
    const double* image = input.data().data() + n * static_cast<std::size_t>(xs.c) * xs.h * xs.w;
    double* dst = out.data().data() + n * static_cast<std::size_t>(out_c) * positions;
    for (int o = 0; o < out_c; ++o) {
      std::fill_n(dst + o * positions, positions, bias.data()[o]);
    }
    for (std::size_t p0 = 0; p0 < positions; p0 += chunk) {
      const std::size_t count = std::min(chunk, positions - p0);
      im2col(image, g, p0, count, cols.data());
      ConstMap cmat(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(count));
      StridedMap omat(dst + p0, out_c, static_cast<Eigen::Index>(count),
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(positions)));
      omat.noalias() += wmat * cmat;
    }
  }

  if (tape.wants({&input, &weights, &bias})) {
    out.set_requires_grad(true);
    tape.record([input, weights, bias, out, g]() mutable {
      if (!out.has_grad()) return;
      const Shape& xs = input.shape();
      const int out_c = weights.shape().n;
      const std::size_t rows = g.rows();
      const std::size_t positions = g.positions();
      const std::size_t chunk = chunk_size(g);
      std::vector<double> cols(rows * chunk);
      std::vector<double> dcols(rows * chunk);
      ConstMap wmat(weights.data().data(), out_c, static_cast<Eigen::Index>(rows));
      const bool need_dx = input.requires_grad();
      const bool need_dw = weights.requires_grad();
      const bool need_db = bias.requires_grad();
      for (int n = 0; n < xs.n; ++n) {
        const std::size_t in_off = n * static_cast<std::size_t>(xs.c) * xs.h * xs.w;
        const double* dout = out.grad().data() + n * static_cast<std::size_t>(out_c) * positions;
        if (need_db) {
          auto db = bias.grad();
          for (int o = 0; o < out_c; ++o) {
            const double* row = dout + o * positions;
            double s = 0.0;
            for (std::size_t p = 0; p < positions; ++p) s += row[p];
            db[o] += s;
          }
        }
        for (std::size_t p0 = 0; p0 < positions; p0 += chunk) {
          const std::size_t count = std::min(chunk, positions - p0);
          ConstStridedMap gmat(dout + p0, out_c, static_cast<Eigen::Index>(count),
                               Eigen::OuterStride<>(static_cast<Eigen::Index>(positions)));
          if (need_dw) {
            im2col(input.data().data() + in_off, g, p0, count, cols.data());
            ConstMap cmat(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(count));
            Eigen::Map<RowMat> dw(weights.grad().data(), out_c, static_cast<Eigen::Index>(rows));
            dw.noalias() += gmat * cmat.transpose();
          }
          if (need_dx) {
            Eigen::Map<RowMat> dc(dcols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(count));
            dc.noalias() = wmat.transpose() * gmat;
            col2im_add(dcols.data(), g, p0, count, input.grad().data() + in_off);
          }
        }
      }
    });
  }
  finish(out);
  return out;
}

Tensor max_pool_2x2(Tape& tape, const Tensor& input) {
  const Shape& s = input.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw std::invalid_argument("max_pool_2x2: odd spatial size " + s.str());
  }
  const int oh = s.h / 2;
  const int ow = s.w / 2;
  Tensor out(Shape{s.n, s.c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const auto x = input.data();
  auto y = out.data();
  std::size_t o = 0;
  for (int p = 0; p < s.n * s.c; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * s.plane();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++o) {
        const std::size_t i0 = base + static_cast<std::size_t>(2 * oy) * s.w + 2 * ox;
        const std::size_t candidates[4] = {i0, i0 + 1, i0 + s.w, i0 + s.w + 1};
        std::size_t best = candidates[0];
        for (int k = 1; k < 4; ++k) {
          if (x[candidates[k]] > x[best]) best = candidates[k];
        }
        argmax[o] = best;
        y[o] = x[best];
      }
    }
  }
  if (tape.wants({&input})) {
    out.set_requires_grad(true);
    tape.record([input, out, argmax = std::move(argmax)]() mutable {
      if (!out.has_grad()) return;
      auto dx = input.grad();
      auto dy = out.grad();
      for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += dy[i];
    });
  }
  finish(out);
  return out;
}

Tensor adaptive_max_pool(Tape& tape, const Tensor& input, int bins) {
  const Shape& s = input.shape();
  if (bins < 1 || bins > s.h || bins > s.w) {
    throw std::invalid_argument("adaptive_max_pool: " + std::to_string(bins) +
                                " bins do not fit input " + s.str());
  }
  Tensor out(Shape{s.n, s.c, bins, bins});
  std::vector<std::size_t> argmax(out.size());
  const auto x = input.data();
  auto y = out.data();
  std::size_t o = 0;
  for (int p = 0; p < s.n * s.c; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * s.plane();
    for (int by = 0; by < bins; ++by) {
      const int y0 = by * s.h / bins;
      const int y1 = (by + 1) * s.h / bins;
      for (int bx = 0; bx < bins; ++bx, ++o) {
        const int x0 = bx * s.w / bins;
        const int x1 = (bx + 1) * s.w / bins;
        std::size_t best = base + static_cast<std::size_t>(y0) * s.w + x0;
        for (int yy = y0; yy < y1; ++yy) {
          for (int xx = x0; xx < x1; ++xx) {
            const std::size_t i = base + static_cast<std::size_t>(yy) * s.w + xx;
            if (x[i] > x[best]) best = i;
          }
        }
        argmax[o] = best;
        y[o] = x[best];
      }
    }
  }
  if (tape.wants({&input})) {
    out.set_requires_grad(true);
    tape.record([input, out, argmax = std::move(argmax)]() mutable {
      if (!out.has_grad()) return;
      auto dx = input.grad();
      auto dy = out.grad();
      for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += dy[i];
    });
  }
  finish(out);
  return out;
}

namespace {

struct Tap {
  int lo, hi;
  double frac;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * in / out - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    taps[i] = {lo, std::min(lo + 1, in - 1), src - lo};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(Tape& tape, const Tensor& input, int out_h, int out_w) {
  const Shape& s = input.shape();
  if (out_h < s.h || out_w < s.w) {
    throw std::invalid_argument("bilinear_upsample: cannot downscale " + s.str() +
                                " to " + std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const auto ty = bilinear_taps(s.h, out_h);
  const auto tx = bilinear_taps(s.w, out_w);
  Tensor out(Shape{s.n, s.c, out_h, out_w});
  const auto x = input.data();
  auto y = out.data();
  for (int p = 0; p < s.n * s.c; ++p) {
    const double* src = x.data() + static_cast<std::size_t>(p) * s.plane();
    double* dst = y.data() + static_cast<std::size_t>(p) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const double* r0 = src + static_cast<std::size_t>(ty[i].lo) * s.w;
      const double* r1 = src + static_cast<std::size_t>(ty[i].hi) * s.w;
      const double fy = ty[i].frac;
      for (int j = 0; j < out_w; ++j) {
        const double fx = tx[j].frac;
        const double top = (1 - fx) * r0[tx[j].lo] + fx * r0[tx[j].hi];
        const double bot = (1 - fx) * r1[tx[j].lo] + fx * r1[tx[j].hi];
        dst[static_cast<std::size_t>(i) * out_w + j] = (1 - fy) * top + fy * bot;
      }
    }
  }
  if (tape.wants({&input})) {
    out.set_requires_grad(true);
    tape.record([input, out, ty, tx, out_h, out_w]() mutable {
      if (!out.has_grad()) return;
      const Shape& s = input.shape();
      auto dx = input.grad();
      auto dy = out.grad();
      for (int p = 0; p < s.n * s.c; ++p) {
        double* d = dx.data() + static_cast<std::size_t>(p) * s.plane();
        const double* g = dy.data() + static_cast<std::size_t>(p) * out_h * out_w;
        for (int i = 0; i < out_h; ++i) {
          double* r0 = d + static_cast<std::size_t>(ty[i].lo) * s.w;
          double* r1 = d + static_cast<std::size_t>(ty[i].hi) * s.w;
          const double fy = ty[i].frac;
          for (int j = 0; j < out_w; ++j) {
            const double v = g[static_cast<std::size_t>(i) * out_w + j];
            const double fx = tx[j].frac;
            r0[tx[j].lo] += (1 - fy) * (1 - fx) * v;
            r0[tx[j].hi] += (1 - fy) * fx * v;
            r1[tx[j].lo] += fy * (1 - fx) * v;
            r1[tx[j].hi] += fy * fx * v;
          }
        }
      }
    });
  }
  finish(out);
  return out;
}

Tensor concat_channels(Tape& tape, const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Shape& first = inputs.front().shape();
  int channels = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      shape_error("concat_channels", first, s);
    }
    channels += s.c;
  }
  Tensor out(Shape{first.n, channels, first.h, first.w});
  const std::size_t plane = first.plane();
  auto y = out.data();
  for (int n = 0; n < first.n; ++n) {
    double* dst = y.data() + static_cast<std::size_t>(n) * channels * plane;
    for (const auto& t : inputs) {
      const std::size_t len = static_cast<std::size_t>(t.shape().c) * plane;
      const double* src = t.data().data() + n * len;
      std::copy_n(src, len, dst);
      dst += len;
    }
  }
  bool any = false;
  for (const auto& t : inputs) any = any || tape.wants({&t});
  if (any) {
    out.set_requires_grad(true);
    tape.record([inputs, out, channels, plane]() mutable {
      if (!out.has_grad()) return;
      const int batch = out.shape().n;
      for (int n = 0; n < batch; ++n) {
        const double* src = out.grad().data() + static_cast<std::size_t>(n) * channels * plane;
        for (auto& t : inputs) {
          const std::size_t len = static_cast<std::size_t>(t.shape().c) * plane;
          if (t.requires_grad()) {
            double* dst = t.grad().data() + n * len;
            for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
          }
          src += len;
        }
      }
    });
  }
  finish(out);
  return out;
}

Tensor slice_channels(Tape& tape, const Tensor& input, int begin, int count) {
  const Shape& s = input.shape();
  if (begin < 0 || count < 0 || begin + count > s.c) {
    throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") outside " + s.str());
  }
  Tensor out(Shape{s.n, count, s.h, s.w});
  const std::size_t len = static_cast<std::size_t>(count) * s.plane();
  for (int n = 0; n < s.n; ++n) {
    const double* src = input.data().data() + (static_cast<std::size_t>(n) * s.c + begin) * s.plane();
    std::copy_n(src, len, out.data().data() + n * len);
  }
  if (tape.wants({&input})) {
    out.set_requires_grad(true);
    tape.record([input, out, begin, len]() mutable {
      if (!out.has_grad()) return;
      const Shape& s = input.shape();
      for (int n = 0; n < s.n; ++n) {
        double* dst = input.grad().data() + (static_cast<std::size_t>(n) * s.c + begin) * s.plane();
        const double* src = out.grad().data() + n * len;
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& input) {
  Tensor out(input.shape());
  const auto x = input.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (tape.wants({&input})) {
    out.set_requires_grad(true);
    tape.record([input, out]() mutable {
      if (!out.has_grad()) return;
      const auto x = input.data();
      auto dx = input.grad();
      const auto dy = out.grad();
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) dx[i] += dy[i];
      }
    });
  }
  finish(out);
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& input) {
  // Clamped so the output stays strictly inside (0, 1) even when exp saturates.
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  Tensor out(input.shape());
  const auto x = input.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                  : std::exp(x[i]) / (1.0 + std::exp(x[i]));
    y[i] = std::clamp(v, lo, hi);
  }
  if (tape.wants({&input})) {
    out.set_requires_grad(true);
    tape.record([input, out]() mutable {
      if (!out.has_grad()) return;
      const auto y = out.data();
      auto dx = input.grad();
      const auto dy = out.grad();
      for (std::size_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
    });
  }
  finish(out);
  return out;
}

Tensor sum_squared_error(Tape& tape, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    shape_error("sum_squared_error", pred.shape(), target.shape());
  }
  const auto p = pred.data();
  const auto t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    acc += d * d;
  }
  Tensor out(Shape{1, 1, 1, 1});
  out.data()[0] = acc;
  if (tape.wants({&pred})) {
    out.set_requires_grad(true);
    tape.record([pred, target, out]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      const auto p = pred.data();
      const auto t = target.data();
      auto dp = pred.grad();
      for (std::size_t i = 0; i < p.size(); ++i) dp[i] += 2.0 * (p[i] - t[i]) * g;
    });
  }
  finish(out);
  return out;
}

Tensor sum(Tape& tape, const Tensor& input) {
  double acc = 0.0;
  for (double v : input.data()) acc += v;
  Tensor out(Shape{1, 1, 1, 1});
  out.data()[0] = acc;
  if (tape.wants({&input})) {
    out.set_requires_grad(true);
    tape.record([input, out]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      for (double& d : input.grad()) d += g;
    });
  }
  finish(out);
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  Tensor out(a.shape());
  const auto x = a.data();
  const auto y = b.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  if (tape.wants({&a, &b})) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto d = t->grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
    });
  }
  finish(out);
  return out;
}

Tensor scale(Tape& tape, const Tensor& input, double factor) {
  Tensor out(input.shape());
  const auto x = input.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * factor;
  if (tape.wants({&input})) {
    out.set_requires_grad(true);
    tape.record([input, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto dx = input.grad();
      const auto dy = out.grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * factor;
    });
  }
  finish(out);
  return out;
}

Tensor batch_item(const Tensor& input, int index) {
  const Shape& s = input.shape();
  if (index < 0 || index >= s.n) {
    throw std::out_of_range("batch_item: index " + std::to_string(index) +
                            " outside " + s.str());
  }
  const std::size_t len = static_cast<std::size_t>(s.c) * s.plane();
  const auto src = input.data().subspan(index * len, len);
  return Tensor(Shape{1, s.c, s.h, s.w}, std::vector<double>(src.begin(), src.end()));
}

}  // namespace mscount::ops
