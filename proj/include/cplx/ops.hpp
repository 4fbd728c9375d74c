#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "cplx/detail/gemm.hpp"
#include "cplx/tape.hpp"
#include "cplx/tensor.hpp"

namespace cplx {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
BasicTensor<T> make_output(Shape shape, const BasicTape<T>* tape) {
  return BasicTensor<T>::zeros(std::move(shape), tape != nullptr);
}

template <typename T>
void accumulate_into(const BasicTensor<T>& target, std::span<const T> delta) {
  auto g = target.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

// Splits a tensor of rank 3 (single example) or 4 (batch) into (batch, C, H, W).
struct Image4 {
  std::size_t batch, channels, height, width;
  bool batched;
};

template <typename T>
Image4 image_dims(const BasicTensor<T>& t, const char* what) {
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2), false};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
  throw DimensionError(std::string(what) + ": expected C x H x W or B x C x H x W, got " +
                       shape_string(t.shape()));
}

// col[(c, i, j)][(y, x)] = image[c][y + i][x + j]; consecutive rows of col are ld apart.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
            std::size_t kw, T* col, std::size_t ld) {
  const std::size_t out_h = height - kh + 1;
  const std::size_t out_w = width - kw + 1;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        T* row = col;
        for (std::size_t y = 0; y < out_h; ++y) {
          const T* src = image + (c * height + y + i) * width + j;
          std::copy_n(src, out_w, row);
          row += out_w;
        }
        col += ld;
      }
    }
  }
}

// Side-by-side im2col of g consecutive examples: example b owns columns [b * P, (b + 1) * P).
template <typename T>
void im2col_group(const T* images, std::size_t image_stride, std::size_t g, std::size_t channels,
                  std::size_t height, std::size_t width, std::size_t kh, std::size_t kw, T* col, std::size_t ld) {
  const std::size_t positions = (height - kh + 1) * (width - kw + 1);
  for (std::size_t b = 0; b < g; ++b) {
    im2col(images + b * image_stride, channels, height, width, kh, kw, col + b * positions, ld);
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t ld, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t kh, std::size_t kw, T* image) {
  const std::size_t out_h = height - kh + 1;
  const std::size_t out_w = width - kw + 1;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const T* row = col;
        for (std::size_t y = 0; y < out_h; ++y) {
          T* dst = image + (c * height + y + i) * width + j;
          for (std::size_t x = 0; x < out_w; ++x) dst[x] += row[x];
          row += out_w;
        }
        col += ld;
      }
    }
  }
}

// [f x (g * P)] <-> g blocks of [f x P].
template <typename T>
void scatter_groups(const T* wide, std::size_t g, std::size_t f, std::size_t positions, T* out) {
  for (std::size_t b = 0; b < g; ++b) {
    for (std::size_t r = 0; r < f; ++r) {
      std::copy_n(wide + r * g * positions + b * positions, positions, out + (b * f + r) * positions);
    }
  }
}

template <typename T>
void gather_groups(const T* blocks, std::size_t g, std::size_t f, std::size_t positions, T* wide) {
  for (std::size_t b = 0; b < g; ++b) {
    for (std::size_t r = 0; r < f; ++r) {
      std::copy_n(blocks + (b * f + r) * positions, positions, wide + r * g * positions + b * positions);
    }
  }
}

// Kernel as tall as the input: each tap j is a GEMM of the F x (C*H) weight slice
// with the input rows read in place at column offset j.
template <typename T>
void xcorr_full_height(const BasicTensor<T>& input, const BasicTensor<T>& filters, BasicTensor<T>& out,
                       BasicTape<T>* tape, const Image4& img, std::size_t f, std::size_t kw, std::size_t out_w) {
  const std::size_t rows = img.channels * img.height;
  const std::size_t width = img.width;
  const std::size_t in_stride = rows * width;
  const std::size_t out_stride = f * out_w;
  auto taps = std::make_shared<std::vector<T>>(kw * f * rows);
  const T* w = filters.data().data();
  for (std::size_t j = 0; j < kw; ++j) {
    T* dst = taps->data() + j * f * rows;
    for (std::size_t o = 0; o < f; ++o) {
      for (std::size_t r = 0; r < rows; ++r) dst[o * rows + r] = w[(o * rows + r) * kw + j];
    }
  }
  for (std::size_t b = 0; b < img.batch; ++b) {
    const T* x = input.data().data() + b * in_stride;
    T* y = out.mutable_data().data() + b * out_stride;
    for (std::size_t j = 0; j < kw; ++j) {
      gemm<T>(Trans::No, Trans::No, f, out_w, rows, taps->data() + j * f * rows, rows, x + j, width, y, out_w, j > 0);
    }
  }
  if (!tape) return;
  tape->record({input, filters}, out, [=]() mutable {
    std::vector<T> dtaps(filters.requires_grad() ? kw * f * rows : 0, T{0});
    for (std::size_t b = 0; b < img.batch; ++b) {
      const T* x = input.data().data() + b * in_stride;
      const T* dy = out.grad().data() + b * out_stride;
      for (std::size_t j = 0; j < kw; ++j) {
        if (filters.requires_grad()) {
          gemm<T>(Trans::No, Trans::Yes, f, rows, out_w, dy, out_w, x + j, width, dtaps.data() + j * f * rows, rows,
                  true);
        }
        if (input.requires_grad()) {
          gemm<T>(Trans::Yes, Trans::No, rows, out_w, f, taps->data() + j * f * rows, rows, dy, out_w,
                  input.mutable_grad().data() + b * in_stride + j, width, true);
        }
      }
    }
    if (filters.requires_grad()) {
      auto dw = filters.mutable_grad();
      for (std::size_t j = 0; j < kw; ++j) {
        const T* src = dtaps.data() + j * f * rows;
        for (std::size_t o = 0; o < f; ++o) {
          for (std::size_t r = 0; r < rows; ++r) dw[(o * rows + r) * kw + j] += src[o * rows + r];
        }
      }
    }
  });
}

}  // namespace detail

/// Standard matrix product of a [m x k] and b [k x n].
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  auto* tape = BasicTape<T>::recording({&a, &b});
  auto out = detail::make_output<T>({m, n}, tape);
  detail::gemm<T>(detail::Trans::No, detail::Trans::No, m, n, k, a.data().data(), k, b.data().data(), n,
                  out.mutable_data().data(), n, false);
  if (tape) {
    tape->record({a, b}, out, [a, b, out, m, n, k]() mutable {
      const T* dc = out.grad().data();
      if (a.requires_grad()) {
        detail::gemm<T>(detail::Trans::No, detail::Trans::Yes, m, k, n, dc, n, b.data().data(), n,
                        a.mutable_grad().data(), k, true);
      }
      if (b.requires_grad()) {
        detail::gemm<T>(detail::Trans::Yes, detail::Trans::No, k, n, m, a.data().data(), k, dc, n,
                        b.mutable_grad().data(), n, true);
      }
    });
  }
  return out;
}

/// Dense layer: x [B x in] times weights [out x in] transposed, plus bias [out].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weights, const BasicTensor<T>& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weights, 2, "linear weights");
  require_rank(bias, 1, "linear bias");
  const std::size_t batch = x.dim(0), in = x.dim(1), out_features = weights.dim(0);
  if (weights.dim(1) != in || bias.dim(0) != out_features) {
    throw DimensionError("linear: " + shape_string(x.shape()) + " with weights " +
                         shape_string(weights.shape()) + " and bias " + shape_string(bias.shape()));
  }
  auto* tape = BasicTape<T>::recording({&x, &weights, &bias});
  auto out = detail::make_output<T>({batch, out_features}, tape);
  T* y = out.mutable_data().data();
  detail::gemm<T>(detail::Trans::No, detail::Trans::Yes, batch, out_features, in, x.data().data(), in,
                  weights.data().data(), in, y, out_features, false);
  const T* b = bias.data().data();
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t o = 0; o < out_features; ++o) y[r * out_features + o] += b[o];
  }
  if (tape) {
    tape->record({x, weights, bias}, out, [x, weights, bias, out, batch, in, out_features]() mutable {
      const T* dy = out.grad().data();
      if (x.requires_grad()) {
        detail::gemm<T>(detail::Trans::No, detail::Trans::No, batch, in, out_features, dy, out_features,
                        weights.data().data(), in, x.mutable_grad().data(), in, true);
      }
      if (weights.requires_grad()) {
        detail::gemm<T>(detail::Trans::Yes, detail::Trans::No, out_features, in, batch, dy, out_features,
                        x.data().data(), in, weights.mutable_grad().data(), in, true);
      }
      if (bias.requires_grad()) {
        auto db = bias.mutable_grad();
        for (std::size_t o = 0; o < out_features; ++o) {
          accum_t<T> s = 0;
          for (std::size_t r = 0; r < batch; ++r) s += dy[r * out_features + o];
          db[o] += static_cast<T>(s);
        }
      }
    });
  }
  return out;
}

/// Valid-mode 2-D cross-correlation (no kernel flip) summed over input channels.
///
/// input is C x H x W or B x C x H x W; filters are F x C x kH x kW. The result
/// is F x (H-kH+1) x (W-kW+1), with a leading batch axis when the input has one.
template <typename T>
BasicTensor<T> xcorr2d_valid(const BasicTensor<T>& input, const BasicTensor<T>& filters) {
  const auto img = detail::image_dims(input, "xcorr2d_valid");
  require_rank(filters, 4, "xcorr2d_valid filters");
  const std::size_t f = filters.dim(0), kh = filters.dim(2), kw = filters.dim(3);
  if (filters.dim(1) != img.channels) {
    throw DimensionError("xcorr2d_valid: filters " + shape_string(filters.shape()) + " expect " +
                         std::to_string(filters.dim(1)) + " channels, input has " +
                         std::to_string(img.channels));
  }
  if (kh > img.height || kw > img.width) {
    throw DimensionError("xcorr2d_valid: kernel " + shape_string(filters.shape()) + " larger than input " +
                         shape_string(input.shape()));
  }
  const std::size_t out_h = img.height - kh + 1, out_w = img.width - kw + 1;
  const std::size_t k = img.channels * kh * kw;
  const std::size_t positions = out_h * out_w;
  const std::size_t in_stride = img.channels * img.height * img.width;
  const std::size_t out_stride = f * positions;

  Shape out_shape = img.batched ? Shape{img.batch, f, out_h, out_w} : Shape{f, out_h, out_w};
  auto* tape = BasicTape<T>::recording({&input, &filters});
  auto out = detail::make_output<T>(std::move(out_shape), tape);

  if (kh == img.height) {
    detail::xcorr_full_height(input, filters, out, tape, img, f, kw, out_w);
    return out;
  }

  // Examples are processed in groups: one im2col matrix [k x (g * positions)] per
  // group and one GEMM, so the filters are packed once per group.
  const std::size_t group = std::clamp<std::size_t>((std::size_t{1} << 22) / (std::max(k, f) * positions),
                                                    1, img.batch);
  const std::size_t wide = group * positions;
  std::vector<T> col(k * wide);
  std::vector<T> tmp(f * wide);
  const T* w = filters.data().data();
  for (std::size_t b0 = 0; b0 < img.batch; b0 += group) {
    const std::size_t g = std::min(group, img.batch - b0);
    detail::im2col_group(input.data().data() + b0 * in_stride, in_stride, g, img.channels, img.height, img.width,
                         kh, kw, col.data(), g * positions);
    detail::gemm<T>(detail::Trans::No, detail::Trans::No, f, g * positions, k, w, k, col.data(), g * positions,
                    tmp.data(), g * positions, false);
    detail::scatter_groups(tmp.data(), g, f, positions, out.mutable_data().data() + b0 * out_stride);
  }

  if (tape) {
    tape->record({input, filters}, out, [=]() mutable {
      std::vector<T> col(k * wide);
      std::vector<T> dy(f * wide);
      std::vector<T> dcol(input.requires_grad() ? k * wide : 0);
      for (std::size_t b0 = 0; b0 < img.batch; b0 += group) {
        const std::size_t g = std::min(group, img.batch - b0);
        const std::size_t gp = g * positions;
        detail::gather_groups(out.grad().data() + b0 * out_stride, g, f, positions, dy.data());
        if (filters.requires_grad()) {
          detail::im2col_group(input.data().data() + b0 * in_stride, in_stride, g, img.channels, img.height,
                               img.width, kh, kw, col.data(), gp);
          detail::gemm<T>(detail::Trans::No, detail::Trans::Yes, f, k, gp, dy.data(), gp, col.data(), gp,
                          filters.mutable_grad().data(), k, true);
        }
        if (input.requires_grad()) {
          detail::gemm<T>(detail::Trans::Yes, detail::Trans::No, k, gp, f, filters.data().data(), k, dy.data(), gp,
                          dcol.data(), gp, false);
          for (std::size_t b = 0; b < g; ++b) {
            detail::col2im_add(dcol.data() + b * positions, gp, img.channels, img.height, img.width, kh, kw,
                               input.mutable_grad().data() + (b0 + b) * in_stride);
          }
        }
      }
    });
  }
  return out;
}

/// Multiply-accumulate count of xcorr2d_valid for the given shapes.
[[nodiscard]] inline std::size_t xcorr2d_mac_count(const Shape& input, const Shape& filters) {
  const std::size_t batch = input.size() == 4 ? input[0] : 1;
  const std::size_t h = input[input.size() - 2], w = input[input.size() - 1];
  return batch * filters[0] * filters[1] * filters[2] * filters[3] * (h - filters[2] + 1) * (w - filters[3] + 1);
}

/// Adds bias along axes [axis, axis + bias.rank()) of x, broadcasting over the rest.
template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias, std::size_t axis) {
  if (axis + bias.rank() > x.rank()) throw DimensionError("add_bias: bias rank exceeds input");
  for (std::size_t i = 0; i < bias.rank(); ++i) {
    if (bias.dim(i) != x.dim(axis + i)) {
      throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                           shape_string(x.shape()) + " at axis " + std::to_string(axis));
    }
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + bias.rank(); i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t mid = bias.numel();

  auto* tape = BasicTape<T>::recording({&x, &bias});
  auto out = detail::make_output<T>(x.shape(), tape);
  const T* src = x.data().data();
  const T* b = bias.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t m = 0; m < mid; ++m) {
      const std::size_t base = (o * mid + m) * inner;
      for (std::size_t i = 0; i < inner; ++i) y[base + i] = src[base + i] + b[m];
    }
  }
  if (tape) {
    tape->record({x, bias}, out, [x, bias, out, outer, mid, inner]() mutable {
      const auto dy = out.grad();
      if (x.requires_grad()) detail::accumulate_into(x, dy);
      if (bias.requires_grad()) {
        auto db = bias.mutable_grad();
        for (std::size_t m = 0; m < mid; ++m) {
          accum_t<T> s = 0;
          for (std::size_t o = 0; o < outer; ++o) {
            const std::size_t base = (o * mid + m) * inner;
            for (std::size_t i = 0; i < inner; ++i) s += dy[base + i];
          }
          db[m] += static_cast<T>(s);
        }
      }
    });
  }
  return out;
}

/// Elementwise max(0, x); the subgradient at 0 is 0.
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  auto* tape = BasicTape<T>::recording({&x});
  auto out = detail::make_output<T>(x.shape(), tape);
  const auto src = x.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = src[i] > T{0} ? src[i] : T{0};
  if (tape) {
    tape->record({x}, out, [x, out]() mutable {
      const auto dy = out.grad();
      const auto v = x.data();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += v[i] > T{0} ? dy[i] : T{0};
    });
  }
  return out;
}

/// Inverted dropout: in training, zero each element with probability p and
/// scale survivors by 1/(1-p); otherwise identity.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, bool training, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;

  auto* tape = BasicTape<T>::recording({&x});
  auto out = detail::make_output<T>(x.shape(), tape);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  // One draw from rng keys a counter-based hash; each 64-bit hash yields two 32-bit uniforms.
  const std::uint64_t key = rng();
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(p, 32));
  std::vector<T> mask(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const std::uint64_t h = detail::splitmix64(key + (i >> 1));
    const std::uint64_t u = (i & 1) ? (h >> 32) : (h & 0xffffffffULL);
    mask[i] = u < threshold ? T{0} : keep_scale;
  }
  const auto src = x.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = src[i] * mask[i];
  if (tape) {
    tape->record({x}, out, [x, out, mask = std::move(mask)]() mutable {
      const auto dy = out.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * mask[i];
    });
  }
  return out;
}

/// Same values under a new shape with equal element count.
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  auto* tape = BasicTape<T>::recording({&x});
  BasicTensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()), tape != nullptr);
  if (tape) {
    tape->record({x}, out, [x, out]() mutable { detail::accumulate_into(x, out.grad()); });
  }
  return out;
}

/// Zero-pads the second-to-last axis with `top` rows before and `bottom` rows after.
template <typename T>
BasicTensor<T> pad_rows(const BasicTensor<T>& x, std::size_t top, std::size_t bottom) {
  if (x.rank() < 2) throw DimensionError("pad_rows: need rank >= 2, got " + shape_string(x.shape()));
  const std::size_t rows = x.dim(x.rank() - 2), cols = x.dim(x.rank() - 1);
  const std::size_t planes = x.numel() / (rows * cols);
  const std::size_t new_rows = rows + top + bottom;
  Shape shape = x.shape();
  shape[shape.size() - 2] = new_rows;
  auto* tape = BasicTape<T>::recording({&x});
  auto out = detail::make_output<T>(std::move(shape), tape);
  const T* src = x.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    std::copy_n(src + p * rows * cols, rows * cols, y + (p * new_rows + top) * cols);
  }
  if (tape) {
    tape->record({x}, out, [x, out, planes, rows, cols, new_rows, top]() mutable {
      const T* dy = out.grad().data();
      T* dx = x.mutable_grad().data();
      for (std::size_t p = 0; p < planes; ++p) {
        const T* s = dy + (p * new_rows + top) * cols;
        T* d = dx + p * rows * cols;
        for (std::size_t i = 0; i < rows * cols; ++i) d[i] += s[i];
      }
    });
  }
  return out;
}

/// Reverses the order of the second-to-last axis.
template <typename T>
BasicTensor<T> flip_rows(const BasicTensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("flip_rows: need rank >= 2, got " + shape_string(x.shape()));
  const std::size_t rows = x.dim(x.rank() - 2), cols = x.dim(x.rank() - 1);
  const std::size_t planes = x.numel() / (rows * cols);
  auto* tape = BasicTape<T>::recording({&x});
  auto out = detail::make_output<T>(x.shape(), tape);
  const T* src = x.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src + (p * rows + r) * cols, cols, y + (p * rows + rows - 1 - r) * cols);
    }
  }
  if (tape) {
    tape->record({x}, out, [x, out, planes, rows, cols]() mutable {
      const T* dy = out.grad().data();
      T* dx = x.mutable_grad().data();
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t r = 0; r < rows; ++r) {
          const T* s = dy + (p * rows + rows - 1 - r) * cols;
          T* d = dx + (p * rows + r) * cols;
          for (std::size_t c = 0; c < cols; ++c) d[c] += s[c];
        }
      }
    });
  }
  return out;
}

/// Maps the three rows (r0, r1, r2) of the second-to-last axis to (r0 - r2, r1).
///
/// Applied to the output of the padded two-row cross-correlation this turns
/// (I*h', I*h'' + Q*h', Q*h'') into the complex result (I*h' - Q*h'', I*h'' + Q*h').
template <typename T>
BasicTensor<T> recombine_columns(const BasicTensor<T>& x) {
  if (x.rank() < 2 || x.dim(x.rank() - 2) != 3) {
    throw DimensionError("recombine_columns: expected ... x 3 x L, got " + shape_string(x.shape()));
  }
  const std::size_t len = x.dim(x.rank() - 1);
  const std::size_t planes = x.numel() / (3 * len);
  Shape shape = x.shape();
  shape[shape.size() - 2] = 2;
  auto* tape = BasicTape<T>::recording({&x});
  auto out = detail::make_output<T>(std::move(shape), tape);
  const T* src = x.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* r0 = src + p * 3 * len;
    const T* r1 = r0 + len;
    const T* r2 = r1 + len;
    T* re = y + p * 2 * len;
    T* im = re + len;
    for (std::size_t n = 0; n < len; ++n) {
      re[n] = r0[n] - r2[n];
      im[n] = r1[n];
    }
  }
  if (tape) {
    tape->record({x}, out, [x, out, planes, len]() mutable {
      const T* dy = out.grad().data();
      T* dx = x.mutable_grad().data();
      for (std::size_t p = 0; p < planes; ++p) {
        const T* dre = dy + p * 2 * len;
        const T* dim = dre + len;
        T* d0 = dx + p * 3 * len;
        T* d1 = d0 + len;
        T* d2 = d1 + len;
        for (std::size_t n = 0; n < len; ++n) {
          d0[n] += dre[n];
          d1[n] += dim[n];
          d2[n] -= dre[n];
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  auto* tape = BasicTape<T>::recording({&a, &b});
  auto out = detail::make_output<T>(a.shape(), tape);
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  if (tape) {
    tape->record({a, b}, out, [a, b, out]() mutable {
      if (a.requires_grad()) detail::accumulate_into(a, out.grad());
      if (b.requires_grad()) detail::accumulate_into(b, out.grad());
    });
  }
  return out;
}

/// Elementwise product of equally shaped tensors.
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  auto* tape = BasicTape<T>::recording({&a, &b});
  auto out = detail::make_output<T>(a.shape(), tape);
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  if (tape) {
    tape->record({a, b}, out, [a, b, out]() mutable {
      const auto dy = out.grad();
      if (a.requires_grad()) {
        auto da = a.mutable_grad();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto db = b.mutable_grad();
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * a.data()[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  auto* tape = BasicTape<T>::recording({&x});
  auto out = detail::make_output<T>(x.shape(), tape);
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] * factor;
  if (tape) {
    tape->record({x}, out, [x, out, factor]() mutable {
      const auto dy = out.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * factor;
    });
  }
  return out;
}

/// Sum of all elements as a scalar tensor.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  auto* tape = BasicTape<T>::recording({&x});
  accum_t<T> s = 0;
  for (const T v : x.data()) s += v;
  BasicTensor<T> out(Shape{}, std::vector<T>{static_cast<T>(s)}, tape != nullptr);
  if (tape) {
    tape->record({x}, out, [x, out]() mutable {
      const T g = out.grad()[0];
      for (auto& d : x.mutable_grad()) d += g;
    });
  }
  return out;
}

/// Row-wise softmax of logits [B x K]; not recorded on the tape.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  auto out = BasicTensor<T>::zeros(logits.shape());
  const T* z = logits.data().data();
  T* p = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* zr = z + r * k;
    const T zmax = *std::max_element(zr, zr + k);
    accum_t<T> total = 0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(static_cast<accum_t<T>>(zr[j] - zmax));
    for (std::size_t j = 0; j < k; ++j) {
      p[r * k + j] = static_cast<T>(std::exp(static_cast<accum_t<T>>(zr[j] - zmax)) / total);
    }
  }
  return out;
}

/// Mean over the batch of -sum_k y_k log softmax(z)_k.
///
/// Rows of `labels` must each sum to 1 (within 1e-6). The gradient with
/// respect to the logits is (softmax - labels) / B.
template <typename T>
BasicTensor<T> softmax_xent(const BasicTensor<T>& logits, const BasicTensor<T>& labels) {
  require_rank(logits, 2, "softmax_xent logits");
  if (labels.shape() != logits.shape()) {
    throw DimensionError("softmax_xent: labels " + shape_string(labels.shape()) + " vs logits " +
                         shape_string(logits.shape()));
  }
  using Acc = accum_t<T>;
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  const T* y = labels.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    Acc s = 0;
    for (std::size_t j = 0; j < k; ++j) s += y[r * k + j];
    if (std::abs(s - Acc{1}) > 1e-6) {
      throw ContractError("softmax_xent: label row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
  }

  const T* z = logits.data().data();
  std::vector<T> probs(rows * k);
  Acc loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* zr = z + r * k;
    const Acc zmax = *std::max_element(zr, zr + k);
    Acc total = 0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(Acc(zr[j]) - zmax);
    const Acc log_total = std::log(total);
    for (std::size_t j = 0; j < k; ++j) {
      const Acc log_p = Acc(zr[j]) - zmax - log_total;
      probs[r * k + j] = static_cast<T>(std::exp(log_p));
      if (y[r * k + j] != T{0}) loss -= Acc(y[r * k + j]) * log_p;
    }
  }
  loss /= static_cast<Acc>(rows);
  if (!std::isfinite(loss)) throw NumericError("softmax_xent: non-finite loss");

  auto* tape = BasicTape<T>::recording({&logits, &labels});
  BasicTensor<T> out(Shape{}, std::vector<T>{static_cast<T>(loss)}, tape != nullptr);
  if (tape) {
    tape->record({logits, labels}, out, [logits, out, labels, probs = std::move(probs), rows]() mutable {
      if (!logits.requires_grad()) return;
      const T g = out.grad()[0] / static_cast<T>(rows);
      const auto y = labels.data();
      auto dz = logits.mutable_grad();
      for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += g * (probs[i] - y[i]);
    });
  }
  return out;
}

}  // namespace cplx
