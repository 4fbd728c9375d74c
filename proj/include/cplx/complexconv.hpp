#pragma once

// Complex convolution computed with real-valued machinery.
//
// An I/Q sequence Z_n = I_n + jQ_n is laid out as two rows (I, Q). A complex
// filter h_m = h'_m + jh''_m is laid out the same way, rows (h', h''). One
// real 2-D cross-correlation of the zero-padded rows (0, I, Q, 0) with the
// two-row kernel produces three rows
//
//     I*h'      I*h'' + Q*h'      Q*h''
//
// and subtracting the third from the first yields the complex result
//
//     I*h' - Q*h''      I*h'' + Q*h'
//
// Here '*' is a sliding cross-correlation along time (no tap reversal).
// Sliding the kernel down the padded row axis pairs its top row with the row
// above, so the real kernel holds h'' on top and h' below (flip_rows).

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cplx/ops.hpp"

namespace cplx {

/// N samples of a complex baseband signal as separate I and Q channels.
class IqSequence {
 public:
  IqSequence() = default;

  IqSequence(std::vector<float> i, std::vector<float> q) : i_(std::move(i)), q_(std::move(q)) {
    if (i_.size() != q_.size()) {
      throw DimensionError("IqSequence: I has " + std::to_string(i_.size()) + " samples, Q has " +
                           std::to_string(q_.size()));
    }
  }

  static IqSequence from_complex(std::span<const std::complex<double>> z) {
    std::vector<float> i(z.size()), q(z.size());
    for (std::size_t n = 0; n < z.size(); ++n) {
      i[n] = static_cast<float>(z[n].real());
      q[n] = static_cast<float>(z[n].imag());
    }
    return {std::move(i), std::move(q)};
  }

  /// Rows (I, Q) of a 2 x N tensor.
  template <typename T>
  static IqSequence from_tensor(const BasicTensor<T>& t) {
    if (t.rank() != 2 || t.dim(0) != 2) {
      throw DimensionError("IqSequence::from_tensor: expected 2 x N, got " + shape_string(t.shape()));
    }
    const std::size_t n = t.dim(1);
    const auto d = t.data();
    return {std::vector<float>(d.begin(), d.begin() + n), std::vector<float>(d.begin() + n, d.end())};
  }

  [[nodiscard]] std::size_t size() const noexcept { return i_.size(); }
  [[nodiscard]] std::span<const float> i() const noexcept { return i_; }
  [[nodiscard]] std::span<const float> q() const noexcept { return q_; }
  [[nodiscard]] std::complex<double> operator[](std::size_t n) const { return {i_[n], q_[n]}; }

  template <typename T = float>
  [[nodiscard]] BasicTensor<T> to_tensor(bool requires_grad = false) const {
    std::vector<T> data;
    data.reserve(2 * size());
    data.insert(data.end(), i_.begin(), i_.end());
    data.insert(data.end(), q_.begin(), q_.end());
    return BasicTensor<T>({2, size()}, std::move(data), requires_grad);
  }

 private:
  std::vector<float> i_;
  std::vector<float> q_;
};

/// M complex taps h_m = h'_m + j h''_m.
class ComplexFilter {
 public:
  ComplexFilter(std::vector<float> real, std::vector<float> imag) : re_(std::move(real)), im_(std::move(imag)) {
    if (re_.empty() || re_.size() != im_.size()) {
      throw DimensionError("ComplexFilter: need M >= 1 taps with equal h' and h'' lengths");
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return re_.size(); }
  [[nodiscard]] std::span<const float> real() const noexcept { return re_; }
  [[nodiscard]] std::span<const float> imag() const noexcept { return im_; }
  [[nodiscard]] std::complex<double> operator[](std::size_t m) const { return {re_[m], im_[m]}; }

  /// Rows (h', h'') of a 2 x M tensor.
  template <typename T = float>
  [[nodiscard]] BasicTensor<T> to_tensor(bool requires_grad = false) const {
    std::vector<T> data;
    data.reserve(2 * size());
    data.insert(data.end(), re_.begin(), re_.end());
    data.insert(data.end(), im_.begin(), im_.end());
    return BasicTensor<T>({2, size()}, std::move(data), requires_grad);
  }

 private:
  std::vector<float> re_;
  std::vector<float> im_;
};

namespace detail {

template <typename T>
void check_iq_pair(const BasicTensor<T>& z, const BasicTensor<T>& h) {
  if (z.rank() != 2 || z.dim(0) != 2) throw DimensionError("I/Q input must be 2 x N, got " + shape_string(z.shape()));
  if (h.rank() != 2 || h.dim(0) != 2) throw DimensionError("complex filter must be 2 x M, got " + shape_string(h.shape()));
  if (h.dim(1) > z.dim(1)) {
    throw DimensionError("complex filter has " + std::to_string(h.dim(1)) + " taps but the signal only " +
                         std::to_string(z.dim(1)) + " samples");
  }
}

}  // namespace detail

/// Multi-channel layer form.
///
/// input: B x C x 2 x N (C complex channels, rows I and Q); filters: F x C x 2 x M
/// with rows (h', h''). Returns B x F x 2 x (N-M+1): per output channel the sum
/// over input channels of the complex cross-correlations.
template <typename T>
BasicTensor<T> complex_conv(const BasicTensor<T>& input, const BasicTensor<T>& filters) {
  require_rank(input, 4, "complex_conv input");
  require_rank(filters, 4, "complex_conv filters");
  if (input.dim(2) != 2 || filters.dim(2) != 2) {
    throw DimensionError("complex_conv: I/Q axis must have extent 2: input " + shape_string(input.shape()) +
                         ", filters " + shape_string(filters.shape()));
  }
  const auto three = xcorr2d_valid(pad_rows(input, 1, 1), flip_rows(filters));
  return recombine_columns(three);
}

/// Real 2-D cross-correlation of the N x 2 I/Q array with the M x 2 kernel.
///
/// Returns 3 x (N-M+1); row k holds column k of the real result:
/// I*h', I*h'' + Q*h', Q*h''.
template <typename T>
BasicTensor<T> three_column_xcorr(const BasicTensor<T>& z, const BasicTensor<T>& h) {
  detail::check_iq_pair(z, h);
  const std::size_t n = z.dim(1), m = h.dim(1);
  const auto padded = pad_rows(reshape(z, {1, 1, 2, n}), 1, 1);
  const auto kernel = flip_rows(reshape(h, {1, 1, 2, m}));
  return reshape(xcorr2d_valid(padded, kernel), {3, n - m + 1});
}

/// Complex cross-correlation out_n = sum_m Z_{n+m} h_m as a 2 x (N-M+1) tensor,
/// obtained from three_column_xcorr by the column recombination. Differentiable
/// with respect to both the signal and the filter.
template <typename T>
BasicTensor<T> complex_xcorr(const BasicTensor<T>& z, const BasicTensor<T>& h) {
  return recombine_columns(three_column_xcorr(z, h));
}

[[nodiscard]] inline IqSequence complex_xcorr(const IqSequence& z, const ComplexFilter& h) {
  return IqSequence::from_tensor(complex_xcorr(z.to_tensor<float>(), h.to_tensor<float>()));
}

/// Direct complex arithmetic: out_n = sum_{m} Z_{n+m} * h_m. Independent of the
/// real-convolution route and used to verify it.
[[nodiscard]] inline IqSequence complex_oracle(const IqSequence& z, const ComplexFilter& h) {
  if (z.size() == 0) throw DimensionError("complex_oracle: empty signal");
  if (h.size() > z.size()) {
    throw DimensionError("complex_oracle: filter has " + std::to_string(h.size()) + " taps but the signal only " +
                         std::to_string(z.size()) + " samples");
  }
  std::vector<std::complex<double>> out(z.size() - h.size() + 1);
  for (std::size_t n = 0; n < out.size(); ++n) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t m = 0; m < h.size(); ++m) acc += z[n + m] * h[m];
    out[n] = acc;
  }
  return IqSequence::from_complex(out);
}

}  // namespace cplx
