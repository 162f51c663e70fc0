#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace flaf {

// Iterative radix-2 complex FFT with precomputed twiddles and bit-reversal
// table. A plan is immutable after construction and can be shared across
// threads.
class FftPlan {
 public:
  explicit FftPlan(std::size_t size) : size_(size) {
    if (size == 0 || (size & (size - 1)) != 0) {
      throw std::invalid_argument("FFT size must be a power of two");
    }
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < size) ++bits;
    bitrev_.resize(size);
    for (std::size_t i = 0; i < size; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) {
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      }
      bitrev_[i] = r;
    }
    twiddles_.resize(size / 2);
    for (std::size_t k = 0; k < size / 2; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) /
                           static_cast<double>(size);
      twiddles_[k] = {std::cos(angle), std::sin(angle)};
    }
  }

  std::size_t size() const noexcept { return size_; }

  // In-place forward transform, no scaling.
  void forward(std::span<std::complex<double>> data) const {
    if (data.size() != size_) throw std::invalid_argument("FFT size mismatch");
    for (std::size_t i = 0; i < size_; ++i) {
      if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= size_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = size_ / len;
      for (std::size_t start = 0; start < size_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          const auto w = twiddles_[j * stride];
          const auto u = data[start + j];
          const auto v = data[start + j + half] * w;
          data[start + j] = u + v;
          data[start + j + half] = u - v;
        }
      }
    }
  }

  // Full complex spectrum of a real signal, zero-padded to size().
  std::vector<std::complex<double>> transform_real(std::span<const double> input) const {
    std::vector<std::complex<double>> buf(size_);
    const std::size_t n = std::min(input.size(), size_);
    for (std::size_t i = 0; i < n; ++i) buf[i] = input[i];
    forward(buf);
    return buf;
  }

 private:
  std::size_t size_;
  std::vector<std::size_t> bitrev_;
  std::vector<std::complex<double>> twiddles_;
};

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace flaf
