#pragma once

#include <algorithm>
#include <random>

#include "moerl/autodiff/init.hpp"
#include "moerl/autodiff/tensor.hpp"

namespace moerl {

// Random-shift augmentation on an NCHW batch: replicate-pad every sample by
// `pad` pixels, then crop back to H×W at a per-sample offset drawn uniformly
// from [0, 2·pad]². Applied to raw observations before they enter a tape.
inline Tensor random_shift(const Tensor& x, std::size_t pad, Rng& rng) {
  if (x.rank() != 4) throw DimensionError("random_shift: expected NCHW, got " + shape_str(x.shape()));
  if (pad == 0) return x;
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::uniform_int_distribution<std::size_t> offset(0, 2 * pad);
  Tensor out(x.shape());
  const auto clampi = [](long v, long hi) { return static_cast<std::size_t>(std::clamp(v, 0L, hi)); };
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t dy = offset(rng);
    const std::size_t dx = offset(rng);
    for (std::size_t c = 0; c < C; ++c) {
      const double* src = x.data().data() + ((b * C + c) * H) * W;
      double* dst = out.data().data() + ((b * C + c) * H) * W;
      for (std::size_t i = 0; i < H; ++i) {
        // padded row index i + dy maps to source row i + dy - pad, replicated at borders
        const std::size_t si = clampi(static_cast<long>(i + dy) - static_cast<long>(pad), static_cast<long>(H) - 1);
        for (std::size_t j = 0; j < W; ++j) {
          const std::size_t sj =
              clampi(static_cast<long>(j + dx) - static_cast<long>(pad), static_cast<long>(W) - 1);
          dst[i * W + j] = src[si * W + sj];
        }
      }
    }
  }
  return out;
}

}  // namespace moerl
