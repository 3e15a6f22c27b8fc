#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "erd/rng.hpp"
#include "erd/tensor.hpp"

namespace erd::det {

// 2-D convolution with explicit backward. Weights are laid out
// [out_c][ky][kx][in_c] so the inner products run over contiguous input
// channels.
struct Conv2d {
  int in_c = 0, out_c = 0, k = 1, stride = 1, pad = 0;
  std::vector<double> w, b;
  std::vector<double> gw, gb;

  Conv2d() = default;
  Conv2d(int in_c_, int out_c_, int k_, int stride_, int pad_)
      : in_c(in_c_), out_c(out_c_), k(k_), stride(stride_), pad(pad_),
        w(static_cast<std::size_t>(out_c_) * k_ * k_ * in_c_, 0.0),
        b(out_c_, 0.0),
        gw(w.size(), 0.0),
        gb(b.size(), 0.0) {}

  int out_dim(int in) const { return (in + 2 * pad - k) / stride + 1; }

  void init_he(Rng& rng) {
    const double scale = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
    for (auto& v : w) v = rng.normal() * scale;
    for (auto& v : b) v = 0.0;
  }

  void forward(const Tensor3& x, Tensor3& y) const {
    const int oh = out_dim(x.h), ow = out_dim(x.w);
    y.resize(oh, ow, out_c);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double* out = y.loc(oy, ox);
        for (int oc = 0; oc < out_c; ++oc) out[oc] = b[oc];
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.w) continue;
            const double* in = x.loc(iy, ix);
            for (int oc = 0; oc < out_c; ++oc) {
              const double* wp =
                  &w[((static_cast<std::size_t>(oc) * k + ky) * k + kx) * in_c];
              double acc = 0.0;
              for (int ic = 0; ic < in_c; ++ic) acc += wp[ic] * in[ic];
              out[oc] += acc;
            }
          }
        }
      }
    }
  }

  // Accumulates gw/gb; writes input gradient into dx when non-null.
  void backward(const Tensor3& x, const Tensor3& dy, Tensor3* dx) {
    if (dx) dx->resize(x.h, x.w, x.c);
    const int oh = dy.h, ow = dy.w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double* dout = dy.loc(oy, ox);
        for (int oc = 0; oc < out_c; ++oc) gb[oc] += dout[oc];
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.w) continue;
            const double* in = x.loc(iy, ix);
            double* dxp = dx ? dx->loc(iy, ix) : nullptr;
            for (int oc = 0; oc < out_c; ++oc) {
              const double g = dout[oc];
              if (g == 0.0) continue;
              const std::size_t base =
                  ((static_cast<std::size_t>(oc) * k + ky) * k + kx) * in_c;
              double* gwp = &gw[base];
              const double* wp = &w[base];
              for (int ic = 0; ic < in_c; ++ic) {
                gwp[ic] += g * in[ic];
                if (dxp) dxp[ic] += g * wp[ic];
              }
            }
          }
        }
      }
    }
  }

  void zero_grad() {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
  }
};

inline void relu_forward(const Tensor3& x, Tensor3& y) {
  y.resize(x.h, x.w, x.c);
  for (std::size_t i = 0; i < x.size(); ++i) {
    y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
  }
}

// Uses the post-activation value as the mask.
inline void relu_backward(const Tensor3& y, const Tensor3& dy, Tensor3& dx) {
  dx.resize(y.h, y.w, y.c);
  for (std::size_t i = 0; i < y.size(); ++i) {
    dx.data[i] = y.data[i] > 0.0 ? dy.data[i] : 0.0;
  }
}

inline void upsample2_forward(const Tensor3& x, Tensor3& y) {
  y.resize(x.h * 2, x.w * 2, x.c);
  for (int oy = 0; oy < y.h; ++oy) {
    for (int ox = 0; ox < y.w; ++ox) {
      const double* in = x.loc(oy / 2, ox / 2);
      double* out = y.loc(oy, ox);
      for (int c = 0; c < x.c; ++c) out[c] = in[c];
    }
  }
}

inline void upsample2_backward(const Tensor3& dy, Tensor3& dx) {
  dx.resize(dy.h / 2, dy.w / 2, dy.c);
  for (int oy = 0; oy < dy.h; ++oy) {
    for (int ox = 0; ox < dy.w; ++ox) {
      const double* g = dy.loc(oy, ox);
      double* out = dx.loc(oy / 2, ox / 2);
      for (int c = 0; c < dy.c; ++c) out[c] += g[c];
    }
  }
}

inline void add_inplace(Tensor3& a, const Tensor3& b) {
  if (a.size() != b.size()) throw std::runtime_error("add: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace erd::det
