#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace erd {

// Dense H x W x C tensor, channel-last, double precision.
struct Tensor3 {
  int h = 0, w = 0, c = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int h_, int w_, int c_)
      : h(h_), w(w_), c(c_),
        data(static_cast<std::size_t>(h_) * w_ * c_, 0.0) {}

  double& at(int y, int x, int ch) {
    return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  double at(int y, int x, int ch) const {
    return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }

  // Pointer to the channel vector at (y, x).
  double* loc(int y, int x) {
    return data.data() + (static_cast<std::size_t>(y) * w + x) * c;
  }
  const double* loc(int y, int x) const {
    return data.data() + (static_cast<std::size_t>(y) * w + x) * c;
  }

  std::size_t size() const { return data.size(); }

  void zero() { std::fill(data.begin(), data.end(), 0.0); }

  void resize(int h_, int w_, int c_) {
    h = h_;
    w = w_;
    c = c_;
    data.assign(static_cast<std::size_t>(h_) * w_ * c_, 0.0);
  }
};

}  // namespace erd
