#pragma once

#include <cstddef>
#include <vector>

namespace octdn::nn {

// Dense NCHW tensor.
template <typename T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {}

  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  T* plane(int ni, int ci) {
    return v.data() + (static_cast<size_t>(ni) * c + ci) * (static_cast<size_t>(h) * w);
  }
  const T* plane(int ni, int ci) const {
    return v.data() + (static_cast<size_t>(ni) * c + ci) * (static_cast<size_t>(h) * w);
  }

  T& at(int ni, int ci, int hi, int wi) {
    return v[((static_cast<size_t>(ni) * c + ci) * h + hi) * w + wi];
  }
  T at(int ni, int ci, int hi, int wi) const {
    return v[((static_cast<size_t>(ni) * c + ci) * h + hi) * w + wi];
  }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  void release() {
    v.clear();
    v.shrink_to_fit();
  }
};

}  // namespace octdn::nn
