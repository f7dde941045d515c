#pragma once

#include <initializer_list>
#include <vector>

#include "d2d/util.hpp"

namespace d2d::nn {

// Dense row-major f32 tensor of rank 1 or 2. All graph values and parameters
// use this; shape checks throw DimError.
struct Array {
  std::vector<int> shape;
  std::vector<float> data;

  Array() = default;
  explicit Array(std::vector<int> s) : shape(std::move(s)) {
    data.assign(size_t(numel_of(shape)), 0.0f);
  }

  static Array zeros(std::initializer_list<int> s) { return Array(std::vector<int>(s)); }
  static Array vec(std::initializer_list<float> v) {
    Array a({int(v.size())});
    a.data.assign(v.begin(), v.end());
    return a;
  }

  static long long numel_of(const std::vector<int>& s) {
    long long n = 1;
    for (int d : s) {
      if (d < 0) throw DimError("negative dimension");
      n *= d;
    }
    return n;
  }

  int ndim() const { return int(shape.size()); }
  int numel() const { return int(data.size()); }
  int rows() const {
    if (ndim() != 2) throw DimError(cat("rows() on rank-", ndim(), " array"));
    return shape[0];
  }
  int cols() const {
    if (ndim() != 2) throw DimError(cat("cols() on rank-", ndim(), " array"));
    return shape[1];
  }
  int len() const {
    if (ndim() != 1) throw DimError(cat("len() on rank-", ndim(), " array"));
    return shape[0];
  }

  float& at(int i) { return data[size_t(i)]; }
  float at(int i) const { return data[size_t(i)]; }
  float& at(int i, int j) { return data[size_t(i) * size_t(shape[1]) + size_t(j)]; }
  float at(int i, int j) const { return data[size_t(i) * size_t(shape[1]) + size_t(j)]; }

  float* row_ptr(int i) { return data.data() + size_t(i) * size_t(shape[1]); }
  const float* row_ptr(int i) const { return data.data() + size_t(i) * size_t(shape[1]); }

  bool same_shape(const Array& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }
};

}  // namespace d2d::nn
