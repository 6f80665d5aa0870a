#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace dfusion {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
struct Param {
  Mat<T> value;
  Mat<T> grad;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value.setZero(rows, cols);
    grad.setZero(rows, cols);
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename T>
struct ParamRef {
  std::string name;
  Param<T>* param;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

// Row offsets of variable-length segments inside a stacked matrix:
// segment b spans rows [offsets[b], offsets[b + 1]).
using Segments = std::vector<int>;

inline Segments uniform_segments(int count, int length) {
  Segments s(static_cast<std::size_t>(count) + 1);
  for (int i = 0; i <= count; ++i) s[static_cast<std::size_t>(i)] = i * length;
  return s;
}

}  // namespace dfusion
