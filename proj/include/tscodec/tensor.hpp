#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace tscodec {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

template <typename To, typename From>
std::vector<To> cast_vector(const std::vector<From>& v) {
  return std::vector<To>(v.begin(), v.end());
}

}  // namespace tscodec
