#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "mvw/error.hpp"

namespace mvw {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matd = Mat<double>;
using Vecd = Vec<double>;
using RowVecd = RowVec<double>;
using Mati = Eigen::MatrixXi;
using Veci = Eigen::VectorXi;

/// Row-major dense tensor of rank <= 5 with float32 payload; the in-memory
/// twin of an MVT1 file. The last dimension varies fastest.
struct TensorData {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  static constexpr int kMaxRank = 5;

  TensorData() = default;
  TensorData(std::initializer_list<std::uint32_t> d) : dims(d) {
    data.assign(numel(), 0.0f);
  }

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  int rank() const { return static_cast<int>(dims.size()); }

  std::size_t flat(std::initializer_list<std::size_t> idx) const {
    std::size_t off = 0;
    std::size_t i = 0;
    for (auto v : idx) {
      off = off * dims[i] + v;
      ++i;
    }
    return off;
  }

  float& at(std::initializer_list<std::size_t> idx) { return data[flat(idx)]; }
  float at(std::initializer_list<std::size_t> idx) const { return data[flat(idx)]; }
};

/// Rank-2 tensor from a double matrix (values narrowed to float32).
inline TensorData tensorFromMatrix(const Matd& m) {
  TensorData t;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.resize(t.numel());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      t.data[static_cast<std::size_t>(r) * m.cols() + c] = static_cast<float>(m(r, c));
  return t;
}

inline Matd matrixFromTensor(const TensorData& t) {
  if (t.rank() != 2) throw FormatError("expected a rank-2 tensor");
  Matd m(t.dims[0], t.dims[1]);
  for (std::uint32_t r = 0; r < t.dims[0]; ++r)
    for (std::uint32_t c = 0; c < t.dims[1]; ++c)
      m(r, c) = t.data[static_cast<std::size_t>(r) * t.dims[1] + c];
  return m;
}

}  // namespace mvw
