#pragma once

#include <vector>

#include "mvw/params.hpp"

namespace mvw {

/// Adaptive-moment optimizer with bias correction.
template <class S>
class Adam {
 public:
  Adam(S lr, S beta1, S beta2, S eps = S(1e-8)) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamStore<S>& params) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = Mat<S>::Zero(params[i].value.rows(), params[i].value.cols());
        v_[i] = m_[i];
      }
    }
    ++t_;
    const S c1 = S(1) - std::pow(b1_, static_cast<S>(t_));
    const S c2 = S(1) - std::pow(b2_, static_cast<S>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Mat<S>& grad = params[i].grad;
      m_[i] = b1_ * m_[i] + (S(1) - b1_) * grad;
      v_[i] = b2_ * v_[i] + (S(1) - b2_) * grad.cwiseProduct(grad);
      const Mat<S> mhat = m_[i] / c1;
      const Mat<S> vhat = v_[i] / c2;
      params[i].value -=
          lr_ * mhat.cwiseQuotient(Mat<S>(vhat.cwiseSqrt().array() + eps_));
    }
  }

 private:
  S lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

}  // namespace mvw
