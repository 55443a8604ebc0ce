#pragma once

#include <vector>

#include "mocl/tensor.hpp"

namespace mocl {

// Decoupled-weight-decay Adam over a fixed parameter list.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8, double weight_decay = 0.0)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps),
        wd_(weight_decay) {
    for (const Tensor& p : params_) {
      m_.push_back(Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }

  void step() {
    ++t_;
    double c1 = 1.0 - std::pow(b1_, t_);
    double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      const Matrix& g = p.grad();
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
      Matrix update =
          (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + eps_) + wd_ * p.value().array();
      p.mutable_value() -= lr_ * update;
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
  double lr_, b1_, b2_, eps_, wd_;
};

}  // namespace mocl
