#include "mocl/ops.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace mocl {

thread_local Tape* Tape::active_ = nullptr;

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) throw NumericError(std::string(op) + ": produced non-finite values");
}

Tensor make_output(Matrix v, const char* op, bool track) {
  check_finite(v, op);
  Tensor out = Tensor::constant(std::move(v));
  if (track) out.set_requires_grad(true);
  return out;
}

bool tracking(const Tensor& a) { return Tape::active() && a.requires_grad(); }
bool tracking(const Tensor& a, const Tensor& b) {
  return Tape::active() && (a.requires_grad() || b.requires_grad());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
}

bool is_vector(const Tensor& t) { return t.rows() == 1 || t.cols() == 1; }

// Shared masked/unmasked softmax. mask == nullptr means all columns live.
Tensor softmax_rows_impl(const Tensor& x, const Mask* mask) {
  const Matrix& v = x.value();
  const Eigen::Index r = v.rows(), c = v.cols();
  if (mask && static_cast<Eigen::Index>(mask->size()) != c)
    throw ShapeError("softmax_rows_masked: mask length != column count");

  Matrix p = Matrix::Zero(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < c; ++j)
      if ((!mask || (*mask)[j]) && v(i, j) > mx) mx = v(i, j);
    if (!std::isfinite(mx))
      throw DegenerateInputError("softmax_rows_masked: row with no unmasked column");
    double sum = 0.0;
    for (Eigen::Index j = 0; j < c; ++j) {
      if (!mask || (*mask)[j]) {
        p(i, j) = std::exp(v(i, j) - mx);
        sum += p(i, j);
      }
    }
    p.row(i) /= sum;
  }

  bool track = tracking(x);
  Tensor out = make_output(std::move(p), "softmax_rows", track);
  if (track) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::active()->record([xi, oi] {
      oi->ensure_grad();
      xi->ensure_grad();
      const Matrix& prob = oi->value;
      const Matrix& g = oi->grad;
      for (Eigen::Index i = 0; i < prob.rows(); ++i) {
        double dot = prob.row(i).dot(g.row(i));
        xi->grad.row(i).array() +=
            prob.row(i).array() * (g.row(i).array() - dot);
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  bool track = tracking(a, b);
  Tensor out = make_output(a.value() + b.value(), "add", track);
  if (track) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi] {
      oi->ensure_grad();
      if (ai->requires_grad) {
        ai->ensure_grad();
        ai->grad += oi->grad;
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        bi->grad += oi->grad;
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  bool track = tracking(a, b);
  Tensor out = make_output(a.value() - b.value(), "sub", track);
  if (track) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi] {
      oi->ensure_grad();
      if (ai->requires_grad) {
        ai->ensure_grad();
        ai->grad += oi->grad;
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        bi->grad -= oi->grad;
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double s) {
  bool track = tracking(x);
  Tensor out = make_output(x.value() * s, "scale", track);
  if (track) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::active()->record([xi, oi, s] {
      oi->ensure_grad();
      xi->ensure_grad();
      xi->grad += s * oi->grad;
    });
  }
  return out;
}

Tensor scalar_mul(const Tensor& s, const Tensor& x) {
  if (s.size() != 1) throw ShapeError("scalar_mul: s must be 1x1");
  bool track = tracking(s, x);
  Tensor out = make_output(s.item() * x.value(), "scalar_mul", track);
  if (track) {
    auto si = s.impl(), xi = x.impl(), oi = out.impl();
    Tape::active()->record([si, xi, oi] {
      oi->ensure_grad();
      if (si->requires_grad) {
        si->ensure_grad();
        si->grad(0, 0) += (oi->grad.array() * xi->value.array()).sum();
      }
      if (xi->requires_grad) {
        xi->ensure_grad();
        xi->grad += si->value(0, 0) * oi->grad;
      }
    });
  }
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols())
    throw ShapeError("add_row_bias: bias must be 1x" + std::to_string(x.cols()));
  bool track = tracking(x, bias);
  Matrix v = x.value();
  v.rowwise() += bias.value().row(0);
  Tensor out = make_output(std::move(v), "add_row_bias", track);
  if (track) {
    auto xi = x.impl(), bi = bias.impl(), oi = out.impl();
    Tape::active()->record([xi, bi, oi] {
      oi->ensure_grad();
      if (xi->requires_grad) {
        xi->ensure_grad();
        xi->grad += oi->grad;
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        bi->grad.row(0) += oi->grad.colwise().sum();
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  bool track = tracking(a, b);
  Tensor out = make_output(a.value() * b.value(), "matmul", track);
  if (track) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi] {
      oi->ensure_grad();
      if (ai->requires_grad) {
        ai->ensure_grad();
        ai->grad.noalias() += oi->grad * bi->value.transpose();
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        bi->grad.noalias() += ai->value.transpose() * oi->grad;
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()) + ")");
  bool track = tracking(a, b);
  Tensor out = make_output(a.value() * b.value().transpose(), "matmul_nt", track);
  if (track) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi] {
      oi->ensure_grad();
      if (ai->requires_grad) {
        ai->ensure_grad();
        ai->grad.noalias() += oi->grad * bi->value;
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        bi->grad.noalias() += oi->grad.transpose() * ai->value;
      }
    });
  }
  return out;
}

Tensor cols(const Tensor& x, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 1 || first + count > x.cols())
    throw IndexError("cols: slice [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of range for " +
                     std::to_string(x.cols()) + " columns");
  bool track = tracking(x);
  Tensor out = make_output(x.value().middleCols(first, count), "cols", track);
  if (track) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::active()->record([xi, oi, first, count] {
      oi->ensure_grad();
      xi->ensure_grad();
      xi->grad.middleCols(first, count) += oi->grad;
    });
  }
  return out;
}

Tensor vstack(const Tensor& top, const Tensor& bottom) {
  if (top.rows() > 0 && top.cols() != bottom.cols())
    throw ShapeError("vstack: column counts differ");
  bool track = tracking(top, bottom);
  Matrix v(top.rows() + bottom.rows(), bottom.cols());
  if (top.rows() > 0) v.topRows(top.rows()) = top.value();
  v.bottomRows(bottom.rows()) = bottom.value();
  Tensor out = make_output(std::move(v), "vstack", track);
  if (track) {
    auto ti = top.impl(), bi = bottom.impl(), oi = out.impl();
    Eigen::Index nt = top.rows(), nb = bottom.rows();
    Tape::active()->record([ti, bi, oi, nt, nb] {
      oi->ensure_grad();
      if (ti->requires_grad && nt > 0) {
        ti->ensure_grad();
        ti->grad += oi->grad.topRows(nt);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        bi->grad += oi->grad.bottomRows(nb);
      }
    });
  }
  return out;
}

Tensor hstack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("hstack: empty part list");
  Eigen::Index r = parts.front().rows(), c = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    if (p.rows() != r) throw ShapeError("hstack: row counts differ");
    c += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  bool track = Tape::active() && any_grad;
  Matrix v(r, c);
  Eigen::Index at = 0;
  for (const Tensor& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  Tensor out = make_output(std::move(v), "hstack", track);
  if (track) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    auto oi = out.impl();
    Tape::active()->record([impls, oi] {
      oi->ensure_grad();
      Eigen::Index at = 0;
      for (const auto& pi : impls) {
        Eigen::Index w = pi->value.cols();
        if (pi->requires_grad) {
          pi->ensure_grad();
          pi->grad += oi->grad.middleCols(at, w);
        }
        at += w;
      }
    });
  }
  return out;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  Matrix v(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw IndexError("embedding_rows: id " + std::to_string(ids[i]) + " out of range");
    v.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  bool track = tracking(table);
  Tensor out = make_output(std::move(v), "embedding_rows", track);
  if (track) {
    auto ti = table.impl();
    auto oi = out.impl();
    Tape::active()->record([ti, oi, ids] {
      oi->ensure_grad();
      ti->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        ti->grad.row(ids[i]) += oi->grad.row(static_cast<Eigen::Index>(i));
    });
  }
  return out;
}

Tensor weighted_sum(const Tensor& x, const Matrix& w) {
  if (x.rows() != w.rows() || x.cols() != w.cols())
    throw ShapeError("weighted_sum: shape mismatch");
  bool track = tracking(x);
  Tensor out =
      make_output(Matrix::Constant(1, 1, (x.value().array() * w.array()).sum()),
                  "weighted_sum", track);
  if (track) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::active()->record([xi, oi, w] {
      oi->ensure_grad();
      xi->ensure_grad();
      xi->grad += oi->grad(0, 0) * w;
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  bool track = tracking(x);
  Matrix v = x.value().unaryExpr(
      [](double t) { return t * 0.5 * (1.0 + std::erf(t * kInvSqrt2)); });
  Tensor out = make_output(std::move(v), "gelu", track);
  if (track) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::active()->record([xi, oi] {
      oi->ensure_grad();
      xi->ensure_grad();
      xi->grad.array() +=
          oi->grad.array() *
          xi->value.array().unaryExpr([](double t) {
            double phi = 0.5 * (1.0 + std::erf(t * kInvSqrt2));
            double dens = kInvSqrt2Pi * std::exp(-0.5 * t * t);
            return phi + t * dens;
          });
    });
  }
  return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Eigen::Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
    throw ShapeError("layer_norm_rows: gain/bias must be 1x" + std::to_string(d));

  const Matrix& v = x.value();
  Matrix xhat(v.rows(), d);
  Vector inv_std(v.rows());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    double mu = v.row(i).mean();
    double var = (v.row(i).array() - mu).square().mean();
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std(i) = inv;
    xhat.row(i) = (v.row(i).array() - mu) * inv;
  }
  Matrix y = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  y.rowwise() += bias.value().row(0);

  bool track = Tape::active() && (x.requires_grad() || gain.requires_grad() || bias.requires_grad());
  Tensor out = make_output(std::move(y), "layer_norm_rows", track);
  if (track) {
    auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    Tape::active()->record([xi, gi, bi, oi, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      oi->ensure_grad();
      const Matrix& g = oi->grad;
      if (xi->requires_grad) {
        xi->ensure_grad();
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          RowVector gdy = g.row(i).cwiseProduct(gi->value.row(0));
          double m1 = gdy.mean();
          double m2 = gdy.cwiseProduct(xhat.row(i)).mean();
          xi->grad.row(i).array() +=
              (gdy.array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
        }
      }
      if (gi->requires_grad) {
        gi->ensure_grad();
        gi->grad.row(0) += (g.array() * xhat.array()).colwise().sum().matrix();
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        bi->grad.row(0) += g.colwise().sum();
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) { return softmax_rows_impl(x, nullptr); }

Tensor softmax_rows_masked(const Tensor& x, const Mask& key_mask) {
  return softmax_rows_impl(x, &key_mask);
}

Tensor masked_mean_rows(const Tensor& x, const Mask& row_mask) {
  if (static_cast<Eigen::Index>(row_mask.size()) != x.rows())
    throw ShapeError("masked_mean_rows: mask length != row count");
  Eigen::Index count = 0;
  RowVector sum = RowVector::Zero(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (row_mask[i]) {
      sum += x.value().row(i);
      ++count;
    }
  }
  if (count == 0) throw DegenerateInputError("masked_mean_rows: mask selects no rows");
  bool track = tracking(x);
  Tensor out = make_output(sum / static_cast<double>(count), "masked_mean_rows", track);
  if (track) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::active()->record([xi, oi, row_mask, count] {
      oi->ensure_grad();
      xi->ensure_grad();
      double inv = 1.0 / static_cast<double>(count);
      for (Eigen::Index i = 0; i < xi->grad.rows(); ++i)
        if (row_mask[i]) xi->grad.row(i) += inv * oi->grad.row(0);
    });
  }
  return out;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (!is_vector(a) || !is_vector(b) || a.size() != b.size() || a.size() < 1)
    throw ShapeError("cosine_similarity: expects two vectors of equal length >= 1");
  Eigen::Map<const Vector> av(a.value().data(), a.size());
  Eigen::Map<const Vector> bv(b.value().data(), b.size());
  double na = av.norm(), nb = bv.norm();
  if (na == 0.0 || nb == 0.0)
    throw DegenerateInputError("cosine_similarity: zero-norm input vector");
  double c = av.dot(bv) / (na * nb);

  bool track = tracking(a, b);
  Tensor out = make_output(Matrix::Constant(1, 1, c), "cosine_similarity", track);
  if (track) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi, na, nb, c] {
      oi->ensure_grad();
      double g = oi->grad(0, 0);
      Eigen::Map<const Vector> av(ai->value.data(), ai->value.size());
      Eigen::Map<const Vector> bv(bi->value.data(), bi->value.size());
      if (ai->requires_grad) {
        ai->ensure_grad();
        Eigen::Map<Vector> ga(ai->grad.data(), ai->grad.size());
        ga += g * (bv / (na * nb) - c * av / (na * na));
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        Eigen::Map<Vector> gb(bi->grad.data(), bi->grad.size());
        gb += g * (av / (na * nb) - c * bv / (nb * nb));
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, int label) {
  if (logits.rows() != 1) throw ShapeError("cross_entropy: logits must be a 1xC row");
  const Eigen::Index c = logits.cols();
  if (label < 0 || label >= c)
    throw IndexError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(c) + " classes");
  const RowVector& l = logits.value().row(0);
  double mx = l.maxCoeff();
  double lse = mx + std::log((l.array() - mx).exp().sum());
  bool track = tracking(logits);
  Tensor out = make_output(Matrix::Constant(1, 1, lse - l(label)), "cross_entropy", track);
  if (track) {
    auto li = logits.impl();
    auto oi = out.impl();
    Tape::active()->record([li, oi, label, lse] {
      oi->ensure_grad();
      li->ensure_grad();
      double g = oi->grad(0, 0);
      RowVector p = (li->value.row(0).array() - lse).exp();
      p(label) -= 1.0;
      li->grad.row(0) += g * p;
    });
  }
  return out;
}

std::uint64_t hash_tensors(const std::vector<Tensor>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Tensor& t : tensors) {
    const Matrix& m = t.value();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        double v = m(i, j);
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int k = 0; k < 8; ++k) {
          h ^= (bits >> (8 * k)) & 0xff;
          h *= 0x100000001b3ull;
        }
      }
    }
  }
  return h;
}

double grad_check(const ScalarFn& f, const std::vector<Matrix>& theta, double eps) {
  if (eps < 1e-7 || eps > 1e-3)
    throw ConfigError("grad_check: eps must lie in [1e-7, 1e-3]");

  std::vector<Tensor> params;
  params.reserve(theta.size());
  for (const Matrix& m : theta) params.push_back(Tensor::param(m));

  Tape tape;
  std::vector<Matrix> autodiff;
  {
    TapeScope scope(tape);
    for (const Tensor& p : params) tape.watch(p);
    Tensor out = f(params);
    if (out.size() != 1) throw ShapeError("grad_check: f must return a scalar");
    tape.backward(out);
  }
  autodiff.reserve(params.size());
  for (const Tensor& p : params) autodiff.push_back(p.grad());

  auto eval = [&](const std::vector<Matrix>& point) {
    std::vector<Tensor> consts;
    consts.reserve(point.size());
    for (const Matrix& m : point) consts.push_back(Tensor::constant(m));
    double v = f(consts).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite f(theta +- eps)");
    return v;
  };

  double max_rel = 0.0;
  std::vector<Matrix> point = theta;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    for (Eigen::Index i = 0; i < theta[k].rows(); ++i) {
      for (Eigen::Index j = 0; j < theta[k].cols(); ++j) {
        double orig = point[k](i, j);
        point[k](i, j) = orig + eps;
        double fp = eval(point);
        point[k](i, j) = orig - eps;
        double fm = eval(point);
        point[k](i, j) = orig;
        double fd = (fp - fm) / (2.0 * eps);
        double ad = autodiff[k](i, j);
        double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-6});
        if (rel > max_rel) max_rel = rel;
      }
    }
  }
  return max_rel;
}

}  // namespace mocl
