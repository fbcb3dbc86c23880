#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "seqvae/graph.hpp"

// Differentiable primitives. Forward computes eagerly into a fresh tensor;
// backward closures read parent values through the node itself, so no large
// captures are held. Ops that can produce inf/nan from finite inputs check
// their result and throw NumericError.

namespace seqvae::ops {

namespace d {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw NumericError(msg);
}

inline void require_same(const Var& a, const Var& b, const char* op) {
  require(a.value().same_shape(b.value()),
          std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
}

inline void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite result");
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace d

// ---- matrix products ----

inline Var matmul(const Var& a, const Var& b) {
  d::require(a.value().cols() == b.value().rows(),
             "matmul: inner dims " + a.value().shape_str() + " vs " + b.value().shape_str());
  Tensor y = detail::t_matmul(a.value(), b.value());
  return detail::make_op("matmul", std::move(y), {a, b}, [](Node& n) {
    const Tensor& g = n.adjoint;
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->requires_grad) {
      Tensor da = detail::t_matmul_nt(g, pb->value);
      Tensor& acc = pa->grad();
      for (size_t i = 0; i < da.numel(); ++i) acc[i] += da[i];
    }
    if (pb->requires_grad) {
      Tensor db = detail::t_matmul_tn(pa->value, g);
      Tensor& acc = pb->grad();
      for (size_t i = 0; i < db.numel(); ++i) acc[i] += db[i];
    }
  });
}

// y = a * b^T, a:[R,K] b:[C,K] -> [R,C]
inline Var matmul_nt(const Var& a, const Var& b) {
  d::require(a.value().cols() == b.value().cols(),
             "matmul_nt: inner dims " + a.value().shape_str() + " vs " + b.value().shape_str());
  Tensor y = detail::t_matmul_nt(a.value(), b.value());
  return detail::make_op("matmul_nt", std::move(y), {a, b}, [](Node& n) {
    const Tensor& g = n.adjoint;
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->requires_grad) {
      Tensor da = detail::t_matmul(g, pb->value);
      Tensor& acc = pa->grad();
      for (size_t i = 0; i < da.numel(); ++i) acc[i] += da[i];
    }
    if (pb->requires_grad) {
      Tensor db = detail::t_matmul_tn(g, pa->value);
      Tensor& acc = pb->grad();
      for (size_t i = 0; i < db.numel(); ++i) acc[i] += db[i];
    }
  });
}

// ---- elementwise binary ----

inline Var add(const Var& a, const Var& b) {
  d::require_same(a, b, "add");
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  return detail::make_op("add", std::move(y), {a, b}, [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      Node* p = n.parents[k].get();
      if (!p->requires_grad) continue;
      Tensor& acc = p->grad();
      for (size_t i = 0; i < acc.numel(); ++i) acc[i] += n.adjoint[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  d::require_same(a, b, "sub");
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
  return detail::make_op("sub", std::move(y), {a, b}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->requires_grad) {
      Tensor& acc = pa->grad();
      for (size_t i = 0; i < acc.numel(); ++i) acc[i] += n.adjoint[i];
    }
    if (pb->requires_grad) {
      Tensor& acc = pb->grad();
      for (size_t i = 0; i < acc.numel(); ++i) acc[i] -= n.adjoint[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  d::require_same(a, b, "mul");
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  return detail::make_op("mul", std::move(y), {a, b}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->requires_grad) {
      Tensor& acc = pa->grad();
      for (size_t i = 0; i < acc.numel(); ++i) acc[i] += n.adjoint[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      Tensor& acc = pb->grad();
      for (size_t i = 0; i < acc.numel(); ++i) acc[i] += n.adjoint[i] * pa->value[i];
    }
  });
}

inline Var div(const Var& a, const Var& b) {
  d::require_same(a, b, "div");
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] /= b.value()[i];
  d::check_finite(y, "div");
  return detail::make_op("div", std::move(y), {a, b}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->requires_grad) {
      Tensor& acc = pa->grad();
      for (size_t i = 0; i < acc.numel(); ++i) acc[i] += n.adjoint[i] / pb->value[i];
    }
    if (pb->requires_grad) {
      Tensor& acc = pb->grad();
      for (size_t i = 0; i < acc.numel(); ++i) acc[i] -= n.adjoint[i] * n.value[i] / pb->value[i];
    }
  });
}

// ---- scalar-argument elementwise ----

inline Var add_scalar(const Var& a, double c) {
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] += c;
  return detail::make_op("add_scalar", std::move(y), {a}, [](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    for (size_t i = 0; i < acc.numel(); ++i) acc[i] += n.adjoint[i];
  });
}

inline Var mul_scalar(const Var& a, double c) {
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] *= c;
  return detail::make_op("mul_scalar", std::move(y), {a}, [c](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    for (size_t i = 0; i < acc.numel(); ++i) acc[i] += c * n.adjoint[i];
  });
}

inline Var scalar_sub(double c, const Var& a) {
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] = c - y[i];
  return detail::make_op("scalar_sub", std::move(y), {a}, [](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    for (size_t i = 0; i < acc.numel(); ++i) acc[i] -= n.adjoint[i];
  });
}

inline Var neg(const Var& a) { return mul_scalar(a, -1.0); }

// ---- elementwise unary ----

inline Var square(const Var& a) {
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] *= y[i];
  return detail::make_op("square", std::move(y), {a}, [](Node& n) {
    Node* p = n.parents[0].get();
    Tensor& acc = p->grad();
    for (size_t i = 0; i < acc.numel(); ++i) acc[i] += 2.0 * p->value[i] * n.adjoint[i];
  });
}

inline Var sqrt_v(const Var& a) {
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] = std::sqrt(y[i]);
  d::check_finite(y, "sqrt");
  return detail::make_op("sqrt", std::move(y), {a}, [](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    for (size_t i = 0; i < acc.numel(); ++i) acc[i] += n.adjoint[i] / (2.0 * n.value[i]);
  });
}

inline Var exp_v(const Var& a) {
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] = std::exp(y[i]);
  d::check_finite(y, "exp");
  return detail::make_op("exp", std::move(y), {a}, [](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    for (size_t i = 0; i < acc.numel(); ++i) acc[i] += n.adjoint[i] * n.value[i];
  });
}

inline Var log_v(const Var& a) {
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] = std::log(y[i]);
  d::check_finite(y, "log");
  return detail::make_op("log", std::move(y), {a}, [](Node& n) {
    Node* p = n.parents[0].get();
    Tensor& acc = p->grad();
    for (size_t i = 0; i < acc.numel(); ++i) acc[i] += n.adjoint[i] / p->value[i];
  });
}

inline Var sigmoid(const Var& a) {
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] = d::stable_sigmoid(y[i]);
  return detail::make_op("sigmoid", std::move(y), {a}, [](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    for (size_t i = 0; i < acc.numel(); ++i) {
      double s = n.value[i];
      acc[i] += n.adjoint[i] * s * (1.0 - s);
    }
  });
}

inline Var tanh_v(const Var& a) {
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] = std::tanh(y[i]);
  return detail::make_op("tanh", std::move(y), {a}, [](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    for (size_t i = 0; i < acc.numel(); ++i) {
      double t = n.value[i];
      acc[i] += n.adjoint[i] * (1.0 - t * t);
    }
  });
}

inline Var relu(const Var& a) {
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] = std::max(y[i], 0.0);
  return detail::make_op("relu", std::move(y), {a}, [](Node& n) {
    Node* p = n.parents[0].get();
    Tensor& acc = p->grad();
    for (size_t i = 0; i < acc.numel(); ++i) {
      if (p->value[i] > 0.0) acc[i] += n.adjoint[i];
    }
  });
}

inline Var softplus(const Var& a) {
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] = d::stable_softplus(y[i]);
  return detail::make_op("softplus", std::move(y), {a}, [](Node& n) {
    Node* p = n.parents[0].get();
    Tensor& acc = p->grad();
    for (size_t i = 0; i < acc.numel(); ++i) acc[i] += n.adjoint[i] * d::stable_sigmoid(p->value[i]);
  });
}

// Gradient is passed through inside [lo, hi] (inclusive) and zero outside.
inline Var clamp(const Var& a, double lo, double hi) {
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] = std::min(std::max(y[i], lo), hi);
  return detail::make_op("clamp", std::move(y), {a}, [lo, hi](Node& n) {
    Node* p = n.parents[0].get();
    Tensor& acc = p->grad();
    for (size_t i = 0; i < acc.numel(); ++i) {
      double x = p->value[i];
      if (x >= lo && x <= hi) acc[i] += n.adjoint[i];
    }
  });
}

// ---- reductions ----

inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) s += a.value()[i];
  return detail::make_op("sum_all", Tensor::scalar(s), {a}, [](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    double g = n.adjoint[0];
    for (size_t i = 0; i < acc.numel(); ++i) acc[i] += g;
  });
}

inline Var mean_all(const Var& a) {
  d::require(a.numel() > 0, "mean_all: empty tensor");
  double s = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) s += a.value()[i];
  double inv = 1.0 / static_cast<double>(a.numel());
  return detail::make_op("mean_all", Tensor::scalar(s * inv), {a}, [inv](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    double g = n.adjoint[0] * inv;
    for (size_t i = 0; i < acc.numel(); ++i) acc[i] += g;
  });
}

// [R,C] -> [R,1]
inline Var row_sum(const Var& a) {
  size_t R = a.value().rows(), C = a.value().cols();
  Tensor y({R, 1});
  for (size_t r = 0; r < R; ++r) {
    double s = 0.0;
    const double* arow = a.value().data() + r * C;
    for (size_t c = 0; c < C; ++c) s += arow[c];
    y[r] = s;
  }
  return detail::make_op("row_sum", std::move(y), {a}, [C](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    size_t R = n.value.rows();
    for (size_t r = 0; r < R; ++r) {
      double g = n.adjoint[r];
      double* row = acc.data() + r * C;
      for (size_t c = 0; c < C; ++c) row[c] += g;
    }
  });
}

inline Var row_mean(const Var& a) {
  size_t C = a.value().cols();
  d::require(C > 0, "row_mean: empty rows");
  return mul_scalar(row_sum(a), 1.0 / static_cast<double>(C));
}

// [R,C] -> [1,C]
inline Var col_sum(const Var& a) {
  size_t R = a.value().rows(), C = a.value().cols();
  Tensor y({1, C});
  for (size_t r = 0; r < R; ++r) {
    const double* arow = a.value().data() + r * C;
    for (size_t c = 0; c < C; ++c) y[c] += arow[c];
  }
  return detail::make_op("col_sum", std::move(y), {a}, [R, C](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    for (size_t r = 0; r < R; ++r) {
      double* row = acc.data() + r * C;
      for (size_t c = 0; c < C; ++c) row[c] += n.adjoint[c];
    }
  });
}

inline Var col_mean(const Var& a) {
  size_t R = a.value().rows();
  d::require(R > 0, "col_mean: empty columns");
  return mul_scalar(col_sum(a), 1.0 / static_cast<double>(R));
}

// ---- broadcast against a row vector [1,C] ----

namespace d {

inline void require_rowvec(const Var& m, const Var& r, const char* op) {
  require(r.value().rows() == 1 && r.value().cols() == m.value().cols(),
          std::string(op) + ": row vector " + r.value().shape_str() + " vs matrix " + m.value().shape_str());
}

inline void require_colvec(const Var& m, const Var& c, const char* op) {
  require(c.value().cols() == 1 && c.value().rows() == m.value().rows(),
          std::string(op) + ": col vector " + c.value().shape_str() + " vs matrix " + m.value().shape_str());
}

}  // namespace d

inline Var add_rowvec(const Var& m, const Var& r) {
  d::require_rowvec(m, r, "add_rowvec");
  size_t R = m.value().rows(), C = m.value().cols();
  Tensor y = m.value();
  for (size_t i = 0; i < R; ++i) {
    double* row = y.data() + i * C;
    for (size_t c = 0; c < C; ++c) row[c] += r.value()[c];
  }
  return detail::make_op("add_rowvec", std::move(y), {m, r}, [R, C](Node& n) {
    Node* pm = n.parents[0].get();
    Node* pr = n.parents[1].get();
    if (pm->requires_grad) {
      Tensor& acc = pm->grad();
      for (size_t i = 0; i < acc.numel(); ++i) acc[i] += n.adjoint[i];
    }
    if (pr->requires_grad) {
      Tensor& acc = pr->grad();
      for (size_t i = 0; i < R; ++i) {
        const double* grow = n.adjoint.data() + i * C;
        for (size_t c = 0; c < C; ++c) acc[c] += grow[c];
      }
    }
  });
}

inline Var sub_rowvec(const Var& m, const Var& r) {
  d::require_rowvec(m, r, "sub_rowvec");
  size_t R = m.value().rows(), C = m.value().cols();
  Tensor y = m.value();
  for (size_t i = 0; i < R; ++i) {
    double* row = y.data() + i * C;
    for (size_t c = 0; c < C; ++c) row[c] -= r.value()[c];
  }
  return detail::make_op("sub_rowvec", std::move(y), {m, r}, [R, C](Node& n) {
    Node* pm = n.parents[0].get();
    Node* pr = n.parents[1].get();
    if (pm->requires_grad) {
      Tensor& acc = pm->grad();
      for (size_t i = 0; i < acc.numel(); ++i) acc[i] += n.adjoint[i];
    }
    if (pr->requires_grad) {
      Tensor& acc = pr->grad();
      for (size_t i = 0; i < R; ++i) {
        const double* grow = n.adjoint.data() + i * C;
        for (size_t c = 0; c < C; ++c) acc[c] -= grow[c];
      }
    }
  });
}

inline Var mul_rowvec(const Var& m, const Var& r) {
  d::require_rowvec(m, r, "mul_rowvec");
  size_t R = m.value().rows(), C = m.value().cols();
  Tensor y = m.value();
  for (size_t i = 0; i < R; ++i) {
    double* row = y.data() + i * C;
    for (size_t c = 0; c < C; ++c) row[c] *= r.value()[c];
  }
  return detail::make_op("mul_rowvec", std::move(y), {m, r}, [R, C](Node& n) {
    Node* pm = n.parents[0].get();
    Node* pr = n.parents[1].get();
    if (pm->requires_grad) {
      Tensor& acc = pm->grad();
      for (size_t i = 0; i < R; ++i) {
        const double* grow = n.adjoint.data() + i * C;
        double* arow = acc.data() + i * C;
        for (size_t c = 0; c < C; ++c) arow[c] += grow[c] * pr->value[c];
      }
    }
    if (pr->requires_grad) {
      Tensor& acc = pr->grad();
      for (size_t i = 0; i < R; ++i) {
        const double* grow = n.adjoint.data() + i * C;
        const double* mrow = pm->value.data() + i * C;
        for (size_t c = 0; c < C; ++c) acc[c] += grow[c] * mrow[c];
      }
    }
  });
}

inline Var div_rowvec(const Var& m, const Var& r) {
  d::require_rowvec(m, r, "div_rowvec");
  size_t R = m.value().rows(), C = m.value().cols();
  Tensor y = m.value();
  for (size_t i = 0; i < R; ++i) {
    double* row = y.data() + i * C;
    for (size_t c = 0; c < C; ++c) row[c] /= r.value()[c];
  }
  d::check_finite(y, "div_rowvec");
  return detail::make_op("div_rowvec", std::move(y), {m, r}, [R, C](Node& n) {
    Node* pm = n.parents[0].get();
    Node* pr = n.parents[1].get();
    if (pm->requires_grad) {
      Tensor& acc = pm->grad();
      for (size_t i = 0; i < R; ++i) {
        const double* grow = n.adjoint.data() + i * C;
        double* arow = acc.data() + i * C;
        for (size_t c = 0; c < C; ++c) arow[c] += grow[c] / pr->value[c];
      }
    }
    if (pr->requires_grad) {
      Tensor& acc = pr->grad();
      for (size_t i = 0; i < R; ++i) {
        const double* grow = n.adjoint.data() + i * C;
        const double* yrow = n.value.data() + i * C;
        for (size_t c = 0; c < C; ++c) acc[c] -= grow[c] * yrow[c] / pr->value[c];
      }
    }
  });
}

// ---- broadcast against a column vector [R,1] ----

inline Var mul_colvec(const Var& m, const Var& c) {
  d::require_colvec(m, c, "mul_colvec");
  size_t R = m.value().rows(), C = m.value().cols();
  Tensor y = m.value();
  for (size_t i = 0; i < R; ++i) {
    double* row = y.data() + i * C;
    for (size_t j = 0; j < C; ++j) row[j] *= c.value()[i];
  }
  return detail::make_op("mul_colvec", std::move(y), {m, c}, [R, C](Node& n) {
    Node* pm = n.parents[0].get();
    Node* pc = n.parents[1].get();
    if (pm->requires_grad) {
      Tensor& acc = pm->grad();
      for (size_t i = 0; i < R; ++i) {
        const double* grow = n.adjoint.data() + i * C;
        double* arow = acc.data() + i * C;
        for (size_t j = 0; j < C; ++j) arow[j] += grow[j] * pc->value[i];
      }
    }
    if (pc->requires_grad) {
      Tensor& acc = pc->grad();
      for (size_t i = 0; i < R; ++i) {
        const double* grow = n.adjoint.data() + i * C;
        const double* mrow = pm->value.data() + i * C;
        double s = 0.0;
        for (size_t j = 0; j < C; ++j) s += grow[j] * mrow[j];
        acc[i] += s;
      }
    }
  });
}

inline Var div_colvec(const Var& m, const Var& c) {
  d::require_colvec(m, c, "div_colvec");
  size_t R = m.value().rows(), C = m.value().cols();
  Tensor y = m.value();
  for (size_t i = 0; i < R; ++i) {
    double* row = y.data() + i * C;
    for (size_t j = 0; j < C; ++j) row[j] /= c.value()[i];
  }
  d::check_finite(y, "div_colvec");
  return detail::make_op("div_colvec", std::move(y), {m, c}, [R, C](Node& n) {
    Node* pm = n.parents[0].get();
    Node* pc = n.parents[1].get();
    if (pm->requires_grad) {
      Tensor& acc = pm->grad();
      for (size_t i = 0; i < R; ++i) {
        const double* grow = n.adjoint.data() + i * C;
        double* arow = acc.data() + i * C;
        for (size_t j = 0; j < C; ++j) arow[j] += grow[j] / pc->value[i];
      }
    }
    if (pc->requires_grad) {
      Tensor& acc = pc->grad();
      for (size_t i = 0; i < R; ++i) {
        const double* grow = n.adjoint.data() + i * C;
        const double* yrow = n.value.data() + i * C;
        double s = 0.0;
        for (size_t j = 0; j < C; ++j) s += grow[j] * yrow[j];
        acc[i] -= s / pc->value[i];
      }
    }
  });
}

// ---- layout ----

inline Var concat_cols(const std::vector<Var>& parts) {
  d::require(!parts.empty(), "concat_cols: no parts");
  size_t R = parts[0].value().rows();
  size_t C = 0;
  for (const Var& p : parts) {
    d::require(p.value().rows() == R, "concat_cols: row mismatch");
    C += p.value().cols();
  }
  Tensor y({R, C});
  std::vector<size_t> widths;
  widths.reserve(parts.size());
  size_t off = 0;
  for (const Var& p : parts) {
    size_t w = p.value().cols();
    widths.push_back(w);
    for (size_t r = 0; r < R; ++r) {
      const double* src = p.value().data() + r * w;
      double* dst = y.data() + r * C + off;
      for (size_t c = 0; c < w; ++c) dst[c] = src[c];
    }
    off += w;
  }
  return detail::make_op("concat_cols", std::move(y), parts, [R, C, widths](Node& n) {
    size_t off = 0;
    for (size_t k = 0; k < n.parents.size(); ++k) {
      size_t w = widths[k];
      Node* p = n.parents[k].get();
      if (p->requires_grad) {
        Tensor& acc = p->grad();
        for (size_t r = 0; r < R; ++r) {
          const double* src = n.adjoint.data() + r * C + off;
          double* dst = acc.data() + r * w;
          for (size_t c = 0; c < w; ++c) dst[c] += src[c];
        }
      }
      off += w;
    }
  });
}

inline Var concat_cols(const Var& a, const Var& b) { return concat_cols(std::vector<Var>{a, b}); }

inline Var concat_rows(const std::vector<Var>& parts) {
  d::require(!parts.empty(), "concat_rows: no parts");
  size_t C = parts[0].value().cols();
  size_t R = 0;
  for (const Var& p : parts) {
    d::require(p.value().cols() == C, "concat_rows: col mismatch");
    R += p.value().rows();
  }
  Tensor y({R, C});
  std::vector<size_t> heights;
  heights.reserve(parts.size());
  size_t off = 0;
  for (const Var& p : parts) {
    size_t h = p.value().rows();
    heights.push_back(h);
    const double* src = p.value().data();
    double* dst = y.data() + off * C;
    for (size_t i = 0; i < h * C; ++i) dst[i] = src[i];
    off += h;
  }
  return detail::make_op("concat_rows", std::move(y), parts, [C, heights](Node& n) {
    size_t off = 0;
    for (size_t k = 0; k < n.parents.size(); ++k) {
      size_t h = heights[k];
      Node* p = n.parents[k].get();
      if (p->requires_grad) {
        Tensor& acc = p->grad();
        const double* src = n.adjoint.data() + off * C;
        for (size_t i = 0; i < h * C; ++i) acc[i] += src[i];
      }
      off += h;
    }
  });
}

// Half-open column range [c0, c1).
inline Var slice_cols(const Var& a, size_t c0, size_t c1) {
  size_t R = a.value().rows(), C = a.value().cols();
  d::require(c0 < c1 && c1 <= C, "slice_cols: bad range");
  size_t W = c1 - c0;
  Tensor y({R, W});
  for (size_t r = 0; r < R; ++r) {
    const double* src = a.value().data() + r * C + c0;
    double* dst = y.data() + r * W;
    for (size_t c = 0; c < W; ++c) dst[c] = src[c];
  }
  return detail::make_op("slice_cols", std::move(y), {a}, [R, C, c0, W](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    for (size_t r = 0; r < R; ++r) {
      const double* src = n.adjoint.data() + r * W;
      double* dst = acc.data() + r * C + c0;
      for (size_t c = 0; c < W; ++c) dst[c] += src[c];
    }
  });
}

// Gathers rows by index; repeats allowed (grads accumulate).
inline Var select_rows(const Var& a, const std::vector<size_t>& idx) {
  size_t R = a.value().rows(), C = a.value().cols();
  Tensor y({idx.size(), C});
  for (size_t i = 0; i < idx.size(); ++i) {
    d::require(idx[i] < R, "select_rows: index out of range");
    const double* src = a.value().data() + idx[i] * C;
    double* dst = y.data() + i * C;
    for (size_t c = 0; c < C; ++c) dst[c] = src[c];
  }
  return detail::make_op("select_rows", std::move(y), {a}, [idx, C](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    for (size_t i = 0; i < idx.size(); ++i) {
      const double* src = n.adjoint.data() + i * C;
      double* dst = acc.data() + idx[i] * C;
      for (size_t c = 0; c < C; ++c) dst[c] += src[c];
    }
  });
}

// y[r, k] = m[r, idx[r][k]]; every row selects the same count.
inline Var gather_cols_per_row(const Var& m, const std::vector<std::vector<size_t>>& idx) {
  size_t R = m.value().rows(), C = m.value().cols();
  d::require(idx.size() == R, "gather_cols_per_row: one index list per row required");
  size_t K = idx.empty() ? 0 : idx[0].size();
  Tensor y({R, K});
  for (size_t r = 0; r < R; ++r) {
    d::require(idx[r].size() == K, "gather_cols_per_row: ragged index lists");
    for (size_t k = 0; k < K; ++k) {
      d::require(idx[r][k] < C, "gather_cols_per_row: index out of range");
      y[r * K + k] = m.value()[r * C + idx[r][k]];
    }
  }
  return detail::make_op("gather_cols_per_row", std::move(y), {m}, [idx, C, K](Node& n) {
    Tensor& acc = n.parents[0]->grad();
    for (size_t r = 0; r < idx.size(); ++r) {
      for (size_t k = 0; k < K; ++k) {
        acc[r * C + idx[r][k]] += n.adjoint[r * K + k];
      }
    }
  });
}

// ---- softmax-family ----

// [R,C] -> [R,1], shift-stabilized.
inline Var logsumexp_rows(const Var& a) {
  size_t R = a.value().rows(), C = a.value().cols();
  d::require(C > 0, "logsumexp_rows: empty rows");
  Tensor y({R, 1});
  for (size_t r = 0; r < R; ++r) {
    const double* row = a.value().data() + r * C;
    double m = row[0];
    for (size_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    double s = 0.0;
    for (size_t c = 0; c < C; ++c) s += std::exp(row[c] - m);
    y[r] = m + std::log(s);
  }
  d::check_finite(y, "logsumexp_rows");
  return detail::make_op("logsumexp_rows", std::move(y), {a}, [R, C](Node& n) {
    Node* p = n.parents[0].get();
    Tensor& acc = p->grad();
    for (size_t r = 0; r < R; ++r) {
      double g = n.adjoint[r];
      double lse = n.value[r];
      const double* row = p->value.data() + r * C;
      double* arow = acc.data() + r * C;
      for (size_t c = 0; c < C; ++c) arow[c] += g * std::exp(row[c] - lse);
    }
  });
}

}  // namespace seqvae::ops
