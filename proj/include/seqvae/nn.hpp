#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqvae/ops.hpp"
#include "seqvae/rng.hpp"

namespace seqvae {

// Named parameter/buffer registry. Registration order is fixed at model
// construction and drives optimizer iteration and checkpoint layout, so two
// runs with the same config touch parameters in the same order.
class ParamStore {
 public:
  void add_param(const std::string& name, Tensor t) {
    if (params_.count(name)) throw ConfigError("duplicate parameter: " + name);
    param_order_.push_back(name);
    params_.emplace(name, std::move(t));
  }

  void add_buffer(const std::string& name, Tensor t) {
    if (buffers_.count(name)) throw ConfigError("duplicate buffer: " + name);
    buffer_order_.push_back(name);
    buffers_.emplace(name, std::move(t));
  }

  Tensor& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  Tensor& buffer(const std::string& name) {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) throw ConfigError("unknown buffer: " + name);
    return it->second;
  }
  const Tensor& buffer(const std::string& name) const {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) throw ConfigError("unknown buffer: " + name);
    return it->second;
  }

  bool has_param(const std::string& name) const { return params_.count(name) > 0; }
  bool has_buffer(const std::string& name) const { return buffers_.count(name) > 0; }

  const std::vector<std::string>& param_names() const { return param_order_; }
  const std::vector<std::string>& buffer_names() const { return buffer_order_; }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& name : param_order_) n += params_.at(name).numel();
    return n;
  }

 private:
  std::vector<std::string> param_order_;
  std::unordered_map<std::string, Tensor> params_;
  std::vector<std::string> buffer_order_;
  std::unordered_map<std::string, Tensor> buffers_;
};

// One forward pass's view of the store: a leaf Var per parameter. Gradients
// accumulate on these leaves; the optimizer (or gradcheck) reads them back by
// name. Rebinding after mutating the store picks up the new values.
class Binding {
 public:
  explicit Binding(const ParamStore& store, bool trainable = true) {
    for (const auto& name : store.param_names()) {
      vars_.emplace(name, Var(store.param(name), trainable));
    }
  }

  const Var& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ConfigError("unbound parameter: " + name);
    return it->second;
  }

 private:
  std::unordered_map<std::string, Var> vars_;
};

// Forward-pass context threaded through every module.
struct Fwd {
  const Binding& P;
  ParamStore& S;  // mutable for batchnorm running stats
  bool training;
};

namespace init {

// Uniform fan-in scaling for weights; biases on a tighter fan-in bound.
inline Tensor kaiming_uniform(size_t fan_in, size_t fan_out, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor w({fan_in, fan_out});
  for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}

inline Tensor bias_uniform(size_t fan_in, size_t width, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor b({1, width});
  for (size_t i = 0; i < width; ++i) b[i] = rng.uniform(-bound, bound);
  return b;
}

}  // namespace init

class Linear {
 public:
  Linear() = default;

  // with_bias=false for layers that feed a batch norm: the normalization
  // cancels any constant shift, so a bias there is a dead parameter.
  Linear(ParamStore& s, const std::string& prefix, size_t in, size_t out, Rng& rng,
         bool with_bias = true)
      : w_(prefix + ".w"), b_(with_bias ? prefix + ".b" : ""), in_(in), out_(out) {
    s.add_param(w_, init::kaiming_uniform(in, out, rng));
    if (with_bias) s.add_param(b_, init::bias_uniform(in, out, rng));
  }

  Var forward(const Fwd& f, const Var& x) const {
    Var y = ops::matmul(x, f.P[w_]);
    return b_.empty() ? y : ops::add_rowvec(y, f.P[b_]);
  }

  size_t in_dim() const { return in_; }
  size_t out_dim() const { return out_; }

 private:
  std::string w_, b_;
  size_t in_ = 0, out_ = 0;
};

// Batch normalization over the batch dimension of a [B, F] activation.
// Train mode normalizes by batch statistics (biased variance) and updates the
// running stats; eval mode normalizes by the stored running stats.
class BatchNorm {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm() = default;

  BatchNorm(ParamStore& s, const std::string& prefix, size_t dim)
      : gamma_(prefix + ".gamma"),
        beta_(prefix + ".beta"),
        rmean_(prefix + ".running_mean"),
        rvar_(prefix + ".running_var"),
        dim_(dim) {
    s.add_param(gamma_, Tensor::full({1, dim}, 1.0));
    s.add_param(beta_, Tensor::zeros({1, dim}));
    s.add_buffer(rmean_, Tensor::zeros({1, dim}));
    s.add_buffer(rvar_, Tensor::full({1, dim}, 1.0));
  }

  Var forward(const Fwd& f, const Var& x) const {
    size_t B = x.value().rows();
    if (x.value().cols() != dim_) {
      throw NumericError("batchnorm: feature dim " + x.value().shape_str());
    }
    Var xhat;
    if (f.training) {
      Var mu = ops::col_mean(x);
      Var centered = ops::sub_rowvec(x, mu);
      Var var_b = ops::col_mean(ops::square(centered));
      Var denom = ops::sqrt_v(ops::add_scalar(var_b, kEps));
      xhat = ops::div_rowvec(centered, denom);

      Tensor& rm = f.S.buffer(rmean_);
      Tensor& rv = f.S.buffer(rvar_);
      // Running variance uses the unbiased estimate when B > 1.
      double corr = B > 1 ? static_cast<double>(B) / static_cast<double>(B - 1) : 1.0;
      for (size_t c = 0; c < dim_; ++c) {
        rm[c] = (1.0 - kMomentum) * rm[c] + kMomentum * mu.value()[c];
        rv[c] = (1.0 - kMomentum) * rv[c] + kMomentum * var_b.value()[c] * corr;
      }
    } else {
      const Tensor& rm = f.S.buffer(rmean_);
      const Tensor& rv = f.S.buffer(rvar_);
      Tensor denom({1, dim_});
      for (size_t c = 0; c < dim_; ++c) denom[c] = std::sqrt(rv[c] + kEps);
      xhat = ops::div_rowvec(ops::sub_rowvec(x, constant(rm)), constant(denom));
    }
    return ops::add_rowvec(ops::mul_rowvec(xhat, f.P[gamma_]), f.P[beta_]);
  }

 private:
  std::string gamma_, beta_, rmean_, rvar_;
  size_t dim_ = 0;
};

// Backbone unit: linear, batch normalization, ReLU.
class Block {
 public:
  Block() = default;

  Block(ParamStore& s, const std::string& prefix, size_t in, size_t out, Rng& rng)
      : lin_(s, prefix + ".linear", in, out, rng, /*with_bias=*/false),
        bn_(s, prefix + ".bn", out) {}

  Var forward(const Fwd& f, const Var& x) const {
    return ops::relu(bn_.forward(f, lin_.forward(f, x)));
  }

 private:
  Linear lin_;
  BatchNorm bn_;
};

enum class CellKind { GRU, RNN, LSTM };

inline const char* cell_kind_name(CellKind k) {
  switch (k) {
    case CellKind::GRU: return "gru";
    case CellKind::RNN: return "rnn";
    case CellKind::LSTM: return "lstm";
  }
  return "gru";
}

inline CellKind cell_kind_from(const std::string& s) {
  if (s == "gru") return CellKind::GRU;
  if (s == "rnn") return CellKind::RNN;
  if (s == "lstm") return CellKind::LSTM;
  throw ConfigError("unknown cell kind: " + s);
}

// Recurrent state carried across time steps; the cell slot is used by LSTM
// only and stays undefined otherwise.
struct CellState {
  Var h;
  Var c;
};

// One recurrent cell (gate layout follows the r,z,n / i,f,g,o convention).
// Weights use the same fan-in uniform scheme as Linear; biases start at zero.
class RecurrentCell {
 public:
  RecurrentCell() = default;

  RecurrentCell(ParamStore& s, const std::string& prefix, CellKind kind, size_t in, size_t hidden, Rng& rng)
      : kind_(kind),
        wih_(prefix + ".w_ih"),
        whh_(prefix + ".w_hh"),
        bih_(prefix + ".b_ih"),
        bhh_(prefix + ".b_hh"),
        in_(in),
        hidden_(hidden) {
    size_t gates = kind == CellKind::GRU ? 3 : kind == CellKind::LSTM ? 4 : 1;
    s.add_param(wih_, init::kaiming_uniform(in, gates * hidden, rng));
    s.add_param(whh_, init::kaiming_uniform(hidden, gates * hidden, rng));
    s.add_param(bih_, Tensor::zeros({1, gates * hidden}));
    s.add_param(bhh_, Tensor::zeros({1, gates * hidden}));
  }

  CellState initial_state(size_t batch) const {
    CellState st;
    st.h = constant(Tensor::zeros({batch, hidden_}));
    if (kind_ == CellKind::LSTM) st.c = constant(Tensor::zeros({batch, hidden_}));
    return st;
  }

  CellState forward(const Fwd& f, const Var& x, const CellState& prev) const {
    const size_t H = hidden_;
    Var gi = ops::add_rowvec(ops::matmul(x, f.P[wih_]), f.P[bih_]);
    Var gh = ops::add_rowvec(ops::matmul(prev.h, f.P[whh_]), f.P[bhh_]);
    CellState out;
    switch (kind_) {
      case CellKind::RNN: {
        out.h = ops::tanh_v(ops::add(gi, gh));
        break;
      }
      case CellKind::GRU: {
        Var r = ops::sigmoid(ops::add(ops::slice_cols(gi, 0, H), ops::slice_cols(gh, 0, H)));
        Var z = ops::sigmoid(ops::add(ops::slice_cols(gi, H, 2 * H), ops::slice_cols(gh, H, 2 * H)));
        Var cand = ops::tanh_v(
            ops::add(ops::slice_cols(gi, 2 * H, 3 * H), ops::mul(r, ops::slice_cols(gh, 2 * H, 3 * H))));
        out.h = ops::add(ops::mul(ops::scalar_sub(1.0, z), cand), ops::mul(z, prev.h));
        break;
      }
      case CellKind::LSTM: {
        Var i = ops::sigmoid(ops::add(ops::slice_cols(gi, 0, H), ops::slice_cols(gh, 0, H)));
        Var fg = ops::sigmoid(ops::add(ops::slice_cols(gi, H, 2 * H), ops::slice_cols(gh, H, 2 * H)));
        Var g = ops::tanh_v(ops::add(ops::slice_cols(gi, 2 * H, 3 * H), ops::slice_cols(gh, 2 * H, 3 * H)));
        Var o = ops::sigmoid(ops::add(ops::slice_cols(gi, 3 * H, 4 * H), ops::slice_cols(gh, 3 * H, 4 * H)));
        out.c = ops::add(ops::mul(fg, prev.c), ops::mul(i, g));
        out.h = ops::mul(o, ops::tanh_v(out.c));
        break;
      }
    }
    return out;
  }

  size_t hidden_dim() const { return hidden_; }
  CellKind kind() const { return kind_; }

 private:
  CellKind kind_ = CellKind::GRU;
  std::string wih_, whh_, bih_, bhh_;
  size_t in_ = 0, hidden_ = 0;
};

}  // namespace seqvae
