#pragma once

#include <cassert>
#include <functional>
#include <limits>
#include <span>

#include "setpool/common.hpp"
#include "setpool/rng.hpp"

namespace setpool {

enum class Activation : uint32_t { Identity = 0, Tanh = 1, Relu = 2, Softplus = 3 };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Softplus: return "softplus";
  }
  return "?";
}

inline double softplus(double z) {
  if (z > 30.0) return z;
  if (z < -30.0) return std::exp(z);
  return std::log1p(std::exp(z));
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// One affine layer: y = act(W x + b), W row-major out x in.
struct Layer {
  int in = 0;
  int out = 0;
  Vec w;  // out*in, row-major
  Vec b;  // out
  Activation act = Activation::Identity;
};

/// A plain fully connected network. Parameters are mutated only through
/// sgd_step / optimizer steps; forward and backward never touch them.
struct DenseNet {
  std::vector<Layer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out; }

  size_t param_count() const {
    size_t n = 0;
    for (const Layer& l : layers) n += l.w.size() + l.b.size();
    return n;
  }
};

/// dims = {in, h1, ..., out}; hidden layers use `hidden`, last layer `last`.
/// Weights are Glorot-uniform in [-sqrt(6/(in+out)), +sqrt(6/(in+out))],
/// biases zero. `zero_last` zeroes the final layer (used by policy/value
/// heads so an untrained net is the constant-zero map).
inline DenseNet make_net(const std::vector<int>& dims, Activation hidden,
                         Activation last, Rng& rng, bool zero_last = false) {
  if (dims.size() < 2) throw std::invalid_argument("make_net: need at least {in, out} dims");
  DenseNet net;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    Layer l;
    l.in = dims[i];
    l.out = dims[i + 1];
    if (l.in <= 0 || l.out <= 0) throw std::invalid_argument("make_net: non-positive layer dim");
    l.act = (i + 2 == dims.size()) ? last : hidden;
    l.w.assign(static_cast<size_t>(l.in) * l.out, 0.0);
    l.b.assign(l.out, 0.0);
    const bool zero = zero_last && i + 2 == dims.size();
    if (!zero) {
      const double bound = std::sqrt(6.0 / (l.in + l.out));
      for (double& v : l.w) v = rng.uniform(-bound, bound);
    }
    net.layers.push_back(std::move(l));
  }
  return net;
}

/// Cached activations from a forward pass; input + pre/post per layer.
struct Tape {
  std::vector<Vec> inputs;  // inputs[i] = input to layer i
  std::vector<Vec> pre;     // pre[i] = W x + b
  std::vector<Vec> post;    // post[i] = act(pre[i])
  bool valid = false;
};

inline double apply_activation(Activation a, double z) {
  switch (a) {
    case Activation::Identity: return z;
    case Activation::Tanh: return std::tanh(z);
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Softplus: return softplus(z);
  }
  return z;
}

// derivative in terms of (pre, post)
inline double activation_grad(Activation a, double z, double y) {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Softplus: return sigmoid(z);
  }
  return 1.0;
}

inline Vec forward(const DenseNet& net, const Vec& x, Tape* tape = nullptr) {
  if (net.layers.empty()) throw std::invalid_argument("forward: empty net");
  if (static_cast<int>(x.size()) != net.input_dim())
    throw std::invalid_argument("forward: input dim " + std::to_string(x.size()) +
                                " != " + std::to_string(net.input_dim()));
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
    tape->post.clear();
  }
  Vec cur = x;
  for (const Layer& l : net.layers) {
    Vec z(l.out);
    for (int r = 0; r < l.out; ++r) {
      double s = l.b[r];
      const double* wr = l.w.data() + static_cast<size_t>(r) * l.in;
      for (int c = 0; c < l.in; ++c) s += wr[c] * cur[c];
      z[r] = s;
    }
    Vec y(l.out);
    for (int r = 0; r < l.out; ++r) y[r] = apply_activation(l.act, z[r]);
    if (tape) {
      tape->inputs.push_back(std::move(cur));
      tape->pre.push_back(std::move(z));
      tape->post.push_back(y);
    }
    cur = std::move(y);
  }
  if (tape) tape->valid = true;
  return cur;
}

/// Shape-congruent with the DenseNet it differentiates.
struct Gradient {
  std::vector<Vec> dw;
  std::vector<Vec> db;

  void zero() {
    for (Vec& v : dw) std::fill(v.begin(), v.end(), 0.0);
    for (Vec& v : db) std::fill(v.begin(), v.end(), 0.0);
  }

  void add_scaled(const Gradient& g, double c) {
    for (size_t i = 0; i < dw.size(); ++i) {
      axpy(c, g.dw[i], dw[i]);
      axpy(c, g.db[i], db[i]);
    }
  }

  void scale_by(double c) {
    for (Vec& v : dw) scale(v, c);
    for (Vec& v : db) scale(v, c);
  }

  bool finite() const {
    for (const Vec& v : dw)
      if (!all_finite(v)) return false;
    for (const Vec& v : db)
      if (!all_finite(v)) return false;
    return true;
  }
};

inline Gradient make_gradient(const DenseNet& net) {
  Gradient g;
  for (const Layer& l : net.layers) {
    g.dw.emplace_back(l.w.size(), 0.0);
    g.db.emplace_back(l.b.size(), 0.0);
  }
  return g;
}

/// Reverse-mode derivatives of <upstream, forward(x)>: gradient for every
/// parameter plus d/dx. Accumulates into `g` when `accumulate` is set.
inline Vec backward(const DenseNet& net, const Tape& tape, const Vec& upstream,
                    Gradient& g, bool accumulate = false) {
  if (!tape.valid || tape.inputs.size() != net.layers.size())
    throw std::invalid_argument("backward: tape does not match net (stale or missing)");
  if (static_cast<int>(upstream.size()) != net.output_dim())
    throw std::invalid_argument("backward: upstream dim mismatch");
  if (!accumulate) g.zero();
  Vec delta = upstream;
  for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
    const Layer& l = net.layers[static_cast<size_t>(li)];
    const Vec& z = tape.pre[static_cast<size_t>(li)];
    const Vec& y = tape.post[static_cast<size_t>(li)];
    const Vec& in = tape.inputs[static_cast<size_t>(li)];
    Vec dz(l.out);
    for (int r = 0; r < l.out; ++r) dz[r] = delta[r] * activation_grad(l.act, z[r], y[r]);
    Vec& dw = g.dw[static_cast<size_t>(li)];
    Vec& db = g.db[static_cast<size_t>(li)];
    for (int r = 0; r < l.out; ++r) {
      double* dwr = dw.data() + static_cast<size_t>(r) * l.in;
      for (int c = 0; c < l.in; ++c) dwr[c] += dz[r] * in[c];
      db[r] += dz[r];
    }
    Vec dx(l.in, 0.0);
    for (int r = 0; r < l.out; ++r) {
      const double* wr = l.w.data() + static_cast<size_t>(r) * l.in;
      for (int c = 0; c < l.in; ++c) dx[c] += wr[c] * dz[r];
    }
    delta = std::move(dx);
  }
  return delta;
}

inline std::pair<Gradient, Vec> backward(const DenseNet& net, const Tape& tape,
                                         const Vec& upstream) {
  Gradient g = make_gradient(net);
  Vec dx = backward(net, tape, upstream, g);
  return {std::move(g), std::move(dx)};
}

/// loss = -log softmax(logits)[label], max-subtracted for stability;
/// dlogits = softmax(logits) - onehot(label).
inline std::pair<double, Vec> softmax_xent(const Vec& logits, int label) {
  if (logits.empty()) throw std::invalid_argument("softmax_xent: empty logits");
  if (label < 0 || label >= static_cast<int>(logits.size()))
    throw std::invalid_argument("softmax_xent: label out of range");
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (const double v : logits) z += std::exp(v - m);
  const double logz = std::log(z);
  const double loss = -(logits[static_cast<size_t>(label)] - m - logz);
  Vec dlogits(logits.size());
  for (size_t j = 0; j < logits.size(); ++j)
    dlogits[j] = std::exp(logits[j] - m - logz) - (static_cast<int>(j) == label ? 1.0 : 0.0);
  return {loss, std::move(dlogits)};
}

/// p <- p - lr * g for every parameter. Rejects non-finite gradients.
inline void sgd_step(DenseNet& net, const Gradient& g, double lr) {
  if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be > 0");
  if (g.dw.size() != net.layers.size())
    throw std::invalid_argument("sgd_step: gradient shape mismatch");
  if (!g.finite()) throw std::runtime_error("sgd_step: non-finite gradient rejected");
  for (size_t i = 0; i < net.layers.size(); ++i) {
    Layer& l = net.layers[i];
    if (g.dw[i].size() != l.w.size() || g.db[i].size() != l.b.size())
      throw std::invalid_argument("sgd_step: gradient shape mismatch");
    axpy(-lr, g.dw[i], l.w);
    axpy(-lr, g.db[i], l.b);
  }
}

/// SGD with optional momentum (velocity kept per target net).
class Optimizer {
 public:
  Optimizer(double lr, double momentum = 0.0) : lr_(lr), momentum_(momentum) {
    if (lr <= 0.0) throw std::invalid_argument("Optimizer: lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("Optimizer: momentum in [0,1)");
  }

  /// Descend: p <- p - lr * v, v <- momentum*v + g.
  void step(DenseNet& net, const Gradient& g) {
    if (momentum_ == 0.0) {
      sgd_step(net, g, lr_);
      return;
    }
    if (velocity_.dw.empty()) velocity_ = make_gradient(net);
    if (!g.finite()) throw std::runtime_error("Optimizer: non-finite gradient rejected");
    velocity_.scale_by(momentum_);
    velocity_.add_scaled(g, 1.0);
    for (size_t i = 0; i < net.layers.size(); ++i) {
      axpy(-lr_, velocity_.dw[i], net.layers[i].w);
      axpy(-lr_, velocity_.db[i], net.layers[i].b);
    }
  }

  double lr() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  Gradient velocity_;
};

/// Mutable flat view over every parameter of a net (layer order, w then b).
inline std::vector<double*> param_ptrs(DenseNet& net) {
  std::vector<double*> p;
  p.reserve(net.param_count());
  for (Layer& l : net.layers) {
    for (double& v : l.w) p.push_back(&v);
    for (double& v : l.b) p.push_back(&v);
  }
  return p;
}

inline Vec flatten(const Gradient& g) {
  Vec out;
  for (size_t i = 0; i < g.dw.size(); ++i) {
    out.insert(out.end(), g.dw[i].begin(), g.dw[i].end());
    out.insert(out.end(), g.db[i].begin(), g.db[i].end());
  }
  return out;
}

inline void unflatten(const Vec& flat, size_t offset, Gradient& g) {
  size_t k = offset;
  for (size_t i = 0; i < g.dw.size(); ++i) {
    for (double& v : g.dw[i]) v = flat[k++];
    for (double& v : g.db[i]) v = flat[k++];
  }
}

/// Max over parameters of |analytic - central difference| / max(1, |analytic|).
/// `f` is evaluated with parameters temporarily perturbed in place.
inline double grad_check(const std::function<double()>& f, std::span<double* const> params,
                         const Vec& analytic, double eps = 1e-5) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be > 0");
  if (params.size() != analytic.size())
    throw std::invalid_argument("grad_check: analytic size mismatch");
  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    double& p = *params[i];
    const double saved = p;
    p = saved + eps;
    const double fp = f();
    p = saved - eps;
    const double fm = f();
    p = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("grad_check: non-finite objective at perturbed point");
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace setpool
