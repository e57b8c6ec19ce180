#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <utility>
#include <vector>

#include "sleepdet/errors.hpp"
#include "sleepdet/tensor.hpp"

// Reverse-mode tape over dense tensors. Ops record a backward closure and
// their parent handles; Graph::backward walks the recorded order in reverse,
// so each node is visited exactly once. Reductions accumulate in double
// regardless of the storage scalar.

namespace sleepdet::ad {

enum class Mode { train, eval };

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first touch during backward
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  Tensor<T>* grad_sink = nullptr;  // external accumulator for parameter leaves
  bool requires_grad = false;
  int64_t seq = -1;

  void ensure_grad() {
    if (grad.data.empty()) grad = Tensor<T>::zeros(value.shape);
  }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  size_t size() const { return order_.size(); }

  NodePtr<T> input(Tensor<T> v) {
    check_finite(v, "graph input");
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    return n;
  }

  /// Leaf whose gradient is routed into an external tensor after backward.
  NodePtr<T> param(const Tensor<T>& v, Tensor<T>* grad_sink = nullptr) {
    check_finite(v, "parameter");
    auto n = std::make_shared<Node<T>>();
    n->value = v;
    if (recording_) {
      n->requires_grad = true;
      n->grad_sink = grad_sink;
      n->seq = static_cast<int64_t>(order_.size());
      order_.push_back(n);
    }
    return n;
  }

  /// Records an op result. Parents and the closure are kept only when the
  /// result actually needs gradients; otherwise intermediates are free to
  /// die with their last handle.
  NodePtr<T> record(Tensor<T> value, std::vector<NodePtr<T>> parents,
                    std::function<void(Node<T>&)> backprop) {
    check_finite(value, "op output");
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    bool needs = false;
    if (recording_)
      for (const auto& p : parents)
        if (p->requires_grad) needs = true;
    if (needs) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backprop = std::move(backprop);
      n->seq = static_cast<int64_t>(order_.size());
      order_.push_back(n);
    }
    return n;
  }

  /// Reverse sweep from a scalar root. Gradients sum where a tensor feeds
  /// several consumers; parameter-leaf gradients are added into their sinks.
  void backward(const NodePtr<T>& root) {
    if (root->value.numel() != 1)
      throw ValidationError("backward: root must be a scalar");
    if (!root->requires_grad) return;
    if (backward_done_)
      throw ValidationError("backward: graph already consumed");
    backward_done_ = true;
    root->ensure_grad();
    root->grad.data[0] = T(1);
    for (int64_t i = root->seq; i >= 0; --i) {
      Node<T>& n = *order_[static_cast<size_t>(i)];
      if (n.grad.data.empty()) continue;  // not on a path to the root
      if (n.backprop) n.backprop(n);
      if (n.grad_sink) {
        if (!n.grad_sink->same_shape(n.grad))
          *n.grad_sink = Tensor<T>::zeros(n.grad.shape);
        for (int64_t k = 0; k < n.grad.numel(); ++k)
          n.grad_sink->data[static_cast<size_t>(k)] += n.grad.data[static_cast<size_t>(k)];
      }
    }
  }

 private:
  static void check_finite(const Tensor<T>& t, const char* what) {
    if (!t.all_finite())
      throw NumericalError(std::string("non-finite values in ") + what);
  }

  bool recording_;
  bool backward_done_ = false;
  std::vector<NodePtr<T>> order_;
};

namespace detail {

template <typename T>
void require_rank2(const NodePtr<T>& x, const char* op) {
  if (x->value.rank() != 2)
    throw ValidationError(std::string(op) + ": expected channels x time input, got " +
                          shape_str(x->value.shape));
}

template <typename T>
void add_into(Tensor<T>& dst, const std::vector<double>& src, int64_t offset) {
  for (size_t i = 0; i < src.size(); ++i)
    dst.data[static_cast<size_t>(offset) + i] += static_cast<T>(src[i]);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv1d: stride 1, symmetric zero padding to preserve length, grouped and
// dilated, cross-correlation convention. x: Cin x T, w: Cout x Cin/g x K,
// b: Cout. Depthwise = groups == Cin.
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> conv1d(Graph<T>& g, NodePtr<T> x, NodePtr<T> w, NodePtr<T> b, int dilation,
                  int groups) {
  detail::require_rank2(x, "conv1d");
  if (w->value.rank() != 3) throw ValidationError("conv1d: weight must be rank 3");
  if (b->value.rank() != 1) throw ValidationError("conv1d: bias must be rank 1");
  if (dilation < 1) throw ValidationError("conv1d: dilation must be >= 1");
  const int64_t cin = x->value.dim(0), tlen = x->value.dim(1);
  const int64_t cout = w->value.dim(0), cin_g = w->value.dim(1), k = w->value.dim(2);
  if (groups < 1 || cin % groups != 0 || cout % groups != 0)
    throw ValidationError("conv1d: channel counts not divisible by groups");
  if (cin / groups != cin_g)
    throw ValidationError("conv1d: weight in-channels " + std::to_string(cin_g) +
                          " do not match input " + std::to_string(cin / groups));
  if (b->value.dim(0) != cout) throw ValidationError("conv1d: bias length mismatch");

  const int64_t cout_g = cout / groups;
  const int64_t pad_left = ((k - 1) * dilation) / 2;

  Tensor<T> out = Tensor<T>::zeros({cout, tlen});
  std::vector<double> acc(static_cast<size_t>(tlen));
  for (int64_t oc = 0; oc < cout; ++oc) {
    const int64_t gi = oc / cout_g;
    std::fill(acc.begin(), acc.end(), static_cast<double>(b->value.data[oc]));
    for (int64_t icl = 0; icl < cin_g; ++icl) {
      const T* xr = x->value.row(gi * cin_g + icl);
      const T* wr = w->value.data.data() + (oc * cin_g + icl) * k;
      for (int64_t j = 0; j < k; ++j) {
        const double wj = static_cast<double>(wr[j]);
        const int64_t off = j * dilation - pad_left;
        const int64_t t0 = std::max<int64_t>(0, -off);
        const int64_t t1 = std::min<int64_t>(tlen, tlen - off);
        const T* xs = xr + off;
        for (int64_t t = t0; t < t1; ++t) acc[t] += wj * static_cast<double>(xs[t]);
      }
    }
    T* yr = out.row(oc);
    for (int64_t t = 0; t < tlen; ++t) yr[t] = static_cast<T>(acc[t]);
  }

  auto bp = [x, w, b, dilation, groups, cin_g, cout_g, k, pad_left, tlen,
             cout](Node<T>& n) {
    const Tensor<T>& dy = n.grad;
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t oc = 0; oc < cout; ++oc) {
        const T* dr = dy.row(oc);
        double s = 0;
        for (int64_t t = 0; t < tlen; ++t) s += static_cast<double>(dr[t]);
        b->grad.data[oc] += static_cast<T>(s);
      }
    }
    if (w->requires_grad) {
      w->ensure_grad();
      for (int64_t oc = 0; oc < cout; ++oc) {
        const int64_t gi = oc / cout_g;
        const T* dr = dy.row(oc);
        for (int64_t icl = 0; icl < cin_g; ++icl) {
          const T* xr = x->value.row(gi * cin_g + icl);
          T* gw = w->grad.data.data() + (oc * cin_g + icl) * k;
          for (int64_t j = 0; j < k; ++j) {
            const int64_t off = j * dilation - pad_left;
            const int64_t t0 = std::max<int64_t>(0, -off);
            const int64_t t1 = std::min<int64_t>(tlen, tlen - off);
            const T* xs = xr + off;
            double s = 0;
            for (int64_t t = t0; t < t1; ++t)
              s += static_cast<double>(dr[t]) * static_cast<double>(xs[t]);
            gw[j] += static_cast<T>(s);
          }
        }
      }
    }
    if (x->requires_grad) {
      x->ensure_grad();
      const int64_t cin = x->value.dim(0);
      std::vector<double> acc(static_cast<size_t>(tlen));
      for (int64_t ic = 0; ic < cin; ++ic) {
        const int64_t gi = ic / cin_g;
        const int64_t icl = ic % cin_g;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int64_t oc = gi * cout_g; oc < (gi + 1) * cout_g; ++oc) {
          const T* dr = dy.row(oc);
          const T* wr = w->value.data.data() + (oc * cin_g + icl) * k;
          for (int64_t j = 0; j < k; ++j) {
            const double wj = static_cast<double>(wr[j]);
            const int64_t off = j * dilation - pad_left;
            // dy[oc, t] consumed x[ic, t + off]; route back to x index s.
            const int64_t s0 = std::max<int64_t>(0, off);
            const int64_t s1 = std::min<int64_t>(tlen, tlen + off);
            const T* ds = dr - off;
            for (int64_t s = s0; s < s1; ++s) acc[s] += wj * static_cast<double>(ds[s]);
          }
        }
        detail::add_into(x->grad, acc, ic * tlen);
      }
    }
  };
  return g.record(std::move(out), {x, w, b}, std::move(bp));
}

// ---------------------------------------------------------------------------
// maxpool1d: non-overlapping windows, trailing remainder dropped. Backward
// routes to the first maximal index of each window.
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> maxpool1d(Graph<T>& g, NodePtr<T> x, int width) {
  detail::require_rank2(x, "maxpool1d");
  if (width < 1) throw ValidationError("maxpool1d: width must be >= 1");
  const int64_t c = x->value.dim(0), tlen = x->value.dim(1);
  const int64_t tout = tlen / width;
  if (tout == 0) throw ValidationError("maxpool1d: input shorter than pool width");

  Tensor<T> out = Tensor<T>::zeros({c, tout});
  auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(c * tout));
  for (int64_t ch = 0; ch < c; ++ch) {
    const T* xr = x->value.row(ch);
    T* yr = out.row(ch);
    for (int64_t u = 0; u < tout; ++u) {
      int64_t best = u * width;
      T bv = xr[best];
      for (int64_t j = 1; j < width; ++j) {
        const T v = xr[u * width + j];
        if (v > bv) {
          bv = v;
          best = u * width + j;
        }
      }
      yr[u] = bv;
      (*arg)[static_cast<size_t>(ch * tout + u)] = best;
    }
  }

  auto bp = [x, arg, c, tout, tlen](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* dr = n.grad.row(ch);
      T* gx = x->grad.data.data() + ch * tlen;
      for (int64_t u = 0; u < tout; ++u)
        gx[(*arg)[static_cast<size_t>(ch * tout + u)]] += dr[u];
    }
  };
  return g.record(std::move(out), {x}, std::move(bp));
}

// ---------------------------------------------------------------------------
// Elementwise activations.
// ---------------------------------------------------------------------------

/// Custom elementwise op: f(x) forward, dfdx(x, y) backward factor.
template <typename T>
NodePtr<T> unary_map(Graph<T>& g, NodePtr<T> x, std::function<double(double)> f,
                     std::function<double(double, double)> dfdx) {
  Tensor<T> out;
  out.shape = x->value.shape;
  out.data.resize(x->value.data.size());
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<T>(f(static_cast<double>(x->value.data[i])));
  auto bp = [x, dfdx](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < n.grad.data.size(); ++i)
      x->grad.data[i] += static_cast<T>(
          static_cast<double>(n.grad.data[i]) *
          dfdx(static_cast<double>(x->value.data[i]), static_cast<double>(n.value.data[i])));
  };
  return g.record(std::move(out), {x}, std::move(bp));
}

inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

template <typename T>
NodePtr<T> selu(Graph<T>& g, NodePtr<T> x) {
  return unary_map<T>(
      g, x,
      [](double v) { return v > 0 ? kSeluLambda * v : kSeluLambda * kSeluAlpha * std::expm1(v); },
      [](double v, double) {
        return v > 0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(v);
      });
}

template <typename T>
NodePtr<T> relu(Graph<T>& g, NodePtr<T> x) {
  return unary_map<T>(
      g, x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

template <typename T>
NodePtr<T> tanh_op(Graph<T>& g, NodePtr<T> x) {
  return unary_map<T>(
      g, x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

// ---------------------------------------------------------------------------
// weight_norm: w = g * v / ||v||, one norm per output channel (leading dim).
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> weight_norm(Graph<T>& g, NodePtr<T> v, NodePtr<T> mag) {
  if (v->value.rank() < 2) throw ValidationError("weight_norm: direction must be rank >= 2");
  if (mag->value.rank() != 1 || mag->value.dim(0) != v->value.dim(0))
    throw ValidationError("weight_norm: magnitude must have one entry per output channel");
  const int64_t c = v->value.dim(0);
  const int64_t r = v->value.numel() / c;

  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  Tensor<T> out;
  out.shape = v->value.shape;
  out.data.resize(v->value.data.size());
  for (int64_t i = 0; i < c; ++i) {
    const T* vr = v->value.data.data() + i * r;
    double s = 0;
    for (int64_t j = 0; j < r; ++j) s += static_cast<double>(vr[j]) * static_cast<double>(vr[j]);
    const double nrm = std::sqrt(s);
    if (nrm == 0) throw NumericalError("weight_norm: zero direction vector");
    (*norms)[static_cast<size_t>(i)] = nrm;
    const double scale = static_cast<double>(mag->value.data[i]) / nrm;
    T* wr = out.data.data() + i * r;
    for (int64_t j = 0; j < r; ++j) wr[j] = static_cast<T>(scale * static_cast<double>(vr[j]));
  }

  auto bp = [v, mag, norms, c, r](Node<T>& n) {
    for (int64_t i = 0; i < c; ++i) {
      const double nrm = (*norms)[static_cast<size_t>(i)];
      const double gm = static_cast<double>(mag->value.data[i]);
      const T* vr = v->value.data.data() + i * r;
      const T* dr = n.grad.data.data() + i * r;
      double dot = 0;  // dw . vhat
      for (int64_t j = 0; j < r; ++j)
        dot += static_cast<double>(dr[j]) * static_cast<double>(vr[j]) / nrm;
      if (mag->requires_grad) {
        mag->ensure_grad();
        mag->grad.data[i] += static_cast<T>(dot);
      }
      if (v->requires_grad) {
        v->ensure_grad();
        T* gv = v->grad.data.data() + i * r;
        for (int64_t j = 0; j < r; ++j) {
          const double vhat = static_cast<double>(vr[j]) / nrm;
          gv[j] += static_cast<T>(gm / nrm * (static_cast<double>(dr[j]) - dot * vhat));
        }
      }
    }
  };
  return g.record(std::move(out), {v, mag}, std::move(bp));
}

// ---------------------------------------------------------------------------
// batch_norm over the time axis with per-channel affine. Train mode uses the
// statistics of the current record and updates the running estimates
// (momentum 0.1); eval mode uses the running estimates.
// ---------------------------------------------------------------------------

inline constexpr double kBatchNormEps = 1e-5;

template <typename T>
struct BatchNormStats {
  Tensor<T>* mean = nullptr;
  Tensor<T>* var = nullptr;
};

template <typename T>
NodePtr<T> batch_norm(Graph<T>& g, NodePtr<T> x, NodePtr<T> gamma, NodePtr<T> beta,
                      BatchNormStats<T> running, Mode mode, double momentum = 0.1) {
  detail::require_rank2(x, "batch_norm");
  const int64_t c = x->value.dim(0), tlen = x->value.dim(1);
  if (gamma->value.numel() != c || beta->value.numel() != c)
    throw ValidationError("batch_norm: affine parameters must have one entry per channel");
  if (!running.mean || !running.var || running.mean->numel() != c || running.var->numel() != c)
    throw ValidationError("batch_norm: running statistics missing or mis-sized");

  auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  const bool train = mode == Mode::train;

  for (int64_t ch = 0; ch < c; ++ch) {
    double mu, var;
    if (train) {
      const T* xr = x->value.row(ch);
      double s = 0;
      for (int64_t t = 0; t < tlen; ++t) s += static_cast<double>(xr[t]);
      mu = s / static_cast<double>(tlen);
      double sq = 0;
      for (int64_t t = 0; t < tlen; ++t) {
        const double d = static_cast<double>(xr[t]) - mu;
        sq += d * d;
      }
      var = sq / static_cast<double>(tlen);
      running.mean->data[ch] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(running.mean->data[ch]) +
                         momentum * mu);
      running.var->data[ch] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(running.var->data[ch]) +
                         momentum * var);
    } else {
      mu = static_cast<double>(running.mean->data[ch]);
      var = static_cast<double>(running.var->data[ch]);
    }
    (*mean)[static_cast<size_t>(ch)] = mu;
    (*inv_std)[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var + kBatchNormEps);
  }

  Tensor<T> out = Tensor<T>::zeros({c, tlen});
  for (int64_t ch = 0; ch < c; ++ch) {
    const T* xr = x->value.row(ch);
    T* yr = out.row(ch);
    const double mu = (*mean)[static_cast<size_t>(ch)];
    const double is = (*inv_std)[static_cast<size_t>(ch)];
    const double ga = static_cast<double>(gamma->value.data[ch]);
    const double be = static_cast<double>(beta->value.data[ch]);
    for (int64_t t = 0; t < tlen; ++t)
      yr[t] = static_cast<T>((static_cast<double>(xr[t]) - mu) * is * ga + be);
  }

  auto bp = [x, gamma, beta, mean, inv_std, c, tlen, train](Node<T>& n) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xr = x->value.row(ch);
      const T* dr = n.grad.row(ch);
      const double mu = (*mean)[static_cast<size_t>(ch)];
      const double is = (*inv_std)[static_cast<size_t>(ch)];
      const double ga = static_cast<double>(gamma->value.data[ch]);
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int64_t t = 0; t < tlen; ++t) {
        const double dy = static_cast<double>(dr[t]);
        sum_dy += dy;
        sum_dy_xhat += dy * (static_cast<double>(xr[t]) - mu) * is;
      }
      if (gamma->requires_grad) {
        gamma->ensure_grad();
        gamma->grad.data[ch] += static_cast<T>(sum_dy_xhat);
      }
      if (beta->requires_grad) {
        beta->ensure_grad();
        beta->grad.data[ch] += static_cast<T>(sum_dy);
      }
      if (x->requires_grad) {
        x->ensure_grad();
        T* gx = x->grad.data.data() + ch * tlen;
        if (train) {
          const double inv_n = 1.0 / static_cast<double>(tlen);
          for (int64_t t = 0; t < tlen; ++t) {
            const double xhat = (static_cast<double>(xr[t]) - mu) * is;
            const double dy = static_cast<double>(dr[t]);
            gx[t] += static_cast<T>(ga * is *
                                    (dy - inv_n * sum_dy - xhat * inv_n * sum_dy_xhat));
          }
        } else {
          for (int64_t t = 0; t < tlen; ++t)
            gx[t] += static_cast<T>(ga * is * static_cast<double>(dr[t]));
        }
      }
    }
  };
  return g.record(std::move(out), {x, gamma, beta}, std::move(bp));
}

// ---------------------------------------------------------------------------
// positionwise_norm: normalize across channels independently per time step,
// std floored at 1e-5.
// ---------------------------------------------------------------------------

inline constexpr double kPositionwiseEps = 1e-5;

template <typename T>
NodePtr<T> positionwise_norm(Graph<T>& g, NodePtr<T> x) {
  detail::require_rank2(x, "positionwise_norm");
  const int64_t c = x->value.dim(0), tlen = x->value.dim(1);
  if (c < 1) throw ValidationError("positionwise_norm: empty channel axis");

  Tensor<T> out = Tensor<T>::zeros({c, tlen});
  auto mu_v = std::make_shared<std::vector<double>>(static_cast<size_t>(tlen));
  auto sd_v = std::make_shared<std::vector<double>>(static_cast<size_t>(tlen));
  for (int64_t t = 0; t < tlen; ++t) {
    double s = 0;
    for (int64_t ch = 0; ch < c; ++ch) s += static_cast<double>(x->value.at2(ch, t));
    const double mu = s / static_cast<double>(c);
    double sq = 0;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double d = static_cast<double>(x->value.at2(ch, t)) - mu;
      sq += d * d;
    }
    const double sd = std::sqrt(sq / static_cast<double>(c));
    const double denom = std::max(sd, kPositionwiseEps);
    (*mu_v)[static_cast<size_t>(t)] = mu;
    (*sd_v)[static_cast<size_t>(t)] = sd;
    for (int64_t ch = 0; ch < c; ++ch)
      out.at2(ch, t) =
          static_cast<T>((static_cast<double>(x->value.at2(ch, t)) - mu) / denom);
  }

  auto bp = [x, mu_v, sd_v, c, tlen](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t t = 0; t < tlen; ++t) {
      const double mu = (*mu_v)[static_cast<size_t>(t)];
      const double sd = (*sd_v)[static_cast<size_t>(t)];
      const double denom = std::max(sd, kPositionwiseEps);
      const bool active = sd > kPositionwiseEps;
      double sum_dy = 0, sum_dy_cent = 0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double dy = static_cast<double>(n.grad.at2(ch, t));
        sum_dy += dy;
        sum_dy_cent += dy * (static_cast<double>(x->value.at2(ch, t)) - mu);
      }
      for (int64_t ch = 0; ch < c; ++ch) {
        const double dy = static_cast<double>(n.grad.at2(ch, t));
        const double cent = static_cast<double>(x->value.at2(ch, t)) - mu;
        double gxv = (dy - sum_dy / static_cast<double>(c)) / denom;
        if (active)
          gxv -= cent * sum_dy_cent / (static_cast<double>(c) * sd * denom * denom);
        x->grad.at2(ch, t) += static_cast<T>(gxv);
      }
    }
  };
  return g.record(std::move(out), {x}, std::move(bp));
}

// ---------------------------------------------------------------------------
// bilstm: standard LSTM cell run forward and backward over time, hidden
// states concatenated to 2H x T. Full backpropagation through time.
// Weight layout per direction: wx 4H x C, wh 4H x H, bias 4H, gate order
// input / forget / candidate / output.
// ---------------------------------------------------------------------------

template <typename T>
struct LstmDirectionWeights {
  NodePtr<T> wx, wh, b;
};

namespace detail {

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Stash of forward intermediates for one direction.
struct LstmStash {
  std::vector<double> gi, gf, gc, go, cell, tanh_cell, hidden;  // each H x T
};

}  // namespace detail

template <typename T>
NodePtr<T> bilstm(Graph<T>& g, NodePtr<T> x, const LstmDirectionWeights<T>& fwd,
                  const LstmDirectionWeights<T>& bwd) {
  detail::require_rank2(x, "bilstm");
  const int64_t c = x->value.dim(0), tlen = x->value.dim(1);
  for (const auto* d : {&fwd, &bwd}) {
    if (d->wx->value.rank() != 2 || d->wh->value.rank() != 2 || d->b->value.rank() != 1)
      throw ValidationError("bilstm: weight ranks must be (2,2,1)");
    if (d->wx->value.dim(1) != c) throw ValidationError("bilstm: wx input width mismatch");
    if (d->wx->value.dim(0) % 4 != 0)
      throw ValidationError("bilstm: gate dimension must be 4*hidden");
  }
  const int64_t h = fwd.wx->value.dim(0) / 4;
  if (bwd.wx->value.dim(0) != 4 * h || fwd.wh->value.dim(0) != 4 * h ||
      bwd.wh->value.dim(0) != 4 * h || fwd.wh->value.dim(1) != h ||
      bwd.wh->value.dim(1) != h || fwd.b->value.dim(0) != 4 * h ||
      bwd.b->value.dim(0) != 4 * h)
    throw ValidationError("bilstm: direction weight shapes disagree");

  auto stash_f = std::make_shared<detail::LstmStash>();
  auto stash_b = std::make_shared<detail::LstmStash>();
  Tensor<T> out = Tensor<T>::zeros({2 * h, tlen});

  auto run_dir = [&](const LstmDirectionWeights<T>& w, detail::LstmStash& st, bool reverse,
                     int64_t out_row0) {
    const size_t ht = static_cast<size_t>(h * tlen);
    st.gi.assign(ht, 0);
    st.gf.assign(ht, 0);
    st.gc.assign(ht, 0);
    st.go.assign(ht, 0);
    st.cell.assign(ht, 0);
    st.tanh_cell.assign(ht, 0);
    st.hidden.assign(ht, 0);
    std::vector<double> h_prev(static_cast<size_t>(h), 0), c_prev(static_cast<size_t>(h), 0);
    std::vector<double> z(static_cast<size_t>(4 * h));
    for (int64_t step = 0; step < tlen; ++step) {
      const int64_t t = reverse ? tlen - 1 - step : step;
      for (int64_t r = 0; r < 4 * h; ++r) {
        const T* wxr = w.wx->value.row(r);
        double s = static_cast<double>(w.b->value.data[r]);
        for (int64_t ic = 0; ic < c; ++ic)
          s += static_cast<double>(wxr[ic]) * static_cast<double>(x->value.at2(ic, t));
        const T* whr = w.wh->value.row(r);
        for (int64_t j = 0; j < h; ++j)
          s += static_cast<double>(whr[j]) * h_prev[static_cast<size_t>(j)];
        z[static_cast<size_t>(r)] = s;
      }
      for (int64_t j = 0; j < h; ++j) {
        const size_t idx = static_cast<size_t>(j * tlen + t);
        const double gi = detail::sigmoid(z[static_cast<size_t>(j)]);
        const double gf = detail::sigmoid(z[static_cast<size_t>(h + j)]);
        const double gc = std::tanh(z[static_cast<size_t>(2 * h + j)]);
        const double go = detail::sigmoid(z[static_cast<size_t>(3 * h + j)]);
        const double cell = gf * c_prev[static_cast<size_t>(j)] + gi * gc;
        const double tc = std::tanh(cell);
        const double hid = go * tc;
        st.gi[idx] = gi;
        st.gf[idx] = gf;
        st.gc[idx] = gc;
        st.go[idx] = go;
        st.cell[idx] = cell;
        st.tanh_cell[idx] = tc;
        st.hidden[idx] = hid;
        c_prev[static_cast<size_t>(j)] = cell;
        h_prev[static_cast<size_t>(j)] = hid;
        out.at2(out_row0 + j, t) = static_cast<T>(hid);
      }
    }
  };
  run_dir(fwd, *stash_f, false, 0);
  run_dir(bwd, *stash_b, true, h);

  auto bp = [x, fwd, bwd, stash_f, stash_b, c, h, tlen](Node<T>& n) {
    auto back_dir = [&](const LstmDirectionWeights<T>& w, detail::LstmStash& st, bool reverse,
                        int64_t out_row0) {
      std::vector<double> dwx, dwh, db;
      const bool want_w = w.wx->requires_grad || w.wh->requires_grad || w.b->requires_grad;
      dwx.assign(static_cast<size_t>(4 * h * c), 0);
      dwh.assign(static_cast<size_t>(4 * h * h), 0);
      db.assign(static_cast<size_t>(4 * h), 0);
      std::vector<double> dh_carry(static_cast<size_t>(h), 0), dc_carry(static_cast<size_t>(h), 0);
      std::vector<double> dz(static_cast<size_t>(4 * h));
      if (x->requires_grad) x->ensure_grad();
      for (int64_t step = tlen - 1; step >= 0; --step) {
        const int64_t t = reverse ? tlen - 1 - step : step;
        const int64_t t_prev_step = step - 1;
        const int64_t t_prev = reverse ? tlen - 1 - t_prev_step : t_prev_step;
        for (int64_t j = 0; j < h; ++j) {
          const size_t idx = static_cast<size_t>(j * tlen + t);
          const double dh = static_cast<double>(n.grad.at2(out_row0 + j, t)) +
                            dh_carry[static_cast<size_t>(j)];
          const double tc = st.tanh_cell[idx];
          const double go = st.go[idx];
          const double dgo = dh * tc;
          double dcell = dh * go * (1.0 - tc * tc) + dc_carry[static_cast<size_t>(j)];
          const double gi = st.gi[idx];
          const double gf = st.gf[idx];
          const double gc = st.gc[idx];
          const double c_prev =
              step == 0 ? 0.0 : st.cell[static_cast<size_t>(j * tlen + t_prev)];
          const double dgi = dcell * gc;
          const double dgc = dcell * gi;
          const double dgf = dcell * c_prev;
          dc_carry[static_cast<size_t>(j)] = dcell * gf;
          dz[static_cast<size_t>(j)] = dgi * gi * (1.0 - gi);
          dz[static_cast<size_t>(h + j)] = dgf * gf * (1.0 - gf);
          dz[static_cast<size_t>(2 * h + j)] = dgc * (1.0 - gc * gc);
          dz[static_cast<size_t>(3 * h + j)] = dgo * go * (1.0 - go);
        }
        std::fill(dh_carry.begin(), dh_carry.end(), 0.0);
        for (int64_t r = 0; r < 4 * h; ++r) {
          const double dzr = dz[static_cast<size_t>(r)];
          if (dzr == 0) continue;
          if (want_w) {
            double* dwxr = dwx.data() + r * c;
            for (int64_t ic = 0; ic < c; ++ic)
              dwxr[ic] += dzr * static_cast<double>(x->value.at2(ic, t));
            db[static_cast<size_t>(r)] += dzr;
            if (step > 0) {
              double* dwhr = dwh.data() + r * h;
              for (int64_t j = 0; j < h; ++j)
                dwhr[j] += dzr * st.hidden[static_cast<size_t>(j * tlen + t_prev)];
            }
          }
          if (x->requires_grad) {
            const T* wxr = w.wx->value.row(r);
            for (int64_t ic = 0; ic < c; ++ic)
              x->grad.at2(ic, t) += static_cast<T>(dzr * static_cast<double>(wxr[ic]));
          }
          if (step > 0) {
            const T* whr = w.wh->value.row(r);
            for (int64_t j = 0; j < h; ++j)
              dh_carry[static_cast<size_t>(j)] += dzr * static_cast<double>(whr[j]);
          }
        }
      }
      if (w.wx->requires_grad) {
        w.wx->ensure_grad();
        detail::add_into(w.wx->grad, dwx, 0);
      }
      if (w.wh->requires_grad) {
        w.wh->ensure_grad();
        detail::add_into(w.wh->grad, dwh, 0);
      }
      if (w.b->requires_grad) {
        w.b->ensure_grad();
        detail::add_into(w.b->grad, db, 0);
      }
    };
    back_dir(fwd, *stash_f, false, 0);
    back_dir(bwd, *stash_b, true, h);
  };
  return g.record(std::move(out), {x, fwd.wx, fwd.wh, fwd.b, bwd.wx, bwd.wh, bwd.b},
                  std::move(bp));
}

// ---------------------------------------------------------------------------
// concat along channels, elementwise add, softmax over channels, dropout.
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> concat_channels(Graph<T>& g, const std::vector<NodePtr<T>>& xs) {
  if (xs.empty()) throw ValidationError("concat: no inputs");
  const int64_t tlen = xs[0]->value.dim(1);
  int64_t ctot = 0;
  for (const auto& x : xs) {
    detail::require_rank2(x, "concat");
    if (x->value.dim(1) != tlen) throw ValidationError("concat: time lengths differ");
    ctot += x->value.dim(0);
  }
  Tensor<T> out = Tensor<T>::zeros({ctot, tlen});
  int64_t row = 0;
  for (const auto& x : xs) {
    std::copy(x->value.data.begin(), x->value.data.end(), out.data.begin() + row * tlen);
    row += x->value.dim(0);
  }
  auto inputs = xs;
  auto bp = [inputs, tlen](Node<T>& n) {
    int64_t row = 0;
    for (const auto& x : inputs) {
      const int64_t c = x->value.dim(0);
      if (x->requires_grad) {
        x->ensure_grad();
        for (int64_t i = 0; i < c * tlen; ++i)
          x->grad.data[static_cast<size_t>(i)] += n.grad.data[static_cast<size_t>(row * tlen + i)];
      }
      row += c;
    }
  };
  return g.record(std::move(out), xs, std::move(bp));
}

template <typename T>
NodePtr<T> add(Graph<T>& g, NodePtr<T> a, NodePtr<T> b) {
  if (!a->value.same_shape(b->value))
    throw ValidationError("add: shape mismatch " + shape_str(a->value.shape) + " vs " +
                          shape_str(b->value.shape));
  Tensor<T> out;
  out.shape = a->value.shape;
  out.data.resize(a->value.data.size());
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a->value.data[i] + b->value.data[i];
  auto bp = [a, b](Node<T>& n) {
    for (const auto& p : {a, b}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < n.grad.data.size(); ++i) p->grad.data[i] += n.grad.data[i];
    }
  };
  return g.record(std::move(out), {a, b}, std::move(bp));
}

template <typename T>
NodePtr<T> softmax_channels(Graph<T>& g, NodePtr<T> x) {
  detail::require_rank2(x, "softmax");
  const int64_t c = x->value.dim(0), tlen = x->value.dim(1);
  Tensor<T> out = Tensor<T>::zeros({c, tlen});
  for (int64_t t = 0; t < tlen; ++t) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t ch = 0; ch < c; ++ch)
      mx = std::max(mx, static_cast<double>(x->value.at2(ch, t)));
    double denom = 0;
    for (int64_t ch = 0; ch < c; ++ch)
      denom += std::exp(static_cast<double>(x->value.at2(ch, t)) - mx);
    for (int64_t ch = 0; ch < c; ++ch)
      out.at2(ch, t) =
          static_cast<T>(std::exp(static_cast<double>(x->value.at2(ch, t)) - mx) / denom);
  }
  auto bp = [x, c, tlen](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t t = 0; t < tlen; ++t) {
      double dot = 0;
      for (int64_t ch = 0; ch < c; ++ch)
        dot += static_cast<double>(n.grad.at2(ch, t)) * static_cast<double>(n.value.at2(ch, t));
      for (int64_t ch = 0; ch < c; ++ch)
        x->grad.at2(ch, t) += static_cast<T>(static_cast<double>(n.value.at2(ch, t)) *
                                             (static_cast<double>(n.grad.at2(ch, t)) - dot));
    }
  };
  return g.record(std::move(out), {x}, std::move(bp));
}

/// Scalar projection against fixed weights. This is the reduction the
/// gradient-check harness hangs every op under.
template <typename T>
NodePtr<T> weighted_sum(Graph<T>& g, NodePtr<T> x, std::shared_ptr<Tensor<T>> weights) {
  if (!weights || !weights->same_shape(x->value))
    throw ValidationError("weighted_sum: weights must match input shape");
  double acc = 0;
  for (size_t i = 0; i < x->value.data.size(); ++i)
    acc += static_cast<double>(x->value.data[i]) * static_cast<double>(weights->data[i]);
  Tensor<T> out = Tensor<T>::full({1}, static_cast<T>(acc));
  auto bp = [x, weights](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const T up = n.grad.data[0];
    for (size_t i = 0; i < x->grad.data.size(); ++i)
      x->grad.data[i] += up * weights->data[i];
  };
  return g.record(std::move(out), {x}, std::move(bp));
}

/// Inverted dropout; identity in eval mode. The mask is drawn at op time
/// from the caller's generator.
template <typename T>
NodePtr<T> dropout(Graph<T>& g, NodePtr<T> x, double rate, std::mt19937_64& rng, Mode mode) {
  if (rate < 0 || rate >= 1) throw ValidationError("dropout: rate must be in [0,1)");
  if (mode == Mode::eval || rate == 0) {
    // Pass-through node keeps graph structure uniform.
    Tensor<T> out = x->value;
    auto bp = [x](Node<T>& n) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (size_t i = 0; i < n.grad.data.size(); ++i) x->grad.data[i] += n.grad.data[i];
    };
    return g.record(std::move(out), {x}, std::move(bp));
  }
  auto mask = std::make_shared<std::vector<T>>(x->value.data.size());
  std::bernoulli_distribution keep(1.0 - rate);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out;
  out.shape = x->value.shape;
  out.data.resize(x->value.data.size());
  for (size_t i = 0; i < out.data.size(); ++i) {
    (*mask)[i] = keep(rng) ? scale : T(0);
    out.data[i] = x->value.data[i] * (*mask)[i];
  }
  auto bp = [x, mask](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < n.grad.data.size(); ++i)
      x->grad.data[i] += n.grad.data[i] * (*mask)[i];
  };
  return g.record(std::move(out), {x}, std::move(bp));
}

}  // namespace sleepdet::ad
