#include "gcg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace gcg::ops {

using detail::Node;
using detail::NodePtr;

namespace {

Tensor make_result(Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& parents,
                   std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  Tape* tape = Tape::active();
  bool needs = false;
  for (const Tensor& p : parents) {
    if (p.defined() && p.requires_grad()) {
      needs = true;
      break;
    }
  }
  if (tape && needs) {
    node->requires_grad = true;
    for (const Tensor& p : parents) {
      if (p.defined()) node->parents.push_back(p.node());
    }
    node->backprop = std::move(backprop);
    tape->record(node);
  }
  return Tensor(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!shape_eq(a.shape(), b.shape())) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

double stable_sigmoid(double x) {
  double y;
  if (x >= 0.0) {
    double e = std::exp(-x);
    y = 1.0 / (1.0 + e);
  } else {
    double e = std::exp(x);
    y = e / (1.0 + e);
  }
  // keep strictly inside (0,1) so log/odds of the gate never blow up
  const double lo = std::numeric_limits<double>::min();
  const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  return std::clamp(y, lo, hi);
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  NodePtr pa = a.node(), pb = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  NodePtr pa = a.node(), pb = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  NodePtr pa = a.node();
  return make_result(a.shape(), std::move(out), {a}, [pa, s](Node& n) {
    if (!pa->requires_grad) return;
    auto& g = pa->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
  NodePtr pa = a.node();
  return make_result(a.shape(), std::move(out), {a}, [pa](Node& n) {
    if (!pa->requires_grad) return;
    auto& g = pa->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  NodePtr pa = a.node();
  return make_result(a.shape(), std::move(out), {a}, [pa](Node& n) {
    if (!pa->requires_grad) return;
    auto& g = pa->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) {
      if (pa->data[i] > 0.0) g[i] += n.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(a.data()[i]);
  NodePtr pa = a.node();
  return make_result(a.shape(), std::move(out), {a}, [pa](Node& n) {
    if (!pa->requires_grad) return;
    auto& g = pa->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) {
      double y = n.data[i];
      g[i] += n.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor log_elem(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.data()[i]);
  NodePtr pa = a.node();
  return make_result(a.shape(), std::move(out), {a}, [pa](Node& n) {
    if (!pa->requires_grad) return;
    auto& g = pa->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / pa->data[i];
  });
}

Tensor softmax(const Tensor& a) {
  if (a.rank() < 1) throw DimensionError("softmax: rank-0 input");
  int k = a.shape().back();
  size_t slices = a.size() / static_cast<size_t>(k);
  std::vector<double> out(a.size());
  for (size_t s = 0; s < slices; ++s) {
    const double* x = a.data().data() + s * k;
    double* p = out.data() + s * k;
    double mx = x[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (int i = 0; i < k; ++i) {
      p[i] = std::exp(x[i] - mx);
      z += p[i];
    }
    for (int i = 0; i < k; ++i) p[i] /= z;
  }
  NodePtr pa = a.node();
  return make_result(a.shape(), std::move(out), {a}, [pa, k, slices](Node& n) {
    if (!pa->requires_grad) return;
    auto& g = pa->ensure_grad();
    for (size_t s = 0; s < slices; ++s) {
      const double* p = n.data.data() + s * k;
      const double* go = n.grad.data() + s * k;
      double dot = 0.0;
      for (int i = 0; i < k; ++i) dot += go[i] * p[i];
      for (int i = 0; i < k; ++i) g[s * k + i] += p[i] * (go[i] - dot);
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  NodePtr pa = a.node();
  return make_result({1}, {total}, {a}, [pa](Node& n) {
    if (!pa->requires_grad) return;
    auto& g = pa->ensure_grad();
    for (double& gi : g) gi += n.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  double inv = 1.0 / static_cast<double>(a.size());
  NodePtr pa = a.node();
  return make_result({1}, {total * inv}, {a}, [pa, inv](Node& n) {
    if (!pa->requires_grad) return;
    auto& g = pa->ensure_grad();
    for (double& gi : g) gi += n.grad[0] * inv;
  });
}

Tensor sum_abs(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += std::abs(v);
  NodePtr pa = a.node();
  return make_result({1}, {total}, {a}, [pa](Node& n) {
    if (!pa->requires_grad) return;
    auto& g = pa->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) {
      double x = pa->data[i];
      if (x > 0.0)
        g[i] += n.grad[0];
      else if (x < 0.0)
        g[i] -= n.grad[0];
    }
  });
}

Tensor sum_square(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v * v;
  NodePtr pa = a.node();
  return make_result({1}, {total}, {a}, [pa](Node& n) {
    if (!pa->requires_grad) return;
    auto& g = pa->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0] * 2.0 * pa->data[i];
  });
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(w, 2, "dense(w)");
  bool batched = x.rank() == 2;
  if (!batched) require_rank(x, 1, "dense(x)");
  int in = w.dim(0), out = w.dim(1);
  int rows = batched ? x.dim(0) : 1;
  if (x.shape().back() != in) {
    throw DimensionError("dense: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
  }
  if (b.defined()) {
    require_rank(b, 1, "dense(b)");
    if (b.dim(0) != out) {
      throw DimensionError("dense: bias " + shape_str(b.shape()) + " vs weight " +
                           shape_str(w.shape()));
    }
  }
  std::vector<double> y(static_cast<size_t>(rows) * out, 0.0);
  for (int r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + static_cast<size_t>(r) * in;
    double* yr = y.data() + static_cast<size_t>(r) * out;
    if (b.defined()) {
      for (int o = 0; o < out; ++o) yr[o] = b.data()[o];
    }
    for (int i = 0; i < in; ++i) {
      double xv = xr[i];
      const double* wrow = w.data().data() + static_cast<size_t>(i) * out;
      for (int o = 0; o < out; ++o) yr[o] += xv * wrow[o];
    }
  }
  Shape yshape = batched ? Shape{rows, out} : Shape{out};
  NodePtr px = x.node(), pw = w.node(), pb = b.defined() ? b.node() : nullptr;
  return make_result(std::move(yshape), std::move(y), {x, w, b},
                     [px, pw, pb, rows, in, out](Node& n) {
                       for (int r = 0; r < rows; ++r) {
                         const double* go = n.grad.data() + static_cast<size_t>(r) * out;
                         const double* xr = px->data.data() + static_cast<size_t>(r) * in;
                         if (px->requires_grad) {
                           auto& gx = px->ensure_grad();
                           for (int i = 0; i < in; ++i) {
                             const double* wrow = pw->data.data() + static_cast<size_t>(i) * out;
                             double acc = 0.0;
                             for (int o = 0; o < out; ++o) acc += go[o] * wrow[o];
                             gx[static_cast<size_t>(r) * in + i] += acc;
                           }
                         }
                         if (pw->requires_grad) {
                           auto& gw = pw->ensure_grad();
                           for (int i = 0; i < in; ++i) {
                             double xv = xr[i];
                             double* gwrow = gw.data() + static_cast<size_t>(i) * out;
                             for (int o = 0; o < out; ++o) gwrow[o] += xv * go[o];
                           }
                         }
                         if (pb && pb->requires_grad) {
                           auto& gb = pb->ensure_grad();
                           for (int o = 0; o < out; ++o) gb[o] += go[o];
                         }
                       }
                     });
}

Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 3, "pointwise_conv(x)");
  int h = x.dim(0), wd = x.dim(1), ci = x.dim(2);
  Tensor flat = reshape(x, {h * wd, ci});
  Tensor y = dense(flat, w, b);
  return reshape(y, {h, wd, w.dim(1)});
}

Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 3, "conv3x3(x)");
  require_rank(w, 4, "conv3x3(w)");
  if (w.dim(0) != 3 || w.dim(1) != 3 || w.dim(2) != x.dim(2)) {
    throw DimensionError("conv3x3: weight " + shape_str(w.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  int h = x.dim(0), wd = x.dim(1), ci = x.dim(2), co = w.dim(3);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != co)) {
    throw DimensionError("conv3x3: bias " + shape_str(b.shape()));
  }
  std::vector<double> y(static_cast<size_t>(h) * wd * co, 0.0);
  const Shape xs = x.shape();
  Shape ys = {h, wd, co};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < wd; ++c) {
      double* yo = y.data() + idx3(ys, r, c, 0);
      if (b.defined()) {
        for (int o = 0; o < co; ++o) yo[o] = b.data()[o];
      }
      for (int dr = 0; dr < 3; ++dr) {
        int rr = r + dr - 1;
        if (rr < 0 || rr >= h) continue;
        for (int dc = 0; dc < 3; ++dc) {
          int cc = c + dc - 1;
          if (cc < 0 || cc >= wd) continue;
          const double* xp = x.data().data() + idx3(xs, rr, cc, 0);
          for (int i = 0; i < ci; ++i) {
            double xv = xp[i];
            const double* wp =
                w.data().data() + ((static_cast<size_t>(dr) * 3 + dc) * ci + i) * co;
            for (int o = 0; o < co; ++o) yo[o] += xv * wp[o];
          }
        }
      }
    }
  }
  NodePtr px = x.node(), pw = w.node(), pb = b.defined() ? b.node() : nullptr;
  return make_result(
      ys, std::move(y), {x, w, b}, [px, pw, pb, h, wd, ci, co, xs, ys](Node& n) {
        for (int r = 0; r < h; ++r) {
          for (int c = 0; c < wd; ++c) {
            const double* go = n.grad.data() + idx3(ys, r, c, 0);
            if (pb && pb->requires_grad) {
              auto& gb = pb->ensure_grad();
              for (int o = 0; o < co; ++o) gb[o] += go[o];
            }
            for (int dr = 0; dr < 3; ++dr) {
              int rr = r + dr - 1;
              if (rr < 0 || rr >= h) continue;
              for (int dc = 0; dc < 3; ++dc) {
                int cc = c + dc - 1;
                if (cc < 0 || cc >= wd) continue;
                size_t xoff = idx3(xs, rr, cc, 0);
                size_t woff = (static_cast<size_t>(dr) * 3 + dc) * ci * co;
                if (px->requires_grad) {
                  auto& gx = px->ensure_grad();
                  for (int i = 0; i < ci; ++i) {
                    const double* wp = pw->data.data() + woff + static_cast<size_t>(i) * co;
                    double acc = 0.0;
                    for (int o = 0; o < co; ++o) acc += go[o] * wp[o];
                    gx[xoff + i] += acc;
                  }
                }
                if (pw->requires_grad) {
                  auto& gw = pw->ensure_grad();
                  for (int i = 0; i < ci; ++i) {
                    double xv = px->data[xoff + i];
                    double* gwp = gw.data() + woff + static_cast<size_t>(i) * co;
                    for (int o = 0; o < co; ++o) gwp[o] += xv * go[o];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor avg_pool2(const Tensor& x) {
  require_rank(x, 3, "avg_pool2");
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  int oh = (h + 1) / 2, ow = (w + 1) / 2;
  Shape xs = x.shape();
  Shape ys = {oh, ow, c};
  std::vector<double> y(static_cast<size_t>(oh) * ow * c, 0.0);
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      int r1 = std::min(2 * i + 1, h - 1);
      int c1 = std::min(2 * j + 1, w - 1);
      int count = (r1 - 2 * i + 1) * (c1 - 2 * j + 1);
      double* yo = y.data() + idx3(ys, i, j, 0);
      for (int r = 2 * i; r <= r1; ++r) {
        for (int cc = 2 * j; cc <= c1; ++cc) {
          const double* xp = x.data().data() + idx3(xs, r, cc, 0);
          for (int k = 0; k < c; ++k) yo[k] += xp[k];
        }
      }
      for (int k = 0; k < c; ++k) yo[k] /= count;
    }
  }
  NodePtr px = x.node();
  return make_result(ys, std::move(y), {x}, [px, h, w, c, oh, ow, xs, ys](Node& n) {
    if (!px->requires_grad) return;
    auto& gx = px->ensure_grad();
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        int r1 = std::min(2 * i + 1, h - 1);
        int c1 = std::min(2 * j + 1, w - 1);
        double inv = 1.0 / ((r1 - 2 * i + 1) * (c1 - 2 * j + 1));
        const double* go = n.grad.data() + idx3(ys, i, j, 0);
        for (int r = 2 * i; r <= r1; ++r) {
          for (int cc = 2 * j; cc <= c1; ++cc) {
            double* gp = gx.data() + idx3(xs, r, cc, 0);
            for (int k = 0; k < c; ++k) gp[k] += go[k] * inv;
          }
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: rank-0 input");
  int k = x.shape().back();
  require_rank(scale, 1, "layer_norm(scale)");
  require_rank(shift, 1, "layer_norm(shift)");
  if (scale.dim(0) != k || shift.dim(0) != k) {
    throw DimensionError("layer_norm: scale/shift must match last axis " + std::to_string(k));
  }
  size_t slices = x.size() / static_cast<size_t>(k);
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(slices);
  for (size_t s = 0; s < slices; ++s) {
    const double* xp = x.data().data() + s * k;
    double mu = 0.0;
    for (int i = 0; i < k; ++i) mu += xp[i];
    mu /= k;
    double var = 0.0;
    for (int i = 0; i < k; ++i) {
      double d = xp[i] - mu;
      var += d * d;
    }
    var /= k;
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std[s] = inv;
    for (int i = 0; i < k; ++i) {
      double xh = (xp[i] - mu) * inv;
      xhat[s * k + i] = xh;
      out[s * k + i] = scale.data()[i] * xh + shift.data()[i];
    }
  }
  NodePtr px = x.node(), ps = scale.node(), pt = shift.node();
  return make_result(x.shape(), std::move(out), {x, scale, shift},
                     [px, ps, pt, k, slices, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)](Node& n) {
                       for (size_t s = 0; s < slices; ++s) {
                         const double* go = n.grad.data() + s * k;
                         const double* xh = xhat.data() + s * k;
                         if (ps->requires_grad) {
                           auto& gs = ps->ensure_grad();
                           for (int i = 0; i < k; ++i) gs[i] += go[i] * xh[i];
                         }
                         if (pt->requires_grad) {
                           auto& gt = pt->ensure_grad();
                           for (int i = 0; i < k; ++i) gt[i] += go[i];
                         }
                         if (px->requires_grad) {
                           auto& gx = px->ensure_grad();
                           double m1 = 0.0, m2 = 0.0;
                           for (int i = 0; i < k; ++i) {
                             double dxh = go[i] * ps->data[i];
                             m1 += dxh;
                             m2 += dxh * xh[i];
                           }
                           m1 /= k;
                           m2 /= k;
                           for (int i = 0; i < k; ++i) {
                             double dxh = go[i] * ps->data[i];
                             gx[s * k + i] += inv_std[s] * (dxh - m1 - xh[i] * m2);
                           }
                         }
                       }
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum, double eps) {
  if (x.rank() < 1) throw DimensionError("batch_norm: rank-0 input");
  int c = x.shape().back();
  for (const Tensor* t :
       {&scale, &shift, static_cast<const Tensor*>(&running_mean),
        static_cast<const Tensor*>(&running_var)}) {
    if (t->rank() != 1 || t->dim(0) != c) {
      throw DimensionError("batch_norm: per-channel tensors must be rank-1 of size " +
                           std::to_string(c));
    }
  }
  size_t n = x.size() / static_cast<size_t>(c);
  std::vector<double> mu(c), var(c);
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      double m = 0.0;
      for (size_t i = 0; i < n; ++i) m += x.data()[i * c + ch];
      m /= static_cast<double>(n);
      double v = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double d = x.data()[i * c + ch] - m;
        v += d * d;
      }
      v /= static_cast<double>(n); // biased, matches the running buffers
      mu[ch] = m;
      var[ch] = v;
      running_mean.mutable_data()[ch] = momentum * running_mean.data()[ch] + (1.0 - momentum) * m;
      running_var.mutable_data()[ch] = momentum * running_var.data()[ch] + (1.0 - momentum) * v;
    }
  } else {
    mu.assign(running_mean.data().begin(), running_mean.data().end());
    var.assign(running_var.data().begin(), running_var.data().end());
  }
  std::vector<double> inv(c);
  for (int ch = 0; ch < c; ++ch) inv[ch] = 1.0 / std::sqrt(var[ch] + eps);
  std::vector<double> out(x.size()), xhat(x.size());
  for (size_t i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      double xh = (x.data()[i * c + ch] - mu[ch]) * inv[ch];
      xhat[i * c + ch] = xh;
      out[i * c + ch] = scale.data()[ch] * xh + shift.data()[ch];
    }
  }
  NodePtr px = x.node(), ps = scale.node(), pt = shift.node();
  return make_result(
      x.shape(), std::move(out), {x, scale, shift},
      [px, ps, pt, c, n, training, xhat = std::move(xhat), inv = std::move(inv)](Node& nd) {
        if (ps->requires_grad) {
          auto& gs = ps->ensure_grad();
          for (size_t i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) gs[ch] += nd.grad[i * c + ch] * xhat[i * c + ch];
        }
        if (pt->requires_grad) {
          auto& gt = pt->ensure_grad();
          for (size_t i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) gt[ch] += nd.grad[i * c + ch];
        }
        if (!px->requires_grad) return;
        auto& gx = px->ensure_grad();
        if (!training) {
          // statistics are constants in eval mode
          for (size_t i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch)
              gx[i * c + ch] += nd.grad[i * c + ch] * ps->data[ch] * inv[ch];
          return;
        }
        for (int ch = 0; ch < c; ++ch) {
          double m1 = 0.0, m2 = 0.0;
          for (size_t i = 0; i < n; ++i) {
            double dxh = nd.grad[i * c + ch] * ps->data[ch];
            m1 += dxh;
            m2 += dxh * xhat[i * c + ch];
          }
          m1 /= static_cast<double>(n);
          m2 /= static_cast<double>(n);
          for (size_t i = 0; i < n; ++i) {
            double dxh = nd.grad[i * c + ch] * ps->data[ch];
            gx[i * c + ch] += inv[ch] * (dxh - m1 - xhat[i * c + ch] * m2);
          }
        }
      });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training,
               const std::vector<unsigned char>* forced_keep) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  double keep = 1.0 - rate;
  double boost = 1.0 / keep;
  if (forced_keep && forced_keep->size() != x.size()) {
    throw DimensionError("dropout: forced_keep mask size mismatch");
  }
  std::vector<double> mask(x.size());
  for (size_t i = 0; i < mask.size(); ++i) {
    bool keep_it = forced_keep ? (*forced_keep)[i] != 0 : rng.next_double() < keep;
    mask[i] = keep_it ? boost : 0.0;
  }
  std::vector<double> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  NodePtr px = x.node();
  return make_result(x.shape(), std::move(out), {x}, [px, mask = std::move(mask)](Node& n) {
    if (!px->requires_grad) return;
    auto& g = px->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * mask[i];
  });
}

Tensor broadcast_add_channel(const Tensor& x, const Tensor& v) {
  require_rank(x, 3, "broadcast_add_channel(x)");
  require_rank(v, 1, "broadcast_add_channel(v)");
  int d = x.dim(2);
  if (v.dim(0) != d) {
    throw DimensionError("broadcast_add_channel: " + shape_str(x.shape()) + " vs " +
                         shape_str(v.shape()));
  }
  size_t hw = static_cast<size_t>(x.dim(0)) * x.dim(1);
  std::vector<double> out(x.size());
  for (size_t p = 0; p < hw; ++p)
    for (int k = 0; k < d; ++k) out[p * d + k] = x.data()[p * d + k] + v.data()[k];
  NodePtr px = x.node(), pv = v.node();
  return make_result(x.shape(), std::move(out), {x, v}, [px, pv, hw, d](Node& n) {
    if (px->requires_grad) {
      auto& g = px->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (pv->requires_grad) {
      auto& g = pv->ensure_grad();
      for (size_t p = 0; p < hw; ++p)
        for (int k = 0; k < d; ++k) g[k] += n.grad[p * d + k];
    }
  });
}

Tensor mul_gate(const Tensor& x, const Tensor& gate) {
  require_rank(x, 3, "mul_gate(x)");
  require_rank(gate, 3, "mul_gate(gate)");
  int h = x.dim(0), w = x.dim(1), d = x.dim(2);
  if (gate.dim(0) != h || gate.dim(1) != w || (gate.dim(2) != 1 && gate.dim(2) != d)) {
    throw DimensionError("mul_gate: " + shape_str(x.shape()) + " vs " +
                         shape_str(gate.shape()));
  }
  if (gate.dim(2) == d) return mul(x, gate);
  size_t hw = static_cast<size_t>(h) * w;
  std::vector<double> out(x.size());
  for (size_t p = 0; p < hw; ++p) {
    double gv = gate.data()[p];
    for (int k = 0; k < d; ++k) out[p * d + k] = x.data()[p * d + k] * gv;
  }
  NodePtr px = x.node(), pg = gate.node();
  return make_result(x.shape(), std::move(out), {x, gate}, [px, pg, hw, d](Node& n) {
    if (px->requires_grad) {
      auto& g = px->ensure_grad();
      for (size_t p = 0; p < hw; ++p) {
        double gv = pg->data[p];
        for (int k = 0; k < d; ++k) g[p * d + k] += n.grad[p * d + k] * gv;
      }
    }
    if (pg->requires_grad) {
      auto& g = pg->ensure_grad();
      for (size_t p = 0; p < hw; ++p) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k) acc += n.grad[p * d + k] * px->data[p * d + k];
        g[p] += acc;
      }
    }
  });
}

Tensor channel_scale(const Tensor& x, const Tensor& s) {
  require_rank(x, 3, "channel_scale(x)");
  require_rank(s, 1, "channel_scale(s)");
  int d = x.dim(2);
  if (s.dim(0) != d) {
    throw DimensionError("channel_scale: " + shape_str(x.shape()) + " vs " +
                         shape_str(s.shape()));
  }
  size_t hw = static_cast<size_t>(x.dim(0)) * x.dim(1);
  std::vector<double> out(x.size());
  for (size_t p = 0; p < hw; ++p)
    for (int k = 0; k < d; ++k) out[p * d + k] = x.data()[p * d + k] * s.data()[k];
  NodePtr px = x.node(), ps = s.node();
  return make_result(x.shape(), std::move(out), {x, s}, [px, ps, hw, d](Node& n) {
    if (px->requires_grad) {
      auto& g = px->ensure_grad();
      for (size_t p = 0; p < hw; ++p)
        for (int k = 0; k < d; ++k) g[p * d + k] += n.grad[p * d + k] * ps->data[k];
    }
    if (ps->requires_grad) {
      auto& g = ps->ensure_grad();
      for (size_t p = 0; p < hw; ++p)
        for (int k = 0; k < d; ++k) g[k] += n.grad[p * d + k] * px->data[p * d + k];
    }
  });
}

Tensor weighted_spatial_sum(const Tensor& x, const Tensor& w) {
  require_rank(x, 3, "weighted_spatial_sum(x)");
  int h = x.dim(0), wd = x.dim(1), d = x.dim(2);
  bool ok = (w.rank() == 2 && w.dim(0) == h && w.dim(1) == wd) ||
            (w.rank() == 3 && w.dim(0) == h && w.dim(1) == wd && w.dim(2) == 1);
  if (!ok) {
    throw DimensionError("weighted_spatial_sum: " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
  }
  size_t hw = static_cast<size_t>(h) * wd;
  std::vector<double> out(d, 0.0);
  for (size_t p = 0; p < hw; ++p) {
    double wv = w.data()[p];
    for (int k = 0; k < d; ++k) out[k] += wv * x.data()[p * d + k];
  }
  NodePtr px = x.node(), pw = w.node();
  return make_result({d}, std::move(out), {x, w}, [px, pw, hw, d](Node& n) {
    if (px->requires_grad) {
      auto& g = px->ensure_grad();
      for (size_t p = 0; p < hw; ++p) {
        double wv = pw->data[p];
        for (int k = 0; k < d; ++k) g[p * d + k] += n.grad[k] * wv;
      }
    }
    if (pw->requires_grad) {
      auto& g = pw->ensure_grad();
      for (size_t p = 0; p < hw; ++p) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k) acc += n.grad[k] * px->data[p * d + k];
        g[p] += acc;
      }
    }
  });
}

Tensor spatial_mean(const Tensor& x) {
  require_rank(x, 3, "spatial_mean");
  int d = x.dim(2);
  size_t hw = static_cast<size_t>(x.dim(0)) * x.dim(1);
  double inv = 1.0 / static_cast<double>(hw);
  std::vector<double> out(d, 0.0);
  for (size_t p = 0; p < hw; ++p)
    for (int k = 0; k < d; ++k) out[k] += x.data()[p * d + k];
  for (int k = 0; k < d; ++k) out[k] *= inv;
  NodePtr px = x.node();
  return make_result({d}, std::move(out), {x}, [px, hw, d, inv](Node& n) {
    if (!px->requires_grad) return;
    auto& g = px->ensure_grad();
    for (size_t p = 0; p < hw; ++p)
      for (int k = 0; k < d; ++k) g[p * d + k] += n.grad[k] * inv;
  });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                         " changes element count");
  }
  NodePtr px = x.node();
  return make_result(std::move(new_shape), x.data(), {x}, [px](Node& n) {
    if (!px->requires_grad) return;
    auto& g = px->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  int d = rows[0].dim(0);
  for (const Tensor& r : rows) {
    if (r.rank() != 1 || r.dim(0) != d) {
      throw DimensionError("stack_rows: all rows must be rank-1 of size " + std::to_string(d));
    }
  }
  int k = static_cast<int>(rows.size());
  std::vector<double> out;
  out.reserve(static_cast<size_t>(k) * d);
  for (const Tensor& r : rows) out.insert(out.end(), r.data().begin(), r.data().end());
  std::vector<NodePtr> parents;
  parents.reserve(rows.size());
  for (const Tensor& r : rows) parents.push_back(r.node());
  return make_result({k, d}, std::move(out), rows, [parents, d](Node& n) {
    for (size_t r = 0; r < parents.size(); ++r) {
      if (!parents[r]->requires_grad) continue;
      auto& g = parents[r]->ensure_grad();
      for (int i = 0; i < d; ++i) g[i] += n.grad[r * d + i];
    }
  });
}

Tensor slice_rows(const Tensor& x, int start, int count) {
  if (x.rank() != 2) throw DimensionError("slice_rows: expected rank-2, got " + shape_str(x.shape()));
  int n = x.dim(0), m = x.dim(1);
  if (start < 0 || count <= 0 || start + count > n) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + "," +
                         std::to_string(start + count) + ") out of range for " + std::to_string(n));
  }
  std::vector<double> out(x.data().begin() + static_cast<size_t>(start) * m,
                          x.data().begin() + static_cast<size_t>(start + count) * m);
  NodePtr px = x.node();
  return make_result({count, m}, std::move(out), {x}, [px, start, count, m](Node& nd) {
    if (!px->requires_grad) return;
    auto& g = px->ensure_grad();
    size_t off = static_cast<size_t>(start) * m;
    for (size_t i = 0; i < static_cast<size_t>(count) * m; ++i) g[off + i] += nd.grad[i];
  });
}

bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

} // namespace gcg::ops
