#include "vlpre/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vlpre {
namespace ops {

using detail::Node;

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

std::shared_ptr<Node> alloc(std::vector<int> shape) {
  auto n = std::make_shared<Node>();
  n->value.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  n->shape = std::move(shape);
  return n;
}

void attach(const std::shared_ptr<Node>& out, std::vector<std::shared_ptr<Node>> parents,
            std::function<void()> fn) {
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (!any) return;
  out->requires_grad = true;
  out->parents = std::move(parents);
  out->backward = std::move(fn);
}

void require_2d(const Tensor& t, const char* who) {
  if (t.ndim() != 2) {
    throw std::invalid_argument(std::string(who) + " expects a 2-D tensor, got " +
                                shape_str(t.shape()));
  }
}

// C[m,n] += A[m,k] · B[k,n]
void mm_acc(double* c, const double* a, const double* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * n;
    const double* ai = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,n] += A[m,k] · B[n,k]^T
void mm_nt_acc(double* c, const double* a, const double* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T · B[m,n]
void mm_tn_acc(double* c, const double* a, const double* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    const double* bi = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul dimension mismatch: " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = alloc({m, n});
  mm_acc(out->value.data(), a.data().data(), b.data().data(), m, k, n);
  Node* self = out.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  attach(out, {a.node(), b.node()}, [self, pa, pb, m, k, n] {
    if (pa->requires_grad) mm_nt_acc(pa->grad.data(), self->grad.data(), pb->value.data(), m, n, k);
    if (pb->requires_grad) mm_tn_acc(pb->grad.data(), pa->value.data(), self->grad.data(), m, k, n);
  });
  return Tensor(out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("matmul_nt dimension mismatch: " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()) + "^T");
  }
  int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  auto out = alloc({m, n});
  mm_nt_acc(out->value.data(), a.data().data(), b.data().data(), m, k, n);
  Node* self = out.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  attach(out, {a.node(), b.node()}, [self, pa, pb, m, k, n] {
    if (pa->requires_grad) mm_acc(pa->grad.data(), self->grad.data(), pb->value.data(), m, n, k);
    if (pb->requires_grad) mm_tn_acc(pb->grad.data(), self->grad.data(), pa->value.data(), m, n, k);
  });
  return Tensor(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  auto out = alloc(a.shape());
  size_t n = out->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = a.data()[i] + b.data()[i];
  Node* self = out.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  attach(out, {a.node(), b.node()}, [self, pa, pb, n] {
    if (pa->requires_grad)
      for (size_t i = 0; i < n; ++i) pa->grad[i] += self->grad[i];
    if (pb->requires_grad)
      for (size_t i = 0; i < n; ++i) pb->grad[i] += self->grad[i];
  });
  return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("sub shape mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  auto out = alloc(a.shape());
  size_t n = out->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = a.data()[i] - b.data()[i];
  Node* self = out.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  attach(out, {a.node(), b.node()}, [self, pa, pb, n] {
    if (pa->requires_grad)
      for (size_t i = 0; i < n; ++i) pa->grad[i] += self->grad[i];
    if (pb->requires_grad)
      for (size_t i = 0; i < n; ++i) pb->grad[i] -= self->grad[i];
  });
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  auto out = alloc(a.shape());
  size_t n = out->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = a.data()[i] * b.data()[i];
  Node* self = out.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  attach(out, {a.node(), b.node()}, [self, pa, pb, n] {
    if (pa->requires_grad)
      for (size_t i = 0; i < n; ++i) pa->grad[i] += self->grad[i] * pb->value[i];
    if (pb->requires_grad)
      for (size_t i = 0; i < n; ++i) pb->grad[i] += self->grad[i] * pa->value[i];
  });
  return Tensor(out);
}

Tensor scale(const Tensor& a, double c) {
  auto out = alloc(a.shape());
  size_t n = out->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = a.data()[i] * c;
  Node* self = out.get();
  Node* pa = a.node().get();
  attach(out, {a.node()}, [self, pa, c, n] {
    for (size_t i = 0; i < n; ++i) pa->grad[i] += self->grad[i] * c;
  });
  return Tensor(out);
}

Tensor add_scalar(const Tensor& a, double c) {
  auto out = alloc(a.shape());
  size_t n = out->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = a.data()[i] + c;
  Node* self = out.get();
  Node* pa = a.node().get();
  attach(out, {a.node()}, [self, pa, n] {
    for (size_t i = 0; i < n; ++i) pa->grad[i] += self->grad[i];
  });
  return Tensor(out);
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_row_bias");
  if (bias.ndim() != 1 || bias.dim(0) != x.dim(1)) {
    throw std::invalid_argument("add_row_bias: bias " + shape_str(bias.shape()) +
                                " does not match " + shape_str(x.shape()));
  }
  int m = x.dim(0), n = x.dim(1);
  auto out = alloc({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out->value[static_cast<size_t>(i) * n + j] =
          x.data()[static_cast<size_t>(i) * n + j] + bias.data()[static_cast<size_t>(j)];
  Node* self = out.get();
  Node* px = x.node().get();
  Node* pb = bias.node().get();
  attach(out, {x.node(), bias.node()}, [self, px, pb, m, n] {
    if (px->requires_grad)
      for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) px->grad[i] += self->grad[i];
    if (pb->requires_grad)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          pb->grad[static_cast<size_t>(j)] += self->grad[static_cast<size_t>(i) * n + j];
  });
  return Tensor(out);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row_bias(matmul(x, w), b);
}

Tensor gelu(const Tensor& x) {
  auto out = alloc(x.shape());
  size_t n = out->value.size();
  for (size_t i = 0; i < n; ++i) {
    double v = x.data()[i];
    out->value[i] = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  }
  Node* self = out.get();
  Node* px = x.node().get();
  attach(out, {x.node()}, [self, px, n] {
    for (size_t i = 0; i < n; ++i) {
      double v = px->value[i];
      double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
      double pdf = std::exp(-0.5 * v * v) / std::sqrt(kTwoPi);
      px->grad[i] += self->grad[i] * (cdf + v * pdf);
    }
  });
  return Tensor(out);
}

Tensor relu(const Tensor& x) {
  auto out = alloc(x.shape());
  size_t n = out->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  Node* self = out.get();
  Node* px = x.node().get();
  attach(out, {x.node()}, [self, px, n] {
    for (size_t i = 0; i < n; ++i)
      if (px->value[i] > 0.0) px->grad[i] += self->grad[i];
  });
  return Tensor(out);
}

Tensor sigmoid(const Tensor& x) {
  auto out = alloc(x.shape());
  size_t n = out->value.size();
  for (size_t i = 0; i < n; ++i) {
    double v = x.data()[i];
    out->value[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  Node* self = out.get();
  Node* px = x.node().get();
  attach(out, {x.node()}, [self, px, n] {
    for (size_t i = 0; i < n; ++i) {
      double s = self->value[i];
      px->grad[i] += self->grad[i] * s * (1.0 - s);
    }
  });
  return Tensor(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (gain.ndim() != 1 || bias.ndim() != 1 || gain.dim(0) != bias.dim(0)) {
    throw std::invalid_argument("layer_norm: gain/bias must be 1-D of equal length");
  }
  int d = gain.dim(0);
  if (d < 2) throw std::invalid_argument("layer_norm: degenerate axis of length " +
                                         std::to_string(d));
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  if (x.ndim() < 1 || x.shape().back() != d) {
    throw std::invalid_argument("layer_norm: last axis of " + shape_str(x.shape()) +
                                " does not match gain length " + std::to_string(d));
  }
  int rows = static_cast<int>(x.numel() / d);
  auto out = alloc(x.shape());

  // saved for backward
  auto xhat = std::make_shared<std::vector<double>>(x.data().size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));

  for (int r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + static_cast<size_t>(r) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = is;
    for (int j = 0; j < d; ++j) {
      double xh = (xr[j] - mu) * is;
      (*xhat)[static_cast<size_t>(r) * d + j] = xh;
      out->value[static_cast<size_t>(r) * d + j] = xh * gain.data()[static_cast<size_t>(j)] +
                                                   bias.data()[static_cast<size_t>(j)];
    }
  }

  Node* self = out.get();
  Node* px = x.node().get();
  Node* pg = gain.node().get();
  Node* pb = bias.node().get();
  attach(out, {x.node(), gain.node(), bias.node()}, [self, px, pg, pb, xhat, inv_std, rows, d] {
    for (int r = 0; r < rows; ++r) {
      const double* dy = self->grad.data() + static_cast<size_t>(r) * d;
      const double* xh = xhat->data() + static_cast<size_t>(r) * d;
      double is = (*inv_std)[static_cast<size_t>(r)];
      if (px->requires_grad) {
        double g_mean = 0.0, gx_mean = 0.0;
        for (int j = 0; j < d; ++j) {
          double g = dy[j] * pg->value[static_cast<size_t>(j)];
          g_mean += g;
          gx_mean += g * xh[j];
        }
        g_mean /= d;
        gx_mean /= d;
        for (int j = 0; j < d; ++j) {
          double g = dy[j] * pg->value[static_cast<size_t>(j)];
          px->grad[static_cast<size_t>(r) * d + j] += is * (g - g_mean - xh[j] * gx_mean);
        }
      }
      if (pg->requires_grad)
        for (int j = 0; j < d; ++j) pg->grad[static_cast<size_t>(j)] += dy[j] * xh[j];
      if (pb->requires_grad)
        for (int j = 0; j < d; ++j) pb->grad[static_cast<size_t>(j)] += dy[j];
    }
  });
  return Tensor(out);
}

Tensor softmax_rows(const Tensor& x) {
  require_2d(x, "softmax_rows");
  int m = x.dim(0), n = x.dim(1);
  auto out = alloc({m, n});
  for (int i = 0; i < m; ++i) {
    const double* xi = x.data().data() + static_cast<size_t>(i) * n;
    double* oi = out->value.data() + static_cast<size_t>(i) * n;
    double mx = xi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      z += oi[j];
    }
    for (int j = 0; j < n; ++j) oi[j] /= z;
  }
  Node* self = out.get();
  Node* px = x.node().get();
  attach(out, {x.node()}, [self, px, m, n] {
    for (int i = 0; i < m; ++i) {
      const double* s = self->value.data() + static_cast<size_t>(i) * n;
      const double* dy = self->grad.data() + static_cast<size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += dy[j] * s[j];
      for (int j = 0; j < n; ++j)
        px->grad[static_cast<size_t>(i) * n + j] += s[j] * (dy[j] - dot);
    }
  });
  return Tensor(out);
}

Tensor softmax_ce(const Tensor& logits, const std::vector<int>& labels, Reduction r) {
  require_2d(logits, "softmax_ce");
  int m = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != m) {
    throw std::invalid_argument("softmax_ce: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(m) + " rows");
  }
  for (int lab : labels) {
    if (lab < 0 || lab >= k) {
      throw std::out_of_range("softmax_ce: label " + std::to_string(lab) +
                              " outside [0," + std::to_string(k) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<double>>(logits.data().size());
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    const double* xi = logits.data().data() + static_cast<size_t>(i) * k;
    double* pi = probs->data() + static_cast<size_t>(i) * k;
    double mx = xi[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(xi[j] - mx);
    double lse = mx + std::log(z);
    total += lse - xi[labels[static_cast<size_t>(i)]];
    for (int j = 0; j < k; ++j) pi[j] = std::exp(xi[j] - lse);
  }
  double w = r == Reduction::mean ? 1.0 / m : 1.0;
  auto out = alloc({1});
  out->value[0] = total * w;
  Node* self = out.get();
  Node* px = logits.node().get();
  auto labs = labels;
  attach(out, {logits.node()}, [self, px, probs, labs, m, k, w] {
    double g = self->grad[0] * w;
    for (int i = 0; i < m; ++i) {
      const double* pi = probs->data() + static_cast<size_t>(i) * k;
      double* gi = px->grad.data() + static_cast<size_t>(i) * k;
      for (int j = 0; j < k; ++j) gi[j] += g * pi[j];
      gi[labs[static_cast<size_t>(i)]] -= g;
    }
  });
  return Tensor(out);
}

Tensor binary_ce(const Tensor& p, const std::vector<int>& y, Reduction r) {
  constexpr double kClamp = 1e-12;
  size_t n = p.data().size();
  if (y.size() != n) {
    throw std::invalid_argument("binary_ce: " + std::to_string(y.size()) + " labels for " +
                                std::to_string(n) + " probabilities");
  }
  for (int lab : y) {
    if (lab != 0 && lab != 1) {
      throw std::invalid_argument("binary_ce: label " + std::to_string(lab) + " not in {0,1}");
    }
  }
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double pc = std::clamp(p.data()[i], kClamp, 1.0 - kClamp);
    total -= y[i] ? std::log(pc) : std::log(1.0 - pc);
  }
  double w = r == Reduction::mean ? 1.0 / static_cast<double>(n) : 1.0;
  auto out = alloc({1});
  out->value[0] = total * w;
  Node* self = out.get();
  Node* px = p.node().get();
  auto labs = y;
  attach(out, {p.node()}, [self, px, labs, n, w] {
    double g = self->grad[0] * w;
    for (size_t i = 0; i < n; ++i) {
      double pv = px->value[i];
      if (pv <= kClamp || pv >= 1.0 - kClamp) continue;  // clamped region, flat
      px->grad[i] += g * (labs[i] ? -1.0 / pv : 1.0 / (1.0 - pv));
    }
  });
  return Tensor(out);
}

Tensor l2_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("l2_loss shape mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  size_t n = a.data().size();
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double d = a.data()[i] - b.data()[i];
    total += d * d;
  }
  auto out = alloc({1});
  out->value[0] = total;
  Node* self = out.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  attach(out, {a.node(), b.node()}, [self, pa, pb, n] {
    double g = self->grad[0];
    for (size_t i = 0; i < n; ++i) {
      double d = 2.0 * (pa->value[i] - pb->value[i]) * g;
      if (pa->requires_grad) pa->grad[i] += d;
      if (pb->requires_grad) pb->grad[i] -= d;
    }
  });
  return Tensor(out);
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  require_2d(x, "gather_rows");
  int m = x.dim(0), n = x.dim(1);
  for (int r : rows) {
    if (r < 0 || r >= m) {
      throw std::out_of_range("gather_rows: row " + std::to_string(r) + " outside [0," +
                              std::to_string(m) + ")");
    }
  }
  auto out = alloc({static_cast<int>(rows.size()), n});
  for (size_t i = 0; i < rows.size(); ++i) {
    const double* src = x.data().data() + static_cast<size_t>(rows[i]) * n;
    std::copy(src, src + n, out->value.data() + i * static_cast<size_t>(n));
  }
  Node* self = out.get();
  Node* px = x.node().get();
  auto idx = rows;
  attach(out, {x.node()}, [self, px, idx, n] {
    for (size_t i = 0; i < idx.size(); ++i) {
      double* dst = px->grad.data() + static_cast<size_t>(idx[i]) * n;
      const double* src = self->grad.data() + i * static_cast<size_t>(n);
      for (int j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
  return Tensor(out);
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  return gather_rows(table, ids);
}

Tensor slice_cols(const Tensor& x, int start, int width) {
  require_2d(x, "slice_cols");
  int m = x.dim(0), n = x.dim(1);
  if (start < 0 || width <= 0 || start + width > n) {
    throw std::invalid_argument("slice_cols: [" + std::to_string(start) + "," +
                                std::to_string(start + width) + ") outside width " +
                                std::to_string(n));
  }
  auto out = alloc({m, width});
  for (int i = 0; i < m; ++i) {
    const double* src = x.data().data() + static_cast<size_t>(i) * n + start;
    std::copy(src, src + width, out->value.data() + static_cast<size_t>(i) * width);
  }
  Node* self = out.get();
  Node* px = x.node().get();
  attach(out, {x.node()}, [self, px, m, n, start, width] {
    for (int i = 0; i < m; ++i) {
      double* dst = px->grad.data() + static_cast<size_t>(i) * n + start;
      const double* src = self->grad.data() + static_cast<size_t>(i) * width;
      for (int j = 0; j < width; ++j) dst[j] += src[j];
    }
  });
  return Tensor(out);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  int n = parts[0].dim(1);
  int m = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.dim(1) != n) {
      throw std::invalid_argument("concat_rows: column mismatch " + shape_str(p.shape()));
    }
    m += p.dim(0);
  }
  auto out = alloc({m, n});
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out->value.begin() + static_cast<long>(off));
    off += p.data().size();
  }
  Node* self = out.get();
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<Node*> raw;
  for (const auto& p : parts) {
    parents.push_back(p.node());
    raw.push_back(p.node().get());
  }
  attach(out, std::move(parents), [self, raw] {
    size_t off = 0;
    for (Node* p : raw) {
      if (p->requires_grad)
        for (size_t i = 0; i < p->value.size(); ++i) p->grad[i] += self->grad[off + i];
      off += p->value.size();
    }
  });
  return Tensor(out);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  int m = parts[0].dim(0);
  int n = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.dim(0) != m) {
      throw std::invalid_argument("concat_cols: row mismatch " + shape_str(p.shape()));
    }
    n += p.dim(1);
  }
  auto out = alloc({m, n});
  int col = 0;
  for (const auto& p : parts) {
    int w = p.dim(1);
    for (int i = 0; i < m; ++i) {
      std::copy(p.data().begin() + static_cast<size_t>(i) * w,
                p.data().begin() + static_cast<size_t>(i + 1) * w,
                out->value.begin() + static_cast<size_t>(i) * n + col);
    }
    col += w;
  }
  Node* self = out.get();
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<Node*> raw;
  for (const auto& p : parts) {
    parents.push_back(p.node());
    raw.push_back(p.node().get());
  }
  attach(out, std::move(parents), [self, raw, m, n] {
    int col = 0;
    for (Node* p : raw) {
      int w = p->shape[1];
      if (p->requires_grad) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            p->grad[static_cast<size_t>(i) * w + j] +=
                self->grad[static_cast<size_t>(i) * n + col + j];
      }
      col += w;
    }
  });
  return Tensor(out);
}

Tensor sum(const Tensor& x) {
  auto out = alloc({1});
  for (double v : x.data()) out->value[0] += v;
  Node* self = out.get();
  Node* px = x.node().get();
  attach(out, {x.node()}, [self, px] {
    for (double& g : px->grad) g += self->grad[0];
  });
  return Tensor(out);
}

Tensor mean(const Tensor& x) {
  auto out = alloc({1});
  for (double v : x.data()) out->value[0] += v;
  double inv = 1.0 / static_cast<double>(x.numel());
  out->value[0] *= inv;
  Node* self = out.get();
  Node* px = x.node().get();
  attach(out, {x.node()}, [self, px, inv] {
    for (double& g : px->grad) g += self->grad[0] * inv;
  });
  return Tensor(out);
}

Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("dropout: p=" + std::to_string(p) + " outside [0,1)");
  }
  if (mode == Mode::eval || p == 0.0) return x;
  auto mask = std::make_shared<std::vector<double>>(x.data().size());
  double keep_scale = 1.0 / (1.0 - p);
  for (double& m : *mask) m = rng.uniform() >= p ? keep_scale : 0.0;
  auto out = alloc(x.shape());
  size_t n = out->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = x.data()[i] * (*mask)[i];
  Node* self = out.get();
  Node* px = x.node().get();
  attach(out, {x.node()}, [self, px, mask, n] {
    for (size_t i = 0; i < n; ++i) px->grad[i] += self->grad[i] * (*mask)[i];
  });
  return Tensor(out);
}

}  // namespace ops
}  // namespace vlpre
