// SPDX-License-Identifier: Apache-2.0
#include "tiue/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>

namespace tiue {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

std::string kind_prefix(const char* kind) { return std::string(kind) + ": "; }

template <class T>
Var<T> make(const char* kind, Tensor<T> out, std::vector<Var<T>> inputs, typename Tape<T>::BackwardFn fn) {
  Tape<T>* tape = common_tape<T>(inputs);
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  return tape->record(kind, std::move(out), std::move(inputs), std::move(fn));
}

template <class T>
void expect_rank(const Var<T>& v, std::size_t rank, const char* kind) {
  if (!v.defined() || v.value().rank() != rank)
    fail(ErrorCode::ShapeMismatch, kind_prefix(kind) + "expected rank " + std::to_string(rank) +
                                       (v.defined() ? ", got " + shape_str(v.shape()) : ", got undefined"));
}

template <class T>
void expect_same(const Var<T>& a, const Var<T>& b, const char* kind) {
  if (a.shape() != b.shape())
    fail(ErrorCode::ShapeMismatch, kind_prefix(kind) + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

struct ConvGeom {
  std::int64_t B, Ci, H, W, Co, k, pad, Ho, Wo;
  std::int64_t ck() const { return Ci * k * k; }
  std::int64_t hw() const { return Ho * Wo; }
  std::int64_t n() const { return B * Ho * Wo; }
};

template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::int64_t n = g.n();
  for (std::int64_t ci = 0; ci < g.Ci; ++ci)
    for (std::int64_t ky = 0; ky < g.k; ++ky)
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((ci * g.k + ky) * g.k + kx) * n;
        for (std::int64_t b = 0; b < g.B; ++b) {
          const T* plane = x + (b * g.Ci + ci) * g.H * g.W;
          for (std::int64_t oy = 0; oy < g.Ho; ++oy) {
            T* dst = row + (b * g.Ho + oy) * g.Wo;
            const std::int64_t iy = oy + ky - g.pad;
            if (iy < 0 || iy >= g.H) {
              std::fill(dst, dst + g.Wo, T(0));
              continue;
            }
            const T* src = plane + iy * g.W;
            for (std::int64_t ox = 0; ox < g.Wo; ++ox) {
              const std::int64_t ix = ox + kx - g.pad;
              dst[ox] = (ix >= 0 && ix < g.W) ? src[ix] : T(0);
            }
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx) {
  const std::int64_t n = g.n();
  for (std::int64_t ci = 0; ci < g.Ci; ++ci)
    for (std::int64_t ky = 0; ky < g.k; ++ky)
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((ci * g.k + ky) * g.k + kx) * n;
        for (std::int64_t b = 0; b < g.B; ++b) {
          T* plane = dx + (b * g.Ci + ci) * g.H * g.W;
          for (std::int64_t oy = 0; oy < g.Ho; ++oy) {
            const std::int64_t iy = oy + ky - g.pad;
            if (iy < 0 || iy >= g.H) continue;
            const T* src = row + (b * g.Ho + oy) * g.Wo;
            T* dst = plane + iy * g.W;
            for (std::int64_t ox = 0; ox < g.Wo; ++ox) {
              const std::int64_t ix = ox + kx - g.pad;
              if (ix >= 0 && ix < g.W) dst[ix] += src[ox];
            }
          }
        }
      }
}

template <class T>
double accumulate(const T* p, std::int64_t n) {
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += static_cast<double>(p[i]);
  return s;
}

template <class T, class F, class D>
Var<T> unary(const char* kind, const Var<T>& x, F f, D dydx) {
  Tensor<T> out(x.shape());
  const T* in = x.value().data();
  T* o = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) o[i] = f(in[i]);
  return make<T>(kind, std::move(out), {x}, [x, dydx](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    T* dx = gin[0]->data();
    const T* xv = x.value().data();
    for (std::int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * dydx(xv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------- Gradients

template <class T>
Tensor<T> Gradients<T>::of(const Var<T>& v) const {
  if (reached(v)) return grads_[static_cast<std::size_t>(v.node())];
  return Tensor<T>(v.shape());
}

template <class T>
bool Gradients<T>::reached(const Var<T>& v) const {
  if (!v.requires_grad()) return false;
  const auto id = static_cast<std::size_t>(v.node());
  return id < grads_.size() && !grads_[id].empty() && grads_[id].shape() == v.shape();
}

// ---------------------------------------------------------------- Tape

template <class T>
Tape<T>* common_tape(std::span<const Var<T>> vars) {
  Tape<T>* tape = nullptr;
  for (const auto& v : vars) {
    if (!v.requires_grad()) continue;
    if (tape != nullptr && v.tape() != tape) fail(ErrorCode::InvalidAttr, "inputs recorded on different tapes");
    tape = v.tape();
  }
  return tape;
}

template <class T>
Var<T> Tape<T>::leaf(const Tensor<T>& t) {
  auto ptr = std::shared_ptr<const Tensor<T>>(std::shared_ptr<void>{}, &t);
  nodes_.push_back(Node{"leaf", ptr, {}, {}});
  return Var<T>(std::move(ptr), this, static_cast<int>(nodes_.size() - 1));
}

template <class T>
Var<T> Tape<T>::leaf_owned(Tensor<T> t) {
  auto ptr = std::make_shared<const Tensor<T>>(std::move(t));
  nodes_.push_back(Node{"leaf", ptr, {}, {}});
  return Var<T>(std::move(ptr), this, static_cast<int>(nodes_.size() - 1));
}

template <class T>
Var<T> Tape<T>::record(const char* kind, Tensor<T> out, std::vector<Var<T>> inputs, BackwardFn fn) {
  Node node{kind, std::make_shared<const Tensor<T>>(std::move(out)), {}, std::move(fn)};
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.requires_grad() && in.tape() != this) fail(ErrorCode::InvalidAttr, "input recorded on a different tape");
    node.inputs.push_back(in.requires_grad() ? in.node() : -1);
  }
  auto value = node.value;
  nodes_.push_back(std::move(node));
  return Var<T>(std::move(value), this, static_cast<int>(nodes_.size() - 1));
}

template <class T>
Gradients<T> Tape<T>::backward(const Var<T>& loss) {
  if (loss.numel() != 1) fail(ErrorCode::NotScalar, "loss has shape " + shape_str(loss.shape()));
  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const auto& n : nodes_) shapes.push_back(n.value->shape());
  std::vector<Tensor<T>> grads(nodes_.size());
  if (!loss.requires_grad()) return Gradients<T>(std::move(grads), std::move(shapes));
  if (loss.tape() != this) fail(ErrorCode::InvalidAttr, "loss recorded on a different tape");

  grads[static_cast<std::size_t>(loss.node())] = Tensor<T>(loss.shape(), T(1));
  std::vector<Tensor<T>*> gin;
  for (int i = loss.node(); i >= 0; --i) {
    auto& g = grads[static_cast<std::size_t>(i)];
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    if (g.empty() || !node.backward) continue;
    gin.assign(node.inputs.size(), nullptr);
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      const int id = node.inputs[j];
      if (id < 0) continue;
      auto& target = grads[static_cast<std::size_t>(id)];
      if (target.empty()) target = Tensor<T>(nodes_[static_cast<std::size_t>(id)].value->shape());
      gin[j] = &target;
    }
    node.backward(g, gin);
    g = Tensor<T>();
  }
  return Gradients<T>(std::move(grads), std::move(shapes));
}

// ---------------------------------------------------------------- ops

namespace ops {

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int padding) {
  expect_rank(x, 4, "conv2d");
  expect_rank(w, 4, "conv2d");
  if (w.dim(2) != w.dim(3)) fail(ErrorCode::InvalidAttr, "conv2d: kernel must be square");
  if (w.dim(1) != x.dim(1))
    fail(ErrorCode::ShapeMismatch, "conv2d: input channels " + std::to_string(x.dim(1)) + " vs weight " + shape_str(w.shape()));
  if (padding < 0) fail(ErrorCode::InvalidAttr, "conv2d: negative padding");
  ConvGeom geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), padding, 0, 0};
  geo.Ho = geo.H + 2 * geo.pad - geo.k + 1;
  geo.Wo = geo.W + 2 * geo.pad - geo.k + 1;
  if (geo.Ho <= 0 || geo.Wo <= 0) fail(ErrorCode::ShapeMismatch, "conv2d: kernel larger than padded input");
  if (b.defined() && (b.value().rank() != 1 || b.dim(0) != geo.Co))
    fail(ErrorCode::ShapeMismatch, "conv2d: bias shape " + shape_str(b.shape()));

  // One GEMM per sample with fixed extents, so a sample's output never depends on batch size.
  ConvGeom one = geo;
  one.B = 1;
  const std::int64_t hw = geo.hw(), in_per = geo.Ci * geo.H * geo.W;
  std::vector<T> cols(static_cast<std::size_t>(one.ck() * one.n()));
  RowMat<T> out_mat(geo.Co, hw);
  Tensor<T> out(Shape{geo.B, geo.Co, geo.Ho, geo.Wo});
  for (std::int64_t bi = 0; bi < geo.B; ++bi) {
    im2col(x.value().data() + bi * in_per, one, cols.data());
    out_mat.noalias() = CMapMat<T>(w.value().data(), geo.Co, geo.ck()) * CMapMat<T>(cols.data(), geo.ck(), hw);
    for (std::int64_t co = 0; co < geo.Co; ++co) {
      const T bias = b.defined() ? b.value()[co] : T(0);
      const T* src = out_mat.data() + co * hw;
      T* dst = out.data() + (bi * geo.Co + co) * hw;
      for (std::int64_t p = 0; p < hw; ++p) dst[p] = src[p] + bias;
    }
  }

  std::vector<Var<T>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make<T>("conv2d", std::move(out), std::move(inputs), [x, w, geo](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    const std::int64_t hw = geo.hw(), n = geo.n();
    RowMat<T> gmat(geo.Co, n);
    for (std::int64_t bi = 0; bi < geo.B; ++bi)
      for (std::int64_t co = 0; co < geo.Co; ++co)
        std::memcpy(gmat.data() + co * n + bi * hw, g.data() + (bi * geo.Co + co) * hw, sizeof(T) * static_cast<std::size_t>(hw));
    if (gin.size() > 2 && gin[2] != nullptr) {
      T* db = gin[2]->data();
      for (std::int64_t co = 0; co < geo.Co; ++co) db[co] += static_cast<T>(accumulate(gmat.data() + co * n, n));
    }
    if (gin[1] != nullptr) {
      std::vector<T> cols(static_cast<std::size_t>(geo.ck() * n));
      im2col(x.value().data(), geo, cols.data());
      MapMat<T>(gin[1]->data(), geo.Co, geo.ck()).noalias() += gmat * CMapMat<T>(cols.data(), geo.ck(), n).transpose();
    }
    if (gin[0] != nullptr) {
      RowMat<T> dcols(geo.ck(), n);
      dcols.noalias() = CMapMat<T>(w.value().data(), geo.Co, geo.ck()).transpose() * gmat;
      col2im_add(dcols.data(), geo, gin[0]->data());
    }
  });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  expect_rank(x, 2, "linear");
  expect_rank(w, 2, "linear");
  if (x.dim(1) != w.dim(1)) fail(ErrorCode::ShapeMismatch, "linear: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  const std::int64_t B = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (b.defined() && (b.value().rank() != 1 || b.dim(0) != out_dim))
    fail(ErrorCode::ShapeMismatch, "linear: bias shape " + shape_str(b.shape()));
  Tensor<T> out(Shape{B, out_dim});
  MapMat<T> o(out.data(), B, out_dim);
  // Row at a time for the same batch-size independence as conv2d.
  for (std::int64_t i = 0; i < B; ++i)
    o.row(i).noalias() = CMapMat<T>(x.value().data() + i * in, 1, in) * CMapMat<T>(w.value().data(), out_dim, in).transpose();
  if (b.defined())
    for (std::int64_t i = 0; i < B; ++i)
      for (std::int64_t j = 0; j < out_dim; ++j) o(i, j) += b.value()[j];
  std::vector<Var<T>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make<T>("linear", std::move(out), std::move(inputs), [x, w, B, in, out_dim](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    CMapMat<T> gm(g.data(), B, out_dim);
    if (gin[0] != nullptr) MapMat<T>(gin[0]->data(), B, in).noalias() += gm * CMapMat<T>(w.value().data(), out_dim, in);
    if (gin[1] != nullptr) MapMat<T>(gin[1]->data(), out_dim, in).noalias() += gm.transpose() * CMapMat<T>(x.value().data(), B, in);
    if (gin.size() > 2 && gin[2] != nullptr)
      for (std::int64_t j = 0; j < out_dim; ++j) {
        double s = 0.0;
        for (std::int64_t i = 0; i < B; ++i) s += static_cast<double>(gm(i, j));
        (*gin[2])[j] += static_cast<T>(s);
      }
  });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  expect_rank(a, 2, "matmul");
  expect_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) fail(ErrorCode::ShapeMismatch, "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  MapMat<T>(out.data(), m, n).noalias() = CMapMat<T>(a.value().data(), m, k) * CMapMat<T>(b.value().data(), k, n);
  return make<T>("matmul", std::move(out), {a, b}, [a, b, m, k, n](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    CMapMat<T> gm(g.data(), m, n);
    if (gin[0] != nullptr) MapMat<T>(gin[0]->data(), m, k).noalias() += gm * CMapMat<T>(b.value().data(), k, n).transpose();
    if (gin[1] != nullptr) MapMat<T>(gin[1]->data(), k, n).noalias() += CMapMat<T>(a.value().data(), m, k).transpose() * gm;
  });
}

template <class T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups, double eps) {
  expect_rank(x, 4, "group_norm");
  const std::int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (groups <= 0 || C % groups != 0)
    fail(ErrorCode::InvalidAttr, "group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(C) + " channels");
  if (gamma.value().rank() != 1 || gamma.dim(0) != C || beta.value().rank() != 1 || beta.dim(0) != C)
    fail(ErrorCode::ShapeMismatch, "group_norm: affine parameters must have shape (C)");
  const std::int64_t cpg = C / groups, n = cpg * HW;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<Tensor<T>>(x.shape());
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B * groups));
  for (std::int64_t bi = 0; bi < B; ++bi)
    for (std::int64_t gi = 0; gi < groups; ++gi) {
      const std::int64_t off = (bi * C + gi * cpg) * HW;
      const T* xp = x.value().data() + off;
      const double mu = accumulate(xp, n) / static_cast<double>(n);
      double var = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(xp[i]) - mu;
        var += d * d;
      }
      var /= static_cast<double>(n);
      const double rs = 1.0 / std::sqrt(var + eps);
      (*rstd)[static_cast<std::size_t>(bi * groups + gi)] = rs;
      for (std::int64_t c = 0; c < cpg; ++c) {
        const std::int64_t ch = gi * cpg + c;
        const T ga = gamma.value()[ch], be = beta.value()[ch];
        for (std::int64_t p = 0; p < HW; ++p) {
          const std::int64_t idx = off + c * HW + p;
          const T xh = static_cast<T>((static_cast<double>(x.value()[idx]) - mu) * rs);
          (*xhat)[idx] = xh;
          out[idx] = xh * ga + be;
        }
      }
    }
  return make<T>("group_norm", std::move(out), {x, gamma, beta},
                 [gamma, xhat, rstd, B, C, HW, groups, cpg, n](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                   for (std::int64_t bi = 0; bi < B; ++bi)
                     for (std::int64_t gi = 0; gi < groups; ++gi) {
                       const std::int64_t off = (bi * C + gi * cpg) * HW;
                       double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                       for (std::int64_t c = 0; c < cpg; ++c) {
                         const std::int64_t ch = gi * cpg + c;
                         const double ga = gamma.value()[ch];
                         double dga = 0.0, dbe = 0.0;
                         for (std::int64_t p = 0; p < HW; ++p) {
                           const std::int64_t idx = off + c * HW + p;
                           const double gv = g[idx], xh = (*xhat)[idx];
                           dga += gv * xh;
                           dbe += gv;
                           sum_dxh += gv * ga;
                           sum_dxh_xh += gv * ga * xh;
                         }
                         if (gin[1] != nullptr) (*gin[1])[ch] += static_cast<T>(dga);
                         if (gin[2] != nullptr) (*gin[2])[ch] += static_cast<T>(dbe);
                       }
                       if (gin[0] == nullptr) continue;
                       const double rs = (*rstd)[static_cast<std::size_t>(bi * groups + gi)];
                       const double inv_n = 1.0 / static_cast<double>(n);
                       for (std::int64_t c = 0; c < cpg; ++c) {
                         const double ga = gamma.value()[gi * cpg + c];
                         for (std::int64_t p = 0; p < HW; ++p) {
                           const std::int64_t idx = off + c * HW + p;
                           const double dxh = static_cast<double>(g[idx]) * ga;
                           const double xh = (*xhat)[idx];
                           (*gin[0])[idx] += static_cast<T>(rs * (dxh - inv_n * sum_dxh - xh * inv_n * sum_dxh_xh));
                         }
                       }
                     }
                 });
}

template <class T>
Var<T> silu(const Var<T>& x) {
  return unary(
      "silu", x, [](T v) { return static_cast<T>(v / (T(1) + std::exp(-v))); },
      [](T v) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <class T>
Var<T> square(const Var<T>& x) {
  return unary("square", x, [](T v) { return v * v; }, [](T v) { return T(2) * v; });
}

template <class T>
Var<T> log(const Var<T>& x) {
  return unary("log", x, [](T v) { return std::log(v); }, [](T v) { return T(1) / v; });
}

template <class T>
Var<T> clamp_min(const Var<T>& x, double lo) {
  const T l = static_cast<T>(lo);
  return unary("clamp_min", x, [l](T v) { return v < l ? l : v; }, [l](T v) { return v < l ? T(0) : T(1); });
}

template <class T>
Var<T> mul_scalar(const Var<T>& x, double s) {
  const T c = static_cast<T>(s);
  return unary("mul_scalar", x, [c](T v) { return v * c; }, [c](T) { return c; });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, double s) {
  const T c = static_cast<T>(s);
  return unary("add_scalar", x, [c](T v) { return v + c; }, [](T) { return T(1); });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  expect_same(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make<T>("add", std::move(out), {a, b}, [](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    for (auto* d : gin)
      if (d != nullptr)
        for (std::int64_t i = 0; i < g.numel(); ++i) (*d)[i] += g[i];
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  expect_same(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make<T>("sub", std::move(out), {a, b}, [](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (gin[0] != nullptr)
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += g[i];
    if (gin[1] != nullptr)
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gin[1])[i] -= g[i];
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  expect_same(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make<T>("mul", std::move(out), {a, b}, [a, b](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    if (gin[0] != nullptr)
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += g[i] * b.value()[i];
    if (gin[1] != nullptr)
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gin[1])[i] += g[i] * a.value()[i];
  });
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  expect_rank(a, 4, "concat_channels");
  expect_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    fail(ErrorCode::ShapeMismatch, "concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::int64_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  Tensor<T> out(Shape{B, Ca + Cb, a.dim(2), a.dim(3)});
  for (std::int64_t bi = 0; bi < B; ++bi) {
    std::memcpy(out.data() + bi * (Ca + Cb) * HW, a.value().data() + bi * Ca * HW, sizeof(T) * static_cast<std::size_t>(Ca * HW));
    std::memcpy(out.data() + (bi * (Ca + Cb) + Ca) * HW, b.value().data() + bi * Cb * HW, sizeof(T) * static_cast<std::size_t>(Cb * HW));
  }
  return make<T>("concat_channels", std::move(out), {a, b}, [B, Ca, Cb, HW](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    for (std::int64_t bi = 0; bi < B; ++bi) {
      if (gin[0] != nullptr) {
        const T* src = g.data() + bi * (Ca + Cb) * HW;
        T* dst = gin[0]->data() + bi * Ca * HW;
        for (std::int64_t i = 0; i < Ca * HW; ++i) dst[i] += src[i];
      }
      if (gin[1] != nullptr) {
        const T* src = g.data() + (bi * (Ca + Cb) + Ca) * HW;
        T* dst = gin[1]->data() + bi * Cb * HW;
        for (std::int64_t i = 0; i < Cb * HW; ++i) dst[i] += src[i];
      }
    }
  });
}

template <class T>
Var<T> avg_pool2(const Var<T>& x) {
  expect_rank(x, 4, "avg_pool2");
  const std::int64_t BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) fail(ErrorCode::ShapeMismatch, "avg_pool2: odd spatial extent " + shape_str(x.shape()));
  const std::int64_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out(Shape{x.dim(0), x.dim(1), Ho, Wo});
  const T* in = x.value().data();
  for (std::int64_t p = 0; p < BC; ++p)
    for (std::int64_t oy = 0; oy < Ho; ++oy)
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        const T* s = in + (p * H + 2 * oy) * W + 2 * ox;
        out[(p * Ho + oy) * Wo + ox] = (s[0] + s[1] + s[W] + s[W + 1]) * T(0.25);
      }
  return make<T>("avg_pool2", std::move(out), {x}, [BC, H, W, Ho, Wo](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    T* dx = gin[0]->data();
    for (std::int64_t p = 0; p < BC; ++p)
      for (std::int64_t oy = 0; oy < Ho; ++oy)
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          const T v = g[(p * Ho + oy) * Wo + ox] * T(0.25);
          T* d = dx + (p * H + 2 * oy) * W + 2 * ox;
          d[0] += v;
          d[1] += v;
          d[W] += v;
          d[W + 1] += v;
        }
  });
}

template <class T>
Var<T> upsample_nearest2(const Var<T>& x) {
  expect_rank(x, 4, "upsample_nearest2");
  const std::int64_t BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Ho = 2 * H, Wo = 2 * W;
  Tensor<T> out(Shape{x.dim(0), x.dim(1), Ho, Wo});
  const T* in = x.value().data();
  for (std::int64_t p = 0; p < BC; ++p)
    for (std::int64_t oy = 0; oy < Ho; ++oy)
      for (std::int64_t ox = 0; ox < Wo; ++ox) out[(p * Ho + oy) * Wo + ox] = in[(p * H + oy / 2) * W + ox / 2];
  return make<T>("upsample_nearest2", std::move(out), {x}, [BC, H, W, Ho, Wo](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    T* dx = gin[0]->data();
    for (std::int64_t p = 0; p < BC; ++p)
      for (std::int64_t oy = 0; oy < Ho; ++oy)
        for (std::int64_t ox = 0; ox < Wo; ++ox) dx[(p * H + oy / 2) * W + ox / 2] += g[(p * Ho + oy) * Wo + ox];
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  Tensor<T> out(Shape{1});
  out[0] = static_cast<T>(accumulate(x.value().data(), x.numel()));
  return make<T>("sum", std::move(out), {x}, [](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    const T v = g[0];
    for (auto& d : gin[0]->values()) d += v;
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  const auto n = x.numel();
  Tensor<T> out(Shape{1});
  out[0] = static_cast<T>(accumulate(x.value().data(), n) / static_cast<double>(n));
  return make<T>("mean", std::move(out), {x}, [n](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    const T v = static_cast<T>(static_cast<double>(g[0]) / static_cast<double>(n));
    for (auto& d : gin[0]->values()) d += v;
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    fail(ErrorCode::ShapeMismatch, "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make<T>("reshape", std::move(out), {x}, [](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    T* d = gin[0]->data();
    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
  });
}

template <class T>
Var<T> film(const Var<T>& x, const Var<T>& ss) {
  expect_rank(x, 4, "film");
  expect_rank(ss, 2, "film");
  const std::int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (ss.dim(0) != B || ss.dim(1) != 2 * C)
    fail(ErrorCode::ShapeMismatch, "film: modulation " + shape_str(ss.shape()) + " for " + shape_str(x.shape()));
  Tensor<T> out(x.shape());
  for (std::int64_t bi = 0; bi < B; ++bi)
    for (std::int64_t c = 0; c < C; ++c) {
      const T scale = T(1) + ss.value()[bi * 2 * C + c];
      const T shift = ss.value()[bi * 2 * C + C + c];
      const T* src = x.value().data() + (bi * C + c) * HW;
      T* dst = out.data() + (bi * C + c) * HW;
      for (std::int64_t p = 0; p < HW; ++p) dst[p] = src[p] * scale + shift;
    }
  return make<T>("film", std::move(out), {x, ss}, [x, ss, B, C, HW](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    for (std::int64_t bi = 0; bi < B; ++bi)
      for (std::int64_t c = 0; c < C; ++c) {
        const std::int64_t off = (bi * C + c) * HW;
        if (gin[0] != nullptr) {
          const T scale = T(1) + ss.value()[bi * 2 * C + c];
          for (std::int64_t p = 0; p < HW; ++p) (*gin[0])[off + p] += g[off + p] * scale;
        }
        if (gin[1] != nullptr) {
          double ds = 0.0, dsh = 0.0;
          for (std::int64_t p = 0; p < HW; ++p) {
            ds += static_cast<double>(g[off + p]) * static_cast<double>(x.value()[off + p]);
            dsh += static_cast<double>(g[off + p]);
          }
          (*gin[1])[bi * 2 * C + c] += static_cast<T>(ds);
          (*gin[1])[bi * 2 * C + C + c] += static_cast<T>(dsh);
        }
      }
  });
}

template <class T>
Var<T> row_mean(const Var<T>& x) {
  const std::int64_t B = x.dim(0), n = x.numel() / B;
  Tensor<T> out(Shape{B});
  for (std::int64_t bi = 0; bi < B; ++bi) out[bi] = static_cast<T>(accumulate(x.value().data() + bi * n, n) / static_cast<double>(n));
  return make<T>("row_mean", std::move(out), {x}, [B, n](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    for (std::int64_t bi = 0; bi < B; ++bi) {
      const T v = static_cast<T>(static_cast<double>(g[bi]) / static_cast<double>(n));
      T* d = gin[0]->data() + bi * n;
      for (std::int64_t i = 0; i < n; ++i) d[i] += v;
    }
  });
}

template <class T>
Var<T> row_var(const Var<T>& x) {
  const std::int64_t B = x.dim(0), n = x.numel() / B;
  Tensor<T> out(Shape{B});
  auto means = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B));
  for (std::int64_t bi = 0; bi < B; ++bi) {
    const T* p = x.value().data() + bi * n;
    const double mu = accumulate(p, n) / static_cast<double>(n);
    double v = 0.0;
    for (std::int64_t i = 0; i < n; ++i) v += (static_cast<double>(p[i]) - mu) * (static_cast<double>(p[i]) - mu);
    (*means)[static_cast<std::size_t>(bi)] = mu;
    out[bi] = static_cast<T>(v / static_cast<double>(n));
  }
  return make<T>("row_var", std::move(out), {x}, [x, means, B, n](const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
    for (std::int64_t bi = 0; bi < B; ++bi) {
      const double mu = (*means)[static_cast<std::size_t>(bi)];
      const double c = 2.0 * static_cast<double>(g[bi]) / static_cast<double>(n);
      const T* p = x.value().data() + bi * n;
      T* d = gin[0]->data() + bi * n;
      for (std::int64_t i = 0; i < n; ++i) d[i] += static_cast<T>(c * (static_cast<double>(p[i]) - mu));
    }
  });
}

}  // namespace ops

const char* primitive_name(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Conv2d: return "conv2d";
    case PrimitiveKind::Linear: return "linear";
    case PrimitiveKind::Matmul: return "matmul";
    case PrimitiveKind::GroupNorm: return "group_norm";
    case PrimitiveKind::Silu: return "silu";
    case PrimitiveKind::Add: return "add";
    case PrimitiveKind::Sub: return "sub";
    case PrimitiveKind::Mul: return "mul";
    case PrimitiveKind::MulScalar: return "mul_scalar";
    case PrimitiveKind::AddScalar: return "add_scalar";
    case PrimitiveKind::Square: return "square";
    case PrimitiveKind::Log: return "log";
    case PrimitiveKind::ClampMin: return "clamp_min";
    case PrimitiveKind::ConcatChannels: return "concat_channels";
    case PrimitiveKind::AvgPool2: return "avg_pool2";
    case PrimitiveKind::UpsampleNearest2: return "upsample_nearest2";
    case PrimitiveKind::Sum: return "sum";
    case PrimitiveKind::Mean: return "mean";
    case PrimitiveKind::Reshape: return "reshape";
    case PrimitiveKind::Film: return "film";
    case PrimitiveKind::RowMean: return "row_mean";
    case PrimitiveKind::RowVar: return "row_var";
  }
  return "unknown";
}

template <class T>
Var<T> forward_primitive(PrimitiveKind kind, std::span<const Var<T>> in, const PrimitiveAttrs& attrs) {
  auto arg = [&](std::size_t i) -> const Var<T>& {
    if (i >= in.size()) fail(ErrorCode::InvalidAttr, std::string(primitive_name(kind)) + ": missing input " + std::to_string(i));
    return in[i];
  };
  auto opt = [&](std::size_t i) { return i < in.size() ? in[i] : Var<T>{}; };
  switch (kind) {
    case PrimitiveKind::Conv2d: return ops::conv2d(arg(0), arg(1), opt(2), attrs.padding);
    case PrimitiveKind::Linear: return ops::linear(arg(0), arg(1), opt(2));
    case PrimitiveKind::Matmul: return ops::matmul(arg(0), arg(1));
    case PrimitiveKind::GroupNorm: return ops::group_norm(arg(0), arg(1), arg(2), attrs.groups, attrs.eps);
    case PrimitiveKind::Silu: return ops::silu(arg(0));
    case PrimitiveKind::Add: return ops::add(arg(0), arg(1));
    case PrimitiveKind::Sub: return ops::sub(arg(0), arg(1));
    case PrimitiveKind::Mul: return ops::mul(arg(0), arg(1));
    case PrimitiveKind::MulScalar: return ops::mul_scalar(arg(0), attrs.scalar);
    case PrimitiveKind::AddScalar: return ops::add_scalar(arg(0), attrs.scalar);
    case PrimitiveKind::Square: return ops::square(arg(0));
    case PrimitiveKind::Log: return ops::log(arg(0));
    case PrimitiveKind::ClampMin: return ops::clamp_min(arg(0), attrs.scalar);
    case PrimitiveKind::ConcatChannels: return ops::concat_channels(arg(0), arg(1));
    case PrimitiveKind::AvgPool2: return ops::avg_pool2(arg(0));
    case PrimitiveKind::UpsampleNearest2: return ops::upsample_nearest2(arg(0));
    case PrimitiveKind::Sum: return ops::sum(arg(0));
    case PrimitiveKind::Mean: return ops::mean(arg(0));
    case PrimitiveKind::Reshape: return ops::reshape(arg(0), attrs.shape);
    case PrimitiveKind::Film: return ops::film(arg(0), arg(1));
    case PrimitiveKind::RowMean: return ops::row_mean(arg(0));
    case PrimitiveKind::RowVar: return ops::row_var(arg(0));
  }
  fail(ErrorCode::InvalidAttr, "unknown primitive");
}

#define TIUE_INSTANTIATE(T)                                                                                   \
  template class Gradients<T>;                                                                                \
  template class Tape<T>;                                                                                     \
  template Tape<T>* common_tape(std::span<const Var<T>>);                                                     \
  template Var<T> forward_primitive(PrimitiveKind, std::span<const Var<T>>, const PrimitiveAttrs&);           \
  namespace ops {                                                                                             \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int);                                   \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                        \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> group_norm(const Var<T>&, const Var<T>&, const Var<T>&, int, double);                       \
  template Var<T> silu(const Var<T>&);                                                                        \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> mul_scalar(const Var<T>&, double);                                                          \
  template Var<T> add_scalar(const Var<T>&, double);                                                          \
  template Var<T> square(const Var<T>&);                                                                      \
  template Var<T> log(const Var<T>&);                                                                         \
  template Var<T> clamp_min(const Var<T>&, double);                                                           \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                              \
  template Var<T> avg_pool2(const Var<T>&);                                                                   \
  template Var<T> upsample_nearest2(const Var<T>&);                                                           \
  template Var<T> sum(const Var<T>&);                                                                         \
  template Var<T> mean(const Var<T>&);                                                                        \
  template Var<T> reshape(const Var<T>&, Shape);                                                              \
  template Var<T> film(const Var<T>&, const Var<T>&);                                                         \
  template Var<T> row_mean(const Var<T>&);                                                                    \
  template Var<T> row_var(const Var<T>&);                                                                     \
  }

TIUE_INSTANTIATE(float)
TIUE_INSTANTIATE(double)

}  // namespace tiue
