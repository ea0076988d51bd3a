#include "nucleigan/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "nucleigan/errors.hpp"
#include "nucleigan/spectral_norm.hpp"

namespace nucleigan::ops {

namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<Mat<T>>;
template <class T>
using CMapMat = Eigen::Map<const Mat<T>>;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

/// dst = a * b, or dst += a * b. Vector-shaped and tiny products use a fixed
/// summation order; Eigen's matrix-vector kernels peel by pointer alignment.
template <class Dst, class A, class B>
void matmul(Dst& dst, const A& a, const B& b, bool accumulate) {
  if (dst.rows() != 1 && dst.cols() != 1 && dst.rows() + dst.cols() + a.cols() >= 20) {
    if (accumulate) dst.noalias() += a * b;
    else dst.noalias() = a * b;
    return;
  }
  if (!accumulate) dst.setZero();
  for (Eigen::Index i = 0; i < dst.rows(); ++i)
    for (Eigen::Index k = 0; k < a.cols(); ++k) {
      const auto aik = a(i, k);
      for (Eigen::Index j = 0; j < dst.cols(); ++j) dst(i, j) += aik * b(k, j);
    }
}

template <class T>
T ordered_sum(const T* p, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += p[i];
  return acc;
}

template <class T>
bool needs_graph(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (auto* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value = std::move(value);
  if (needs_graph<T>(inputs)) {
    node->requires_grad = true;
    for (auto* t : inputs)
      if (t->defined()) node->parents.push_back(t->node());
    node->backward_fn = std::move(backward);
  }
  return Tensor<T>(node);
}

template <class T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw ArgumentError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                        b.shape().str());
}


// Unfolds one image [C,H,W] into a [C*k*k, Ho*Wo] matrix.
template <class T>
void im2col(const T* img, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, T* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ki;
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = img + (static_cast<std::size_t>(c) * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into an image.
template <class T>
void col2im(const T* col, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, T* img) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= height) continue;
          T* dst = img + (static_cast<std::size_t>(c) * height + iy) * width;
          const T* src = row + oy * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a, b, "add");
  std::vector<T> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  auto* na = a.node().get();
  auto* nb = b.node().get();
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [na, nb](Node<T>& self) {
    for (auto* p : {na, nb}) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a, b, "sub");
  std::vector<T> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  auto* na = a.node().get();
  auto* nb = b.node().get();
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [na, nb](Node<T>& self) {
    if (na->requires_grad) {
      auto& g = na->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nb->requires_grad) {
      auto& g = nb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a, b, "mul");
  std::vector<T> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  auto* na = a.node().get();
  auto* nb = b.node().get();
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [na, nb](Node<T>& self) {
    if (na->requires_grad) {
      auto& g = na->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb->value[i];
    }
    if (nb->requires_grad) {
      auto& g = nb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na->value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * s;
  auto* na = a.node().get();
  return make_result<T>(a.shape(), std::move(out), {&a}, [na, s](Node<T>& self) {
    auto& g = na->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + s;
  auto* na = a.node().get();
  return make_result<T>(a.shape(), std::move(out), {&a}, [na](Node<T>& self) {
    auto& g = na->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  double acc = 0.0;
  for (auto v : a.data()) acc += v;
  auto* na = a.node().get();
  return make_result<T>(Shape{}, {static_cast<T>(acc)}, {&a}, [na](Node<T>& self) {
    auto& g = na->ensure_grad();
    const T go = self.grad[0];
    for (auto& v : g) v += go;
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  double acc = 0.0;
  for (auto v : a.data()) acc += v;
  const double n = static_cast<double>(a.numel());
  auto* na = a.node().get();
  return make_result<T>(Shape{}, {static_cast<T>(acc / n)}, {&a}, [na, n](Node<T>& self) {
    auto& g = na->ensure_grad();
    const T go = static_cast<T>(self.grad[0] / n);
    for (auto& v : g) v += go;
  });
}

template <class T>
Tensor<T> l1_mean(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a, b, "l1_mean");
  auto da = a.data(), db = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) acc += std::abs(static_cast<double>(da[i]) - db[i]);
  const double n = static_cast<double>(a.numel());
  auto* na = a.node().get();
  auto* nb = b.node().get();
  return make_result<T>(Shape{}, {static_cast<T>(acc / n)}, {&a, &b},
                        [na, nb, n](Node<T>& self) {
                          const T go = static_cast<T>(self.grad[0] / n);
                          for (std::size_t i = 0; i < na->value.size(); ++i) {
                            const T d = na->value[i] - nb->value[i];
                            const T s = d > T(0) ? go : (d < T(0) ? -go : T(0));
                            if (na->requires_grad) na->ensure_grad()[i] += s;
                            if (nb->requires_grad) nb->ensure_grad()[i] -= s;
                          }
                        });
}

template <class T>
Tensor<T> bce_with_logits_mean(const Tensor<T>& logits, T target) {
  auto dx = logits.data();
  double acc = 0.0;
  for (auto xv : dx) {
    const double x = xv;
    acc += std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::abs(x)));
  }
  const double n = static_cast<double>(logits.numel());
  auto* nx = logits.node().get();
  return make_result<T>(Shape{}, {static_cast<T>(acc / n)}, {&logits},
                        [nx, n, target](Node<T>& self) {
                          auto& g = nx->ensure_grad();
                          const double go = self.grad[0] / n;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const double x = nx->value[i];
                            const double sig = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                                      : std::exp(x) / (1.0 + std::exp(x));
                            g[i] += static_cast<T>(go * (sig - target));
                          }
                        });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  std::vector<T> out(x.numel());
  auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i] > T(0) ? d[i] : d[i] * slope;
  auto* nx = x.node().get();
  return make_result<T>(x.shape(), std::move(out), {&x}, [nx, slope](Node<T>& self) {
    auto& g = nx->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += nx->value[i] > T(0) ? self.grad[i] : self.grad[i] * slope;
  });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(d[i]);
  auto* nx = x.node().get();
  return make_result<T>(x.shape(), std::move(out), {&x}, [nx](Node<T>& self) {
    auto& g = nx->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * (T(1) - y * y);
    }
  });
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ArgumentError("concat_channels: incompatible " + sa.str() + " and " + sb.str());
  Shape so{sa.n, sa.c + sb.c, sa.h, sa.w};
  std::vector<T> out(so.numel());
  const std::size_t ca = sa.c * sa.plane(), cb = sb.c * sb.plane();
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a.data().data() + n * ca, ca, out.data() + n * (ca + cb));
    std::copy_n(b.data().data() + n * cb, cb, out.data() + n * (ca + cb) + ca);
  }
  auto* na = a.node().get();
  auto* nb = b.node().get();
  return make_result<T>(so, std::move(out), {&a, &b}, [na, nb, ca, cb, sa](Node<T>& self) {
    for (int n = 0; n < sa.n; ++n) {
      const T* g = self.grad.data() + n * (ca + cb);
      if (na->requires_grad) {
        T* dst = na->ensure_grad().data() + n * ca;
        for (std::size_t i = 0; i < ca; ++i) dst[i] += g[i];
      }
      if (nb->requires_grad) {
        T* dst = nb->ensure_grad().data() + n * cb;
        for (std::size_t i = 0; i < cb; ++i) dst[i] += g[ca + i];
      }
    }
  });
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int pad) {
  const Shape sx = x.shape(), sw = weight.shape();
  if (sw.c != sx.c || sw.h != sw.w)
    throw ArgumentError("conv2d: weight " + sw.str() + " incompatible with input " + sx.str());
  if (stride < 1 || pad < 0) throw ArgumentError("conv2d: invalid stride/pad");
  const int k = sw.h;
  const int out_h = (sx.h + 2 * pad - k) / stride + 1;
  const int out_w = (sx.w + 2 * pad - k) / stride + 1;
  if (out_h < 1 || out_w < 1 || sx.h + 2 * pad < k || sx.w + 2 * pad < k)
    throw ArgumentError("conv2d: input " + sx.str() + " too small for kernel");
  const int kdim = sx.c * k * k;
  const int plane = out_h * out_w;
  Shape so{sx.n, sw.n, out_h, out_w};
  std::vector<T> out(so.numel());

  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(sx.n) * kdim * plane);
  CMapMat<T> wmat(weight.data().data(), sw.n, kdim);
  for (int n = 0; n < sx.n; ++n) {
    T* col = cols->data() + static_cast<std::size_t>(n) * kdim * plane;
    im2col(x.data().data() + n * sx.c * sx.plane(), sx.c, sx.h, sx.w, k, stride, pad, out_h,
           out_w, col);
    MapMat<T> o(out.data() + static_cast<std::size_t>(n) * sw.n * plane, sw.n, plane);
    matmul(o, wmat, CMapMat<T>(col, kdim, plane), false);
    if (bias.defined()) {
      auto b = bias.data();
      for (int oc = 0; oc < sw.n; ++oc) o.row(oc).array() += b[oc];
    }
  }

  auto* nx = x.node().get();
  auto* nw = weight.node().get();
  auto* nb = bias.defined() ? bias.node().get() : nullptr;
  return make_result<T>(
      so, std::move(out), {&x, &weight, &bias},
      [nx, nw, nb, cols, sx, sw, k, stride, pad, out_h, out_w, kdim, plane](Node<T>& self) {
        CMapMat<T> wm(nw->value.data(), sw.n, kdim);
        std::vector<T> dcol;
        if (nx->requires_grad) dcol.resize(static_cast<std::size_t>(kdim) * plane);
        for (int n = 0; n < sx.n; ++n) {
          CMapMat<T> go(self.grad.data() + static_cast<std::size_t>(n) * sw.n * plane, sw.n,
                        plane);
          CMapMat<T> col(cols->data() + static_cast<std::size_t>(n) * kdim * plane, kdim, plane);
          if (nw->requires_grad) {
            MapMat<T> gw(nw->ensure_grad().data(), sw.n, kdim);
            matmul(gw, go, col.transpose(), true);
          }
          if (nb && nb->requires_grad) {
            auto& gb = nb->ensure_grad();
            for (int oc = 0; oc < sw.n; ++oc) gb[oc] += ordered_sum(go.data() + static_cast<std::size_t>(oc) * plane, plane);
          }
          if (nx->requires_grad) {
            MapMat<T> dc(dcol.data(), kdim, plane);
            matmul(dc, wm.transpose(), go, false);
            col2im(dcol.data(), sx.c, sx.h, sx.w, k, stride, pad, out_h, out_w,
                   nx->ensure_grad().data() + n * sx.c * sx.plane());
          }
        }
      });
}

template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           int stride, int pad, int output_pad) {
  const Shape sx = x.shape(), sw = weight.shape();
  if (sw.n != sx.c || sw.h != sw.w)
    throw ArgumentError("conv_transpose2d: weight " + sw.str() + " incompatible with input " +
                        sx.str());
  if (output_pad < 0 || output_pad >= stride)
    throw ArgumentError("conv_transpose2d: output_pad must be in [0, stride)");
  const int k = sw.h;
  const int cout = sw.c;
  const int out_h = (sx.h - 1) * stride - 2 * pad + k + output_pad;
  const int out_w = (sx.w - 1) * stride - 2 * pad + k + output_pad;
  if (out_h < 1 || out_w < 1) throw ArgumentError("conv_transpose2d: empty output");
  const int kdim = cout * k * k;
  const int plane_in = sx.h * sx.w;
  Shape so{sx.n, cout, out_h, out_w};
  std::vector<T> out(so.numel(), T(0));
  std::vector<T> col(static_cast<std::size_t>(kdim) * plane_in);
  CMapMat<T> wmat(weight.data().data(), sx.c, kdim);
  for (int n = 0; n < sx.n; ++n) {
    CMapMat<T> xin(x.data().data() + static_cast<std::size_t>(n) * sx.c * plane_in, sx.c,
                   plane_in);
    MapMat<T> cm(col.data(), kdim, plane_in);
    matmul(cm, wmat.transpose(), xin, false);
    T* o = out.data() + static_cast<std::size_t>(n) * so.c * so.plane();
    col2im(col.data(), cout, out_h, out_w, k, stride, pad, sx.h, sx.w, o);
    if (bias.defined()) {
      auto b = bias.data();
      for (int oc = 0; oc < cout; ++oc) {
        T* p = o + static_cast<std::size_t>(oc) * so.plane();
        for (std::size_t i = 0; i < so.plane(); ++i) p[i] += b[oc];
      }
    }
  }

  auto* nx = x.node().get();
  auto* nw = weight.node().get();
  auto* nb = bias.defined() ? bias.node().get() : nullptr;
  return make_result<T>(
      so, std::move(out), {&x, &weight, &bias},
      [nx, nw, nb, sx, so, k, stride, pad, kdim, plane_in](Node<T>& self) {
        std::vector<T> gcol(static_cast<std::size_t>(kdim) * plane_in);
        CMapMat<T> wm(nw->value.data(), sx.c, kdim);
        for (int n = 0; n < sx.n; ++n) {
          const T* go = self.grad.data() + static_cast<std::size_t>(n) * so.c * so.plane();
          if (nb && nb->requires_grad) {
            auto& gb = nb->ensure_grad();
            for (int oc = 0; oc < so.c; ++oc) {
              const T* p = go + static_cast<std::size_t>(oc) * so.plane();
              T acc = 0;
              for (std::size_t i = 0; i < so.plane(); ++i) acc += p[i];
              gb[oc] += acc;
            }
          }
          if (!nx->requires_grad && !nw->requires_grad) continue;
          im2col(go, so.c, so.h, so.w, k, stride, pad, sx.h, sx.w, gcol.data());
          CMapMat<T> gc(gcol.data(), kdim, plane_in);
          if (nx->requires_grad) {
            MapMat<T> gx(nx->ensure_grad().data() + static_cast<std::size_t>(n) * sx.c * plane_in,
                         sx.c, plane_in);
            matmul(gx, wm, gc, true);
          }
          if (nw->requires_grad) {
            CMapMat<T> xin(nx->value.data() + static_cast<std::size_t>(n) * sx.c * plane_in, sx.c,
                           plane_in);
            MapMat<T> gw(nw->ensure_grad().data(), sx.c, kdim);
            matmul(gw, xin, gc.transpose(), true);
          }
        }
      });
}

namespace {
inline int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}
}  // namespace

template <class T>
Tensor<T> reflection_pad(const Tensor<T>& x, int pad) {
  const Shape sx = x.shape();
  if (pad < 0 || pad >= sx.h || pad >= sx.w)
    throw ArgumentError("reflection_pad: pad must be smaller than the spatial extent");
  Shape so{sx.n, sx.c, sx.h + 2 * pad, sx.w + 2 * pad};
  std::vector<T> out(so.numel());
  auto in = x.data();
  const int planes = sx.n * sx.c;
  for (int p = 0; p < planes; ++p) {
    const T* src = in.data() + p * sx.plane();
    T* dst = out.data() + p * so.plane();
    for (int y = 0; y < so.h; ++y) {
      const int sy = reflect(y - pad, sx.h);
      for (int xx = 0; xx < so.w; ++xx) dst[y * so.w + xx] = src[sy * sx.w + reflect(xx - pad, sx.w)];
    }
  }
  auto* nx = x.node().get();
  return make_result<T>(so, std::move(out), {&x}, [nx, sx, so, pad, planes](Node<T>& self) {
    auto& g = nx->ensure_grad();
    for (int p = 0; p < planes; ++p) {
      const T* src = self.grad.data() + p * so.plane();
      T* dst = g.data() + p * sx.plane();
      for (int y = 0; y < so.h; ++y) {
        const int sy = reflect(y - pad, sx.h);
        for (int xx = 0; xx < so.w; ++xx) dst[sy * sx.w + reflect(xx - pad, sx.w)] += src[y * so.w + xx];
      }
    }
  });
}

template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps) {
  const Shape sx = x.shape();
  const std::size_t plane = sx.plane();
  const int planes = sx.n * sx.c;
  std::vector<T> out(sx.numel());
  auto inv_std = std::make_shared<std::vector<T>>(planes);
  auto in = x.data();
  for (int p = 0; p < planes; ++p) {
    const T* src = in.data() + p * plane;
    double m = 0.0;
    for (std::size_t i = 0; i < plane; ++i) m += src[i];
    m /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) var += (src[i] - m) * (src[i] - m);
    var /= static_cast<double>(plane);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[p] = static_cast<T>(is);
    T* dst = out.data() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>((src[i] - m) * is);
  }
  auto* nx = x.node().get();
  return make_result<T>(sx, std::move(out), {&x}, [nx, inv_std, plane, planes](Node<T>& self) {
    auto& g = nx->ensure_grad();
    for (int p = 0; p < planes; ++p) {
      const T* gy = self.grad.data() + p * plane;
      const T* y = self.value.data() + p * plane;
      double mg = 0.0, mgy = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        mg += gy[i];
        mgy += static_cast<double>(gy[i]) * y[i];
      }
      mg /= static_cast<double>(plane);
      mgy /= static_cast<double>(plane);
      const double is = (*inv_std)[p];
      T* gx = g.data() + p * plane;
      for (std::size_t i = 0; i < plane; ++i)
        gx[i] += static_cast<T>(is * (gy[i] - mg - y[i] * mgy));
    }
  });
}

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, T eps) {
  const Shape sx = x.shape();
  const std::size_t plane = sx.plane();
  const double count = static_cast<double>(plane) * sx.n;
  std::vector<T> out(sx.numel());
  auto inv_std = std::make_shared<std::vector<T>>(sx.c);
  auto in = x.data();
  auto at = [&](int n, int c) { return static_cast<std::size_t>(n * sx.c + c) * plane; };
  for (int c = 0; c < sx.c; ++c) {
    double m = 0.0;
    for (int n = 0; n < sx.n; ++n)
      for (std::size_t i = 0; i < plane; ++i) m += in[at(n, c) + i];
    m /= count;
    double var = 0.0;
    for (int n = 0; n < sx.n; ++n)
      for (std::size_t i = 0; i < plane; ++i) var += (in[at(n, c) + i] - m) * (in[at(n, c) + i] - m);
    var /= count;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[c] = static_cast<T>(is);
    for (int n = 0; n < sx.n; ++n)
      for (std::size_t i = 0; i < plane; ++i)
        out[at(n, c) + i] = static_cast<T>((in[at(n, c) + i] - m) * is);
  }
  auto* nx = x.node().get();
  return make_result<T>(sx, std::move(out), {&x}, [nx, inv_std, sx, plane, count](Node<T>& self) {
    auto& g = nx->ensure_grad();
    auto at = [&](int n, int c) { return static_cast<std::size_t>(n * sx.c + c) * plane; };
    for (int c = 0; c < sx.c; ++c) {
      double mg = 0.0, mgy = 0.0;
      for (int n = 0; n < sx.n; ++n)
        for (std::size_t i = 0; i < plane; ++i) {
          mg += self.grad[at(n, c) + i];
          mgy += static_cast<double>(self.grad[at(n, c) + i]) * self.value[at(n, c) + i];
        }
      mg /= count;
      mgy /= count;
      const double is = (*inv_std)[c];
      for (int n = 0; n < sx.n; ++n)
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t j = at(n, c) + i;
          g[j] += static_cast<T>(is * (self.grad[j] - mg - self.value[j] * mgy));
        }
    }
  });
}

template <class T>
Tensor<T> spectral_normalized(const Tensor<T>& weight, std::vector<T>& u, int power_iters,
                              bool update_u) {
  const Shape sw = weight.shape();
  const int rows = sw.n;
  const int cols = static_cast<int>(sw.numel() / rows);
  if (static_cast<int>(u.size()) != rows)
    throw ArgumentError("spectral_normalized: u has wrong length");
  auto res = spectral_normalize<T>(weight.data(), rows, cols, u, power_iters);
  if (update_u) u = res.u;
  const T sigma = res.sigma;
  auto uu = std::make_shared<std::vector<T>>(std::move(res.u));
  auto vv = std::make_shared<std::vector<T>>(std::move(res.v));
  auto* nw = weight.node().get();
  return make_result<T>(sw, std::move(res.weight), {&weight},
                        [nw, sigma, uu, vv, rows, cols](Node<T>& self) {
                          // d(W/s) = dW/s - <G,W>/s^2 * u vᵀ
                          double gw = 0.0;
                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                            gw += static_cast<double>(self.grad[i]) * nw->value[i];
                          const double coef = gw / (static_cast<double>(sigma) * sigma);
                          auto& g = nw->ensure_grad();
                          for (int r = 0; r < rows; ++r)
                            for (int c = 0; c < cols; ++c) {
                              const std::size_t i = static_cast<std::size_t>(r) * cols + c;
                              g[i] += static_cast<T>(self.grad[i] / sigma -
                                                     coef * (*uu)[r] * (*vv)[c]);
                            }
                        });
}

#define NUCLEIGAN_INSTANTIATE_OPS(T)                                                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                        \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> l1_mean(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> bce_with_logits_mean(const Tensor<T>&, T);                              \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                        \
  template Tensor<T> tanh(const Tensor<T>&);                                                 \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int); \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                      int, int, int);                                        \
  template Tensor<T> reflection_pad(const Tensor<T>&, int);                                  \
  template Tensor<T> instance_norm(const Tensor<T>&, T);                                     \
  template Tensor<T> batch_norm(const Tensor<T>&, T);                                        \
  template Tensor<T> spectral_normalized(const Tensor<T>&, std::vector<T>&, int, bool);

NUCLEIGAN_INSTANTIATE_OPS(float)
NUCLEIGAN_INSTANTIATE_OPS(double)

}  // namespace nucleigan::ops
