#include "rgbt/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <limits>

namespace rgbt {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

bool is_pointwise(const ConvSpec& s) {
  return s.kernel == 1 && s.stride == 1 && s.pad == 0;
}

// col: [C*k*k, oh*ow]
template <typename T>
void im2col(const T* x, int c, int h, int w, const ConvSpec& s, int oh, int ow,
            T* col) {
  const int k = s.kernel;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) *
                           oh * ow;
        const T* plane = x + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride - s.pad + ky * s.dilation;
          T* out = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s.stride - s.pad + kx * s.dilation;
            out[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int c, int h, int w, const ConvSpec& s, int oh,
            int ow, T* x) {
  std::fill(x, x + static_cast<std::size_t>(c) * h * w, T(0));
  const int k = s.kernel;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row =
            col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * oh * ow;
        T* plane = x + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride - s.pad + ky * s.dilation;
          if (iy < 0 || iy >= h) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * w;
          const T* in = row + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s.stride - s.pad + kx * s.dilation;
            if (ix >= 0 && ix < w) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::backbone:
      return "backbone";
    case ParamGroup::adapter:
      return "adapter";
    case ParamGroup::dmc:
      return "dmc";
    case ParamGroup::fc_shared:
      return "fc_shared";
    case ParamGroup::fc_domain:
      return "fc_domain";
  }
  return "?";
}

template <typename T>
void ConvParams<T>::init(const std::string& name, ParamGroup g,
                         const ConvSpec& s) {
  spec = s;
  weight.init(name + ".weight", g,
              Shape{s.out_channels, s.in_channels, s.kernel, s.kernel});
  bias.init(name + ".bias", g, Shape{1, s.out_channels, 1, 1});
}

template <typename T>
Tensor<T> conv2d_forward(const ConvParams<T>& p, const Tensor<T>& x) {
  const ConvSpec& s = p.spec;
  if (x.c() != s.in_channels) {
    throw std::logic_error("conv " + p.weight.name + ": expected " +
                           std::to_string(s.in_channels) + " channels, got " +
                           x.shape().str());
  }
  const int oh = s.out_size(x.h());
  const int ow = s.out_size(x.w());
  if (oh <= 0 || ow <= 0) {
    throw std::logic_error("conv " + p.weight.name + ": input " +
                           x.shape().str() + " too small");
  }
  Tensor<T> y(x.n(), s.out_channels, oh, ow);
  const int kdim = s.in_channels * s.kernel * s.kernel;
  const int odim = oh * ow;
  CMapMat<T> wm(p.weight.value.data(), s.out_channels, kdim);
  const bool pointwise = is_pointwise(s);
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * odim);
  for (int n = 0; n < x.n(); ++n) {
    const T* xin = x.sample(n).data();
    if (!pointwise) {
      im2col(xin, x.c(), x.h(), x.w(), s, oh, ow, col.data());
      xin = col.data();
    }
    CMapMat<T> cm(xin, kdim, odim);
    MapMat<T> ym(y.sample(n).data(), s.out_channels, odim);
    ym.noalias() = wm * cm;
    for (int o = 0; o < s.out_channels; ++o) {
      ym.row(o).array() += p.bias.value[o];
    }
  }
  return y;
}

template <typename T>
void conv2d_backward(ConvParams<T>& p, const Tensor<T>& x, const Tensor<T>& dy,
                     Tensor<T>* dx) {
  const ConvSpec& s = p.spec;
  const int oh = dy.h();
  const int ow = dy.w();
  const int kdim = s.in_channels * s.kernel * s.kernel;
  const int odim = oh * ow;
  CMapMat<T> wm(p.weight.value.data(), s.out_channels, kdim);
  MapMat<T> gw(p.weight.grad.data(), s.out_channels, kdim);
  const bool pointwise = is_pointwise(s);
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * odim);
  std::vector<T> dcol(static_cast<std::size_t>(kdim) * odim);
  if (dx) *dx = Tensor<T>(x.shape());
  for (int n = 0; n < x.n(); ++n) {
    const T* xin = x.sample(n).data();
    if (!pointwise) {
      im2col(xin, x.c(), x.h(), x.w(), s, oh, ow, col.data());
      xin = col.data();
    }
    CMapMat<T> cm(xin, kdim, odim);
    CMapMat<T> gy(dy.sample(n).data(), s.out_channels, odim);
    gw.noalias() += gy * cm.transpose();
    for (int o = 0; o < s.out_channels; ++o) {
      p.bias.grad[o] += gy.row(o).sum();
    }
    if (dx) {
      if (pointwise) {
        MapMat<T> gx(dx->sample(n).data(), kdim, odim);
        gx.noalias() = wm.transpose() * gy;
      } else {
        MapMat<T> gc(dcol.data(), kdim, odim);
        gc.noalias() = wm.transpose() * gy;
        col2im(dcol.data(), x.c(), x.h(), x.w(), s, oh, ow,
               dx->sample(n).data());
      }
    }
  }
}

template <typename T>
void LinearParams<T>::init(const std::string& name, ParamGroup g, int in,
                           int out) {
  weight.init(name + ".weight", g, Shape{out, in, 1, 1});
  bias.init(name + ".bias", g, Shape{1, out, 1, 1});
}

template <typename T>
Tensor<T> linear_forward(const LinearParams<T>& p, const Tensor<T>& x) {
  const int d = static_cast<int>(x.shape().per_sample());
  if (d != p.in_features()) {
    throw std::logic_error("linear " + p.weight.name + ": expected width " +
                           std::to_string(p.in_features()) + ", got " +
                           std::to_string(d));
  }
  Tensor<T> y(x.n(), p.out_features(), 1, 1);
  CMapMat<T> xm(x.data(), x.n(), d);
  CMapMat<T> wm(p.weight.value.data(), p.out_features(), d);
  MapMat<T> ym(y.data(), x.n(), p.out_features());
  ym.noalias() = xm * wm.transpose();
  for (int i = 0; i < x.n(); ++i) {
    for (int o = 0; o < p.out_features(); ++o) ym(i, o) += p.bias.value[o];
  }
  return y;
}

template <typename T>
void linear_backward(LinearParams<T>& p, const Tensor<T>& x,
                     const Tensor<T>& dy, Tensor<T>* dx) {
  const int d = p.in_features();
  CMapMat<T> xm(x.data(), x.n(), d);
  CMapMat<T> gy(dy.data(), x.n(), p.out_features());
  MapMat<T> gw(p.weight.grad.data(), p.out_features(), d);
  gw.noalias() += gy.transpose() * xm;
  for (int o = 0; o < p.out_features(); ++o) {
    p.bias.grad[o] += gy.col(o).sum();
  }
  if (dx) {
    *dx = Tensor<T>(x.shape());
    CMapMat<T> wm(p.weight.value.data(), p.out_features(), d);
    MapMat<T> gx(dx->data(), x.n(), d);
    gx.noalias() = gy * wm;
  }
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.span()) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(y[i] > T(0))) dy[i] = T(0);
  }
}

template <typename T>
void sigmoid_inplace(Tensor<T>& x) {
  // saturated exp would otherwise round to exactly 0 or 1
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / 2;
  for (auto& v : x.span()) v = std::clamp(T(1) / (T(1) + std::exp(-v)), lo, hi);
}

template <typename T>
Tensor<T> lrn_forward(const LrnSpec& s, const Tensor<T>& x,
                      LrnCache<T>* cache) {
  const int c = x.c();
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  const int lo = (s.size - 1) / 2;
  const int hi = s.size - 1 - lo;
  const T a = static_cast<T>(s.alpha / s.size);
  Tensor<T> scale(x.shape());
  Tensor<T> y(x.shape());
  for (int n = 0; n < x.n(); ++n) {
    const T* xs = x.sample(n).data();
    T* sc = scale.sample(n).data();
    T* ys = y.sample(n).data();
    for (int ci = 0; ci < c; ++ci) {
      const int c0 = std::max(0, ci - lo);
      const int c1 = std::min(c - 1, ci + hi);
      for (std::size_t i = 0; i < hw; ++i) {
        T acc = 0;
        for (int cj = c0; cj <= c1; ++cj) {
          const T v = xs[cj * hw + i];
          acc += v * v;
        }
        const T sv = static_cast<T>(s.k) + a * acc;
        sc[ci * hw + i] = sv;
        ys[ci * hw + i] =
            xs[ci * hw + i] * std::pow(sv, static_cast<T>(-s.beta));
      }
    }
  }
  if (cache) {
    cache->x = x;
    cache->scale = scale;
    cache->y = y;
  }
  return y;
}

template <typename T>
Tensor<T> lrn_backward(const LrnSpec& s, const LrnCache<T>& cache,
                       const Tensor<T>& dy) {
  const Tensor<T>& x = cache.x;
  const int c = x.c();
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  const int lo = (s.size - 1) / 2;
  const int hi = s.size - 1 - lo;
  const T factor = static_cast<T>(2.0 * s.alpha * s.beta / s.size);
  Tensor<T> dx(x.shape());
  for (int n = 0; n < x.n(); ++n) {
    const T* xs = x.sample(n).data();
    const T* sc = cache.scale.sample(n).data();
    const T* ys = cache.y.sample(n).data();
    const T* gy = dy.sample(n).data();
    T* gx = dx.sample(n).data();
    for (int ci = 0; ci < c; ++ci) {
      // channels whose window contains ci
      const int c0 = std::max(0, ci - hi);
      const int c1 = std::min(c - 1, ci + lo);
      for (std::size_t i = 0; i < hw; ++i) {
        T acc = 0;
        for (int cj = c0; cj <= c1; ++cj) {
          acc += gy[cj * hw + i] * ys[cj * hw + i] / sc[cj * hw + i];
        }
        gx[ci * hw + i] =
            gy[ci * hw + i] *
                std::pow(sc[ci * hw + i], static_cast<T>(-s.beta)) -
            factor * xs[ci * hw + i] * acc;
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> maxpool_forward(const PoolSpec& s, const Tensor<T>& x,
                          PoolCache* cache) {
  const int oh = s.out_size(x.h());
  const int ow = s.out_size(x.w());
  if (oh <= 0 || ow <= 0) {
    throw std::logic_error("maxpool: input " + x.shape().str() + " too small");
  }
  Tensor<T> y(x.n(), x.c(), oh, ow);
  if (cache) {
    cache->in_shape = x.shape();
    cache->argmax.assign(y.size(), 0);
  }
  std::size_t out_i = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int ci = 0; ci < x.c(); ++ci) {
      const std::size_t base =
          (static_cast<std::size_t>(n) * x.c() + ci) * x.h() * x.w();
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++out_i) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t arg = 0;
          for (int ky = 0; ky < s.kernel; ++ky) {
            const int iy = oy * s.stride + ky;
            for (int kx = 0; kx < s.kernel; ++kx) {
              const int ix = ox * s.stride + kx;
              const std::size_t idx =
                  base + static_cast<std::size_t>(iy) * x.w() + ix;
              if (x[idx] > best) {
                best = x[idx];
                arg = idx;
              }
            }
          }
          y[out_i] = best;
          if (cache) cache->argmax[out_i] = static_cast<std::uint32_t>(arg);
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> maxpool_backward(const PoolCache& cache, const Tensor<T>& dy) {
  Tensor<T> dx(cache.in_shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[cache.argmax[i]] += dy[i];
  return dx;
}

template <typename T>
void BatchNormParams<T>::init(const std::string& name, ParamGroup g,
                              int channels) {
  gamma.init(name + ".gamma", g, Shape{1, channels, 1, 1});
  beta.init(name + ".beta", g, Shape{1, channels, 1, 1});
  gamma.value.fill(T(1));
  running_mean = Tensor<T>(1, channels, 1, 1, T(0));
  running_var = Tensor<T>(1, channels, 1, 1, T(1));
}

template <typename T>
Tensor<T> batchnorm_forward(const BatchNormParams<T>& p, const Tensor<T>& x,
                            bool training, BatchNormCache<T>* cache) {
  const int c = x.c();
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  const std::size_t m = hw * x.n();
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(c);
  std::vector<T> batch_mean(training ? c : 0);
  std::vector<T> batch_var(training ? c : 0);
  for (int ci = 0; ci < c; ++ci) {
    T mean = 0;
    T var = 0;
    if (training) {
      double sum = 0;
      for (int n = 0; n < x.n(); ++n) {
        const T* p0 = x.sample(n).data() + ci * hw;
        for (std::size_t i = 0; i < hw; ++i) sum += p0[i];
      }
      mean = static_cast<T>(sum / m);
      double sq = 0;
      for (int n = 0; n < x.n(); ++n) {
        const T* p0 = x.sample(n).data() + ci * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p0[i] - mean;
          sq += d * d;
        }
      }
      var = static_cast<T>(sq / m);
      batch_mean[ci] = mean;
      batch_var[ci] = m > 1 ? static_cast<T>(sq / (m - 1)) : var;
    } else {
      mean = p.running_mean[ci];
      var = p.running_var[ci];
    }
    const T is = T(1) / std::sqrt(var + static_cast<T>(p.eps));
    inv_std[ci] = is;
    const T g = p.gamma.value[ci];
    const T b = p.beta.value[ci];
    for (int n = 0; n < x.n(); ++n) {
      const T* xs = x.sample(n).data() + ci * hw;
      T* xh = xhat.sample(n).data() + ci * hw;
      T* ys = y.sample(n).data() + ci * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = (xs[i] - mean) * is;
        ys[i] = g * xh[i] + b;
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->batch_mean = std::move(batch_mean);
    cache->batch_var = std::move(batch_var);
    cache->training = training;
  }
  return y;
}

template <typename T>
void batchnorm_update_running(BatchNormParams<T>& p,
                              const BatchNormCache<T>& cache) {
  if (!cache.training) return;
  const T mom = static_cast<T>(p.momentum);
  for (std::size_t ci = 0; ci < cache.batch_mean.size(); ++ci) {
    p.running_mean[ci] = (1 - mom) * p.running_mean[ci] + mom * cache.batch_mean[ci];
    p.running_var[ci] = (1 - mom) * p.running_var[ci] + mom * cache.batch_var[ci];
  }
}

template <typename T>
Tensor<T> batchnorm_backward(BatchNormParams<T>& p,
                             const BatchNormCache<T>& cache,
                             const Tensor<T>& dy) {
  const Tensor<T>& xhat = cache.xhat;
  const int c = xhat.c();
  const std::size_t hw = static_cast<std::size_t>(xhat.h()) * xhat.w();
  const T m = static_cast<T>(hw * xhat.n());
  Tensor<T> dx(xhat.shape());
  for (int ci = 0; ci < c; ++ci) {
    T sum_dy = 0;
    T sum_dy_xhat = 0;
    for (int n = 0; n < xhat.n(); ++n) {
      const T* gy = dy.sample(n).data() + ci * hw;
      const T* xh = xhat.sample(n).data() + ci * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += gy[i];
        sum_dy_xhat += gy[i] * xh[i];
      }
    }
    p.beta.grad[ci] += sum_dy;
    p.gamma.grad[ci] += sum_dy_xhat;
    const T g = p.gamma.value[ci];
    const T is = cache.inv_std[ci];
    for (int n = 0; n < xhat.n(); ++n) {
      const T* gy = dy.sample(n).data() + ci * hw;
      const T* xh = xhat.sample(n).data() + ci * hw;
      T* gx = dx.sample(n).data() + ci * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        gx[i] = cache.training
                    ? g * is * (gy[i] - sum_dy / m - xh[i] * sum_dy_xhat / m)
                    : g * is * gy[i];
      }
    }
  }
  return dx;
}

template <typename T>
void dropout_inplace(Tensor<T>& x, double p, std::mt19937_64& rng,
                     Tensor<T>* mask) {
  if (p <= 0.0) {
    if (mask) *mask = Tensor<T>();
    return;
  }
  std::bernoulli_distribution keep(1.0 - p);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> m(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = keep(rng) ? scale : T(0);
    x[i] *= m[i];
  }
  if (mask) *mask = std::move(m);
}

template <typename T>
void dropout_backward_inplace(const Tensor<T>& mask, Tensor<T>& dy) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= mask[i];
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw std::logic_error("concat_channels: " + a.shape().str() + " vs " +
                           b.shape().str());
  }
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int n = 0; n < a.n(); ++n) {
    auto sa = a.sample(n);
    auto sb = b.sample(n);
    auto so = out.sample(n);
    std::copy(sa.begin(), sa.end(), so.begin());
    std::copy(sb.begin(), sb.end(), so.begin() + sa.size());
  }
  return out;
}

template <typename T>
void split_channels(const Tensor<T>& ab, int c_first, Tensor<T>& a,
                    Tensor<T>& b) {
  a = Tensor<T>(ab.n(), c_first, ab.h(), ab.w());
  b = Tensor<T>(ab.n(), ab.c() - c_first, ab.h(), ab.w());
  for (int n = 0; n < ab.n(); ++n) {
    auto s = ab.sample(n);
    auto sa = a.sample(n);
    auto sb = b.sample(n);
    std::copy(s.begin(), s.begin() + sa.size(), sa.begin());
    std::copy(s.begin() + sa.size(), s.end(), sb.begin());
  }
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  a.check_same(b, "hadamard");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

#define RGBT_INSTANTIATE_LAYERS(T)                                            \
  template struct ConvParams<T>;                                              \
  template Tensor<T> conv2d_forward(const ConvParams<T>&, const Tensor<T>&);  \
  template void conv2d_backward(ConvParams<T>&, const Tensor<T>&,             \
                                const Tensor<T>&, Tensor<T>*);                \
  template struct LinearParams<T>;                                            \
  template Tensor<T> linear_forward(const LinearParams<T>&, const Tensor<T>&);\
  template void linear_backward(LinearParams<T>&, const Tensor<T>&,           \
                                const Tensor<T>&, Tensor<T>*);                \
  template void relu_inplace(Tensor<T>&);                                     \
  template void relu_backward_inplace(const Tensor<T>&, Tensor<T>&);          \
  template void sigmoid_inplace(Tensor<T>&);                                  \
  template Tensor<T> lrn_forward(const LrnSpec&, const Tensor<T>&,            \
                                 LrnCache<T>*);                               \
  template Tensor<T> lrn_backward(const LrnSpec&, const LrnCache<T>&,         \
                                  const Tensor<T>&);                          \
  template Tensor<T> maxpool_forward(const PoolSpec&, const Tensor<T>&,       \
                                     PoolCache*);                             \
  template Tensor<T> maxpool_backward(const PoolCache&, const Tensor<T>&);    \
  template struct BatchNormParams<T>;                                         \
  template Tensor<T> batchnorm_forward(const BatchNormParams<T>&,            \
                                       const Tensor<T>&, bool,                \
                                       BatchNormCache<T>*);                   \
  template void batchnorm_update_running(BatchNormParams<T>&,                 \
                                         const BatchNormCache<T>&);           \
  template Tensor<T> batchnorm_backward(BatchNormParams<T>&,                  \
                                        const BatchNormCache<T>&,             \
                                        const Tensor<T>&);                    \
  template void dropout_inplace(Tensor<T>&, double, std::mt19937_64&,         \
                                Tensor<T>*);                                  \
  template void dropout_backward_inplace(const Tensor<T>&, Tensor<T>&);       \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);     \
  template void split_channels(const Tensor<T>&, int, Tensor<T>&,             \
                               Tensor<T>&);                                   \
  template Tensor<T> hadamard(const Tensor<T>&, const Tensor<T>&);

RGBT_INSTANTIATE_LAYERS(float)
RGBT_INSTANTIATE_LAYERS(double)

}  // namespace rgbt
