#include "rgbt/dmc.hpp"

#include <atomic>
#include <stdexcept>

namespace rgbt {

namespace {

constexpr int kRgb = 0;
constexpr int kT = 1;

template <typename T>
Tensor<T> sigmoid_grad(const Tensor<T>& dg, const Tensor<T>& g) {
  Tensor<T> dz(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    dz[i] = dg[i] * g[i] * (T(1) - g[i]);
  }
  return dz;
}

// Backward of g = sigmoid(conv(x)) with respect to x.
template <typename T>
Tensor<T> gate_backward(ConvParams<T>& conv, const Tensor<T>& x,
                        const Tensor<T>& g, const Tensor<T>& dg) {
  Tensor<T> dx;
  conv2d_backward(conv, x, sigmoid_grad(dg, g), &dx);
  return dx;
}

bool uses_first_gates(DmcVariant v) { return v != DmcVariant::no_gate; }

bool uses_second_gates(DmcVariant v) {
  return v == DmcVariant::full || v == DmcVariant::no_msconv;
}

}  // namespace

const char* modality_name(Modality m) {
  return m == Modality::rgb ? "rgb" : "t";
}

GateMode parse_gate_mode(const std::string& s) {
  if (s == "literal") return GateMode::literal;
  if (s == "gated_residual") return GateMode::gated_residual;
  throw std::invalid_argument("unknown gate mode '" + s + "'");
}

std::string to_string(GateMode m) {
  return m == GateMode::literal ? "literal" : "gated_residual";
}

DmcVariant parse_dmc_variant(const std::string& s) {
  if (s == "full") return DmcVariant::full;
  if (s == "no_msconv") return DmcVariant::no_msconv;
  if (s == "no_gate") return DmcVariant::no_gate;
  if (s == "one_gate") return DmcVariant::one_gate;
  if (s == "no_shift") return DmcVariant::no_shift;
  throw std::invalid_argument("unknown dmc variant '" + s + "'");
}

std::string to_string(DmcVariant v) {
  switch (v) {
    case DmcVariant::full:
      return "full";
    case DmcVariant::no_msconv:
      return "no_msconv";
    case DmcVariant::no_gate:
      return "no_gate";
    case DmcVariant::one_gate:
      return "one_gate";
    case DmcVariant::no_shift:
      return "no_shift";
  }
  return "?";
}

template <typename T>
int MsConvParams<T>::fused_channels() const {
  if (level == 1) {
    int c = 0;
    for (const auto& conv : convs) c += conv.spec.out_channels;
    return c;
  }
  return convs.back().spec.out_channels;
}

template <typename T>
std::vector<Param<T>*> DmcParams<T>::parameters() {
  std::vector<Param<T>*> out;
  auto add = [&](ConvParams<T>& c) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  };
  for (auto& ms : msconv) {
    for (auto& c : ms.convs) add(c);
  }
  for (auto& f : fuse) add(f);
  for (auto& g : gates) add(g);
  return out;
}

template <typename T>
DmcParams<T> make_dmc_params(int level, int channels, int bottleneck_ratio,
                             const std::string& prefix) {
  if (level < 1 || level > 3 || channels <= 0) {
    throw std::invalid_argument("make_dmc_params: bad level/channels");
  }
  DmcParams<T> p;
  p.level = level;
  p.channels = channels;
  const ParamGroup g = ParamGroup::dmc;
  for (int m = 0; m < 2; ++m) {
    const std::string mp =
        prefix + ".msconv_" + modality_name(static_cast<Modality>(m));
    auto& ms = p.msconv[m];
    ms.level = level;
    if (level == 1) {
      // kernel, pad, dilation; padding keeps the spatial size
      const int branch[4][3] = {{1, 0, 1}, {3, 1, 1}, {3, 2, 2}, {5, 2, 1}};
      for (int b = 0; b < 4; ++b) {
        ConvParams<T> c;
        c.init(mp + ".b" + std::to_string(b), g,
               ConvSpec{channels, channels, branch[b][0], 1, branch[b][1],
                        branch[b][2]});
        ms.convs.push_back(std::move(c));
      }
    } else {
      const int mid = std::max(1, channels / std::max(1, bottleneck_ratio));
      const ConvSpec specs[3] = {ConvSpec{channels, mid, 1, 1, 0, 1},
                                 ConvSpec{mid, mid, 3, 1, 1, 1},
                                 ConvSpec{mid, channels, 1, 1, 0, 1}};
      for (int b = 0; b < 3; ++b) {
        ConvParams<T> c;
        c.init(mp + ".s" + std::to_string(b), g, specs[b]);
        ms.convs.push_back(std::move(c));
      }
    }
    p.fuse[m].init(
        prefix + ".fuse_" + modality_name(static_cast<Modality>(m)), g,
        ConvSpec{ms.fused_channels(), channels, 1, 1, 0, 1});
  }
  for (int i = 0; i < 4; ++i) {
    p.gates[i].init(prefix + ".gate" + std::to_string(i + 1), g,
                    ConvSpec{channels, channels, 1, 1, 0, 1});
  }
  return p;
}

template <typename T>
DmcParams<T> swap_roles(const DmcParams<T>& p) {
  DmcParams<T> s = p;
  std::swap(s.msconv[0], s.msconv[1]);
  std::swap(s.fuse[0], s.fuse[1]);
  std::swap(s.gates[0], s.gates[2]);
  std::swap(s.gates[1], s.gates[3]);
  return s;
}

template <typename T>
Tensor<T> msconv_forward(const MsConvParams<T>& ms, const ConvParams<T>& fuse,
                         const Tensor<T>& x, MsConvCache<T>* cache) {
  if (cache) {
    cache->input = x;
    cache->inner.clear();
  }
  if (ms.level == 1) {
    Tensor<T> cat = conv2d_forward(ms.convs[0], x);
    for (std::size_t b = 1; b < ms.convs.size(); ++b) {
      cat = concat_channels(cat, conv2d_forward(ms.convs[b], x));
    }
    Tensor<T> y = conv2d_forward(fuse, cat);
    if (cache) cache->inner.push_back(std::move(cat));
    return y;
  }
  Tensor<T> h = x;
  for (const auto& c : ms.convs) {
    h = conv2d_forward(c, h);
    if (cache) cache->inner.push_back(h);
  }
  return conv2d_forward(fuse, h);
}

template <typename T>
Tensor<T> msconv_backward(MsConvParams<T>& ms, ConvParams<T>& fuse,
                          const MsConvCache<T>& cache, const Tensor<T>& dy) {
  Tensor<T> d_inner;
  conv2d_backward(fuse, cache.inner.back(), dy, &d_inner);
  if (ms.level == 1) {
    Tensor<T> dx(cache.input.shape());
    Tensor<T> rest = std::move(d_inner);
    for (std::size_t b = 0; b < ms.convs.size(); ++b) {
      Tensor<T> part;
      Tensor<T> tail;
      if (b + 1 < ms.convs.size()) {
        split_channels(rest, ms.convs[b].spec.out_channels, part, tail);
      } else {
        part = std::move(rest);
      }
      Tensor<T> dxb;
      conv2d_backward(ms.convs[b], cache.input, part, &dxb);
      dx += dxb;
      rest = std::move(tail);
    }
    return dx;
  }
  Tensor<T> d = std::move(d_inner);
  for (int b = static_cast<int>(ms.convs.size()) - 1; b >= 0; --b) {
    const Tensor<T>& in = b == 0 ? cache.input : cache.inner[b - 1];
    Tensor<T> dx;
    conv2d_backward(ms.convs[b], in, d, &dx);
    d = std::move(dx);
  }
  return d;
}

template <typename T>
FeatureMap<T> msconv(const MsConvParams<T>& ms, const ConvParams<T>& fuse,
                     const FeatureMap<T>& f) {
  if (f.level != ms.level) {
    throw std::logic_error("msconv: feature level " + std::to_string(f.level) +
                           " != parameter level " + std::to_string(ms.level));
  }
  return {msconv_forward<T>(ms, fuse, f.data, nullptr), f.level, f.modality};
}

template <typename T>
Tensor<T> gate(const ConvParams<T>& g, const Tensor<T>& f) {
  Tensor<T> z = conv2d_forward(g, f);
  sigmoid_inplace(z);
  return z;
}

namespace {
std::atomic<long> g_dmc_forwards{0};
}  // namespace

long dmc_forward_count() { return g_dmc_forwards.load(); }

template <typename T>
std::pair<Tensor<T>, Tensor<T>> mutual_condition_forward(
    const DmcParams<T>& p, const Tensor<T>& f_rgb, const Tensor<T>& f_t,
    const DmcOptions& opt, DmcCache<T>* cache) {
  ++g_dmc_forwards;
  f_rgb.check_same(f_t, "mutual_condition");
  const DmcVariant v = opt.variant;
  const std::array<const Tensor<T>*, 2> f = {&f_rgb, &f_t};

  std::array<Tensor<T>, 2> ms;
  std::array<MsConvCache<T>, 2> ms_cache;
  for (int m = 0; m < 2; ++m) {
    ms[m] = v == DmcVariant::no_msconv
                ? *f[m]
                : msconv_forward(p.msconv[m], p.fuse[m], *f[m],
                                 cache ? &ms_cache[m] : nullptr);
  }

  // First gates: G1 on ms_R scales the thermal stream, G3 on ms_T the RGB one.
  std::array<Tensor<T>, 4> g;
  Tensor<T> a1 = ms[kRgb];
  Tensor<T> a3 = ms[kT];
  if (uses_first_gates(v)) {
    g[0] = gate(p.gates[0], ms[kRgb]);
    g[2] = gate(p.gates[2], ms[kT]);
    a1 = g[0];
    a3 = g[2];
  }
  Tensor<T> s_r2t = hadamard(f_t, a1);
  Tensor<T> s_t2r = hadamard(f_rgb, a3);

  Tensor<T> out_t = s_r2t;
  Tensor<T> out_rgb = s_t2r;
  if (v != DmcVariant::no_shift) {
    if (uses_second_gates(v)) {
      g[1] = gate(p.gates[1], s_t2r);
      g[3] = gate(p.gates[3], s_r2t);
      if (opt.mode == GateMode::literal) {
        out_t += g[1];
        out_rgb += g[3];
      } else {
        out_t += hadamard(g[1], s_t2r);
        out_rgb += hadamard(g[3], s_r2t);
      }
    } else {
      out_t += s_t2r;
      out_rgb += s_r2t;
    }
  }

  if (cache) {
    cache->input = {f_rgb, f_t};
    cache->ms_cache = std::move(ms_cache);
    cache->ms = std::move(ms);
    cache->g = std::move(g);
    cache->s_r2t = std::move(s_r2t);
    cache->s_t2r = std::move(s_t2r);
  }
  return {std::move(out_rgb), std::move(out_t)};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> mutual_condition_backward(
    DmcParams<T>& p, const DmcOptions& opt, const DmcCache<T>& c,
    const Tensor<T>& d_out_rgb, const Tensor<T>& d_out_t) {
  const DmcVariant v = opt.variant;
  Tensor<T> d_s_r2t = d_out_t;
  Tensor<T> d_s_t2r = d_out_rgb;

  // Additive terms. out_T's shift depends on s_T2R, out_R's on s_R2T.
  if (v != DmcVariant::no_shift) {
    if (uses_second_gates(v)) {
      auto shift_back = [&](ConvParams<T>& conv, const Tensor<T>& x,
                            const Tensor<T>& gx, const Tensor<T>& d_out,
                            Tensor<T>& d_x) {
        if (opt.mode == GateMode::literal) {
          d_x += gate_backward(conv, x, gx, d_out);
        } else {
          d_x += hadamard(d_out, gx);
          d_x += gate_backward(conv, x, gx, hadamard(d_out, x));
        }
      };
      shift_back(p.gates[1], c.s_t2r, c.g[1], d_out_t, d_s_t2r);
      shift_back(p.gates[3], c.s_r2t, c.g[3], d_out_rgb, d_s_r2t);
    } else {
      d_s_t2r += d_out_t;
      d_s_r2t += d_out_rgb;
    }
  }

  // s_R2T = f_T (.) a1, s_T2R = f_R (.) a3
  const Tensor<T>& a1 = uses_first_gates(v) ? c.g[0] : c.ms[kRgb];
  const Tensor<T>& a3 = uses_first_gates(v) ? c.g[2] : c.ms[kT];
  Tensor<T> d_f_t = hadamard(d_s_r2t, a1);
  Tensor<T> d_f_rgb = hadamard(d_s_t2r, a3);
  Tensor<T> d_a1 = hadamard(d_s_r2t, c.input[kT]);
  Tensor<T> d_a3 = hadamard(d_s_t2r, c.input[kRgb]);

  std::array<Tensor<T>, 2> d_ms;
  if (uses_first_gates(v)) {
    d_ms[kRgb] = gate_backward(p.gates[0], c.ms[kRgb], c.g[0], d_a1);
    d_ms[kT] = gate_backward(p.gates[2], c.ms[kT], c.g[2], d_a3);
  } else {
    d_ms[kRgb] = std::move(d_a1);
    d_ms[kT] = std::move(d_a3);
  }

  std::array<Tensor<T>*, 2> d_f = {&d_f_rgb, &d_f_t};
  for (int m = 0; m < 2; ++m) {
    if (v == DmcVariant::no_msconv) {
      *d_f[m] += d_ms[m];
    } else {
      *d_f[m] +=
          msconv_backward(p.msconv[m], p.fuse[m], c.ms_cache[m], d_ms[m]);
    }
  }
  return {std::move(d_f_rgb), std::move(d_f_t)};
}

template <typename T>
std::pair<FeatureMap<T>, FeatureMap<T>> mutual_condition(
    const DmcParams<T>& p, const FeatureMap<T>& f_rgb,
    const FeatureMap<T>& f_t, const DmcOptions& opt) {
  if (f_rgb.level != p.level || f_t.level != p.level) {
    throw std::logic_error("mutual_condition: level mismatch (params " +
                           std::to_string(p.level) + ", inputs " +
                           std::to_string(f_rgb.level) + "/" +
                           std::to_string(f_t.level) + ")");
  }
  auto [o_rgb, o_t] =
      mutual_condition_forward<T>(p, f_rgb.data, f_t.data, opt, nullptr);
  return {FeatureMap<T>{std::move(o_rgb), p.level, Modality::rgb},
          FeatureMap<T>{std::move(o_t), p.level, Modality::thermal}};
}

#define RGBT_INSTANTIATE_DMC(T)                                               \
  template struct MsConvParams<T>;                                            \
  template struct DmcParams<T>;                                               \
  template DmcParams<T> make_dmc_params<T>(int, int, int, const std::string&);\
  template DmcParams<T> swap_roles(const DmcParams<T>&);                      \
  template Tensor<T> msconv_forward(const MsConvParams<T>&,                   \
                                    const ConvParams<T>&, const Tensor<T>&,   \
                                    MsConvCache<T>*);                         \
  template Tensor<T> msconv_backward(MsConvParams<T>&, ConvParams<T>&,        \
                                     const MsConvCache<T>&, const Tensor<T>&);\
  template FeatureMap<T> msconv(const MsConvParams<T>&, const ConvParams<T>&, \
                                const FeatureMap<T>&);                        \
  template Tensor<T> gate(const ConvParams<T>&, const Tensor<T>&);            \
  template std::pair<Tensor<T>, Tensor<T>> mutual_condition_forward(          \
      const DmcParams<T>&, const Tensor<T>&, const Tensor<T>&,                \
      const DmcOptions&, DmcCache<T>*);                                       \
  template std::pair<Tensor<T>, Tensor<T>> mutual_condition_backward(         \
      DmcParams<T>&, const DmcOptions&, const DmcCache<T>&, const Tensor<T>&, \
      const Tensor<T>&);                                                      \
  template std::pair<FeatureMap<T>, FeatureMap<T>> mutual_condition(          \
      const DmcParams<T>&, const FeatureMap<T>&, const FeatureMap<T>&,        \
      const DmcOptions&);

RGBT_INSTANTIATE_DMC(float)
RGBT_INSTANTIATE_DMC(double)

}  // namespace rgbt
