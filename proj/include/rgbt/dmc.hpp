#pragma once

// Duality-gated mutual condition block.
//
// For each modality the block builds a multi-scale condition
//   ms_R = W^f_R * msconv_R(f_R)
// and combines the two streams with four 1x1 sigmoid gates:
//   s_R2T = f_T (.) G1(ms_R)          s_T2R = f_R (.) G3(ms_T)
//   out_T = s_R2T + G2(s_T2R)         out_R = s_T2R + G4(s_R2T)
// GateMode::gated_residual replaces the additive G(x) terms by G(x) (.) x.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "rgbt/layers.hpp"

namespace rgbt {

enum class Modality { rgb = 0, thermal = 1 };

const char* modality_name(Modality m);

enum class GateMode { literal, gated_residual };

/// Internal ablations of the block.
enum class DmcVariant {
  full,
  no_msconv,  // conditions taken from the raw features
  no_gate,    // all four gates replaced by identity
  one_gate,   // second gates (G2, G4) removed
  no_shift,   // additive terms dropped
};

GateMode parse_gate_mode(const std::string& s);
std::string to_string(GateMode m);
DmcVariant parse_dmc_variant(const std::string& s);
std::string to_string(DmcVariant v);

template <typename T>
struct FeatureMap {
  Tensor<T> data;  // [N, C, H, W], one slice per candidate
  int level = 1;
  Modality modality = Modality::rgb;
};

/// Level 1: four parallel channel-preserving branches (1x1, 3x3, 3x3 with
/// dilation 2, 5x5). Levels 2 and 3: sequential 1x1 -> 3x3 -> 1x1.
template <typename T>
struct MsConvParams {
  int level = 1;
  std::vector<ConvParams<T>> convs;

  int fused_channels() const;  // input width of the fusion conv
};

template <typename T>
struct DmcParams {
  int level = 1;
  int channels = 0;
  std::array<MsConvParams<T>, 2> msconv;  // indexed by Modality
  std::array<ConvParams<T>, 2> fuse;      // W^f per modality
  std::array<ConvParams<T>, 4> gates;     // G1..G4

  std::vector<Param<T>*> parameters();
};

/// bottleneck_ratio sets the inner width of the level-2/3 bottleneck
/// (channels / ratio, at least 1).
template <typename T>
DmcParams<T> make_dmc_params(int level, int channels, int bottleneck_ratio,
                             const std::string& prefix);

/// Swaps the RGB and thermal roles (msconv, fuse, G1<->G3, G2<->G4).
template <typename T>
DmcParams<T> swap_roles(const DmcParams<T>& p);

template <typename T>
struct MsConvCache {
  Tensor<T> input;
  std::vector<Tensor<T>> inner;  // level 1: [concat]; level 2/3: [h1, h2, h3]
};

template <typename T>
Tensor<T> msconv_forward(const MsConvParams<T>& ms, const ConvParams<T>& fuse,
                         const Tensor<T>& x, MsConvCache<T>* cache);

template <typename T>
Tensor<T> msconv_backward(MsConvParams<T>& ms, ConvParams<T>& fuse,
                          const MsConvCache<T>& cache, const Tensor<T>& dy);

/// Multi-scale condition of a single feature map.
template <typename T>
FeatureMap<T> msconv(const MsConvParams<T>& ms, const ConvParams<T>& fuse,
                     const FeatureMap<T>& f);

/// sigmoid(conv1x1(f)); every element lies in (0, 1).
template <typename T>
Tensor<T> gate(const ConvParams<T>& g, const Tensor<T>& f);

template <typename T>
struct DmcCache {
  std::array<Tensor<T>, 2> input;
  std::array<MsConvCache<T>, 2> ms_cache;
  std::array<Tensor<T>, 2> ms;  // ms_R, ms_T
  std::array<Tensor<T>, 4> g;   // gate outputs G1..G4 (empty when unused)
  Tensor<T> s_r2t;
  Tensor<T> s_t2r;
};

struct DmcOptions {
  GateMode mode = GateMode::literal;
  DmcVariant variant = DmcVariant::full;
};

template <typename T>
std::pair<Tensor<T>, Tensor<T>> mutual_condition_forward(
    const DmcParams<T>& p, const Tensor<T>& f_rgb, const Tensor<T>& f_t,
    const DmcOptions& opt, DmcCache<T>* cache);

/// Process-wide count of mutual_condition_forward calls.
long dmc_forward_count();

/// Returns (d f_rgb, d f_t) and accumulates parameter gradients.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> mutual_condition_backward(
    DmcParams<T>& p, const DmcOptions& opt, const DmcCache<T>& cache,
    const Tensor<T>& d_out_rgb, const Tensor<T>& d_out_t);

/// Level-checked entry point on feature maps. Throws std::logic_error when
/// the inputs disagree with each other or with the parameter level.
template <typename T>
std::pair<FeatureMap<T>, FeatureMap<T>> mutual_condition(
    const DmcParams<T>& p, const FeatureMap<T>& f_rgb,
    const FeatureMap<T>& f_t, const DmcOptions& opt = {});

}  // namespace rgbt
