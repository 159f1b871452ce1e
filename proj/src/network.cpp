#include "rgbt/network.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

#include "rgbt/checkpoint.hpp"
#include "rgbt/errors.hpp"

namespace rgbt {

namespace {

template <typename T>
void fill_normal(Tensor<T>& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  for (auto& v : t.span()) v = static_cast<T>(d(rng));
}

template <typename T>
void init_conv(ConvParams<T>& c, double gain, std::mt19937_64& rng) {
  const int fan_in = c.spec.in_channels * c.spec.kernel * c.spec.kernel;
  fill_normal(c.weight.value, std::sqrt(gain / fan_in), rng);
  c.bias.value.zero();
}

template <typename T>
void init_head(LinearParams<T>& h, std::mt19937_64& rng) {
  fill_normal(h.weight.value, 0.01, rng);
  h.bias.value.zero();
}

template <typename T>
void add_conv(std::vector<Param<T>*>& out, ConvParams<T>& c) {
  out.push_back(&c.weight);
  out.push_back(&c.bias);
}

template <typename T>
void add_linear(std::vector<Param<T>*>& out, LinearParams<T>& l) {
  out.push_back(&l.weight);
  out.push_back(&l.bias);
}

template <typename T>
void cast_param(const Param<T>& from, Param<float>& to) {
  to.name = from.name;
  to.group = from.group;
  to.value = from.value.template cast<float>();
  to.grad = Tensor<float>(from.value.shape());
}

template <typename T>
void cast_param(const Param<T>& from, Param<double>& to) {
  to.name = from.name;
  to.group = from.group;
  to.value = from.value.template cast<double>();
  to.grad = Tensor<double>(from.value.shape());
}

template <typename T, typename U>
void cast_conv(const ConvParams<T>& from, ConvParams<U>& to) {
  to.spec = from.spec;
  cast_param(from.weight, to.weight);
  cast_param(from.bias, to.bias);
}

template <typename T, typename U>
void cast_linear(const LinearParams<T>& from, LinearParams<U>& to) {
  cast_param(from.weight, to.weight);
  cast_param(from.bias, to.bias);
}

nlohmann::json pool_json(const PoolSpec& p) {
  return {{"kernel", p.kernel}, {"stride", p.stride}};
}

PoolSpec pool_from(const nlohmann::json& j) {
  return {j.at("kernel").get<int>(), j.at("stride").get<int>()};
}

}  // namespace

StageGeometry stage_geometry(const ModelConfig& c) {
  StageGeometry g;
  int s = c.input_size;
  for (int l = 0; l < 3; ++l) {
    const auto& b = c.backbone[l];
    const auto& a = c.adapters[l];
    const int bc = (s - b.kernel) / b.stride + 1;
    const int ac = (s - a.kernel) / a.stride + 1;
    g.backbone_conv[l] = s >= b.kernel ? bc : 0;
    g.adapter_conv[l] = s >= a.kernel ? ac : 0;
    g.level[l] = g.backbone_conv[l] >= std::max(1, b.pool.kernel)
                     ? b.pool.out_size(g.backbone_conv[l])
                     : 0;
    g.adapter_level[l] = g.adapter_conv[l] >= std::max(1, a.pool.kernel)
                             ? a.pool.out_size(g.adapter_conv[l])
                             : 0;
    s = g.level[l];
  }
  return g;
}

void validate(const ModelConfig& c) {
  if (c.input_size <= 0 || c.in_channels <= 0 || c.fc_width <= 0) {
    throw ConfigError("model: input size, channels and fc width must be > 0");
  }
  if (c.dropout < 0.0 || c.dropout >= 1.0) {
    throw ConfigError("model: dropout must be in [0, 1)");
  }
  const StageGeometry g = stage_geometry(c);
  for (int l = 0; l < 3; ++l) {
    if (c.backbone[l].channels <= 0 || c.backbone[l].stride <= 0 ||
        c.adapters[l].stride <= 0) {
      throw ConfigError("model: level " + std::to_string(l + 1) +
                        " has non-positive channels or stride");
    }
    if (g.level[l] <= 0) {
      throw ConfigError("model: backbone level " + std::to_string(l + 1) +
                        " collapses to zero size");
    }
    if (g.adapter_level[l] != g.level[l]) {
      throw ConfigError("model: adapter level " + std::to_string(l + 1) +
                        " yields " + std::to_string(g.adapter_level[l]) +
                        " but backbone yields " + std::to_string(g.level[l]));
    }
  }
}

int classifier_input_width(const ModelConfig& c) {
  const StageGeometry g = stage_geometry(c);
  return 2 * c.backbone[2].channels * g.level[2] * g.level[2];
}

ModelConfig compact_model_config() {
  ModelConfig c;
  c.input_size = 75;
  c.backbone[0].channels = 16;
  c.backbone[1].channels = 32;
  c.backbone[2].channels = 64;
  c.fc_width = 128;
  return c;
}

std::string to_json_string(const ModelConfig& c) {
  nlohmann::json j;
  j["input_size"] = c.input_size;
  j["in_channels"] = c.in_channels;
  for (int l = 0; l < 3; ++l) {
    const auto& b = c.backbone[l];
    j["backbone"].push_back({{"kernel", b.kernel},
                             {"stride", b.stride},
                             {"channels", b.channels},
                             {"lrn", b.lrn},
                             {"pool", pool_json(b.pool)}});
    const auto& a = c.adapters[l];
    j["adapters"].push_back(
        {{"kernel", a.kernel}, {"stride", a.stride}, {"pool", pool_json(a.pool)}});
  }
  j["fc_width"] = c.fc_width;
  j["dropout"] = c.dropout;
  j["lrn"] = {{"size", c.lrn.size},
              {"alpha", c.lrn.alpha},
              {"beta", c.lrn.beta},
              {"k", c.lrn.k}};
  j["dmc_bottleneck_ratio"] = c.dmc_bottleneck_ratio;
  j["use_dmc"] = c.use_dmc;
  j["dmc_residual"] = c.dmc_residual;
  j["gate_mode"] = to_string(c.gate_mode);
  j["dmc_variant"] = to_string(c.dmc_variant);
  return j.dump();
}

ModelConfig model_config_from_json_string(const std::string& s) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(s);
    c.input_size = j.value("input_size", c.input_size);
    c.in_channels = j.value("in_channels", c.in_channels);
    if (j.contains("backbone")) {
      for (int l = 0; l < 3; ++l) {
        const auto& b = j.at("backbone").at(l);
        c.backbone[l] = {b.at("kernel").get<int>(), b.at("stride").get<int>(),
                         b.at("channels").get<int>(), b.at("lrn").get<bool>(),
                         pool_from(b.at("pool"))};
      }
    }
    if (j.contains("adapters")) {
      for (int l = 0; l < 3; ++l) {
        const auto& a = j.at("adapters").at(l);
        c.adapters[l] = {a.at("kernel").get<int>(), a.at("stride").get<int>(),
                         pool_from(a.at("pool"))};
      }
    }
    c.fc_width = j.value("fc_width", c.fc_width);
    c.dropout = j.value("dropout", c.dropout);
    if (j.contains("lrn")) {
      const auto& l = j.at("lrn");
      c.lrn = {l.at("size").get<int>(), l.at("alpha").get<double>(),
               l.at("beta").get<double>(), l.at("k").get<double>()};
    }
    c.dmc_bottleneck_ratio =
        j.value("dmc_bottleneck_ratio", c.dmc_bottleneck_ratio);
    c.use_dmc = j.value("use_dmc", c.use_dmc);
    c.dmc_residual = j.value("dmc_residual", c.dmc_residual);
    if (j.contains("gate_mode")) {
      c.gate_mode = parse_gate_mode(j.at("gate_mode").get<std::string>());
    }
    if (j.contains("dmc_variant")) {
      c.dmc_variant = parse_dmc_variant(j.at("dmc_variant").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------- params

template <typename T>
std::vector<Param<T>*> NetworkParams<T>::parameters() {
  std::vector<Param<T>*> out;
  for (auto& c : backbone) add_conv(out, c);
  for (int m = 0; m < 2; ++m) {
    for (int l = 0; l < 3; ++l) {
      add_conv(out, adapter_conv[m][l]);
      out.push_back(&adapter_bn[m][l].gamma);
      out.push_back(&adapter_bn[m][l].beta);
    }
  }
  for (auto& d : dmc) {
    for (auto* p : d.parameters()) out.push_back(p);
  }
  add_linear(out, fc4);
  add_linear(out, fc5);
  for (auto& h : heads) add_linear(out, h);
  return out;
}

template <typename T>
std::vector<const Param<T>*> NetworkParams<T>::parameters() const {
  auto mut = const_cast<NetworkParams<T>*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> NetworkParams<T>::buffers() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (int m = 0; m < 2; ++m) {
    for (int l = 0; l < 3; ++l) {
      auto& bn = adapter_bn[m][l];
      const std::string base = bn.gamma.name.substr(0, bn.gamma.name.rfind('.'));
      out.emplace_back(base + ".running_mean", &bn.running_mean);
      out.emplace_back(base + ".running_var", &bn.running_var);
    }
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>>
NetworkParams<T>::buffers() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (auto& [k, v] : const_cast<NetworkParams<T>*>(this)->buffers()) {
    out.emplace_back(k, v);
  }
  return out;
}

template <typename T>
void NetworkParams<T>::zero_grad() {
  for (auto* p : parameters()) p->grad.zero();
}

template <typename T>
void NetworkParams<T>::reset_heads(int count, std::mt19937_64& rng) {
  if (count < 1) throw std::invalid_argument("reset_heads: count must be >= 1");
  heads.assign(count, {});
  for (int d = 0; d < count; ++d) {
    heads[d].init("fc6." + std::to_string(d), ParamGroup::fc_domain,
                  config.fc_width, 2);
    init_head(heads[d], rng);
  }
}

template <typename T>
template <typename U>
NetworkParams<U> NetworkParams<T>::cast() const {
  NetworkParams<U> out;
  out.config = config;
  for (int l = 0; l < 3; ++l) {
    cast_conv(backbone[l], out.backbone[l]);
    for (int m = 0; m < 2; ++m) {
      cast_conv(adapter_conv[m][l], out.adapter_conv[m][l]);
      const auto& bn = adapter_bn[m][l];
      auto& ob = out.adapter_bn[m][l];
      cast_param(bn.gamma, ob.gamma);
      cast_param(bn.beta, ob.beta);
      ob.running_mean = bn.running_mean.template cast<U>();
      ob.running_var = bn.running_var.template cast<U>();
      ob.eps = bn.eps;
      ob.momentum = bn.momentum;
    }
    const auto& d = dmc[l];
    auto& od = out.dmc[l];
    od.level = d.level;
    od.channels = d.channels;
    for (int m = 0; m < 2; ++m) {
      od.msconv[m].level = d.msconv[m].level;
      od.msconv[m].convs.resize(d.msconv[m].convs.size());
      for (std::size_t i = 0; i < d.msconv[m].convs.size(); ++i) {
        cast_conv(d.msconv[m].convs[i], od.msconv[m].convs[i]);
      }
      cast_conv(d.fuse[m], od.fuse[m]);
    }
    for (int g = 0; g < 4; ++g) cast_conv(d.gates[g], od.gates[g]);
  }
  cast_linear(fc4, out.fc4);
  cast_linear(fc5, out.fc5);
  out.heads.resize(heads.size());
  for (std::size_t h = 0; h < heads.size(); ++h) {
    cast_linear(heads[h], out.heads[h]);
  }
  return out;
}

template <typename T>
NetworkParams<T> build_network(const ModelConfig& config, int num_domains,
                               std::uint64_t seed) {
  if (num_domains < 1) {
    throw std::invalid_argument("build_network: num_domains must be >= 1");
  }
  validate(config);
  std::mt19937_64 rng(seed);
  NetworkParams<T> net;
  net.config = config;
  int in_c = config.in_channels;
  for (int l = 0; l < 3; ++l) {
    const auto& b = config.backbone[l];
    const std::string lv = std::to_string(l + 1);
    net.backbone[l].init("backbone.conv" + lv, ParamGroup::backbone,
                         ConvSpec{in_c, b.channels, b.kernel, b.stride, 0, 1});
    init_conv(net.backbone[l], 2.0, rng);
    for (int m = 0; m < 2; ++m) {
      const std::string mp =
          std::string("adapter.") + modality_name(static_cast<Modality>(m));
      const auto& a = config.adapters[l];
      net.adapter_conv[m][l].init(
          mp + ".conv" + lv, ParamGroup::adapter,
          ConvSpec{in_c, b.channels, a.kernel, a.stride, 0, 1});
      init_conv(net.adapter_conv[m][l], 2.0, rng);
      net.adapter_bn[m][l].init(mp + ".bn" + lv, ParamGroup::adapter,
                                b.channels);
    }
    net.dmc[l] = make_dmc_params<T>(l + 1, b.channels,
                                    config.dmc_bottleneck_ratio, "dmc" + lv);
    for (int m = 0; m < 2; ++m) {
      for (auto& c : net.dmc[l].msconv[m].convs) init_conv(c, 1.0, rng);
      init_conv(net.dmc[l].fuse[m], 1.0, rng);
    }
    for (auto& g : net.dmc[l].gates) {
      fill_normal(g.weight.value, 0.01, rng);
      g.bias.value.zero();
    }
    in_c = b.channels;
  }
  const int d = classifier_input_width(config);
  net.fc4.init("fc4", ParamGroup::fc_shared, d, config.fc_width);
  net.fc5.init("fc5", ParamGroup::fc_shared, config.fc_width, config.fc_width);
  fill_normal(net.fc4.weight.value, 0.01, rng);
  fill_normal(net.fc5.weight.value, 0.01, rng);
  net.fc4.bias.value.fill(T(0.1));
  net.fc5.bias.value.fill(T(0.1));
  net.reset_heads(num_domains, rng);
  return net;
}

template <typename T>
void load_pretrained_backbone(NetworkParams<T>& net, const std::string& path,
                              bool strict) {
  ArrayStore store;
  try {
    store = ArrayStore::load(path);
  } catch (const LoadError&) {
    if (strict) throw;
    return;
  }
  for (auto& conv : net.backbone) {
    for (Param<T>* p : {&conv.weight, &conv.bias}) {
      const auto* a = store.find(p->name);
      if (!a) {
        if (strict) throw LoadError(path + ": missing key " + p->name);
        continue;
      }
      from_array(*a, p->value, p->name);
    }
  }
}

// ---------------------------------------------------------------- forward

template <typename T>
std::pair<Tensor<T>, Tensor<T>> forward_features(
    const NetworkParams<T>& net, const Tensor<T>& rgb, const Tensor<T>& t,
    const RunMode& mode, std::mt19937_64* rng, FeatureCache<T>* cache) {
  const ModelConfig& cfg = net.config;
  if (mode.training && cfg.dropout > 0 && !rng) {
    throw std::logic_error("forward_features: training mode needs an rng");
  }
  std::array<Tensor<T>, 2> x = {rgb, t};
  for (int l = 0; l < 3; ++l) {
    const auto& bspec = cfg.backbone[l];
    const auto& aspec = cfg.adapters[l];
    std::array<Tensor<T>, 2> joined;
    for (int m = 0; m < 2; ++m) {
      StageCache<T>* sc = cache ? &cache->stage[m][l] : nullptr;
      if (sc) sc->input = x[m];

      Tensor<T> b = conv2d_forward(net.backbone[l], x[m]);
      relu_inplace(b);
      if (sc) sc->b_relu = b;
      if (bspec.lrn) b = lrn_forward(cfg.lrn, b, sc ? &sc->lrn : nullptr);
      if (bspec.pool.enabled()) {
        b = maxpool_forward(bspec.pool, b, sc ? &sc->b_pool : nullptr);
      }

      Tensor<T> a = conv2d_forward(net.adapter_conv[m][l], x[m]);
      relu_inplace(a);
      if (sc) sc->a_relu = a;
      a = batchnorm_forward(net.adapter_bn[m][l], a, mode.training,
                            sc ? &sc->bn : nullptr);
      if (mode.training) {
        dropout_inplace(a, cfg.dropout, *rng, sc ? &sc->a_mask : nullptr);
      } else if (sc) {
        sc->a_mask = Tensor<T>();
      }
      if (aspec.pool.enabled()) {
        a = maxpool_forward(aspec.pool, a, sc ? &sc->a_pool : nullptr);
      }
      if (!(a.shape() == b.shape())) {
        throw std::logic_error("level " + std::to_string(l + 1) +
                               " join: backbone " + b.shape().str() +
                               " vs adapter " + a.shape().str());
      }
      b += a;
      joined[m] = std::move(b);
    }
    if (mode.use_dmc) {
      auto [o_rgb, o_t] = mutual_condition_forward(
          net.dmc[l], joined[0], joined[1], cfg.dmc_options(),
          cache ? &cache->dmc[l] : nullptr);
      if (cfg.dmc_residual) {
        o_rgb += joined[0];
        o_t += joined[1];
      }
      x = {std::move(o_rgb), std::move(o_t)};
    } else {
      x = std::move(joined);
    }
  }
  return {std::move(x[0]), std::move(x[1])};
}

template <typename T>
std::pair<FeatureMap<T>, FeatureMap<T>> forward_features(
    const NetworkParams<T>& net, const Tensor<T>& rgb, const Tensor<T>& t,
    bool use_dmc) {
  auto [r, th] =
      forward_features<T>(net, rgb, t, RunMode{false, use_dmc}, nullptr, nullptr);
  return {FeatureMap<T>{std::move(r), 3, Modality::rgb},
          FeatureMap<T>{std::move(th), 3, Modality::thermal}};
}

template <typename T>
void update_batchnorm_stats(NetworkParams<T>& net, const FeatureCache<T>& c) {
  for (int m = 0; m < 2; ++m) {
    for (int l = 0; l < 3; ++l) {
      batchnorm_update_running(net.adapter_bn[m][l], c.stage[m][l].bn);
    }
  }
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> backward_features(
    NetworkParams<T>& net, const RunMode& mode, const FeatureCache<T>& cache,
    const Tensor<T>& d_rgb3, const Tensor<T>& d_t3) {
  const ModelConfig& cfg = net.config;
  std::array<Tensor<T>, 2> d = {d_rgb3, d_t3};
  for (int l = 2; l >= 0; --l) {
    std::array<Tensor<T>, 2> d_join;
    if (mode.use_dmc) {
      auto [dr, dt] = mutual_condition_backward(
          net.dmc[l], cfg.dmc_options(), cache.dmc[l], d[0], d[1]);
      if (cfg.dmc_residual) {
        dr += d[0];
        dt += d[1];
      }
      d_join = {std::move(dr), std::move(dt)};
    } else {
      d_join = d;
    }
    const bool need_input_grad = l > 0;
    for (int m = 0; m < 2; ++m) {
      const StageCache<T>& sc = cache.stage[m][l];
      Tensor<T> db = d_join[m];
      if (cfg.backbone[l].pool.enabled()) db = maxpool_backward(sc.b_pool, db);
      if (cfg.backbone[l].lrn) db = lrn_backward(cfg.lrn, sc.lrn, db);
      relu_backward_inplace(sc.b_relu, db);
      Tensor<T> dxb;
      conv2d_backward(net.backbone[l], sc.input, db,
                      need_input_grad ? &dxb : nullptr);

      Tensor<T> da = d_join[m];
      if (cfg.adapters[l].pool.enabled()) da = maxpool_backward(sc.a_pool, da);
      dropout_backward_inplace(sc.a_mask, da);
      da = batchnorm_backward(net.adapter_bn[m][l], sc.bn, da);
      relu_backward_inplace(sc.a_relu, da);
      Tensor<T> dxa;
      conv2d_backward(net.adapter_conv[m][l], sc.input, da,
                      need_input_grad ? &dxa : nullptr);
      if (need_input_grad) {
        dxb += dxa;
        d[m] = std::move(dxb);
      } else {
        d[m] = Tensor<T>();
      }
    }
  }
  return {std::move(d[0]), std::move(d[1])};
}

template <typename T>
Tensor<T> join_features(const Tensor<T>& rgb3, const Tensor<T>& t3) {
  Tensor<T> j = concat_channels(rgb3, t3);
  j.reshape(Shape{j.n(), static_cast<int>(j.shape().per_sample()), 1, 1});
  return j;
}

template <typename T>
Tensor<T> classify_features(const NetworkParams<T>& net,
                            const Tensor<T>& features, int domain,
                            bool training, std::mt19937_64* rng,
                            ClassifierCache<T>* cache) {
  if (domain < 0 || domain >= net.num_domains()) {
    throw std::out_of_range("classify: domain " + std::to_string(domain) +
                            " outside [0, " +
                            std::to_string(net.num_domains()) + ")");
  }
  const double p = net.config.dropout;
  if (training && p > 0 && !rng) {
    throw std::logic_error("classify: training mode needs an rng");
  }
  Tensor<T> h4 = linear_forward(net.fc4, features);
  relu_inplace(h4);
  Tensor<T> h4d = h4;
  Tensor<T> m4;
  if (training) dropout_inplace(h4d, p, *rng, &m4);
  Tensor<T> h5 = linear_forward(net.fc5, h4d);
  relu_inplace(h5);
  Tensor<T> h5d = h5;
  Tensor<T> m5;
  if (training) dropout_inplace(h5d, p, *rng, &m5);
  Tensor<T> out = linear_forward(net.heads[domain], h5d);
  if (cache) {
    cache->x = features;
    cache->h4 = std::move(h4);
    cache->m4 = std::move(m4);
    cache->h4d = std::move(h4d);
    cache->h5 = std::move(h5);
    cache->m5 = std::move(m5);
    cache->h5d = std::move(h5d);
  }
  return out;
}

template <typename T>
Tensor<T> backward_classifier(NetworkParams<T>& net, int domain,
                              const ClassifierCache<T>& c,
                              const Tensor<T>& d_scores) {
  Tensor<T> d5;
  linear_backward(net.heads[domain], c.h5d, d_scores, &d5);
  dropout_backward_inplace(c.m5, d5);
  relu_backward_inplace(c.h5, d5);
  Tensor<T> d4;
  linear_backward(net.fc5, c.h4d, d5, &d4);
  dropout_backward_inplace(c.m4, d4);
  relu_backward_inplace(c.h4, d4);
  Tensor<T> dx;
  linear_backward(net.fc4, c.x, d4, &dx);
  return dx;
}

template <typename T>
std::vector<ScorePair> to_score_pairs(const Tensor<T>& logits) {
  std::vector<ScorePair> out(logits.n());
  for (int i = 0; i < logits.n(); ++i) {
    out[i] = {static_cast<double>(logits[2 * i]),
              static_cast<double>(logits[2 * i + 1])};
  }
  return out;
}

template <typename T>
std::vector<ScorePair> classify(const NetworkParams<T>& net,
                                const FeatureMap<T>& rgb3,
                                const FeatureMap<T>& t3, int domain) {
  if (rgb3.level != 3 || t3.level != 3) {
    throw std::logic_error("classify: expects level-3 feature maps");
  }
  return to_score_pairs(classify_features<T>(
      net, join_features(rgb3.data, t3.data), domain, false, nullptr,
      nullptr));
}

template <typename T>
Tensor<T> extract_features(const NetworkParams<T>& net, const Tensor<T>& rgb,
                           const Tensor<T>& t, bool use_dmc, int chunk) {
  rgb.check_same(t, "extract_features");
  const int n = rgb.n();
  const int d = classifier_input_width(net.config);
  Tensor<T> out(n, d, 1, 1);
  const std::size_t per = rgb.shape().per_sample();
  for (int start = 0; start < n; start += chunk) {
    const int cnt = std::min(chunk, n - start);
    Tensor<T> r(cnt, rgb.c(), rgb.h(), rgb.w());
    Tensor<T> th(cnt, rgb.c(), rgb.h(), rgb.w());
    std::copy(rgb.data() + start * per, rgb.data() + (start + cnt) * per,
              r.data());
    std::copy(t.data() + start * per, t.data() + (start + cnt) * per,
              th.data());
    auto [r3, t3] =
        forward_features<T>(net, r, th, RunMode{false, use_dmc}, nullptr, nullptr);
    Tensor<T> j = join_features(r3, t3);
    std::copy(j.data(), j.data() + j.size(),
              out.data() + static_cast<std::size_t>(start) * d);
  }
  return out;
}

#define RGBT_INSTANTIATE_NETWORK(T)                                           \
  template struct NetworkParams<T>;                                           \
  template NetworkParams<float> NetworkParams<T>::cast<float>() const;        \
  template NetworkParams<double> NetworkParams<T>::cast<double>() const;      \
  template NetworkParams<T> build_network<T>(const ModelConfig&, int,         \
                                             std::uint64_t);                  \
  template void load_pretrained_backbone(NetworkParams<T>&,                   \
                                         const std::string&, bool);           \
  template std::pair<Tensor<T>, Tensor<T>> forward_features(                  \
      const NetworkParams<T>&, const Tensor<T>&, const Tensor<T>&,            \
      const RunMode&, std::mt19937_64*, FeatureCache<T>*);                    \
  template std::pair<FeatureMap<T>, FeatureMap<T>> forward_features(          \
      const NetworkParams<T>&, const Tensor<T>&, const Tensor<T>&, bool);     \
  template void update_batchnorm_stats(NetworkParams<T>&,                     \
                                       const FeatureCache<T>&);               \
  template std::pair<Tensor<T>, Tensor<T>> backward_features(                 \
      NetworkParams<T>&, const RunMode&, const FeatureCache<T>&,              \
      const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> join_features(const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> classify_features(const NetworkParams<T>&,               \
                                       const Tensor<T>&, int, bool,           \
                                       std::mt19937_64*, ClassifierCache<T>*);\
  template Tensor<T> backward_classifier(NetworkParams<T>&, int,              \
                                         const ClassifierCache<T>&,           \
                                         const Tensor<T>&);                   \
  template std::vector<ScorePair> to_score_pairs(const Tensor<T>&);           \
  template std::vector<ScorePair> classify(const NetworkParams<T>&,           \
                                           const FeatureMap<T>&,              \
                                           const FeatureMap<T>&, int);        \
  template Tensor<T> extract_features(const NetworkParams<T>&,                \
                                      const Tensor<T>&, const Tensor<T>&,     \
                                      bool, int);

RGBT_INSTANTIATE_NETWORK(float)
RGBT_INSTANTIATE_NETWORK(double)

}  // namespace rgbt
