#include "rgbt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "rgbt/errors.hpp"

namespace rgbt {

TrainConfig desk_train_config() {
  TrainConfig c;
  c.iterations = 200;
  c.lr_backbone_fc *= 10;
  c.lr_adapter_dmc *= 10;
  return c;
}

void validate(const TrainConfig& c) {
  if (!(0 <= c.neg_thr && c.neg_thr < c.pos_thr && c.pos_thr <= 1)) {
    throw ConfigError("trainer: thresholds must satisfy 0 <= neg_thr < pos_thr <= 1");
  }
  if (c.frames_per_batch < 1 || c.pos_per_batch < 0 || c.neg_per_batch < 0 ||
      c.pos_per_batch + c.neg_per_batch == 0) {
    throw ConfigError("trainer: batch quotas must be positive");
  }
  if (c.epochs < 0 || c.iterations < 0) {
    throw ConfigError("trainer: negative iteration count");
  }
  if (c.momentum < 0 || c.momentum >= 1 || c.weight_decay < 0) {
    throw ConfigError("trainer: momentum must be in [0, 1), weight decay >= 0");
  }
  for (const auto& [name, rate] : c.lr_override) {
    bool known = false;
    for (int g = 0; g < 5; ++g) {
      known |= name == group_name(static_cast<ParamGroup>(g));
    }
    if (!known) throw ConfigError("trainer: unknown parameter group '" + name + "'");
    if (rate < 0) throw ConfigError("trainer: negative learning rate for " + name);
  }
}

std::array<double, 5> group_rates(const TrainConfig& c) {
  std::array<double, 5> r{};
  r[static_cast<int>(ParamGroup::backbone)] = c.lr_backbone_fc;
  r[static_cast<int>(ParamGroup::fc_shared)] = c.lr_backbone_fc;
  r[static_cast<int>(ParamGroup::fc_domain)] = c.lr_backbone_fc;
  r[static_cast<int>(ParamGroup::adapter)] = c.lr_adapter_dmc;
  r[static_cast<int>(ParamGroup::dmc)] = c.lr_adapter_dmc;
  for (int g = 0; g < 5; ++g) {
    auto it = c.lr_override.find(group_name(static_cast<ParamGroup>(g)));
    if (it != c.lr_override.end()) r[g] = it->second;
  }
  return r;
}

MiniBatch build_minibatch(const RgbtSequence& seq, const TrainConfig& c,
                          int input_size, std::mt19937_64& rng) {
  if (seq.size() == 0) throw std::invalid_argument("build_minibatch: empty sequence");
  const int nf = c.frames_per_batch;
  std::vector<int> frames;
  if (seq.size() >= nf) {
    std::vector<int> all(seq.size());
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    frames.assign(all.begin(), all.begin() + nf);
  } else {
    std::uniform_int_distribution<int> pick(0, seq.size() - 1);
    for (int i = 0; i < nf; ++i) frames.push_back(pick(rng));
  }

  auto share = [&](int total, int i) {
    if (c.per_frame_quota) return total;
    return total / nf + (i < total % nf ? 1 : 0);
  };

  struct Item {
    int slot;
    BoundingBox box;
  };
  std::vector<Item> pos, neg;
  std::vector<FramePair> pairs;
  for (int i = 0; i < nf; ++i) {
    pairs.push_back(seq.frame(frames[i]));
    SampleQuota q;
    q.positives = share(c.pos_per_batch, i);
    q.negatives = share(c.neg_per_batch, i);
    q.pos_thr = c.pos_thr;
    q.neg_thr = c.neg_thr;
    q.pos_sampler = c.pos_sampler;
    q.neg_sampler = c.neg_sampler;
    q.global_neg_fraction = c.global_neg_fraction;
    const auto s = draw_labeled_samples(seq.gt[frames[i]], pairs.back().bounds(), q, rng);
    for (const auto& b : s.positives) pos.push_back({i, b});
    for (const auto& b : s.negatives) neg.push_back({i, b});
  }

  MiniBatch mb;
  const int n = static_cast<int>(pos.size() + neg.size());
  const std::size_t per = 3ull * input_size * input_size;
  mb.rgb = Tensor<float>(n, 3, input_size, input_size);
  mb.t = Tensor<float>(n, 3, input_size, input_size);
  int k = 0;
  for (const auto* list : {&pos, &neg}) {
    for (const auto& it : *list) {
      crop_patch(pairs[it.slot].rgb, it.box, input_size, c.context, mb.rgb.data() + k * per);
      crop_patch(pairs[it.slot].thermal, it.box, input_size, c.context, mb.t.data() + k * per);
      mb.labels.push_back(list == &pos ? 1 : 0);
      mb.boxes.push_back(it.box);
      mb.frames.push_back(frames[it.slot]);
      ++k;
    }
  }
  return mb;
}

template <typename T>
double softmax_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                    Tensor<T>* grad) {
  if (logits.c() != 2 || logits.shape().per_sample() != 2) {
    throw std::invalid_argument("softmax_loss: expected [N, 2, 1, 1] logits");
  }
  const int n = logits.n();
  if (static_cast<int>(labels.size()) != n || n == 0) {
    throw std::invalid_argument("softmax_loss: label count mismatch");
  }
  if (grad) *grad = Tensor<T>(logits.shape());
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const double pos = logits[2 * i], neg = logits[2 * i + 1];
    const double m = std::max(pos, neg);
    const double lse = m + std::log(std::exp(pos - m) + std::exp(neg - m));
    const double target = labels[i] ? pos : neg;
    total += lse - target;
    if (grad) {
      const double p_pos = std::exp(pos - lse), p_neg = std::exp(neg - lse);
      (*grad)[2 * i] = static_cast<T>((p_pos - (labels[i] ? 1 : 0)) / n);
      (*grad)[2 * i + 1] = static_cast<T>((p_neg - (labels[i] ? 0 : 1)) / n);
    }
  }
  return total / n;
}

template <typename T>
void Sgd<T>::step(const std::vector<Param<T>*>& params) {
  for (Param<T>* p : params) {
    const double lr = rates_[static_cast<int>(p->group)];
    if (lr == 0) continue;
    auto& v = velocity_[p];
    if (v.shape() != p->value.shape()) v = Tensor<T>(p->value.shape());
    T* w = p->value.data();
    const T* g = p->grad.data();
    T* vel = v.data();
    const T mom = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_);
    const T rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < v.size(); ++i) {
      vel[i] = mom * vel[i] - rate * (g[i] + wd * w[i]);
      w[i] += vel[i];
    }
  }
}

template <typename T>
std::vector<Param<T>*> domain_parameters(NetworkParams<T>& net, int domain) {
  if (domain < 0 || domain >= net.num_domains()) {
    throw std::out_of_range("domain " + std::to_string(domain) + " out of range");
  }
  std::vector<Param<T>*> out;
  for (Param<T>* p : net.parameters()) {
    if (p->group != ParamGroup::fc_domain) out.push_back(p);
  }
  out.push_back(&net.heads[domain].weight);
  out.push_back(&net.heads[domain].bias);
  return out;
}

void train(NetworkParams<float>& net, const std::vector<RgbtSequence>& data,
           const TrainConfig& c,
           const std::function<void(const TrainProgress&)>& on_step) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  validate(c);
  const int domains = static_cast<int>(data.size());
  if (net.num_domains() != domains) {
    throw std::invalid_argument("train: network has " +
                                std::to_string(net.num_domains()) +
                                " heads for " + std::to_string(domains) + " sequences");
  }
  const int iterations = c.iterations > 0 ? c.iterations : c.epochs * domains;
  std::mt19937_64 rng(c.seed);
  Sgd<float> sgd(group_rates(c), c.momentum, c.weight_decay);
  const RunMode mode{true, net.config.use_dmc};

  std::ofstream log;
  std::string tmp_log;
  if (!c.log_path.empty()) {
    tmp_log = c.log_path + ".tmp";
    log.open(tmp_log);
    if (!log) throw LoadError(tmp_log + ": cannot open for writing");
    log << "iteration,domain,loss\n";
  }

  std::vector<int> order(domains);
  std::iota(order.begin(), order.end(), 0);
  for (int it = 0; it < iterations; ++it) {
    if (it % domains == 0) std::shuffle(order.begin(), order.end(), rng);
    const int d = order[it % domains];
    const MiniBatch mb = build_minibatch(data[d], c, net.config.input_size, rng);

    net.zero_grad();
    FeatureCache<float> fcache;
    auto [r3, t3] = forward_features<float>(net, mb.rgb, mb.t, mode, &rng, &fcache);
    ClassifierCache<float> ccache;
    const Tensor<float> logits =
        classify_features(net, join_features(r3, t3), d, true, &rng, &ccache);
    Tensor<float> dlogits;
    const double loss = softmax_loss(logits, mb.labels, &dlogits);
    if (!std::isfinite(loss)) {
      throw TrainingError("train: non-finite loss at iteration " + std::to_string(it + 1));
    }
    Tensor<float> dx = backward_classifier(net, d, ccache, dlogits);
    dx.reshape({r3.n(), r3.c() * 2, r3.h(), r3.w()});
    Tensor<float> dr, dt;
    split_channels(dx, r3.c(), dr, dt);
    backward_features(net, mode, fcache, dr, dt);
    update_batchnorm_stats(net, fcache);
    sgd.step(domain_parameters(net, d));

    if (log.is_open()) log << it + 1 << ',' << d << ',' << loss << '\n';
    if (on_step) on_step({it + 1, d, loss});
  }
  std::mt19937_64 head_rng(c.seed ^ 0x9e3779b97f4a7c15ull);
  net.reset_heads(1, head_rng);
  if (log.is_open()) {
    log.close();
    std::filesystem::rename(tmp_log, c.log_path);
  }
}

NetworkParams<float> train(const std::vector<RgbtSequence>& data,
                           const ModelConfig& model,
                           const std::string& pretrained_path,
                           const TrainConfig& c) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  auto net = build_network<float>(model, static_cast<int>(data.size()), c.seed);
  if (!pretrained_path.empty()) load_pretrained_backbone(net, pretrained_path, true);
  train(net, data, c);
  return net;
}

template double softmax_loss(const Tensor<float>&, const std::vector<int>&, Tensor<float>*);
template double softmax_loss(const Tensor<double>&, const std::vector<int>&, Tensor<double>*);
template class Sgd<float>;
template class Sgd<double>;
template std::vector<Param<float>*> domain_parameters(NetworkParams<float>&, int);
template std::vector<Param<double>*> domain_parameters(NetworkParams<double>&, int);

}  // namespace rgbt
