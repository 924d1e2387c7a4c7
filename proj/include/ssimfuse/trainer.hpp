#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ssimfuse/loss.hpp"
#include "ssimfuse/network.hpp"

namespace ssimfuse {

/// Bias-corrected Adam moments, one slot per ParamSet entry (empty for
/// non-learnable entries such as running statistics).
template <class T>
struct AdamState {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  static AdamState for_params(const ParamSet<T>& params, double lr) {
    AdamState s;
    s.lr = lr;
    for (const auto& e : params.entries()) {
      const std::size_t n = e.learnable() ? e.value.size() : 0;
      s.m.emplace_back(n, T(0));
      s.v.emplace_back(n, T(0));
    }
    return s;
  }
};

/// One Adam update. `grads[k]` belongs to `params.entries()[k]`; entries
/// that are not learnable are skipped.
template <class T>
void adam_step(ParamSet<T>& params, const std::vector<std::vector<T>>& grads, AdamState<T>& state) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size())
    throw ShapeError("adam_step: gradient/moment count does not match parameter count");
  ++state.step;
  const double c1 = 1 - std::pow(state.beta1, double(state.step));
  const double c2 = 1 - std::pow(state.beta2, double(state.step));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (!entries[k].learnable()) continue;
    auto& p = entries[k].value.vec();
    const auto& g = grads[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (g.size() != p.size() || m.size() != p.size())
      throw ShapeError("adam_step: gradient for '" + entries[k].name + "' has wrong size");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = T(state.beta1) * m[i] + T(1 - state.beta1) * g[i];
      v[i] = T(state.beta2) * v[i] + T(1 - state.beta2) * g[i] * g[i];
      const T mhat = m[i] / T(c1);
      const T vhat = v[i] / T(c2);
      p[i] -= T(state.lr) * mhat / (std::sqrt(vhat) + T(state.eps));
    }
  }
  ++params.steps;
}

struct LossValues {
  double l_ssim_a = 0;  // 1 - ssim(F, I1)
  double l_ssim_b = 0;  // 1 - ssim(F, I2)
  double l_l2 = 0;
  double l_total = 0;

  bool finite() const {
    return std::isfinite(l_ssim_a) && std::isfinite(l_ssim_b) && std::isfinite(l_l2) && std::isfinite(l_total);
  }
};

struct PairLoss {
  std::string pair_id;
  LossValues loss;
};

struct TrainRecord {
  int epoch = 0;
  std::vector<PairLoss> per_pair;
  LossValues mean;

  friend bool operator==(const TrainRecord& a, const TrainRecord& b) {
    auto same = [](const LossValues& x, const LossValues& y) {
      return x.l_ssim_a == y.l_ssim_a && x.l_ssim_b == y.l_ssim_b && x.l_l2 == y.l_l2 && x.l_total == y.l_total;
    };
    if (a.epoch != b.epoch || !same(a.mean, b.mean) || a.per_pair.size() != b.per_pair.size()) return false;
    for (std::size_t i = 0; i < a.per_pair.size(); ++i)
      if (a.per_pair[i].pair_id != b.per_pair[i].pair_id || !same(a.per_pair[i].loss, b.per_pair[i].loss))
        return false;
    return true;
  }
};

struct TrainResult {
  ParamSet<double> params;
  std::vector<TrainRecord> history;
};

using EpochCallback = std::function<void(const TrainRecord&)>;

/// Fisher-Yates shuffle driven by raw engine output so the order depends
/// only on the engine, not on the standard library's distributions.
inline void seeded_shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
}

/// One optimization step on a single pair. Returns the observed losses.
inline LossValues train_step(ParamSet<double>& params, AdamState<double>& adam, const FusionConfig& config,
                             const SSIMParams& ssim_params, const ImagePair& pair) {
  auto fwd = forward(params, config, pair, NormMode::Train, /*track_gradients=*/true);
  Graph<double>& g = *fwd.graph;
  const auto i1 = g.constant(pair.anatomical.to_tensor());
  const auto i2 = g.constant(pair.functional.to_tensor());
  const auto terms = total_loss(fwd.nodes.fused, i1, i2, config.lambda, ssim_params);
  LossValues lv{1 - terms.ssim_a.tensor().item(), 1 - terms.ssim_b.tensor().item(), terms.l2.tensor().item(),
                terms.total.tensor().item()};
  if (!lv.finite()) return lv;
  g.backward(terms.total);

  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& e : params.entries()) {
    if (!e.learnable()) {
      grads.emplace_back();
      continue;
    }
    const auto gr = fwd.nodes.params.at(e.name).grad();
    grads.emplace_back(gr.begin(), gr.end());
    if (grads.back().empty()) grads.back().assign(e.value.size(), 0.0);
  }
  adam_step(params, grads, adam);
  commit_norm_updates(params, fwd.nodes);
  return lv;
}

/// Unsupervised training with Adam, batch size 1 and a seeded per-epoch
/// shuffle. Throws TrainingError on the first non-finite loss.
inline TrainResult train(const FusionConfig& config, const std::vector<ImagePair>& dataset, std::uint64_t seed,
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  if (dataset.empty()) throw ArgumentError("train: dataset is empty");
  for (const auto& p : dataset) p.validate();

  TrainResult result{init_params<double>(config, seed), {}};
  AdamState<double> adam = AdamState<double>::for_params(result.params, config.lr);
  const SSIMParams ssim_params = SSIMParams::from_config(config);
  std::mt19937_64 shuffle_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.size());

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t(0));
    seeded_shuffle(order, shuffle_rng);
    TrainRecord rec;
    rec.epoch = epoch;
    for (std::size_t idx : order) {
      const ImagePair& pair = dataset[idx];
      const LossValues lv = train_step(result.params, adam, config, ssim_params, pair);
      if (!lv.finite()) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << ", pair '" << pair.id << "': l_ssim_a=" << lv.l_ssim_a
           << " l_ssim_b=" << lv.l_ssim_b << " l_l2=" << lv.l_l2 << " l_total=" << lv.l_total;
        throw TrainingError(os.str());
      }
      rec.per_pair.push_back({pair.id, lv});
      rec.mean.l_ssim_a += lv.l_ssim_a;
      rec.mean.l_ssim_b += lv.l_ssim_b;
      rec.mean.l_l2 += lv.l_l2;
      rec.mean.l_total += lv.l_total;
    }
    const double n = double(dataset.size());
    rec.mean.l_ssim_a /= n;
    rec.mean.l_ssim_b /= n;
    rec.mean.l_l2 /= n;
    rec.mean.l_total /= n;
    if (on_epoch) on_epoch(rec);
    result.history.push_back(std::move(rec));
  }
  return result;
}

inline constexpr const char* kLossCsvHeader = "epoch,l_ssim_a,l_ssim_b,l_l2,l_total";

/// Epoch-mean loss curve, one row per epoch. Values use 17 significant digits.
inline void write_loss_csv(std::ostream& os, const std::vector<TrainRecord>& history) {
  os << kLossCsvHeader << '\n';
  os.precision(17);
  for (const auto& r : history)
    os << r.epoch << ',' << r.mean.l_ssim_a << ',' << r.mean.l_ssim_b << ',' << r.mean.l_l2 << ',' << r.mean.l_total
       << '\n';
}

}  // namespace ssimfuse
