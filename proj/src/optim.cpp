#include "dvpe/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dvpe {

double cosine_lr(int step, const OptimConfig& cfg) {
  if (cfg.warmup > 0 && step < cfg.warmup) return cfg.lr * (step + 1) / cfg.warmup;
  const double span = std::max(1, cfg.steps - cfg.warmup);
  const double t = std::min(1.0, (step - cfg.warmup) / span);
  const double floor = cfg.lr * cfg.min_lr_ratio;
  return floor + 0.5 * (cfg.lr - floor) * (1.0 + std::cos(kPi * t));
}

template <typename T>
double clip_grad_norm(num::ParamStore<T>& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.all())
    for (T g : p.grad) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : store.all())
      for (T& g : p.grad) g *= s;
  }
  return norm;
}

namespace {

bool decays(const std::string& name) { return name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0; }

}  // namespace

template <typename T>
void Optimizer<T>::step(num::ParamStore<T>& store, double lr) {
  auto& params = store.all();
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), T{0});
      v_.emplace_back(cfg_.type == "adamw" ? p.value.size() : 0, T{0});
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("Optimizer: parameter set changed");
  ++t_;
  const bool adam = cfg_.type == "adamw";
  if (!adam && cfg_.type != "sgd") throw std::invalid_argument("Optimizer: unknown type " + cfg_.type);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  std::size_t i = 0;
  for (auto& p : params) {
    auto& m = m_[i];
    auto& v = v_[i];
    ++i;
    if (p.grad.size() != p.value.size()) continue;
    const bool wd = decays(p.name) && cfg_.weight_decay > 0.0;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      double x = p.value.data[k];
      if (wd) x -= lr * cfg_.weight_decay * x;
      if (adam) {
        const double mk = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        const double vk = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        x -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg_.eps);
      } else {
        const double mk = cfg_.momentum * m[k] + g;
        m[k] = static_cast<T>(mk);
        x -= lr * mk;
      }
      p.value.data[k] = static_cast<T>(x);
    }
  }
}

template double clip_grad_norm(num::ParamStore<float>&, double);
template double clip_grad_norm(num::ParamStore<double>&, double);
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace dvpe
