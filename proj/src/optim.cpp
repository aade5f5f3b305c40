#include "ssm/optim.hpp"

#include <cmath>
#include <numbers>

#include "ssm/checkpoint.hpp"

namespace ssm {

AdamW::AdamW(std::vector<std::pair<std::string, torch::Tensor>> params, AdamWOptions opts) : opts_(opts) {
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    Slot s;
    s.name = name;
    s.param = p;
    s.exp_avg = torch::zeros_like(p);
    s.exp_avg_sq = torch::zeros_like(p);
    s.decay = p.dim() >= 2 && name.find("pos_embed") == std::string::npos &&
              name.find("queries") == std::string::npos;
    slots_.push_back(std::move(s));
  }
}

void AdamW::zero_grad() {
  for (auto& s : slots_) {
    if (s.param.grad().defined()) s.param.mutable_grad().zero_();
  }
}

void AdamW::step(double lr) {
  torch::NoGradGuard no_grad;
  ++steps_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
  for (auto& s : slots_) {
    const auto& g = s.param.grad();
    if (!g.defined()) continue;
    if (s.decay && opts_.weight_decay != 0.0) s.param.mul_(1.0 - lr * opts_.weight_decay);
    s.exp_avg.mul_(opts_.beta1).add_(g, 1.0 - opts_.beta1);
    s.exp_avg_sq.mul_(opts_.beta2).addcmul_(g, g, 1.0 - opts_.beta2);
    auto denom = (s.exp_avg_sq / bc2).sqrt_().add_(opts_.eps);
    s.param.addcdiv_(s.exp_avg, denom, -lr / bc1);
  }
}

void AdamW::save(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.put(prefix + "steps", torch::full({1}, steps_, torch::kInt64));
  for (const auto& s : slots_) {
    ckpt.put(prefix + "exp_avg." + s.name, s.exp_avg);
    ckpt.put(prefix + "exp_avg_sq." + s.name, s.exp_avg_sq);
  }
}

void AdamW::load(const Checkpoint& ckpt, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  steps_ = ckpt.get(prefix + "steps").item<int64_t>();
  for (auto& s : slots_) {
    s.exp_avg.copy_(ckpt.get(prefix + "exp_avg." + s.name, s.exp_avg.sizes()));
    s.exp_avg_sq.copy_(ckpt.get(prefix + "exp_avg_sq." + s.name, s.exp_avg_sq.sizes()));
  }
}

double warmup_cosine_lr(int64_t step, int64_t warmup_steps, int64_t total_steps, double base_lr, double min_lr) {
  if (step < warmup_steps) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const int64_t decay_steps = total_steps - warmup_steps;
  if (decay_steps <= 0) return base_lr;
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(decay_steps));
  return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double one_cycle_lr(int64_t step, int64_t warmup_steps, int64_t total_steps, double max_lr, double div_factor,
                    double final_div_factor) {
  const double initial = max_lr / div_factor;
  const double final_lr = initial / final_div_factor;
  auto cos_interp = [](double from, double to, double pct) {
    return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * pct));
  };
  if (step < warmup_steps) {
    return cos_interp(initial, max_lr, static_cast<double>(step) / static_cast<double>(warmup_steps));
  }
  const int64_t rest = total_steps - warmup_steps;
  if (rest <= 0) return max_lr;
  const double pct = std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(rest));
  return cos_interp(max_lr, final_lr, pct);
}

double clip_grad_norm(const std::vector<torch::Tensor>& params, double max_norm) {
  torch::NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& p : params) {
    if (p.grad().defined()) total += p.grad().to(torch::kFloat64).square().sum().item<double>();
  }
  total = std::sqrt(total);
  if (max_norm > 0.0 && total > max_norm) {
    const double scale = max_norm / (total + 1e-6);
    for (const auto& p : params) {
      if (p.grad().defined()) p.grad().mul_(scale);
    }
  }
  return total;
}

}  // namespace ssm
