#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace ssm {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

class Checkpoint;

// Decoupled-weight-decay Adam over named parameters. Decay applies to matrices only
// (biases, norm scales and 1-d vectors are exempt).
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, torch::Tensor>> params, AdamWOptions opts);

  void step(double lr);
  void zero_grad();
  int64_t steps() const { return steps_; }
  const AdamWOptions& options() const { return opts_; }

  void save(Checkpoint& ckpt, const std::string& prefix) const;
  void load(const Checkpoint& ckpt, const std::string& prefix);

 private:
  struct Slot {
    std::string name;
    torch::Tensor param;
    torch::Tensor exp_avg;
    torch::Tensor exp_avg_sq;
    bool decay = true;
  };
  std::vector<Slot> slots_;
  AdamWOptions opts_;
  int64_t steps_ = 0;
};

// Linear warmup from 0 to base_lr over warmup_steps, then cosine decay to min_lr at total_steps.
// lr(warmup_steps) == base_lr.
double warmup_cosine_lr(int64_t step, int64_t warmup_steps, int64_t total_steps, double base_lr,
                        double min_lr = 0.0);

// One-cycle policy: cosine ramp from max_lr/div_factor to max_lr over warmup_steps, then cosine
// annealing to max_lr/(div_factor*final_div_factor).
double one_cycle_lr(int64_t step, int64_t warmup_steps, int64_t total_steps, double max_lr,
                    double div_factor = 25.0, double final_div_factor = 1e4);

// Scales gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(const std::vector<torch::Tensor>& params, double max_norm);

}  // namespace ssm
