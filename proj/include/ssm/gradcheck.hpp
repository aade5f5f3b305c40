#pragma once

#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace ssm {

struct GradCheckResult {
  std::string component;
  int64_t checked = 0;
  // Per parameter tensor: |g_analytic - g_numeric|_2 / max(|g_analytic|_2, |g_numeric|_2, floor); max over tensors.
  double max_rel_error = 0.0;
  std::string worst_tensor;
  // Per entry, same formula on scalars. Diagnostic only: entries with tiny gradients are dominated by the
  // step^2 truncation term.
  double max_entry_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_entry;
};

struct GradCheckOptions {
  double step = 1e-3;
  double denominator_floor = 1e-3;
};

// Compares autograd gradients of a scalar objective with central differences, entry by entry, for every
// listed parameter (float64 expected). Results are grouped by the first segment of the parameter name.
std::vector<GradCheckResult> check_gradients(const std::vector<std::pair<std::string, torch::Tensor>>& params,
                                             const std::function<torch::Tensor()>& objective,
                                             const GradCheckOptions& opts = {});

// Finite-difference suite on the "gradcheck" preset (d=16, depth 2, 8x16 images, batch 2): the full
// pre-training objective through every online-branch component, then the text decoder's cross-entropy.
std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed, const GradCheckOptions& opts = {});

}  // namespace ssm
