#include "ssm/objectives.hpp"

#include <iostream>

namespace ssm {

namespace {

void check_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  TORCH_CHECK(a.sizes() == b.sizes(), what, ": shape mismatch ", a.sizes(), " vs ", b.sizes());
}

// Mean InfoNCE over all queries of one stream.
torch::Tensor info_nce(const torch::Tensor& q, const torch::Tensor& k, const DiscriminativeOptions& opts,
                       bool& has_negatives) {
  const int64_t b = q.size(0), w = q.size(1);
  const int64_t n = b * w;
  auto qf = q.reshape({n, q.size(2)});
  auto kf = k.reshape({n, k.size(2)});
  auto logits = torch::matmul(qf, kf.t()) / opts.tau;
  if (!opts.same_image_negatives) {
    auto image = torch::arange(n, torch::kInt64).div(w, "floor");
    auto same = image.unsqueeze(1).eq(image.unsqueeze(0)).logical_and(torch::eye(n, torch::kBool).logical_not());
    logits = logits.masked_fill(same, -std::numeric_limits<double>::infinity());
    has_negatives = b > 1;
  } else {
    has_negatives = n > 1;
  }
  auto target = torch::arange(n, torch::kInt64);
  return torch::nn::functional::cross_entropy(logits, target);
}

}  // namespace

torch::Tensor loss_pix(const torch::Tensor& pred_p, const torch::Tensor& pred_n, const torch::Tensor& target_p,
                       const torch::Tensor& target_n) {
  check_same(pred_p, target_p, "loss_pix");
  check_same(pred_n, target_n, "loss_pix");
  check_same(pred_p, pred_n, "loss_pix");
  TORCH_CHECK(pred_p.dim() == 4, "loss_pix expects (B, C, H, W)");
  const double pixels = static_cast<double>(pred_p.size(0) * pred_p.size(2) * pred_p.size(3));
  return ((pred_p - target_p).square().sum() + (pred_n - target_n).square().sum()) / pixels;
}

torch::Tensor loss_dis(const torch::Tensor& q_p, const torch::Tensor& q_n, const torch::Tensor& k_p,
                       const torch::Tensor& k_n, const DiscriminativeOptions& opts) {
  check_same(q_p, k_p, "loss_dis");
  check_same(q_n, k_n, "loss_dis");
  check_same(q_p, q_n, "loss_dis");
  TORCH_CHECK(q_p.dim() == 3, "loss_dis expects (B, n_windows, D)");
  TORCH_CHECK(opts.tau > 0.0, "loss_dis: tau must be positive");
  bool neg_p = false, neg_n = false;
  auto lp = info_nce(q_p, k_p, opts, neg_p);
  auto ln = info_nce(q_n, k_n, opts, neg_n);
  if (!neg_p || !neg_n) {
    std::cerr << "warning: loss_dis has no negative samples in this batch; returning 0\n";
    return (q_p.sum() * 0.0);
  }
  return 0.5 * (lp + ln);
}

torch::Tensor loss_den(const torch::Tensor& q_p, const torch::Tensor& q_n, const torch::Tensor& k_p,
                       const torch::Tensor& k_n) {
  check_same(q_p, k_p, "loss_den");
  check_same(q_n, k_n, "loss_den");
  check_same(q_p, q_n, "loss_den");
  const double instances = static_cast<double>(q_p.numel() / q_p.size(-1));
  return ((q_p - k_p).square().sum() + (q_n - k_n).square().sum()) / instances;
}

torch::Tensor combine_losses(const torch::Tensor& l_pix, const torch::Tensor& l_dis, const torch::Tensor& l_den,
                             double alpha) {
  return l_pix + alpha * (l_dis + l_den);
}

nlohmann::json LossBreakdown::to_json() const {
  return {{"l_pix", l_pix}, {"l_dis", l_dis}, {"l_den", l_den}, {"l_feat", l_feat}, {"total", total}};
}

LossBreakdown loss_total(double l_pix, double l_dis, double l_den, double alpha, double tau) {
  LossBreakdown b;
  b.l_pix = l_pix;
  b.l_dis = l_dis;
  b.l_den = l_den;
  b.l_feat = l_dis + l_den;
  b.total = l_pix + alpha * b.l_feat;
  b.alpha = alpha;
  b.tau = tau;
  return b;
}

}  // namespace ssm
