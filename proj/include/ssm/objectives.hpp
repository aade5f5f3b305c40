#pragma once

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace ssm {

// Pixel reconstruction loss: squared error summed over channels, averaged over all pixels of the batch,
// for both the original and the inverted direction. Inputs are (B, C, H, W).
torch::Tensor loss_pix(const torch::Tensor& pred_p, const torch::Tensor& pred_n, const torch::Tensor& target_p,
                       const torch::Tensor& target_n);

struct DiscriminativeOptions {
  double tau = 0.2;
  // Keep other windows of the same image in the negative set.
  bool same_image_negatives = true;
};

// InfoNCE between window queries and target keys, (B, n_windows, D) each. Every query's positive is the
// key at the same (image, window); negatives are the remaining keys of the same direction stream.
// Reduced as the mean over all query windows of both streams. Returns 0 when no negatives exist.
torch::Tensor loss_dis(const torch::Tensor& q_p, const torch::Tensor& q_n, const torch::Tensor& k_p,
                       const torch::Tensor& k_n, const DiscriminativeOptions& opts = {});

// Dense reconstruction: (1/N) sum_i |q_p^i - k_p^i|^2 + |q_n^i - k_n^i|^2 over the N window instances.
torch::Tensor loss_den(const torch::Tensor& q_p, const torch::Tensor& q_n, const torch::Tensor& k_p,
                       const torch::Tensor& k_n);

torch::Tensor combine_losses(const torch::Tensor& l_pix, const torch::Tensor& l_dis, const torch::Tensor& l_den,
                             double alpha);

struct LossBreakdown {
  double l_pix = 0;
  double l_dis = 0;
  double l_den = 0;
  double l_feat = 0;
  double total = 0;
  double alpha = 1.0;
  double tau = 0.2;

  nlohmann::json to_json() const;
};

// total = l_pix + alpha * (l_dis + l_den)
LossBreakdown loss_total(double l_pix, double l_dis, double l_den, double alpha, double tau = 0.2);

}  // namespace ssm
