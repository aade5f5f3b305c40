#include <gtest/gtest.h>

#include "ssm/gradcheck.hpp"

using namespace ssm;

namespace {

torch::Tensor param(std::vector<double> v) {
  return torch::tensor(v, torch::kFloat64).requires_grad_(true);
}

}  // namespace

TEST(GradCheck, ExactOnCubic) {
  // f = sum(w^3) + sum(w * b); central differences of a cubic carry only the step^2 term w.r.t. w.
  auto w = param({0.5, -1.0, 2.0});
  auto b = param({1.5, 0.25, -0.75});
  const auto results = check_gradients({{"w.x", w}, {"b.x", b}}, [&] { return (w.pow(3) + w * b).sum(); });
  ASSERT_EQ(results.size(), 2u);
  for (const auto& r : results) {
    EXPECT_EQ(r.checked, 3);
    EXPECT_LT(r.max_rel_error, 1e-6) << r.component;
  }
}

TEST(GradCheck, FlagsWrongGradient) {
  // Detaching one factor halves the analytic gradient of sum(x^2).
  auto x = param({0.3, -0.7, 1.1, 2.0});
  const auto results = check_gradients({{"x", x}}, [&] { return (x * x.detach()).sum(); });
  ASSERT_EQ(results.size(), 1u);
  EXPECT_NEAR(results[0].max_rel_error, 0.5, 1e-6);
  EXPECT_GT(results[0].max_entry_rel_error, 0.4);
}

TEST(GradCheck, LeavesParametersUnchanged) {
  auto x = param({0.3, -0.7});
  const auto before = x.detach().clone();
  check_gradients({{"x", x}}, [&] { return (x.sin() * x).sum(); });
  EXPECT_TRUE(torch::equal(before, x.detach()));
}
