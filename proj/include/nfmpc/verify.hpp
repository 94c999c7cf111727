#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nfmpc/flow.hpp"
#include "nfmpc/param_vector.hpp"

namespace nfmpc::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Central finite differences of f over every entry of params, step
/// 1e-6 * max(1, |p|). Restores params afterwards.
Vec finite_diff_params(ParamVector& params, const std::function<double()>& f,
                       double base_step = 1e-6);

/// |a - b| / max(floor, |a|, |b|)
double rel_err(double a, double b, double floor = 1e-2);

double max_rel_err(ConstSpan a, ConstSpan b, double floor = 1e-2);

/// One-parameter smooth invertible 1-D map, u = exp(l) z + c0 l + c1, used by
/// the quadrature oracle for the approximate update gradient.
class AffineExpFlow : public Bijection {
 public:
  AffineExpFlow(double lambda0, double c0, double c1);

  int dim() const override { return 1; }
  int context_dim() const override { return 0; }
  const ParamVector& params() const override { return params_; }
  ParamVector& params() override { return params_; }

  FlowEval push(ConstSpan z, ConstSpan) const override;
  FlowEval pull(ConstSpan u, ConstSpan) const override;
  void pull_vjp(ConstSpan u, ConstSpan, ConstSpan g_z, double g_logdet,
                ParamVector& grad) const override;

 private:
  double lambda() const { return params_.seg("theta")[0]; }
  ParamVector params_;
  double c0_, c1_;
};

// Acceptance criteria 1-6 and 9 (fast, mathematical).
CheckResult gradient_suite();
CheckResult flow_exactness();
CheckResult latent_equivalence();
CheckResult update_gradient_oracle();
CheckResult sigmoid_logdet_values();
CheckResult weight_properties();
CheckResult eval_determinism(const std::string& scratch_dir);

std::vector<CheckResult> run_fast_suite(const std::string& scratch_dir);

}  // namespace nfmpc::verify
