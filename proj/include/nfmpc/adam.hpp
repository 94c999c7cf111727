#pragma once

#include "nfmpc/param_vector.hpp"

namespace nfmpc {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ParamVector m;
  ParamVector v;
  long step = 0;

  static AdamState zeros_like(const ParamVector& params) {
    return AdamState{params.zeros_like(), params.zeros_like(), 0};
  }
};

/// Bias-corrected Adam update, in place. Rejects non-finite gradients with a
/// diagnostic naming the offending segment.
void adam_step(ParamVector& params, const ParamVector& grads, AdamState& state,
               const AdamConfig& cfg);

}  // namespace nfmpc
