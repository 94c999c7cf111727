#include "nfmpc/adam.hpp"

#include <cmath>

namespace nfmpc {

void adam_step(ParamVector& params, const ParamVector& grads, AdamState& state,
               const AdamConfig& cfg) {
  check_dim(params.same_layout(grads.segments().empty() ? params : grads) &&
                params.size() == grads.size(),
            "adam: gradient layout does not match parameters");
  for (const auto& seg : grads.segments()) {
    if (!all_finite(grads.seg(seg.name)))
      throw NumericError("adam: non-finite gradient in segment '" + seg.name + "'");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  Span p = params.values();
  ConstSpan g = grads.values();
  Span m = state.m.values();
  Span v = state.v.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace nfmpc
