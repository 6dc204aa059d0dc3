#pragma once

#include <map>
#include <string>

#include "rdm/checkpoint.hpp"
#include "rdm/matrix.hpp"

namespace rdm::numerics {

// Adaptive-moment gradient descent over a ParamSet. State is keyed by tensor
// name; learning rate is supplied per step so schedules live with the caller.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update. Gradients are clipped to the given global L2 norm
  // first (clip_norm <= 0 disables clipping). Tensors without a gradient
  // entry are left untouched.
  void step(ParamSet& params, std::map<std::string, Matrix>& grads, double lr,
            double clip_norm);

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace rdm::numerics
