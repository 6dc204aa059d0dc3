#include "rdm/optimizer.hpp"

#include <cmath>

namespace rdm::numerics {

void Adam::step(ParamSet& params, std::map<std::string, Matrix>& grads, double lr,
                double clip_norm) {
  if (clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) {
      const double s = clip_norm / norm;
      for (auto& [name, g] : grads) g *= s;
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, g] : grads) {
    Matrix& p = params.at(name);
    auto [it, inserted] = state_.try_emplace(name);
    if (inserted) {
      it->second.m = Matrix::Zero(p.rows(), p.cols());
      it->second.v = Matrix::Zero(p.rows(), p.cols());
    }
    Moments& mo = it->second;
    mo.m = beta1_ * mo.m + (1.0 - beta1_) * g;
    mo.v = beta2_ * mo.v + (1.0 - beta2_) * g.cwiseProduct(g);
    const Matrix mhat = mo.m / bc1;
    const Matrix vhat = mo.v / bc2;
    p -= lr * mhat.cwiseQuotient(((vhat.cwiseSqrt().array() + eps_).matrix()).eval());
  }
}

}  // namespace rdm::numerics
