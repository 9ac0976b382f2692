#include "jsim/kernels/gravity.hpp"

#include <cmath>

namespace jsim::kernels {

Eigen::Matrix3Xd direct_accel(const ParticleSet& sources, const Eigen::Matrix3Xd& targets,
                              double eps) {
  const double e2 = eps * eps;
  const Eigen::Index nt = targets.cols();
  const Eigen::Index ns = sources.n();
  Eigen::Matrix3Xd acc = Eigen::Matrix3Xd::Zero(3, nt);
  for (Eigen::Index t = 0; t < nt; ++t) {
    const Eigen::Vector3d xt = targets.col(t);
    Eigen::Vector3d a = Eigen::Vector3d::Zero();
    for (Eigen::Index j = 0; j < ns; ++j) {
      const Eigen::Vector3d d = sources.pos.col(j) - xt;
      const double r2 = d.squaredNorm() + e2;
      if (r2 == 0.0) throw CoincidentParticles();
      a += (sources.mass(j) / (r2 * std::sqrt(r2))) * d;
    }
    acc.col(t) = a;
  }
  return acc;
}

Eigen::Matrix3Xd direct_accel_self(const ParticleSet& set, double eps) {
  const double e2 = eps * eps;
  const Eigen::Index n = set.n();
  Eigen::Matrix3Xd acc = Eigen::Matrix3Xd::Zero(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d xi = set.pos.col(i);
    Eigen::Vector3d a = Eigen::Vector3d::Zero();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const Eigen::Vector3d d = set.pos.col(j) - xi;
      const double r2 = d.squaredNorm() + e2;
      if (r2 == 0.0) throw CoincidentParticles();
      a += (set.mass(j) / (r2 * std::sqrt(r2))) * d;
    }
    acc.col(i) = a;
  }
  return acc;
}

double potential_energy(const ParticleSet& set, double eps) {
  const double e2 = eps * eps;
  const Eigen::Index n = set.n();
  double pe = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double r2 = (set.pos.col(j) - set.pos.col(i)).squaredNorm() + e2;
      if (r2 == 0.0) throw CoincidentParticles();
      pe -= set.mass(i) * set.mass(j) / std::sqrt(r2);
    }
  }
  return pe;
}

double cross_potential_energy(const ParticleSet& a, const ParticleSet& b, double eps) {
  const double e2 = eps * eps;
  double pe = 0.0;
  for (Eigen::Index i = 0; i < a.n(); ++i) {
    for (Eigen::Index j = 0; j < b.n(); ++j) {
      const double r2 = (b.pos.col(j) - a.pos.col(i)).squaredNorm() + e2;
      if (r2 == 0.0) throw CoincidentParticles();
      pe -= a.mass(i) * b.mass(j) / std::sqrt(r2);
    }
  }
  return pe;
}

double total_energy(const ParticleSet& stars, const ParticleSet& gas, double eps) {
  return stars.kinetic_energy() + gas.kinetic_energy() + potential_energy(stars, eps) +
         potential_energy(gas, eps) + cross_potential_energy(stars, gas, eps);
}

}  // namespace jsim::kernels
