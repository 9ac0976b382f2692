#ifndef JSIM_KERNELS_PARTICLES_HPP_
#define JSIM_KERNELS_PARTICLES_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "jsim/error.hpp"

// Particle state shared by every kernel. Kernels compute in natural units
// (G = 1); unit conversion happens at the coupler boundary, never in here.

namespace jsim::kernels {

class CoincidentParticles : public Error {
 public:
  CoincidentParticles() : Error("coincident particles with zero softening") {}
};

// Column-major particle arrays: column i of `pos`/`vel` belongs to ids[i].
// `age` and `m0` (initial mass) are sized n() for stellar sets and empty
// otherwise. ids are stable for the lifetime of the set.
struct ParticleSet {
  std::vector<std::int64_t> ids;
  Eigen::VectorXd mass;
  Eigen::Matrix3Xd pos;
  Eigen::Matrix3Xd vel;
  Eigen::VectorXd age;
  Eigen::VectorXd m0;

  Eigen::Index n() const { return mass.size(); }
  bool stellar() const { return age.size() > 0; }

  // Zeroed storage for n particles, ids 1..n.
  static ParticleSet zeros(Eigen::Index n, bool stellar = false);

  // Appends one particle; the id is one past the largest id present.
  std::int64_t add(double m, const Eigen::Vector3d& x, const Eigen::Vector3d& v);
  std::int64_t add_star(double m, const Eigen::Vector3d& x, const Eigen::Vector3d& v, double age0,
                        double initial_mass);

  // Column index of an id, or -1 when absent.
  Eigen::Index index_of(std::int64_t id) const;

  double total_mass() const { return mass.sum(); }
  Eigen::Vector3d center_of_mass() const;
  Eigen::Vector3d momentum() const { return vel * mass; }
  double kinetic_energy() const;
};

// Union of two sets. The ids must be disjoint; the result is stellar only
// when both inputs are.
ParticleSet merge(const ParticleSet& a, const ParticleSet& b);

}  // namespace jsim::kernels

#endif  // JSIM_KERNELS_PARTICLES_HPP_
