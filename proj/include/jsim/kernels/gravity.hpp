#ifndef JSIM_KERNELS_GRAVITY_HPP_
#define JSIM_KERNELS_GRAVITY_HPP_

#include <Eigen/Dense>

#include "jsim/kernels/particles.hpp"

// Plummer-softened pairwise gravity, G = 1:
//
//   a(x) = sum_j m_j (x_j - x) / (|x_j - x|^2 + eps^2)^{3/2}
//
// With eps > 0 a source sitting exactly at the target contributes zero (the
// numerator vanishes), so the cross-field form is safe for self-use. With
// eps == 0 a coincident source/target pair is a genuine singularity and
// raises CoincidentParticles.

namespace jsim::kernels {

// Field of `sources` evaluated at each column of `targets`.
Eigen::Matrix3Xd direct_accel(const ParticleSet& sources, const Eigen::Matrix3Xd& targets,
                              double eps);

// Self-field with index-based self-exclusion, usable at eps == 0.
Eigen::Matrix3Xd direct_accel_self(const ParticleSet& set, double eps);

// -sum_{i<j} m_i m_j / sqrt(|r_ij|^2 + eps^2)
double potential_energy(const ParticleSet& set, double eps);

// Pairwise potential between two disjoint sets (every a-b pair once).
double cross_potential_energy(const ParticleSet& a, const ParticleSet& b, double eps);

// Kinetic plus every pairwise potential across stars and gas combined.
double total_energy(const ParticleSet& stars, const ParticleSet& gas, double eps);

}  // namespace jsim::kernels

#endif  // JSIM_KERNELS_GRAVITY_HPP_
