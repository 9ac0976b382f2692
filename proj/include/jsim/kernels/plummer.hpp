#ifndef JSIM_KERNELS_PLUMMER_HPP_
#define JSIM_KERNELS_PLUMMER_HPP_

#include <cstdint>

#include "jsim/kernels/particles.hpp"

namespace jsim::kernels {

// Equal-mass Plummer sphere in virial equilibrium, centered by subtracting
// the center of mass and mean velocity. Radii are truncated at
// cutoff_radii * scale_radius. The sampler draws its own uniforms from
// mt19937_64 output, so a given (n, seed) is bit-identical everywhere.
ParticleSet plummer_sphere(Eigen::Index n, std::uint64_t seed, double total_mass = 1.0,
                           double scale_radius = 1.0, double cutoff_radii = 10.0);

// Turns a plain set into a stellar one: initial masses uniform in
// [m0_lo, m0_hi], ages zero. Overwrites `mass` with the draws; positions and
// velocities are left alone.
void assign_stellar(ParticleSet& stars, std::uint64_t seed, double m0_lo, double m0_hi);

}  // namespace jsim::kernels

#endif  // JSIM_KERNELS_PLUMMER_HPP_
