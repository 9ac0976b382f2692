#ifndef JSIM_KERNELS_LEAPFROG_HPP_
#define JSIM_KERNELS_LEAPFROG_HPP_

#include <Eigen/Dense>
#include <functional>

#include "jsim/kernels/particles.hpp"
#include "jsim/kernels/tree.hpp"

namespace jsim::kernels {

using AccelFn = std::function<Eigen::Matrix3Xd(const ParticleSet&)>;

// One kick-drift-kick step under the set's own field. Symplectic: energy
// error stays bounded and scales as O(dt^2); angular momentum is conserved
// exactly (to roundoff) for central forces.
void kdk_step(ParticleSet& set, double dt, const AccelFn& accel);

AccelFn self_gravity(double eps);
AccelFn self_gravity_tree(double eps, TreeConfig cfg);

}  // namespace jsim::kernels

#endif  // JSIM_KERNELS_LEAPFROG_HPP_
