#include "jsim/kernels/leapfrog.hpp"

#include "jsim/kernels/gravity.hpp"

namespace jsim::kernels {

void kdk_step(ParticleSet& set, double dt, const AccelFn& accel) {
  const double h = 0.5 * dt;
  set.vel += h * accel(set);
  set.pos += dt * set.vel;
  set.vel += h * accel(set);
}

AccelFn self_gravity(double eps) {
  return [eps](const ParticleSet& s) { return direct_accel_self(s, eps); };
}

// Cross-form self-use: each particle's own contribution is skipped as a
// coincident source, so eps must be positive here.
AccelFn self_gravity_tree(double eps, TreeConfig cfg) {
  return [eps, cfg](const ParticleSet& s) { return tree_accel(s, s.pos, eps, cfg); };
}

}  // namespace jsim::kernels
