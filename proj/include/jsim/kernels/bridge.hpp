#ifndef JSIM_KERNELS_BRIDGE_HPP_
#define JSIM_KERNELS_BRIDGE_HPP_

#include <Eigen/Dense>
#include <vector>

#include "jsim/kernels/particles.hpp"
#include "jsim/kernels/stellar.hpp"
#include "jsim/kernels/tree.hpp"

// Two-system coupling: stars and gas each evolve under their own gravity,
// and exchange momentum through half-step cross kicks on either side of the
// drift (kick-drift-kick at the coupling level too). The cross field can be
// evaluated directly or through a Barnes-Hut tree.

namespace jsim::kernels {

enum class KickKernel { direct, tree };

struct BridgeConfig {
  double dt = 1.0 / 64;
  int stellar_stride = 10;  // run stellar evolution every n-th step; 0 = off
  KickKernel kick = KickKernel::direct;
  TreeConfig tree;
  double eps = 1e-2;
  double gas_wind = 0.0;       // uniform outward radial acceleration on gas
  double age_per_time = 0.0;   // table age units per simulation time unit
};

// wind * x/|x| per particle; zero at the origin.
Eigen::Matrix3Xd radial_wind(const ParticleSet& set, double wind);

class Bridge {
 public:
  // The table may be null when stellar_stride is 0.
  Bridge(ParticleSet stars, ParticleSet gas, BridgeConfig cfg,
         const EvolutionTable* table = nullptr);

  // One coupled step: cross half-kick, one internal kdk step per side, cross
  // half-kick, then (every stride-th step) stellar evolution. Both half-kick
  // fields are evaluated from the same pre-kick state, so the pair exchange
  // is antisymmetric and the coupling conserves total momentum. An empty
  // side contributes nothing and receives nothing: with no gas the star
  // trajectory is bit-identical to an uncoupled kdk integration.
  std::vector<SupernovaEvent> step();

  const ParticleSet& stars() const { return stars_; }
  const ParticleSet& gas() const { return gas_; }
  ParticleSet& stars() { return stars_; }
  ParticleSet& gas() { return gas_; }
  long steps_taken() const { return steps_; }
  double time() const;
  const BridgeConfig& config() const { return cfg_; }

  // Kinetic plus all pairwise potential across both sides, at cfg.eps.
  double energy() const;
  Eigen::Vector3d momentum() const;

 private:
  Eigen::Matrix3Xd cross_field(const ParticleSet& sources, const Eigen::Matrix3Xd& targets) const;
  void half_kick();

  ParticleSet stars_;
  ParticleSet gas_;
  BridgeConfig cfg_;
  const EvolutionTable* table_;
  long steps_ = 0;
};

}  // namespace jsim::kernels

#endif  // JSIM_KERNELS_BRIDGE_HPP_
