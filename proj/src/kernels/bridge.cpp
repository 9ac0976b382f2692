#include "jsim/kernels/bridge.hpp"

#include <utility>

#include "jsim/kernels/gravity.hpp"
#include "jsim/kernels/leapfrog.hpp"

namespace jsim::kernels {

Eigen::Matrix3Xd radial_wind(const ParticleSet& set, double wind) {
  Eigen::Matrix3Xd a = Eigen::Matrix3Xd::Zero(3, set.n());
  if (wind == 0.0) return a;
  for (Eigen::Index i = 0; i < set.n(); ++i) {
    const double r = set.pos.col(i).norm();
    if (r > 0.0) a.col(i) = (wind / r) * set.pos.col(i);
  }
  return a;
}

Bridge::Bridge(ParticleSet stars, ParticleSet gas, BridgeConfig cfg, const EvolutionTable* table)
    : stars_(std::move(stars)), gas_(std::move(gas)), cfg_(cfg), table_(table) {
  if (cfg_.stellar_stride > 0 && table_ == nullptr)
    throw Error("bridge: stellar evolution enabled without a table");
  if (cfg_.stellar_stride > 0 && stars_.n() > 0 && !stars_.stellar())
    throw Error("bridge: stellar evolution needs stellar state");
}

Eigen::Matrix3Xd Bridge::cross_field(const ParticleSet& sources,
                                     const Eigen::Matrix3Xd& targets) const {
  if (cfg_.kick == KickKernel::tree) return tree_accel(sources, targets, cfg_.eps, cfg_.tree);
  return direct_accel(sources, targets, cfg_.eps);
}

void Bridge::half_kick() {
  if (stars_.n() == 0 || gas_.n() == 0) return;
  const double h = 0.5 * cfg_.dt;
  // Both fields from the same pre-kick positions: the pair exchange is
  // antisymmetric, so the coupling itself conserves momentum.
  const Eigen::Matrix3Xd on_stars = cross_field(gas_, stars_.pos);
  const Eigen::Matrix3Xd on_gas = cross_field(stars_, gas_.pos);
  stars_.vel += h * on_stars;
  gas_.vel += h * on_gas;
}

std::vector<SupernovaEvent> Bridge::step() {
  half_kick();
  if (stars_.n() > 0) kdk_step(stars_, cfg_.dt, self_gravity(cfg_.eps));
  if (gas_.n() > 0) {
    const double eps = cfg_.eps;
    const double wind = cfg_.gas_wind;
    kdk_step(gas_, cfg_.dt, [eps, wind](const ParticleSet& s) -> Eigen::Matrix3Xd {
      Eigen::Matrix3Xd a = direct_accel_self(s, eps);
      if (wind != 0.0) a += radial_wind(s, wind);
      return a;
    });
  }
  half_kick();
  ++steps_;
  if (cfg_.stellar_stride > 0 && steps_ % cfg_.stellar_stride == 0) {
    const double aged = cfg_.stellar_stride * cfg_.dt * cfg_.age_per_time;
    return stellar_evolve(stars_, aged, *table_);
  }
  return {};
}

double Bridge::time() const { return static_cast<double>(steps_) * cfg_.dt; }

double Bridge::energy() const { return total_energy(stars_, gas_, cfg_.eps); }

Eigen::Vector3d Bridge::momentum() const {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  if (stars_.n() > 0) p += stars_.momentum();
  if (gas_.n() > 0) p += gas_.momentum();
  return p;
}

}  // namespace jsim::kernels
