#include "jsim/kernels/particles.hpp"

#include <algorithm>

namespace jsim::kernels {

ParticleSet ParticleSet::zeros(Eigen::Index n, bool stellar) {
  ParticleSet s;
  s.ids.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) s.ids[static_cast<std::size_t>(i)] = i + 1;
  s.mass = Eigen::VectorXd::Zero(n);
  s.pos = Eigen::Matrix3Xd::Zero(3, n);
  s.vel = Eigen::Matrix3Xd::Zero(3, n);
  if (stellar) {
    s.age = Eigen::VectorXd::Zero(n);
    s.m0 = Eigen::VectorXd::Zero(n);
  }
  return s;
}

namespace {

std::int64_t next_id(const std::vector<std::int64_t>& ids) {
  std::int64_t top = 0;
  for (auto id : ids) top = std::max(top, id);
  return top + 1;
}

}  // namespace

std::int64_t ParticleSet::add(double m, const Eigen::Vector3d& x, const Eigen::Vector3d& v) {
  const bool was_stellar = stellar();
  const std::int64_t id = next_id(ids);
  const Eigen::Index i = n();
  ids.push_back(id);
  mass.conservativeResize(i + 1);
  pos.conservativeResize(Eigen::NoChange, i + 1);
  vel.conservativeResize(Eigen::NoChange, i + 1);
  mass(i) = m;
  pos.col(i) = x;
  vel.col(i) = v;
  if (was_stellar) {
    age.conservativeResize(i + 1);
    m0.conservativeResize(i + 1);
    age(i) = 0;
    m0(i) = m;
  }
  return id;
}

std::int64_t ParticleSet::add_star(double m, const Eigen::Vector3d& x, const Eigen::Vector3d& v,
                                   double age0, double initial_mass) {
  if (n() > 0 && !stellar()) throw Error("add_star on a non-stellar set");
  const std::int64_t id = next_id(ids);
  const Eigen::Index i = n();
  ids.push_back(id);
  mass.conservativeResize(i + 1);
  pos.conservativeResize(Eigen::NoChange, i + 1);
  vel.conservativeResize(Eigen::NoChange, i + 1);
  age.conservativeResize(i + 1);
  m0.conservativeResize(i + 1);
  mass(i) = m;
  pos.col(i) = x;
  vel.col(i) = v;
  age(i) = age0;
  m0(i) = initial_mass;
  return id;
}

Eigen::Index ParticleSet::index_of(std::int64_t id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) return -1;
  return static_cast<Eigen::Index>(it - ids.begin());
}

Eigen::Vector3d ParticleSet::center_of_mass() const {
  const double total = total_mass();
  if (total == 0.0) return Eigen::Vector3d::Zero();
  return (pos * mass) / total;
}

double ParticleSet::kinetic_energy() const {
  if (n() == 0) return 0.0;
  return 0.5 * (vel.colwise().squaredNorm() * mass).value();
}

ParticleSet merge(const ParticleSet& a, const ParticleSet& b) {
  ParticleSet out;
  const Eigen::Index na = a.n(), nb = b.n();
  out.ids = a.ids;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  out.mass.resize(na + nb);
  out.mass << a.mass, b.mass;
  out.pos.resize(3, na + nb);
  out.pos << a.pos, b.pos;
  out.vel.resize(3, na + nb);
  out.vel << a.vel, b.vel;
  if (a.stellar() && b.stellar()) {
    out.age.resize(na + nb);
    out.age << a.age, b.age;
    out.m0.resize(na + nb);
    out.m0 << a.m0, b.m0;
  }
  return out;
}

}  // namespace jsim::kernels
