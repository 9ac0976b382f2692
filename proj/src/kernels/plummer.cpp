#include "jsim/kernels/plummer.hpp"

#include <cmath>
#include <random>

namespace jsim::kernels {

namespace {

// Uniform in [0, 1) built from the top 53 bits of the engine output.
// std::uniform_real_distribution is implementation-defined, which would make
// "same seed, same sphere" hold only per standard library; this holds
// everywhere mt19937_64 does.
double uniform01(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

Eigen::Vector3d isotropic(std::mt19937_64& g) {
  const double z = 2.0 * uniform01(g) - 1.0;
  const double phi = 2.0 * M_PI * uniform01(g);
  const double sxy = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {sxy * std::cos(phi), sxy * std::sin(phi), z};
}

}  // namespace

ParticleSet plummer_sphere(Eigen::Index n, std::uint64_t seed, double total_mass,
                           double scale_radius, double cutoff_radii) {
  ParticleSet s = ParticleSet::zeros(n);
  if (n == 0) return s;
  std::mt19937_64 g(seed);
  const double a = scale_radius;
  const double rc = cutoff_radii * a;
  // Enclosed-mass fraction at the cutoff; radii come from inverting
  // M(<r)/M = r^3 (r^2 + a^2)^{-3/2} at a uniform fraction below it.
  const double qmax = (rc * rc * rc) / std::pow(rc * rc + a * a, 1.5);
  s.mass.setConstant(total_mass / static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double q;
    do {
      q = qmax * uniform01(g);
    } while (q == 0.0);
    const double r = a / std::sqrt(std::pow(q, -2.0 / 3.0) - 1.0);
    s.pos.col(i) = r * isotropic(g);
    // Velocity magnitude as a fraction of local escape speed, rejection
    // sampled from f(x) = x^2 (1 - x^2)^{7/2}.
    double x;
    for (;;) {
      x = uniform01(g);
      const double y = 0.1 * uniform01(g);
      if (y < x * x * std::pow(1.0 - x * x, 3.5)) break;
    }
    const double vesc = std::sqrt(2.0 * total_mass) * std::pow(r * r + a * a, -0.25);
    s.vel.col(i) = (x * vesc) * isotropic(g);
  }
  const Eigen::Vector3d com = s.center_of_mass();
  const Eigen::Vector3d vmean = s.momentum() / s.total_mass();
  s.pos.colwise() -= com;
  s.vel.colwise() -= vmean;
  return s;
}

void assign_stellar(ParticleSet& stars, std::uint64_t seed, double m0_lo, double m0_hi) {
  std::mt19937_64 g(seed);
  const Eigen::Index n = stars.n();
  stars.age = Eigen::VectorXd::Zero(n);
  stars.m0.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    stars.m0(i) = m0_lo + (m0_hi - m0_lo) * uniform01(g);
  }
  stars.mass = stars.m0;
}

}  // namespace jsim::kernels
