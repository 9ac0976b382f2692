#ifndef JSIM_KERNELS_STELLAR_HPP_
#define JSIM_KERNELS_STELLAR_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "jsim/error.hpp"
#include "jsim/kernels/particles.hpp"

// Table-driven stellar evolution. A track table is a grid over initial mass
// and age holding (current mass, radius, luminosity), plus per-mass lifetimes
// and supernova parameters. Ages are in the table's own age unit (Myr for the
// bundled table); callers scale simulation time before advancing.

namespace jsim::kernels {

class TableMissing : public Error {
 public:
  explicit TableMissing(const std::string& path) : Error("no evolution table at " + path) {}
};

struct StarState {
  double mass = 0;
  double radius = 0;
  double luminosity = 0;
};

struct SupernovaEvent {
  std::int64_t id = 0;
  double age = 0;  // age at the end of the step that crossed the lifetime
};

class EvolutionTable {
 public:
  // Text format, one directive per line, # comments:
  //   masses <m0...>          strictly ascending
  //   ages <age...>           strictly ascending
  //   lifetimes <t...>        one per mass
  //   sn_threshold <m0>
  //   remnant <mass>
  //   track <m0> <age> <mass> <radius> <luminosity>
  // The track grid must be complete: one line per (m0, age) node. Current
  // mass must be non-increasing with age for every m0.
  static EvolutionTable parse(std::istream& in);
  static EvolutionTable parse_text(const std::string& text);
  static EvolutionTable load(const std::string& path);  // TableMissing

  // Bilinear in (log10 m0, age), both axes clamped to the grid. A star at or
  // above the supernova threshold that has reached its lifetime collapses to
  // the remnant: {remnant_mass, 0, 0}.
  StarState lookup(double m0, double age) const;

  // log-log interpolation between mass nodes, clamped.
  double lifetime(double m0) const;

  double sn_threshold() const { return sn_threshold_; }
  double remnant_mass() const { return remnant_; }
  const std::vector<double>& masses() const { return masses_; }
  const std::vector<double>& ages() const { return ages_; }
  StarState node(std::size_t mass_index, std::size_t age_index) const;

 private:
  std::vector<double> masses_;
  std::vector<double> ages_;
  std::vector<double> lifetimes_;
  std::vector<StarState> grid_;  // grid_[mi * ages_.size() + ai]
  double sn_threshold_ = 0;
  double remnant_ = 0;
};

// Ages every star by dt (table age units) and overwrites `mass` from the
// table. Emits one event per star whose age crosses its lifetime during this
// step, provided its initial mass is at or above the threshold. dt == 0 is a
// no-op. Requires stars.stellar().
std::vector<SupernovaEvent> stellar_evolve(ParticleSet& stars, double dt,
                                           const EvolutionTable& table);

}  // namespace jsim::kernels

#endif  // JSIM_KERNELS_STELLAR_HPP_
