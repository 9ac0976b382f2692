#include "jsim/kernels/stellar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace jsim::kernels {

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error("evolution table: " + what); }

std::vector<double> numbers(std::istringstream& in, const std::string& what) {
  std::vector<double> out;
  double v;
  while (in >> v) out.push_back(v);
  if (!in.eof()) bad("bad number in " + what);
  if (out.empty()) bad(what + " has no values");
  return out;
}

std::size_t exact_index(const std::vector<double>& axis, double v, const std::string& what) {
  auto it = std::find(axis.begin(), axis.end(), v);
  if (it == axis.end()) bad("track " + what + " is not on the grid");
  return static_cast<std::size_t>(it - axis.begin());
}

// Bracket index i such that axis[i] <= v <= axis[i+1] after clamping.
std::size_t bracket(const std::vector<double>& axis, double v) {
  if (v <= axis.front()) return 0;
  if (v >= axis.back()) return axis.size() - 2;
  auto it = std::upper_bound(axis.begin(), axis.end(), v);
  return static_cast<std::size_t>(it - axis.begin()) - 1;
}

}  // namespace

EvolutionTable EvolutionTable::parse(std::istream& in) {
  EvolutionTable t;
  std::vector<bool> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "masses") {
      t.masses_ = numbers(ls, "masses");
    } else if (key == "ages") {
      t.ages_ = numbers(ls, "ages");
    } else if (key == "lifetimes") {
      t.lifetimes_ = numbers(ls, "lifetimes");
    } else if (key == "sn_threshold") {
      if (!(ls >> t.sn_threshold_)) bad("bad sn_threshold");
    } else if (key == "remnant") {
      if (!(ls >> t.remnant_)) bad("bad remnant");
    } else if (key == "track") {
      if (t.masses_.empty() || t.ages_.empty()) bad("track before masses/ages");
      if (t.grid_.empty()) {
        t.grid_.resize(t.masses_.size() * t.ages_.size());
        seen.assign(t.grid_.size(), false);
      }
      double m0, age;
      StarState st;
      if (!(ls >> m0 >> age >> st.mass >> st.radius >> st.luminosity)) bad("bad track line");
      const std::size_t mi = exact_index(t.masses_, m0, "mass");
      const std::size_t ai = exact_index(t.ages_, age, "age");
      const std::size_t slot = mi * t.ages_.size() + ai;
      if (seen[slot]) bad("duplicate track node");
      seen[slot] = true;
      t.grid_[slot] = st;
    } else {
      bad("unknown directive " + key);
    }
  }

  if (t.masses_.size() < 2) bad("need at least two masses");
  if (t.ages_.size() < 2) bad("need at least two ages");
  if (!std::is_sorted(t.masses_.begin(), t.masses_.end(), std::less_equal<>()))
    bad("masses must be strictly ascending");
  if (!std::is_sorted(t.ages_.begin(), t.ages_.end(), std::less_equal<>()))
    bad("ages must be strictly ascending");
  if (t.masses_.front() <= 0) bad("masses must be positive");
  if (t.ages_.front() < 0) bad("ages must be non-negative");
  if (t.lifetimes_.size() != t.masses_.size()) bad("need one lifetime per mass");
  for (double lt : t.lifetimes_)
    if (lt <= 0) bad("lifetimes must be positive");
  if (t.sn_threshold_ <= 0) bad("missing sn_threshold");
  if (t.remnant_ <= 0) bad("missing remnant");
  if (t.grid_.empty()) bad("no track lines");
  if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) bad("incomplete grid");
  for (std::size_t mi = 0; mi < t.masses_.size(); ++mi) {
    for (std::size_t ai = 0; ai + 1 < t.ages_.size(); ++ai) {
      if (t.grid_[mi * t.ages_.size() + ai + 1].mass > t.grid_[mi * t.ages_.size() + ai].mass)
        bad("current mass must be non-increasing with age");
    }
    if (t.masses_[mi] >= t.sn_threshold_) {
      for (std::size_t ai = 0; ai < t.ages_.size(); ++ai) {
        if (t.grid_[mi * t.ages_.size() + ai].mass < t.remnant_)
          bad("tabulated mass below remnant for a supernova progenitor");
      }
    }
  }
  return t;
}

EvolutionTable EvolutionTable::parse_text(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

EvolutionTable EvolutionTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TableMissing(path);
  return parse(in);
}

StarState EvolutionTable::node(std::size_t mass_index, std::size_t age_index) const {
  return grid_[mass_index * ages_.size() + age_index];
}

double EvolutionTable::lifetime(double m0) const {
  m0 = std::clamp(m0, masses_.front(), masses_.back());
  const std::size_t i = bracket(masses_, m0);
  if (m0 == masses_[i]) return lifetimes_[i];
  if (m0 == masses_[i + 1]) return lifetimes_[i + 1];
  const double w = (std::log10(m0) - std::log10(masses_[i])) /
                   (std::log10(masses_[i + 1]) - std::log10(masses_[i]));
  return std::pow(10.0, (1.0 - w) * std::log10(lifetimes_[i]) + w * std::log10(lifetimes_[i + 1]));
}

StarState EvolutionTable::lookup(double m0, double age) const {
  m0 = std::clamp(m0, masses_.front(), masses_.back());
  age = std::clamp(age, ages_.front(), ages_.back());
  if (m0 >= sn_threshold_ && age >= lifetime(m0)) return {remnant_, 0.0, 0.0};
  const std::size_t mi = bracket(masses_, m0);
  const std::size_t ai = bracket(ages_, age);
  // Weights land on exactly 0 or 1 at grid nodes, so nodes reproduce exactly.
  const double wx = (std::log10(m0) - std::log10(masses_[mi])) /
                    (std::log10(masses_[mi + 1]) - std::log10(masses_[mi]));
  const double wy = (age - ages_[ai]) / (ages_[ai + 1] - ages_[ai]);
  auto mix = [&](double a00, double a01, double a10, double a11) {
    const double lo = (1.0 - wy) * a00 + wy * a01;
    const double hi = (1.0 - wy) * a10 + wy * a11;
    return (1.0 - wx) * lo + wx * hi;
  };
  const StarState& s00 = node(mi, ai);
  const StarState& s01 = node(mi, ai + 1);
  const StarState& s10 = node(mi + 1, ai);
  const StarState& s11 = node(mi + 1, ai + 1);
  StarState out;
  out.mass = mix(s00.mass, s01.mass, s10.mass, s11.mass);
  out.radius = mix(s00.radius, s01.radius, s10.radius, s11.radius);
  out.luminosity = mix(s00.luminosity, s01.luminosity, s10.luminosity, s11.luminosity);
  return out;
}

std::vector<SupernovaEvent> stellar_evolve(ParticleSet& stars, double dt,
                                           const EvolutionTable& table) {
  if (stars.n() > 0 && !stars.stellar()) throw Error("stellar_evolve needs a stellar set");
  std::vector<SupernovaEvent> events;
  if (dt == 0.0) return events;
  for (Eigen::Index i = 0; i < stars.n(); ++i) {
    const double prev = stars.age(i);
    const double next = prev + dt;
    stars.age(i) = next;
    if (stars.m0(i) >= table.sn_threshold()) {
      const double life = table.lifetime(stars.m0(i));
      if (prev < life && next >= life) events.push_back({stars.ids[i], next});
    }
    stars.mass(i) = table.lookup(stars.m0(i), next).mass;
  }
  return events;
}

}  // namespace jsim::kernels
