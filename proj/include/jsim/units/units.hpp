#ifndef JSIM_UNITS_UNITS_HPP_
#define JSIM_UNITS_UNITS_HPP_

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include "jsim/error.hpp"

// Dimension-checked quantities used at every coupler boundary. Every unit is
// a pure scale factor onto the coherent SI base unit of its dimension;
// affine units (Celsius and friends) are out of scope.

namespace jsim::units {

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& what) : Error("dimension mismatch: " + what) {}
};

class UnknownUnit : public Error {
 public:
  explicit UnknownUnit(const std::string& name) : Error("unknown unit: " + name) {}
};

// Exponent vector over the seven SI base dimensions, in this order:
// length, mass, time, temperature, current, amount, luminous intensity.
class Dimension {
 public:
  static constexpr int kBase = 7;

  constexpr Dimension() : e_{} {}
  constexpr explicit Dimension(std::array<std::int8_t, kBase> e) : e_(e) {}

  static constexpr Dimension none() { return Dimension(); }
  static constexpr Dimension length() { return Dimension({1, 0, 0, 0, 0, 0, 0}); }
  static constexpr Dimension mass() { return Dimension({0, 1, 0, 0, 0, 0, 0}); }
  static constexpr Dimension time() { return Dimension({0, 0, 1, 0, 0, 0, 0}); }
  static constexpr Dimension temperature() { return Dimension({0, 0, 0, 1, 0, 0, 0}); }
  static constexpr Dimension current() { return Dimension({0, 0, 0, 0, 1, 0, 0}); }
  static constexpr Dimension amount() { return Dimension({0, 0, 0, 0, 0, 1, 0}); }
  static constexpr Dimension luminosity() { return Dimension({0, 0, 0, 0, 0, 0, 1}); }

  constexpr int exponent(int i) const { return e_[static_cast<std::size_t>(i)]; }

  constexpr Dimension operator*(const Dimension& o) const {
    Dimension r;
    for (int i = 0; i < kBase; ++i)
      r.e_[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(e_[static_cast<std::size_t>(i)] + o.e_[static_cast<std::size_t>(i)]);
    return r;
  }

  constexpr Dimension operator/(const Dimension& o) const {
    Dimension r;
    for (int i = 0; i < kBase; ++i)
      r.e_[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(e_[static_cast<std::size_t>(i)] - o.e_[static_cast<std::size_t>(i)]);
    return r;
  }

  constexpr Dimension pow(int k) const {
    Dimension r;
    for (int i = 0; i < kBase; ++i)
      r.e_[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(e_[static_cast<std::size_t>(i)] * k);
    return r;
  }

  constexpr bool operator==(const Dimension& o) const { return e_ == o.e_; }
  constexpr bool operator!=(const Dimension& o) const { return !(*this == o); }
  constexpr bool dimensionless() const { return *this == Dimension(); }

  // Compact form like "L1 T-2"; "1" when dimensionless.
  std::string str() const;

 private:
  std::array<std::int8_t, kBase> e_;
};

struct Unit {
  std::string name;
  Dimension dimension;
  double scale = 1.0;  // factor to the coherent base unit; always > 0
};

struct Quantity {
  double value = 0.0;
  Unit unit;

  // Value expressed in the coherent base unit of its dimension.
  double in_base() const { return value * unit.scale; }
};

inline Quantity quantity(double v, const Unit& u) { return Quantity{v, u}; }

// Unit conversion: same dimension required, otherwise DimensionMismatch
// (an illegal model coupling). Never changes the dimension.
Quantity convert(const Quantity& q, const Unit& target);

enum class ArithOp { add, sub, mul, div };

// add/sub convert b into a's unit first (dimensions must match);
// mul/div multiply or divide values and compose dimensions.
Quantity combine(const Quantity& a, const Quantity& b, ArithOp op);

// Named unit table, seeded with the builtin registry and optionally
// extended from plain-text tables: `name e0 e1 e2 e3 e4 e5 e6 scale`,
// one unit per line, '#' comments.
class UnitRegistry {
 public:
  // Registry with the stock units: m, km, pc, s, yr, Myr, kg, MSun, J
  // plus a few composite conveniences (m/s, km/s, pc/Myr).
  static UnitRegistry builtin();

  void add(const Unit& u);
  bool contains(const std::string& name) const { return units_.count(name) != 0; }
  const Unit& get(const std::string& name) const;

  void load_table(std::istream& in);
  void load_table_file(const std::string& path);
  std::size_t size() const { return units_.size(); }

 private:
  std::map<std::string, Unit> units_;
};

}  // namespace jsim::units

#endif  // JSIM_UNITS_UNITS_HPP_
