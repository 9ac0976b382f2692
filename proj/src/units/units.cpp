#include "jsim/units/units.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace jsim::units {

namespace {

const char* kBaseSymbol[Dimension::kBase] = {"L", "M", "T", "K", "I", "N", "J"};

}  // namespace

std::string Dimension::str() const {
  std::string s;
  for (int i = 0; i < kBase; ++i) {
    if (e_[static_cast<std::size_t>(i)] == 0) continue;
    if (!s.empty()) s += ' ';
    s += kBaseSymbol[i];
    s += std::to_string(static_cast<int>(e_[static_cast<std::size_t>(i)]));
  }
  return s.empty() ? "1" : s;
}

Quantity convert(const Quantity& q, const Unit& target) {
  if (q.unit.dimension != target.dimension)
    throw DimensionMismatch("cannot convert " + q.unit.name + " [" + q.unit.dimension.str() +
                            "] to " + target.name + " [" + target.dimension.str() + "]");
  return Quantity{q.value * q.unit.scale / target.scale, target};
}

Quantity combine(const Quantity& a, const Quantity& b, ArithOp op) {
  switch (op) {
    case ArithOp::add:
    case ArithOp::sub: {
      if (a.unit.dimension != b.unit.dimension)
        throw DimensionMismatch("cannot " + std::string(op == ArithOp::add ? "add" : "subtract") +
                                " " + b.unit.name + " and " + a.unit.name);
      Quantity bb = convert(b, a.unit);
      return Quantity{op == ArithOp::add ? a.value + bb.value : a.value - bb.value, a.unit};
    }
    case ArithOp::mul:
      return Quantity{a.value * b.value,
                      Unit{a.unit.name + "*" + b.unit.name, a.unit.dimension * b.unit.dimension,
                           a.unit.scale * b.unit.scale}};
    case ArithOp::div:
      return Quantity{a.value / b.value,
                      Unit{a.unit.name + "/" + b.unit.name, a.unit.dimension / b.unit.dimension,
                           a.unit.scale / b.unit.scale}};
  }
  throw Error("unreachable arithmetic op");
}

void UnitRegistry::add(const Unit& u) {
  if (u.scale <= 0.0 || !std::isfinite(u.scale)) throw Error("unit scale must be a positive finite real: " + u.name);
  if (u.name.empty()) throw Error("unit name must be non-empty");
  units_[u.name] = u;
}

const Unit& UnitRegistry::get(const std::string& name) const {
  auto it = units_.find(name);
  if (it == units_.end()) throw UnknownUnit(name);
  return it->second;
}

void UnitRegistry::load_table(std::istream& in) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;  // blank line
    std::array<std::int8_t, Dimension::kBase> exps{};
    for (int i = 0; i < Dimension::kBase; ++i) {
      int e;
      if (!(ls >> e)) throw Error("unit table line " + std::to_string(lineno) + ": expected 7 exponents");
      exps[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(e);
    }
    double scale;
    if (!(ls >> scale)) throw Error("unit table line " + std::to_string(lineno) + ": expected scale");
    add(Unit{name, Dimension(exps), scale});
  }
}

void UnitRegistry::load_table_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open unit table: " + path);
  load_table(f);
}

UnitRegistry UnitRegistry::builtin() {
  // The default table, in the same text format the loader accepts.
  // Exponent order: length mass time temperature current amount luminosity.
  static const char kDefaults[] = R"(# builtin units
m      1 0 0 0 0 0 0   1.0
km     1 0 0 0 0 0 0   1000.0
au     1 0 0 0 0 0 0   1.495978707e11
pc     1 0 0 0 0 0 0   3.0856775814913673e16
s      0 0 1 0 0 0 0   1.0
hour   0 0 1 0 0 0 0   3600.0
yr     0 0 1 0 0 0 0   3.15576e7
Myr    0 0 1 0 0 0 0   3.15576e13
kg     0 1 0 0 0 0 0   1.0
g      0 1 0 0 0 0 0   1.0e-3
MSun   0 1 0 0 0 0 0   1.98892e30
J      2 1 -2 0 0 0 0  1.0
m/s    1 0 -1 0 0 0 0  1.0
km/s   1 0 -1 0 0 0 0  1000.0
pc/Myr 1 0 -1 0 0 0 0  977.7922216807891
)";
  UnitRegistry reg;
  std::istringstream in(kDefaults);
  reg.load_table(in);
  return reg;
}

}  // namespace jsim::units
