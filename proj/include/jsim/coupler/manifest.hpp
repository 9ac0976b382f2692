#ifndef JSIM_COUPLER_MANIFEST_HPP_
#define JSIM_COUPLER_MANIFEST_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "jsim/coupler/callframe.hpp"
#include "jsim/units/units.hpp"

// Kernel signatures and the checked packing of arguments into call frames.
// Every kernel publishes a manifest: functionId, name, argument and result
// specs with declared units. The coupler converts caller quantities into the
// kernel's units before encoding, so a kernel never sees a foreign unit.

namespace jsim::coupler {

enum class ValueType { i32, i64, f32, f64, str };

const char* to_string(ValueType t);

// One argument or result. `unit` names a registry unit and applies to f64
// payloads only; empty means a raw number. Per-item specs carry callCount
// elements, scalar specs exactly one.
struct ArgSpec {
  std::string name;
  ValueType type = ValueType::f64;
  std::string unit;
  bool per_item = false;
};

struct FunctionSig {
  std::uint32_t id = 0;
  std::string name;
  std::vector<ArgSpec> args;
  std::vector<ArgSpec> results;
};

struct KernelManifest {
  std::string kernel;
  std::vector<FunctionSig> functions;

  const FunctionSig* find(const std::string& name) const;
  const FunctionSig* find(std::uint32_t id) const;
  const FunctionSig& need(const std::string& name) const;  // Error when absent
};

// A typed argument or result. Exactly the vector matching `type` is
// populated; `unit` tags f64 payloads with the unit their values are in.
struct Value {
  ValueType type = ValueType::f64;
  std::string unit;

  std::vector<std::int32_t> i32s;
  std::vector<std::int64_t> i64s;
  std::vector<float> f32s;
  std::vector<double> f64s;
  std::vector<std::string> strs;

  std::size_t count() const;

  static Value of(std::int32_t v);
  static Value of(std::int64_t v);
  static Value of(double v, std::string unit = "");
  static Value of(std::string s);
  static Value ints(std::vector<std::int32_t> v);
  static Value longs(std::vector<std::int64_t> v);
  static Value doubles(std::vector<double> v, std::string unit = "");
  static Value strings(std::vector<std::string> v);

  // Scalar accessors; throw Error when the shape or type disagrees.
  std::int32_t as_i32() const;
  std::int64_t as_i64() const;
  double as_f64() const;
  const std::string& as_str() const;
};

// Packs checked, converted arguments into a frame. Shape violations (arity,
// type, element counts) and unit violations (missing, unexpected, or
// dimension-incompatible units) all throw units::DimensionMismatch: every
// one is an illegal model coupling caught at the boundary.
CallFrame pack(const FunctionSig& sig, std::uint32_t call_id, std::uint32_t call_count,
               const std::vector<Value>& args, const units::UnitRegistry& reg);

// Splits a non-error reply into values tagged with the declared result
// units. Throws MalformedFrame when the reply shape contradicts the
// signature; the caller handles error replies before unpacking.
std::vector<Value> unpack(const FunctionSig& sig, const CallFrame& reply);

}  // namespace jsim::coupler

#endif  // JSIM_COUPLER_MANIFEST_HPP_
