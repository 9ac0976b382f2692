#include "jsim/coupler/manifest.hpp"

#include <algorithm>

namespace jsim::coupler {

namespace {

using units::DimensionMismatch;

std::string where(const FunctionSig& sig, const ArgSpec& spec) {
  return sig.name + "." + spec.name;
}

}  // namespace

const char* to_string(ValueType t) {
  switch (t) {
    case ValueType::i32: return "i32";
    case ValueType::i64: return "i64";
    case ValueType::f32: return "f32";
    case ValueType::f64: return "f64";
    case ValueType::str: return "str";
  }
  return "?";
}

const FunctionSig* KernelManifest::find(const std::string& name) const {
  for (const auto& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

const FunctionSig* KernelManifest::find(std::uint32_t id) const {
  for (const auto& f : functions)
    if (f.id == id) return &f;
  return nullptr;
}

const FunctionSig& KernelManifest::need(const std::string& name) const {
  const FunctionSig* f = find(name);
  if (!f) throw Error("kernel " + kernel + " has no function " + name);
  return *f;
}

std::size_t Value::count() const {
  switch (type) {
    case ValueType::i32: return i32s.size();
    case ValueType::i64: return i64s.size();
    case ValueType::f32: return f32s.size();
    case ValueType::f64: return f64s.size();
    case ValueType::str: return strs.size();
  }
  return 0;
}

Value Value::of(std::int32_t v) { return ints({v}); }
Value Value::of(std::int64_t v) { return longs({v}); }
Value Value::of(double v, std::string unit) { return doubles({v}, std::move(unit)); }
Value Value::of(std::string s) { return strings({std::move(s)}); }

Value Value::ints(std::vector<std::int32_t> v) {
  Value out;
  out.type = ValueType::i32;
  out.i32s = std::move(v);
  return out;
}

Value Value::longs(std::vector<std::int64_t> v) {
  Value out;
  out.type = ValueType::i64;
  out.i64s = std::move(v);
  return out;
}

Value Value::doubles(std::vector<double> v, std::string unit) {
  Value out;
  out.type = ValueType::f64;
  out.unit = std::move(unit);
  out.f64s = std::move(v);
  return out;
}

Value Value::strings(std::vector<std::string> v) {
  Value out;
  out.type = ValueType::str;
  out.strs = std::move(v);
  return out;
}

std::int32_t Value::as_i32() const {
  if (type != ValueType::i32 || i32s.size() != 1) throw Error("value is not a scalar i32");
  return i32s[0];
}

std::int64_t Value::as_i64() const {
  if (type != ValueType::i64 || i64s.size() != 1) throw Error("value is not a scalar i64");
  return i64s[0];
}

double Value::as_f64() const {
  if (type != ValueType::f64 || f64s.size() != 1) throw Error("value is not a scalar f64");
  return f64s[0];
}

const std::string& Value::as_str() const {
  if (type != ValueType::str || strs.size() != 1) throw Error("value is not a scalar string");
  return strs[0];
}

CallFrame pack(const FunctionSig& sig, std::uint32_t call_id, std::uint32_t call_count,
               const std::vector<Value>& args, const units::UnitRegistry& reg) {
  if (call_count == 0) throw DimensionMismatch(sig.name + ": callCount must be positive");
  if (args.size() != sig.args.size())
    throw DimensionMismatch(sig.name + " takes " + std::to_string(sig.args.size()) +
                            " arguments, got " + std::to_string(args.size()));

  CallFrame f;
  f.call_id = call_id;
  f.function_id = sig.id;
  f.call_count = call_count;

  for (std::size_t i = 0; i < args.size(); ++i) {
    const ArgSpec& spec = sig.args[i];
    const Value& v = args[i];
    if (v.type != spec.type)
      throw DimensionMismatch(where(sig, spec) + ": expected " + to_string(spec.type) +
                              ", got " + to_string(v.type));
    const std::size_t want = spec.per_item ? call_count : 1;
    if (v.count() != want)
      throw DimensionMismatch(where(sig, spec) + ": expected " + std::to_string(want) +
                              " values, got " + std::to_string(v.count()));

    if (spec.type != ValueType::f64) {
      if (!v.unit.empty())
        throw DimensionMismatch(where(sig, spec) + ": " + to_string(spec.type) +
                                " payloads carry no unit");
      switch (spec.type) {
        case ValueType::i32: f.ints.insert(f.ints.end(), v.i32s.begin(), v.i32s.end()); break;
        case ValueType::i64: f.longs.insert(f.longs.end(), v.i64s.begin(), v.i64s.end()); break;
        case ValueType::f32: f.floats.insert(f.floats.end(), v.f32s.begin(), v.f32s.end()); break;
        case ValueType::str: f.strings.insert(f.strings.end(), v.strs.begin(), v.strs.end()); break;
        case ValueType::f64: break;
      }
      continue;
    }

    // f64: checked conversion into the kernel's declared unit
    if (spec.unit.empty()) {
      if (!v.unit.empty())
        throw DimensionMismatch(where(sig, spec) + " is unitless but got " + v.unit);
      f.doubles.insert(f.doubles.end(), v.f64s.begin(), v.f64s.end());
      continue;
    }
    if (v.unit.empty())
      throw DimensionMismatch(where(sig, spec) + " needs a quantity in " + spec.unit);
    if (v.unit == spec.unit) {  // identical unit: no arithmetic, bit-for-bit
      f.doubles.insert(f.doubles.end(), v.f64s.begin(), v.f64s.end());
      continue;
    }
    const units::Unit& from = reg.get(v.unit);
    const units::Unit& to = reg.get(spec.unit);
    if (from.dimension != to.dimension)
      throw DimensionMismatch(where(sig, spec) + ": " + from.name + " (" + from.dimension.str() +
                              ") vs " + to.name + " (" + to.dimension.str() + ")");
    const double factor = from.scale / to.scale;
    for (double x : v.f64s) f.doubles.push_back(x * factor);
  }
  return f;
}

std::vector<Value> unpack(const FunctionSig& sig, const CallFrame& reply) {
  std::vector<Value> out;
  out.reserve(sig.results.size());
  std::size_t ai = 0, li = 0, fi = 0, di = 0, si = 0;

  const auto short_reply = [&](const ArgSpec& spec) {
    return MalformedFrame("reply to " + sig.name + " is short of " + spec.name);
  };

  for (const ArgSpec& spec : sig.results) {
    const std::size_t want = spec.per_item ? reply.call_count : 1;
    Value v;
    v.type = spec.type;
    v.unit = spec.type == ValueType::f64 ? spec.unit : std::string();
    switch (spec.type) {
      case ValueType::i32:
        if (ai + want > reply.ints.size()) throw short_reply(spec);
        v.i32s.assign(reply.ints.begin() + static_cast<std::ptrdiff_t>(ai),
                      reply.ints.begin() + static_cast<std::ptrdiff_t>(ai + want));
        ai += want;
        break;
      case ValueType::i64:
        if (li + want > reply.longs.size()) throw short_reply(spec);
        v.i64s.assign(reply.longs.begin() + static_cast<std::ptrdiff_t>(li),
                      reply.longs.begin() + static_cast<std::ptrdiff_t>(li + want));
        li += want;
        break;
      case ValueType::f32:
        if (fi + want > reply.floats.size()) throw short_reply(spec);
        v.f32s.assign(reply.floats.begin() + static_cast<std::ptrdiff_t>(fi),
                      reply.floats.begin() + static_cast<std::ptrdiff_t>(fi + want));
        fi += want;
        break;
      case ValueType::f64:
        if (di + want > reply.doubles.size()) throw short_reply(spec);
        v.f64s.assign(reply.doubles.begin() + static_cast<std::ptrdiff_t>(di),
                      reply.doubles.begin() + static_cast<std::ptrdiff_t>(di + want));
        di += want;
        break;
      case ValueType::str:
        if (si + want > reply.strings.size()) throw short_reply(spec);
        v.strs.assign(reply.strings.begin() + static_cast<std::ptrdiff_t>(si),
                      reply.strings.begin() + static_cast<std::ptrdiff_t>(si + want));
        si += want;
        break;
    }
    out.push_back(std::move(v));
  }

  if (ai != reply.ints.size() || li != reply.longs.size() || fi != reply.floats.size() ||
      di != reply.doubles.size() || si != reply.strings.size())
    throw MalformedFrame("reply to " + sig.name + " carries surplus payload");
  return out;
}

}  // namespace jsim::coupler
