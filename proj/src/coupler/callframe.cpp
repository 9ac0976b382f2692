#include "jsim/coupler/callframe.hpp"

namespace jsim::coupler {

wire::Bytes encode(const CallFrame& f) {
  wire::Bytes out;
  out.reserve(32 + 4 * f.ints.size() + 8 * f.longs.size() + 4 * f.floats.size() +
              8 * f.doubles.size());
  wire::put_u32(out, f.call_id);
  wire::put_u32(out, f.function_id);
  wire::put_u32(out, f.call_count);
  wire::put_u32(out, static_cast<std::uint32_t>(f.ints.size()));
  wire::put_u32(out, static_cast<std::uint32_t>(f.longs.size()));
  wire::put_u32(out, static_cast<std::uint32_t>(f.floats.size()));
  wire::put_u32(out, static_cast<std::uint32_t>(f.doubles.size()));
  wire::put_u32(out, static_cast<std::uint32_t>(f.strings.size()));
  for (std::int32_t v : f.ints) wire::put_i32(out, v);
  for (std::int64_t v : f.longs) wire::put_i64(out, v);
  for (float v : f.floats) wire::put_f32(out, v);
  for (double v : f.doubles) wire::put_f64(out, v);
  for (const std::string& s : f.strings) wire::put_string(out, s);
  return out;
}

CallFrame decode(const wire::Bytes& data) {
  wire::Reader r(data);
  CallFrame f;
  try {
    f.call_id = r.u32();
    f.function_id = r.u32();
    f.call_count = r.u32();
    const std::uint32_t n_ints = r.u32();
    const std::uint32_t n_longs = r.u32();
    const std::uint32_t n_floats = r.u32();
    const std::uint32_t n_doubles = r.u32();
    const std::uint32_t n_strings = r.u32();
    f.ints.reserve(n_ints);
    for (std::uint32_t i = 0; i < n_ints; ++i) f.ints.push_back(r.i32());
    f.longs.reserve(n_longs);
    for (std::uint32_t i = 0; i < n_longs; ++i) f.longs.push_back(r.i64());
    f.floats.reserve(n_floats);
    for (std::uint32_t i = 0; i < n_floats; ++i) f.floats.push_back(r.f32());
    f.doubles.reserve(n_doubles);
    for (std::uint32_t i = 0; i < n_doubles; ++i) f.doubles.push_back(r.f64());
    f.strings.reserve(n_strings);
    for (std::uint32_t i = 0; i < n_strings; ++i) f.strings.push_back(r.str());
  } catch (const wire::DecodeError& e) {
    throw MalformedFrame(e.what());
  }
  if (!r.done()) throw MalformedFrame("trailing bytes after payload");
  return f;
}

CallFrame error_reply(std::uint32_t call_id, const std::string& message) {
  CallFrame f;
  f.call_id = call_id;
  f.function_id = kErrorFunction;
  f.call_count = 1;
  f.strings.push_back(message);
  return f;
}

bool is_error(const CallFrame& reply) { return reply.function_id == kErrorFunction; }

std::string error_message(const CallFrame& reply) {
  return reply.strings.empty() ? std::string("unspecified remote error") : reply.strings[0];
}

}  // namespace jsim::coupler
