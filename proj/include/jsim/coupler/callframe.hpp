#ifndef JSIM_COUPLER_CALLFRAME_HPP_
#define JSIM_COUPLER_CALLFRAME_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "jsim/error.hpp"
#include "jsim/wire.hpp"

// The binary RPC message exchanged between the coupler and a worker. The
// format is bit-exact so a worker could be implemented in any language:
//
//   header   8 x u32 LE: callId, functionId, callCount,
//            nInts, nLongs, nFloats, nDoubles, nStrings
//   payload  typed arrays in that order; i32/i64 LE, f32/f64 as LE bit
//            patterns, strings as u32 LE length + UTF-8 bytes
//
// A reply echoes callId; functionId 0 marks an error reply whose payload is
// exactly one string (the message).

namespace jsim::coupler {

class MalformedFrame : public Error {
 public:
  explicit MalformedFrame(const std::string& what) : Error("malformed frame: " + what) {}
};

// functionId 0 is reserved for error replies.
constexpr std::uint32_t kErrorFunction = 0;
// Every kernel answers stop: it acknowledges, then refuses further work.
constexpr std::uint32_t kStopFunction = 100;

struct CallFrame {
  std::uint32_t call_id = 0;
  std::uint32_t function_id = 0;
  std::uint32_t call_count = 1;  // batch size; per-item args carry this many

  std::vector<std::int32_t> ints;
  std::vector<std::int64_t> longs;
  std::vector<float> floats;
  std::vector<double> doubles;
  std::vector<std::string> strings;

  bool operator==(const CallFrame&) const = default;
};

wire::Bytes encode(const CallFrame& frame);

// Inverse of encode. Throws MalformedFrame on truncation or trailing bytes.
CallFrame decode(const wire::Bytes& data);

CallFrame error_reply(std::uint32_t call_id, const std::string& message);

// True for a reply signalling an error; `message` extracts its text.
bool is_error(const CallFrame& reply);
std::string error_message(const CallFrame& reply);

}  // namespace jsim::coupler

#endif  // JSIM_COUPLER_CALLFRAME_HPP_
