#ifndef JSIM_NETSIM_WORLD_HPP_
#define JSIM_NETSIM_WORLD_HPP_

#include <cstdint>
#include <functional>
#include <queue>
#include <string>
#include <vector>

#include "jsim/error.hpp"

namespace jsim::netsim {

// Logical time in milliseconds. Nothing in the simulated jungle ever
// consults the wall clock.
using Tick = std::uint64_t;

// Single-clock discrete event scheduler. Every component in the simulated
// network posts work here; events at equal times run in posting order, so a
// fixed schedule replays bit-for-bit.
class World {
 public:
  Tick now() const { return now_; }

  void at(Tick when, std::function<void()> fn) {
    if (when < now_) when = now_;
    queue_.push(Event{when, seq_++, std::move(fn)});
  }

  void after(Tick delay, std::function<void()> fn) { at(now_ + delay, std::move(fn)); }

  bool pending() const { return !queue_.empty(); }

  // Runs the next event, advancing the clock to it. False when idle.
  bool step() {
    if (queue_.empty()) return false;
    Event ev = std::move(const_cast<Event&>(queue_.top()));
    queue_.pop();
    now_ = ev.at;
    ev.fn();
    return true;
  }

  // Processes everything scheduled up to and including `deadline`, then
  // advances the clock to it.
  void run_until(Tick deadline) {
    while (!queue_.empty() && queue_.top().at <= deadline) step();
    if (deadline > now_) now_ = deadline;
  }

  void run_for(Tick delta) { run_until(now_ + delta); }

  // Pumps events until `pred` holds. Throws Timeout after `limit` ticks of
  // logical time. This is the bridge between blocking-style code and the
  // event world. Nesting is allowed (an event handler may await, pumping
  // further events beneath itself), with one discipline: code that *answers*
  // messages must stay callback-only, so that every awaited condition is
  // eventually produced by event flow alone and the LIFO unwind cannot
  // deadlock.
  void await(const std::function<bool()>& pred, Tick limit, const std::string& what) {
    Tick deadline = now_ + limit;
    while (!pred()) {
      if (queue_.empty() || queue_.top().at > deadline) {
        if (pred()) return;
        throw Timeout(what);
      }
      step();
    }
  }

 private:
  struct Event {
    Tick at;
    std::uint64_t seq;
    std::function<void()> fn;
    bool operator>(const Event& o) const { return at != o.at ? at > o.at : seq > o.seq; }
  };

  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  Tick now_ = 0;
  std::uint64_t seq_ = 0;
};

}  // namespace jsim::netsim

#endif  // JSIM_NETSIM_WORLD_HPP_
