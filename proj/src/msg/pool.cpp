#include "jsim/msg/msg.hpp"

namespace jsim::msg {

using wire::put_string;
using wire::put_u64;
using wire::put_u8;
using wire::Reader;

const char* to_string(MembershipEvent::Kind k) {
  switch (k) {
    case MembershipEvent::Kind::joined: return "joined";
    case MembershipEvent::Kind::left: return "left";
    case MembershipEvent::Kind::died: return "died";
  }
  return "?";
}

Registry::Registry(Fabric& fabric, const std::string& node, const std::string& hub_node,
                   std::string pool_name, PoolConfig cfg)
    : world_(fabric.world()),
      pool_(std::move(pool_name)),
      cfg_(cfg),
      client_(std::make_unique<OverlayClient>(fabric, node, cfg.overlay)),
      alive_(std::make_shared<bool>(true)) {
  client_->attach(hub_node, "registry:" + pool_);
  client_->listen([this](StreamPtr s, std::string, overlay::Route) { accept(std::move(s)); });
  arm_sweep();
}

Registry::~Registry() {
  *alive_ = false;
  for (auto& [_, st] : members_)
    if (st.stream && st.stream->open()) st.stream->close();
}

void Registry::arm_sweep() {
  world_.after(cfg_.heartbeat_period, [this, guard = alive_] {
    if (!*guard) return;
    sweep();
    arm_sweep();
  });
}

std::vector<std::string> Registry::members() const {
  std::vector<std::string> out;
  for (const auto& m : join_order_)
    if (members_.count(m)) out.push_back(m);
  return out;
}

void Registry::accept(StreamPtr s) {
  // `who` is filled once the join frame names the member; the close handler
  // uses it to tell a crash (no leave seen) from a graceful departure.
  auto who = std::make_shared<std::string>();

  s->on_closed([this, who] {
    auto it = members_.find(*who);
    if (who->empty() || it == members_.end() || it->second.left) return;
    VirtualAddress va = it->second.va;
    members_.erase(it);
    broadcast(MembershipEvent::Kind::died, *who, va);
  });

  s->on_data([this, s, who](Bytes payload) {
    Reader r(payload);
    switch (r.u8()) {
      case regop::join: {
        std::string m = r.str();
        VirtualAddress va{m, r.str(), r.str()};
        *who = m;
        // Replay the live membership to the newcomer first, with original
        // indices, so it can resolve members that joined before it did.
        for (const auto& prev : join_order_) {
          auto pit = members_.find(prev);
          if (pit == members_.end()) continue;
          s->send(event_frame(pit->second.joined_index, MembershipEvent::Kind::joined, prev,
                              pit->second.va));
        }
        members_[m] = MemberState{s, va, world_.now(), false, 0};
        join_order_.push_back(m);
        members_[m].joined_index = broadcast(MembershipEvent::Kind::joined, m, va);
        break;
      }
      case regop::leave: {
        std::string m = r.str();
        auto it = members_.find(m);
        if (it == members_.end()) break;
        it->second.left = true;
        broadcast(MembershipEvent::Kind::left, m, it->second.va);
        auto stream = it->second.stream;
        members_.erase(it);
        if (stream && stream->open()) stream->close();
        break;
      }
      case regop::beat: {
        auto it = members_.find(*who);
        if (it != members_.end()) it->second.last_beat = world_.now();
        break;
      }
      default:
        break;
    }
  });
}

Bytes Registry::event_frame(std::uint64_t index, MembershipEvent::Kind kind,
                            const std::string& member, const VirtualAddress& va) {
  Bytes body;
  put_u8(body, regop::event);
  put_u64(body, index);
  put_u8(body, static_cast<std::uint8_t>(kind));
  put_string(body, member);
  put_string(body, va.home_hub);
  put_string(body, va.node);
  return body;
}

std::uint64_t Registry::broadcast(MembershipEvent::Kind kind, const std::string& member,
                                  const VirtualAddress& va) {
  std::uint64_t index = next_index_++;
  Bytes body = event_frame(index, kind, member, va);
  // Join order makes the fan-out order deterministic.
  for (const auto& m : join_order_) {
    auto it = members_.find(m);
    if (it == members_.end()) continue;
    if (it->second.stream && it->second.stream->open()) it->second.stream->send(body);
  }
  return index;
}

// Declares members dead once they have gone silent for `missed_beats`
// periods. Detection latency is therefore bounded by
// (missed_beats + 1) * heartbeat_period plus conduit latency.
void Registry::sweep() {
  Tick now = world_.now();
  Tick limit = static_cast<Tick>(cfg_.missed_beats) * cfg_.heartbeat_period;
  std::vector<std::string> victims;
  for (const auto& [m, st] : members_)
    if (!st.left && now - st.last_beat > limit) victims.push_back(m);
  for (const auto& m : victims) {
    auto it = members_.find(m);
    if (it == members_.end()) continue;
    VirtualAddress va = it->second.va;
    auto stream = it->second.stream;
    members_.erase(it);
    broadcast(MembershipEvent::Kind::died, m, va);
    if (stream && stream->open()) stream->close();
  }
}

}  // namespace jsim::msg
