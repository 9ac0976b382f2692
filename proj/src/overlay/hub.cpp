#include <algorithm>
#include <queue>

#include "jsim/overlay/overlay.hpp"

namespace jsim::overlay {

using wire::put_string;
using wire::put_u32;
using wire::put_u8;
using wire::Reader;

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::direct: return "direct";
    case Strategy::reverse: return "reverse";
    case Strategy::routed: return "routed";
  }
  return "?";
}

namespace {
std::string hub_id_for(const std::string& node) { return "hub@" + node; }
}  // namespace

Hub::Hub(Fabric& fabric, std::string host, OverlayConfig cfg)
    : fabric_(fabric), world_(fabric.world()), id_(hub_id_for(host)), host_(std::move(host)), cfg_(cfg) {
  hubs_[id_] = host_;
  adj_[id_];
}

Hub::~Hub() {
  stopped_ = true;
  fabric_.unlisten(host_, "hub");
  for (auto& [_, p] : links_)
    if (p.end->open()) p.end->close();
  for (auto& [_, p] : clients_)
    if (p.end->open()) p.end->close();
}

HubPtr start_hub(Fabric& fabric, const std::string& node, OverlayConfig cfg) {
  if (!fabric.node(node).addressable) throw NodeNotAddressable(node);
  HubPtr hub(new Hub(fabric, node, cfg));
  std::weak_ptr<Hub> weak = hub;
  fabric.listen(node, "hub", [weak](ConduitPtr c, ConduitEnd& end) {
    if (auto h = weak.lock()) h->accept(std::move(c), end);
  });
  hub->arm_gossip();
  return hub;
}

// One gossip round, then rearm. The weak self-reference lets hub
// destruction cancel the schedule.
void Hub::arm_gossip() {
  world_.after(cfg_.gossip_period, [weak = weak_from_this()] {
    auto h = weak.lock();
    if (!h || h->stopped_) return;
    h->gossip_all();
    h->arm_gossip();
  });
}

void link_hubs(Hub& a, Hub& b) {
  if (a.links_.count(b.id())) return;
  Fabric& f = a.fabric_;
  if (f.can_dial(a.host_, b.host_))
    a.dial_link(b);
  else if (f.can_dial(b.host_, a.host_))
    b.dial_link(a);
  else
    throw LinkUnreachable(a.id(), b.id());
  f.world().await([&] { return a.links_.count(b.id()) && b.links_.count(a.id()); },
                  a.cfg_.handshake_timeout, "hub link " + a.id() + " <-> " + b.id());
}

void Hub::dial_link(Hub& other) {
  Peer peer;
  peer.conduit = fabric_.dial(host_, other.host_, "hub");
  peer.end = &peer.conduit->a();
  peer.split = std::make_shared<wire::FrameSplitter>();
  Bytes body;
  put_u8(body, op::hub_hello);
  put_string(body, id_);
  put_string(body, host_);
  peer.end->send(wire::frame(body));
  register_link(std::move(peer), other.id(), other.host_);
}

void Hub::accept(ConduitPtr conduit, ConduitEnd& end) {
  // The first frame tells us whether this is a client attach or a hub link.
  auto split = std::make_shared<wire::FrameSplitter>();
  ConduitEnd* endp = &end;
  end.on_data([this, conduit, endp, split](Bytes chunk) {
    split->feed(chunk, [&](std::span<const std::uint8_t> frame) {
      Reader r(frame);
      handle_first(conduit, endp, split, r, r.u8());
    });
  });
}

void Hub::handle_first(ConduitPtr conduit, ConduitEnd* end, std::shared_ptr<wire::FrameSplitter> split,
                       Reader& r, std::uint8_t opcode) {
  Peer peer{std::move(conduit), end, std::move(split)};
  if (opcode == op::attach) {
    std::string client_id = r.str();
    std::string node = r.str();
    VirtualAddress va{client_id, id_, node};
    dir_[client_id] = va;
    Bytes ok;
    put_u8(ok, op::attach_ok);
    put_string(ok, id_);
    peer.end->send(wire::frame(ok));
    wire_peer(peer, [this, client_id](Reader& rr, std::uint8_t opc) {
      handle_from_client(client_id, rr, opc);
    });
    peer.end->on_closed([this, client_id] {
      clients_.erase(client_id);
      dir_.erase(client_id);
    });
    clients_[client_id] = std::move(peer);
    gossip_all();  // push the new address out right away
  } else if (opcode == op::hub_hello) {
    std::string hub_id = r.str();
    std::string host = r.str();
    Bytes hello;
    put_u8(hello, op::hub_hello);
    put_string(hello, id_);
    put_string(hello, host_);
    peer.end->send(wire::frame(hello));
    register_link(std::move(peer), hub_id, host);
  }
  // Anything else before attach/hello is a protocol violation; drop it.
}

void Hub::register_link(Peer peer, const std::string& hub_id, const std::string& host) {
  wire_peer(peer, [this, hub_id](Reader& rr, std::uint8_t opc) { handle_from_hub(hub_id, rr, opc); });
  peer.end->on_closed([this, hub_id] {
    links_.erase(hub_id);
    adj_[id_].erase(hub_id);
    adj_[hub_id].erase(id_);
  });
  links_[hub_id] = std::move(peer);
  hubs_[hub_id] = host;
  adj_[id_].insert(hub_id);
  adj_[hub_id].insert(id_);
  // Share state immediately so a fresh link converges without waiting a round.
  auto it = links_.find(hub_id);
  if (it != links_.end() && it->second.end->open()) it->second.end->send(wire::frame(gossip_frame()));
}

void Hub::wire_peer(Peer& peer, std::function<void(Reader&, std::uint8_t)> handler) {
  auto split = peer.split;
  peer.end->on_data([split, handler = std::move(handler)](Bytes chunk) {
    split->feed(chunk, [&](std::span<const std::uint8_t> frame) {
      Reader r(frame);
      std::uint8_t opc = r.u8();
      handler(r, opc);
    });
  });
}

std::set<std::string> Hub::known_hubs() const {
  std::set<std::string> out;
  for (const auto& [id, _] : hubs_) out.insert(id);
  return out;
}

std::set<std::string> Hub::attached_clients() const {
  std::set<std::string> out;
  for (const auto& [id, _] : clients_) out.insert(id);
  return out;
}

Bytes Hub::gossip_frame() const {
  Bytes body;
  put_u8(body, op::gossip);
  put_u32(body, static_cast<std::uint32_t>(hubs_.size()));
  for (const auto& [id, host] : hubs_) {
    put_string(body, id);
    put_string(body, host);
    auto it = adj_.find(id);
    const auto& nbrs = it == adj_.end() ? std::set<std::string>{} : it->second;
    put_u32(body, static_cast<std::uint32_t>(nbrs.size()));
    for (const auto& n : nbrs) put_string(body, n);
  }
  put_u32(body, static_cast<std::uint32_t>(dir_.size()));
  for (const auto& [id, va] : dir_) {
    put_string(body, id);
    put_string(body, va.home_hub);
    put_string(body, va.node);
  }
  return body;
}

void Hub::gossip_all() {
  if (links_.empty()) return;
  Bytes f = wire::frame(gossip_frame());
  for (auto& [_, peer] : links_)
    if (peer.end->open()) peer.end->send(f);
}

void Hub::merge_gossip(Reader& r) {
  std::uint32_t nhubs = r.u32();
  for (std::uint32_t i = 0; i < nhubs; ++i) {
    std::string id = r.str();
    std::string host = r.str();
    hubs_.emplace(id, host);
    std::uint32_t nn = r.u32();
    for (std::uint32_t j = 0; j < nn; ++j) adj_[id].insert(r.str());
  }
  std::uint32_t nclients = r.u32();
  for (std::uint32_t i = 0; i < nclients; ++i) {
    std::string id = r.str();
    VirtualAddress va{id, r.str(), r.str()};
    // A hub is authoritative for its own attachments; everyone else only
    // fills gaps. Re-attachment thus converges to the newest home hub.
    if (va.home_hub == id_ && !clients_.count(id)) continue;
    auto it = dir_.find(id);
    if (it == dir_.end())
      dir_.emplace(id, va);
    else if (clients_.count(id) == 0 && it->second.home_hub != va.home_hub && va.home_hub != id_)
      it->second = va;
  }
}

std::vector<std::string> Hub::hub_path(const std::string& to) const {
  if (to == id_) return {id_};
  std::map<std::string, std::string> parent;
  std::queue<std::string> q;
  parent[id_] = id_;
  q.push(id_);
  while (!q.empty()) {
    std::string cur = q.front();
    q.pop();
    auto it = adj_.find(cur);
    if (it == adj_.end()) continue;
    for (const auto& nxt : it->second) {  // std::set: sorted, so ties break
      if (parent.count(nxt)) continue;    // lexicographically
      parent[nxt] = cur;
      if (nxt == to) {
        std::vector<std::string> path{to};
        for (std::string p = cur; p != id_; p = parent[p]) path.push_back(p);
        path.push_back(id_);
        std::reverse(path.begin(), path.end());
        return path;
      }
      q.push(nxt);
    }
  }
  return {};
}

void Hub::send_to(const Endpoint& ep, const Bytes& frame) {
  auto& table = ep.kind == Endpoint::client ? clients_ : links_;
  auto it = table.find(ep.id);
  if (it != table.end() && it->second.end->open()) it->second.end->send(frame);
}

// Routes a control frame toward the named client: down the attach conduit
// if it is ours, otherwise one hop along the shortest hub path to its home
// hub. Unroutable frames are dropped; initiators run their own timeouts.
void Hub::route_control(const Bytes& frame, const std::string& toward_client) {
  if (clients_.count(toward_client)) {
    send_to({Endpoint::client, toward_client}, frame);
    return;
  }
  auto it = dir_.find(toward_client);
  if (it == dir_.end()) return;
  auto path = hub_path(it->second.home_hub);
  if (path.size() < 2) return;
  send_to({Endpoint::hub, path[1]}, frame);
}

void Hub::handle_from_client(const std::string& client_id, Reader& r, std::uint8_t opcode) {
  switch (opcode) {
    case op::reverse_request: {
      Bytes copy;
      put_u8(copy, opcode);
      std::string target = r.str();
      auto rest = r.rest();
      put_string(copy, target);
      copy.insert(copy.end(), rest.begin(), rest.end());
      route_control(wire::frame(copy), target);
      break;
    }
    case op::reverse_denied: {
      std::string initiator = r.str();
      Bytes copy;
      put_u8(copy, opcode);
      put_string(copy, initiator);
      auto rest = r.rest();
      copy.insert(copy.end(), rest.begin(), rest.end());
      route_control(wire::frame(copy), initiator);
      break;
    }
    case op::relay_open:
      handle_relay_open({Endpoint::client, client_id}, r);
      break;
    case op::relay_open_ok:
    case op::relay_open_fail:
    case op::relay_data:
    case op::relay_close:
      forward_circuit({Endpoint::client, client_id}, opcode, r, {});
      break;
    default:
      break;
  }
}

void Hub::handle_from_hub(const std::string& hub_id, Reader& r, std::uint8_t opcode) {
  switch (opcode) {
    case op::gossip:
      merge_gossip(r);
      break;
    case op::reverse_request:
    case op::reverse_denied: {
      // Same forwarding as the client case: peel the routing key, rebuild.
      Bytes copy;
      put_u8(copy, opcode);
      std::string key = r.str();
      put_string(copy, key);
      auto rest = r.rest();
      copy.insert(copy.end(), rest.begin(), rest.end());
      route_control(wire::frame(copy), key);
      break;
    }
    case op::relay_open:
      handle_relay_open({Endpoint::hub, hub_id}, r);
      break;
    case op::relay_open_ok:
    case op::relay_open_fail:
    case op::relay_data:
    case op::relay_close:
      forward_circuit({Endpoint::hub, hub_id}, opcode, r, {});
      break;
    default:
      break;
  }
}

void Hub::handle_relay_open(const Endpoint& from, Reader& r) {
  std::string circuit = r.str();
  std::string target = r.str();
  std::string initiator = r.str();
  std::uint32_t idx = r.u32();
  std::uint32_t chain_len = r.u32();
  std::vector<std::string> chain(chain_len);
  for (auto& h : chain) h = r.str();

  auto fail = [&](const std::string& reason) {
    Bytes body;
    put_u8(body, op::relay_open_fail);
    put_string(body, circuit);
    put_string(body, reason);
    send_to(from, wire::frame(body));
    circuits_.erase(circuit);
  };

  if (chain.empty()) {
    // First hop: the initiating client leaves route discovery to its hub.
    auto it = dir_.find(target);
    if (it == dir_.end()) return fail("unknown client: " + target);
    chain = hub_path(it->second.home_hub);
    if (chain.empty()) return fail("no hub path to " + it->second.home_hub);
    idx = 0;
  }
  if (idx >= chain.size() || chain[idx] != id_) return fail("relay chain desync at " + id_);

  circuits_[circuit] = Circuit{from, {}};
  Bytes body;
  put_u8(body, op::relay_open);
  put_string(body, circuit);
  put_string(body, target);
  put_string(body, initiator);

  if (idx + 1 == chain.size()) {
    if (!clients_.count(target)) return fail("target not attached: " + target);
    circuits_[circuit].down = {Endpoint::client, target};
    put_u32(body, idx);
  } else {
    const std::string& next = chain[idx + 1];
    if (!links_.count(next)) return fail("hub link missing: " + next);
    circuits_[circuit].down = {Endpoint::hub, next};
    put_u32(body, idx + 1);
  }
  put_u32(body, static_cast<std::uint32_t>(chain.size()));
  for (const auto& h : chain) put_string(body, h);
  send_to(circuits_[circuit].down, wire::frame(body));
}

void Hub::forward_circuit(const Endpoint& from, std::uint8_t opcode, Reader& r, const Bytes&) {
  // Re-encode rather than forwarding the raw frame: the reader has already
  // consumed the opcode, and the payload is opaque past the circuit id.
  std::string circuit = r.str();
  auto it = circuits_.find(circuit);
  if (it == circuits_.end()) return;
  Bytes body;
  put_u8(body, opcode);
  put_string(body, circuit);
  auto rest = r.rest();
  body.insert(body.end(), rest.begin(), rest.end());
  const Circuit& c = it->second;
  send_to(c.up == from ? c.down : c.up, wire::frame(body));
  if (opcode == op::relay_close || opcode == op::relay_open_fail) circuits_.erase(it);
}

}  // namespace jsim::overlay
