#include "jsim/netsim/fabric.hpp"

#include <algorithm>

namespace jsim::netsim {

namespace {

bool matches(const std::string& pattern, const std::string& id) {
  return pattern == "*" || pattern == id;
}

}  // namespace

// ---- ConduitEnd ----

void ConduitEnd::send(std::span<const std::uint8_t> data) {
  if (!open_) throw ConduitClosed();
  Conduit* c = conduit_;
  Fabric* f = c->fabric_;
  if (f->severed(c->node_[0], c->node_[1])) return;  // blackholed, not an error
  ConduitEnd* peer = &c->ends_[1 - side_];
  Bytes copy(data.begin(), data.end());
  auto keep = c->shared_from_this();
  f->world_.after(c->latency_, [keep, peer, copy = std::move(copy)]() mutable {
    peer->deliver(std::move(copy));
  });
}

void ConduitEnd::deliver(Bytes data) {
  if (!open_) return;
  if (on_data_) {
    // Invoke a copy: the handler may legitimately replace itself (protocol
    // upgrades after a first frame), which must not destroy the closure
    // that is still executing.
    auto fn = on_data_;
    fn(std::move(data));
  } else {
    inbox_.insert(inbox_.end(), data.begin(), data.end());
  }
}

void ConduitEnd::deliver_close() {
  if (!open_) return;
  open_ = false;
  if (on_closed_) {
    auto fn = on_closed_;
    fn();
  }
}

void ConduitEnd::on_data(std::function<void(Bytes)> cb) {
  on_data_ = std::move(cb);
  if (on_data_ && !inbox_.empty()) {
    Bytes pending;
    pending.swap(inbox_);
    auto fn = on_data_;
    fn(std::move(pending));
  }
}

void ConduitEnd::on_closed(std::function<void()> cb) { on_closed_ = std::move(cb); }

Bytes ConduitEnd::drain() {
  Bytes out;
  out.swap(inbox_);
  return out;
}

void ConduitEnd::close() {
  if (!open_) return;
  open_ = false;
  Conduit* c = conduit_;
  Fabric* f = c->fabric_;
  if (f->severed(c->node_[0], c->node_[1])) return;  // peer never learns
  ConduitEnd* peer = &c->ends_[1 - side_];
  auto keep = c->shared_from_this();
  f->world_.after(c->latency_, [keep, peer]() { peer->deliver_close(); });
}

const std::string& ConduitEnd::local_node() const { return conduit_->node_[side_]; }
const std::string& ConduitEnd::remote_node() const { return conduit_->node_[1 - side_]; }

// ---- Fabric ----

void Fabric::add_node(const FabricNode& node) {
  if (node.id.empty() || node.id == "*") throw Error("invalid fabric node id");
  if (!nodes_.emplace(node.id, node).second) throw Error("duplicate fabric node id: " + node.id);
}

const FabricNode& Fabric::node(const std::string& id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw UnknownNode(id);
  return it->second;
}

std::vector<std::string> Fabric::node_ids() const {
  std::vector<std::string> ids;
  ids.reserve(nodes_.size());
  for (const auto& [id, n] : nodes_) ids.push_back(id);
  return ids;
}

bool Fabric::can_establish(const std::string& from, const std::string& to) const {
  node(from);
  node(to);
  for (const auto& p : policies_) {
    if (matches(p.from, from) && matches(p.to, to)) {
      switch (p.rule) {
        case LinkRule::allow: return true;
        case LinkRule::deny_inbound: return false;
        case LinkRule::deny_all: return false;
      }
    }
    // deny_all is symmetric: the reverse orientation matches too.
    if (p.rule == LinkRule::deny_all && matches(p.from, to) && matches(p.to, from)) return false;
  }
  return true;  // default allow
}

bool Fabric::can_dial(const std::string& from, const std::string& to) const {
  // Loopback never leaves the host: policies and addressability model the
  // network between nodes, so a node can always reach its own services.
  if (from == to) {
    node(from);
    return true;
  }
  return node(to).addressable && !severed(from, to) && can_establish(from, to);
}

Tick Fabric::latency(const std::string& from, const std::string& to) const {
  // Latency describes the link, not the rule, so either orientation matches.
  for (const auto& p : policies_) {
    if ((matches(p.from, from) && matches(p.to, to)) ||
        (matches(p.from, to) && matches(p.to, from)))
      return p.latency;
  }
  return default_latency_;
}

void Fabric::listen(const std::string& node_id, const std::string& service, AcceptFn accept) {
  node(node_id);
  listeners_[{node_id, service}] = std::move(accept);
}

void Fabric::unlisten(const std::string& node_id, const std::string& service) {
  listeners_.erase({node_id, service});
}

ConduitPtr Fabric::dial(const std::string& from, const std::string& to, const std::string& service) {
  if (!can_dial(from, to)) throw EstablishRefused(from, to);
  auto it = listeners_.find({to, service});
  if (it == listeners_.end() || !it->second) throw EstablishRefused(from, to + " (no listener for " + service + ")");

  auto c = std::make_shared<Conduit>();
  c->fabric_ = this;
  c->latency_ = latency(from, to);
  c->node_[0] = from;
  c->node_[1] = to;
  c->ends_[0].conduit_ = c.get();
  c->ends_[0].side_ = 0;
  c->ends_[1].conduit_ = c.get();
  c->ends_[1].side_ = 1;
  it->second(c, c->ends_[1]);
  return c;
}

void Fabric::sever_node(const std::string& id) {
  node(id);
  severed_nodes_.insert(id);
}

void Fabric::sever_link(const std::string& a, const std::string& b) {
  node(a);
  node(b);
  severed_links_.insert({std::min(a, b), std::max(a, b)});
}

bool Fabric::severed(const std::string& a, const std::string& b) const {
  if (severed_nodes_.count(a) || severed_nodes_.count(b)) return true;
  return severed_links_.count({std::min(a, b), std::max(a, b)}) != 0;
}

}  // namespace jsim::netsim
