#ifndef JSIM_NETSIM_FABRIC_HPP_
#define JSIM_NETSIM_FABRIC_HPP_

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jsim/netsim/world.hpp"
#include "jsim/wire.hpp"

// In-process model of a jungle network: nodes, one-way firewalls, NATs and
// per-link latencies, over which the overlay and every end-to-end test run.
// Policies are matched first-to-last; the default is allow.

namespace jsim::netsim {

using wire::Bytes;

class UnknownNode : public Error {
 public:
  explicit UnknownNode(const std::string& id) : Error("unknown fabric node: " + id) {}
};

class EstablishRefused : public Error {
 public:
  EstablishRefused(const std::string& from, const std::string& to)
      : Error("establish refused: " + from + " -> " + to) {}
};

class ConduitClosed : public Error {
 public:
  ConduitClosed() : Error("conduit closed") {}
};

enum class NodeKind { frontend, compute, standalone };

struct FabricNode {
  std::string id;
  NodeKind kind = NodeKind::standalone;
  // False models a node on a non-routed private network: it can dial out
  // but cannot be named as a dial target.
  bool addressable = true;
};

enum class LinkRule { allow, deny_inbound, deny_all };

// `from`/`to` accept "*" as a wildcard. deny_inbound is directional: it
// refuses connection establishment from `from` to `to` while leaving data
// on already-established conduits untouched. deny_all matches either
// orientation of the pair.
struct LinkPolicy {
  std::string from;
  std::string to;
  LinkRule rule = LinkRule::allow;
  Tick latency = 1;
};

class Conduit;
using ConduitPtr = std::shared_ptr<Conduit>;

// One endpoint of an established conduit. Data written here is delivered to
// the peer endpoint after the conduit latency, in order, exactly once.
class ConduitEnd {
 public:
  void send(std::span<const std::uint8_t> data);
  void send(const Bytes& data) { send(std::span<const std::uint8_t>(data.data(), data.size())); }

  // Actor-style delivery. Installing a handler flushes anything buffered.
  void on_data(std::function<void(Bytes)> cb);
  void on_closed(std::function<void()> cb);

  // Pull-style access for driver code.
  Bytes drain();
  bool has_data() const { return !inbox_.empty(); }

  void close();  // peer observes a close event after the latency
  bool open() const { return open_; }

  const std::string& local_node() const;
  const std::string& remote_node() const;

 private:
  friend class Conduit;
  friend class Fabric;

  void deliver(Bytes data);
  void deliver_close();

  Conduit* conduit_ = nullptr;
  int side_ = 0;
  bool open_ = true;
  Bytes inbox_;
  std::function<void(Bytes)> on_data_;
  std::function<void()> on_closed_;
};

class Conduit : public std::enable_shared_from_this<Conduit> {
 public:
  ConduitEnd& a() { return ends_[0]; }
  ConduitEnd& b() { return ends_[1]; }
  Tick latency() const { return latency_; }

 private:
  friend class ConduitEnd;
  friend class Fabric;

  class Fabric* fabric_ = nullptr;
  Tick latency_ = 0;
  std::string node_[2];
  ConduitEnd ends_[2];
};

// Callback invoked when a dial reaches a listening (node, service) pair.
// The callee receives its end of the fresh conduit.
using AcceptFn = std::function<void(std::shared_ptr<Conduit>, ConduitEnd&)>;

class Fabric {
 public:
  explicit Fabric(World& world, Tick default_latency = 1)
      : world_(world), default_latency_(default_latency) {}

  World& world() { return world_; }

  void add_node(const FabricNode& node);
  const FabricNode& node(const std::string& id) const;
  bool has_node(const std::string& id) const { return nodes_.count(id) != 0; }
  std::vector<std::string> node_ids() const;

  void add_policy(const LinkPolicy& policy) { policies_.push_back(policy); }
  void set_default_latency(Tick latency) { default_latency_ = latency; }

  // Policy verdict only: true iff the first matching policy (or the default
  // allow) permits establishing from -> to.
  bool can_establish(const std::string& from, const std::string& to) const;

  // What dial() actually checks: the policy verdict plus target
  // addressability and severed state. Loopback (from == to) is always
  // dialable: firewalls model the network between nodes, not the host.
  bool can_dial(const std::string& from, const std::string& to) const;

  Tick latency(const std::string& from, const std::string& to) const;

  void listen(const std::string& node, const std::string& service, AcceptFn accept);
  void unlisten(const std::string& node, const std::string& service);

  // Establishes a conduit or throws EstablishRefused / UnknownNode.
  ConduitPtr dial(const std::string& from, const std::string& to, const std::string& service);

  // Fault injection: silently blackhole all traffic touching a node or a
  // node pair. No close event is generated; peers only notice through their
  // own liveness machinery.
  void sever_node(const std::string& id);
  void sever_link(const std::string& a, const std::string& b);
  bool severed(const std::string& a, const std::string& b) const;

 private:
  friend class ConduitEnd;

  World& world_;
  Tick default_latency_;
  std::map<std::string, FabricNode> nodes_;
  std::vector<LinkPolicy> policies_;
  std::map<std::pair<std::string, std::string>, AcceptFn> listeners_;
  std::set<std::string> severed_nodes_;
  std::set<std::pair<std::string, std::string>> severed_links_;  // ordered pairs
};

}  // namespace jsim::netsim

#endif  // JSIM_NETSIM_FABRIC_HPP_
