#ifndef JSIM_OVERLAY_OVERLAY_HPP_
#define JSIM_OVERLAY_OVERLAY_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "jsim/netsim/fabric.hpp"
#include "jsim/wire.hpp"

// Hub overlay and smart connection setup. Hubs run on well-connected nodes
// and gossip a directory of everything they know; clients attach to a hub
// and reach each other through whichever of three strategies works first:
// direct dial, reverse dial (ask the target to dial back), or relaying
// bytes along a chain of hubs.

namespace jsim::overlay {

using netsim::ConduitEnd;
using netsim::ConduitPtr;
using netsim::Fabric;
using netsim::Tick;
using netsim::World;
using wire::Bytes;

class NodeNotAddressable : public Error {
 public:
  explicit NodeNotAddressable(const std::string& node)
      : Error("hub host must be addressable: " + node) {}
};

class LinkUnreachable : public Error {
 public:
  LinkUnreachable(const std::string& a, const std::string& b)
      : Error("no establishable direction between hubs " + a + " and " + b) {}
};

class HubUnreachable : public Error {
 public:
  explicit HubUnreachable(const std::string& what) : Error("hub unreachable: " + what) {}
};

class NoRoute : public Error {
 public:
  explicit NoRoute(const std::string& what) : Error("no route: " + what) {}
};

class StreamClosed : public Error {
 public:
  StreamClosed() : Error("stream closed") {}
};

struct OverlayConfig {
  // Period of the round-based full-state gossip between linked hubs.
  Tick gossip_period = 100;
  // How long a connect attempt waits for the reverse dial before falling
  // through to a hub-routed relay. Five gossip rounds by default.
  Tick reverse_window = 500;
  // Bound on attach / link / relay-open handshakes.
  Tick handshake_timeout = 5000;
};

enum class Strategy { direct, reverse, routed };

const char* to_string(Strategy s);

// How a connection was made. hub_chain is empty unless strategy == routed,
// in which case it lists every hub the bytes traverse, initiator side first.
struct Route {
  Strategy strategy = Strategy::direct;
  std::vector<std::string> hub_chain;

  bool operator==(const Route&) const = default;
};

struct VirtualAddress {
  std::string client_id;
  std::string home_hub;
  std::string node;
};

// Hub control frame opcodes. Every frame on a hub conduit is
// 4-byte LE body length, 1-byte opcode, payload (see docs/protocol.md).
namespace op {
constexpr std::uint8_t attach = 1;           // c->h  str clientId, str node
constexpr std::uint8_t attach_ok = 2;        // h->c  str hubId
constexpr std::uint8_t hub_hello = 3;        // h<->h str hubId, str host
constexpr std::uint8_t gossip = 4;           // h<->h full state, see protocol doc
constexpr std::uint8_t reverse_request = 5;  // str target, str initiator, str initiatorNode, str token
constexpr std::uint8_t reverse_denied = 6;   // str initiator, str token, str reason
constexpr std::uint8_t relay_open = 7;       // str circuit, str target, str initiator, u32 idx, chain
constexpr std::uint8_t relay_open_ok = 8;    // str circuit, chain
constexpr std::uint8_t relay_open_fail = 9;  // str circuit, str reason
constexpr std::uint8_t relay_data = 10;      // str circuit, raw bytes
constexpr std::uint8_t relay_close = 11;     // str circuit
// Client-to-client stream frames share the same shape.
constexpr std::uint8_t hello = 12;  // str fromClient, str kind ("direct"|"reverse"), str token
constexpr std::uint8_t data = 13;   // raw bytes
}  // namespace op

// A connected byte stream between two overlay clients. Reliable and
// ordered whatever the underlying strategy; relay hops are invisible.
class Stream {
 public:
  virtual ~Stream() = default;
  virtual void send(const Bytes& payload) = 0;  // throws StreamClosed
  virtual void on_data(std::function<void(Bytes)> cb) = 0;
  virtual void on_closed(std::function<void()> cb) = 0;
  virtual void close() = 0;
  virtual bool open() const = 0;
};

using StreamPtr = std::shared_ptr<Stream>;

// Invoked for inbound logical connections with the connecting client's id
// and the route the connection took. Reverse connections arrive here too:
// the dial direction is reversed but the connection is logically inbound.
using StreamAcceptFn = std::function<void(StreamPtr, std::string from_client, Route route)>;

class Hub;
using HubPtr = std::shared_ptr<Hub>;

class Hub : public std::enable_shared_from_this<Hub> {
 public:
  ~Hub();

  const std::string& id() const { return id_; }
  const std::string& host() const { return host_; }

  // Known hubs including this one. Converges to the transitive closure of
  // the link graph within 2 * diameter gossip rounds.
  std::set<std::string> known_hubs() const;
  std::set<std::string> attached_clients() const;
  std::map<std::string, VirtualAddress> directory() const { return dir_; }
  std::map<std::string, std::set<std::string>> adjacency() const { return adj_; }
  bool linked_to(const std::string& hub_id) const { return links_.count(hub_id) != 0; }

  OverlayConfig config() const { return cfg_; }

 private:
  Hub(Fabric& fabric, std::string host, OverlayConfig cfg);

  friend HubPtr start_hub(Fabric&, const std::string&, OverlayConfig);
  friend void link_hubs(Hub&, Hub&);

  struct Peer {
    ConduitPtr conduit;
    ConduitEnd* end = nullptr;
    std::shared_ptr<wire::FrameSplitter> split;
  };

  // One side of a relay circuit: either a locally attached client or a
  // directly linked hub.
  struct Endpoint {
    enum Kind { client, hub } kind = client;
    std::string id;
    bool operator==(const Endpoint&) const = default;
  };
  struct Circuit {
    Endpoint up, down;
  };

  void accept(ConduitPtr conduit, ConduitEnd& end);
  void arm_gossip();
  void dial_link(Hub& other);
  void wire_peer(Peer& peer, std::function<void(wire::Reader&, std::uint8_t)> handler);

  void handle_first(ConduitPtr conduit, ConduitEnd* end, std::shared_ptr<wire::FrameSplitter> split,
                    wire::Reader& r, std::uint8_t opcode);
  void handle_from_client(const std::string& client_id, wire::Reader& r, std::uint8_t opcode);
  void handle_from_hub(const std::string& hub_id, wire::Reader& r, std::uint8_t opcode);

  void register_link(Peer peer, const std::string& hub_id, const std::string& host);
  void gossip_all();
  void merge_gossip(wire::Reader& r);
  Bytes gossip_frame() const;

  // Shortest path over the gossiped hub graph, ties broken lexicographically.
  // Empty when unreachable. Includes both endpoints.
  std::vector<std::string> hub_path(const std::string& to) const;

  void route_control(const Bytes& frame, const std::string& toward_client);
  void handle_relay_open(const Endpoint& from, wire::Reader& r);
  void forward_circuit(const Endpoint& from, std::uint8_t opcode, wire::Reader& r, const Bytes& raw);
  void send_to(const Endpoint& ep, const Bytes& frame);

  Fabric& fabric_;
  World& world_;
  std::string id_;
  std::string host_;
  OverlayConfig cfg_;
  bool stopped_ = false;

  std::map<std::string, Peer> links_;    // hub id -> conduit
  std::map<std::string, Peer> clients_;  // client id -> conduit
  std::map<std::string, std::string> hubs_;  // hub id -> host node, gossiped
  std::map<std::string, std::set<std::string>> adj_;
  std::map<std::string, VirtualAddress> dir_;
  std::map<std::string, Circuit> circuits_;
};

// Starts a hub on `node` and begins its gossip schedule.
// Throws NodeNotAddressable.
HubPtr start_hub(Fabric& fabric, const std::string& node, OverlayConfig cfg = {});

// Establishes a hub-hub link over whichever direction is dialable, then
// blocks until both sides have registered it. Throws LinkUnreachable.
void link_hubs(Hub& a, Hub& b);

class OverlayClient {
 public:
  OverlayClient(Fabric& fabric, std::string node, OverlayConfig cfg = {});
  ~OverlayClient();

  // Dials the hub listening on `hub_node` and registers this client there.
  // Blocks until the hub acknowledges. `name` defaults to a generated
  // unique id. Throws HubUnreachable.
  VirtualAddress attach(const std::string& hub_node, const std::string& name = "");
  void detach();

  bool attached() const { return attached_; }
  const VirtualAddress& address() const { return va_; }
  const std::string& node() const { return node_; }

  // Registers the inbound-connection handler; queued connections that
  // arrived before the call are delivered immediately.
  void listen(StreamAcceptFn accept);

  // Tries direct, then reverse, then routed; returns the first success.
  // Blocking form pumps the world; throws NoRoute when every strategy
  // fails.
  std::pair<StreamPtr, Route> smart_connect(const VirtualAddress& to);

  using ConnectCb = std::function<void(StreamPtr, Route, std::exception_ptr)>;
  void smart_connect_async(const VirtualAddress& to, ConnectCb cb);

 private:
  friend class RelayStream;

  struct ConnectAttempt;

  void handle_hub_frame(wire::Reader& r, std::uint8_t opcode);
  void start_reverse(std::shared_ptr<ConnectAttempt> at);
  void start_routed(std::shared_ptr<ConnectAttempt> at);
  void deliver_accept(StreamPtr s, const std::string& from, Route route);
  void send_control(const Bytes& body);  // frames and writes to the hub conduit
  void relay_send(const std::string& circuit, const Bytes& payload);
  void relay_close(const std::string& circuit);
  std::string fresh_token();

  Fabric& fabric_;
  World& world_;
  std::string node_;
  OverlayConfig cfg_;

  bool attached_ = false;
  VirtualAddress va_;
  ConduitPtr hub_conduit_;
  ConduitEnd* hub_end_ = nullptr;
  wire::FrameSplitter hub_split_;

  StreamAcceptFn accept_fn_;
  std::deque<std::tuple<StreamPtr, std::string, Route>> backlog_;

  std::map<std::string, std::shared_ptr<ConnectAttempt>> reverse_waits_;  // token ->
  std::map<std::string, std::shared_ptr<ConnectAttempt>> open_waits_;     // circuit ->
  std::map<std::string, std::shared_ptr<class RelayStream>> relays_;      // circuit ->
  std::uint64_t token_counter_ = 0;
};

}  // namespace jsim::overlay

#endif  // JSIM_OVERLAY_OVERLAY_HPP_
