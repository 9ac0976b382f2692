#ifndef JSIM_MSG_MSG_HPP_
#define JSIM_MSG_MSG_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "jsim/overlay/overlay.hpp"

// Message layer: uni-directional, connection-oriented, message-based ports
// between pool members, with a registry that serializes membership into a
// total order and turns silent peer death into `died` events via
// heartbeats. Connections ride overlay streams, so they traverse firewalls
// the same way everything else does.

namespace jsim::msg {

using netsim::Fabric;
using netsim::Tick;
using netsim::World;
using overlay::OverlayClient;
using overlay::StreamPtr;
using overlay::VirtualAddress;
using wire::Bytes;

class RegistryUnreachable : public Error {
 public:
  explicit RegistryUnreachable(const std::string& what) : Error("registry unreachable: " + what) {}
};

class PeerGone : public Error {
 public:
  explicit PeerGone(const std::string& member) : Error("peer gone: " + member) {}
};

class PortClosed : public Error {
 public:
  explicit PortClosed(const std::string& what) : Error("port closed: " + what) {}
};

class MessageTooLarge : public Error {
 public:
  MessageTooLarge() : Error("message exceeds the 64 MiB cap") {}
};

// Messages above this bound are refused at the writer, so relays never
// buffer more than this per frame.
constexpr std::size_t kMaxMessageBytes = 64u << 20;

struct PoolConfig {
  Tick heartbeat_period = 200;
  unsigned missed_beats = 3;  // beats missed before the registry declares death
  Tick connect_timeout = 5000;
  overlay::OverlayConfig overlay;
};

struct MembershipEvent {
  enum class Kind { joined, left, died };
  std::uint64_t index = 0;  // total-order position, assigned by the registry
  Kind kind = Kind::joined;
  std::string member;

  bool operator==(const MembershipEvent&) const = default;
};

const char* to_string(MembershipEvent::Kind k);

struct Message {
  std::string from_member;
  std::string from_port;
  std::uint64_t sequence = 0;  // 1-based, gapless per connection
  Bytes payload;
};

// Registry control opcodes, carried as the first byte of overlay stream
// payloads between member and registry.
namespace regop {
constexpr std::uint8_t join = 1;   // str member
constexpr std::uint8_t leave = 2;  // str member
constexpr std::uint8_t beat = 3;   //
constexpr std::uint8_t event = 4;  // u64 index, u8 kind, str member, str hub, str node
}  // namespace regop

class MsgNode;

// The pool's single bookkeeper. Members join over the overlay; the registry
// assigns every membership change one global index and fans it out, so all
// surviving members see the identical sequence. A member that stops
// heartbeating (or drops its conduit without a leave) is declared dead.
class Registry {
 public:
  Registry(Fabric& fabric, const std::string& node, const std::string& hub_node,
           std::string pool_name, PoolConfig cfg = {});
  ~Registry();

  const VirtualAddress& address() const { return client_->address(); }
  const std::string& pool_name() const { return pool_; }
  std::vector<std::string> members() const;  // join order, current
  std::uint64_t event_count() const { return next_index_; }

 private:
  struct MemberState {
    StreamPtr stream;
    VirtualAddress va;
    Tick last_beat = 0;
    bool left = false;
    std::uint64_t joined_index = 0;  // for replaying history to late joiners
  };

  void accept(StreamPtr s);
  static Bytes event_frame(std::uint64_t index, MembershipEvent::Kind kind,
                           const std::string& member, const VirtualAddress& va);
  std::uint64_t broadcast(MembershipEvent::Kind kind, const std::string& member,
                          const VirtualAddress& va);
  void sweep();
  void arm_sweep();

  World& world_;
  std::string pool_;
  PoolConfig cfg_;
  std::unique_ptr<OverlayClient> client_;
  std::map<std::string, MemberState> members_;
  std::vector<std::string> join_order_;
  std::uint64_t next_index_ = 0;
  std::shared_ptr<bool> alive_;
};

class SendPort;
class ReceivePort;
using SendPortPtr = std::shared_ptr<SendPort>;
using ReceivePortPtr = std::shared_ptr<ReceivePort>;

// One process's endpoint: an overlay client, pool membership, and the
// dispatch point that routes inbound connections to named receive ports.
class MsgNode {
 public:
  MsgNode(Fabric& fabric, const std::string& node, PoolConfig cfg = {});
  ~MsgNode();

  // Overlay attachment must precede join. `name` doubles as the member id.
  VirtualAddress attach(const std::string& hub_node, const std::string& name);

  // Joins the pool; blocks until our own `joined` event arrives, which also
  // proves the registry stream works. Throws RegistryUnreachable.
  void join(const VirtualAddress& registry);
  void leave();
  bool joined() const { return joined_; }

  const std::string& member_id() const { return client_->address().client_id; }
  const VirtualAddress& address() const { return client_->address(); }
  OverlayClient& overlay() { return *client_; }
  World& world() { return world_; }
  const PoolConfig& config() const { return cfg_; }

  // Membership view, maintained from the event stream.
  std::vector<std::string> members() const { return members_; }
  bool is_member(const std::string& m) const;
  bool has_died(const std::string& m) const { return died_.count(m) != 0; }
  const std::vector<MembershipEvent>& event_log() const { return event_log_; }
  void on_event(std::function<void(const MembershipEvent&)> cb) { on_event_ = std::move(cb); }

  ReceivePortPtr receive_port(const std::string& name);
  SendPortPtr send_port(const std::string& name);

 private:
  friend class SendPort;
  friend class ReceivePort;

  VirtualAddress member_address(const std::string& member) const;  // throws PeerGone
  void handle_registry(const Bytes& payload);
  void accept_stream(StreamPtr s);
  void arm_heartbeat();

  Fabric& fabric_;
  World& world_;
  PoolConfig cfg_;
  std::unique_ptr<OverlayClient> client_;
  StreamPtr registry_stream_;
  bool joined_ = false;
  bool leaving_ = false;

  std::vector<std::string> members_;
  std::map<std::string, VirtualAddress> member_addrs_;
  std::set<std::string> died_;
  std::vector<MembershipEvent> event_log_;
  std::function<void(const MembershipEvent&)> on_event_;

  std::map<std::string, std::weak_ptr<ReceivePort>> receive_ports_;
  std::shared_ptr<bool> alive_;
};

// Write side of a uni-directional connection. May fan out to several
// receive ports; each (send, receive) pair keeps its own gapless sequence.
class SendPort : public std::enable_shared_from_this<SendPort> {
 public:
  ~SendPort();

  const std::string& name() const { return name_; }

  // Connects to `to_port` on `to_member` via overlay smart connect.
  // Blocks for the accept ack. Throws PeerGone / PortClosed.
  void connect(const std::string& to_member, const std::string& to_port);

  // Sends one message to every connected receive port. Throws PeerGone if
  // any target has died, PortClosed if a receiver went away gracefully,
  // MessageTooLarge above the cap.
  void write(const Bytes& payload);

  std::set<std::pair<std::string, std::string>> connected_to() const;

  // How each live connection was established: (member, port, route).
  std::vector<std::tuple<std::string, std::string, overlay::Route>> routes() const;

  void close();

 private:
  friend class MsgNode;
  SendPort(MsgNode& node, std::string name) : node_(node), name_(std::move(name)) {}

  struct Connection {
    std::string member;
    std::string port;
    StreamPtr stream;
    std::uint64_t next_seq = 1;
    overlay::Route route;
  };

  MsgNode& node_;
  std::string name_;
  std::vector<Connection> conns_;
  bool closed_ = false;
};

class ReceivePort : public std::enable_shared_from_this<ReceivePort> {
 public:
  ~ReceivePort();

  const std::string& name() const { return name_; }

  // Blocking read; pumps the world until a message is queued.
  Message read(Tick timeout = 60'000);
  bool has_message() const { return !inbox_.empty(); }

  // Actor mode. Queued messages flush on installation.
  void on_message(std::function<void(Message)> cb);

  std::set<std::pair<std::string, std::string>> connected_from() const;
  void close();
  bool closed() const { return closed_; }

 private:
  friend class MsgNode;
  ReceivePort(MsgNode& node, std::string name) : node_(node), name_(std::move(name)) {}

  struct Connection {
    std::string member;
    std::string port;
    StreamPtr stream;
    std::uint64_t expected_seq = 1;
    std::shared_ptr<wire::FrameSplitter> split;
  };

  void accept_connection(StreamPtr s, std::string member, std::string port,
                         std::shared_ptr<wire::FrameSplitter> split);
  void deliver(Connection& conn, std::uint64_t seq, Bytes payload);

  MsgNode& node_;
  std::string name_;
  std::vector<std::shared_ptr<Connection>> conns_;
  std::deque<Message> inbox_;
  std::function<void(Message)> on_message_;
  bool closed_ = false;
};

}  // namespace jsim::msg

#endif  // JSIM_MSG_MSG_HPP_
