#include <algorithm>

#include "jsim/msg/msg.hpp"

namespace jsim::msg {

using wire::put_string;
using wire::put_u32;
using wire::put_u64;
using wire::put_u8;
using wire::Reader;

namespace {

// Port stream control opcodes, carried in the body of sequence-0 frames.
namespace pctl {
constexpr std::uint8_t connect = 1;  // str fromMember, str fromPort, str toPort
constexpr std::uint8_t accept = 2;
constexpr std::uint8_t reject = 3;  // str reason
}  // namespace pctl

// Message frame: 4-byte LE body length, 8-byte LE sequence, payload.
Bytes msg_frame(std::uint64_t seq, const Bytes& payload) {
  Bytes out;
  out.reserve(12 + payload.size());
  put_u32(out, static_cast<std::uint32_t>(8 + payload.size()));
  put_u64(out, seq);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

}  // namespace

// ---- MsgNode ----

MsgNode::MsgNode(Fabric& fabric, const std::string& node, PoolConfig cfg)
    : fabric_(fabric),
      world_(fabric.world()),
      cfg_(cfg),
      client_(std::make_unique<OverlayClient>(fabric, node, cfg.overlay)),
      alive_(std::make_shared<bool>(true)) {}

MsgNode::~MsgNode() {
  *alive_ = false;
  if (registry_stream_ && registry_stream_->open()) registry_stream_->close();
}

VirtualAddress MsgNode::attach(const std::string& hub_node, const std::string& name) {
  VirtualAddress va = client_->attach(hub_node, name);
  client_->listen([this](StreamPtr s, std::string, overlay::Route) { accept_stream(std::move(s)); });
  return va;
}

void MsgNode::join(const VirtualAddress& registry) {
  if (joined_) throw Error("already joined: " + member_id());
  try {
    auto [stream, route] = client_->smart_connect(registry);
    registry_stream_ = std::move(stream);
  } catch (const overlay::NoRoute& e) {
    throw RegistryUnreachable(e.what());
  }
  registry_stream_->on_data([this](Bytes payload) { handle_registry(payload); });

  Bytes body;
  put_u8(body, regop::join);
  put_string(body, member_id());
  put_string(body, address().home_hub);
  put_string(body, address().node);
  registry_stream_->send(body);

  try {
    world_.await([this] { return joined_; }, cfg_.connect_timeout, "join " + member_id());
  } catch (const Timeout& e) {
    throw RegistryUnreachable(e.what());
  }
  arm_heartbeat();
}

void MsgNode::leave() {
  if (!joined_) return;
  leaving_ = true;
  joined_ = false;
  Bytes body;
  put_u8(body, regop::leave);
  put_string(body, member_id());
  if (registry_stream_ && registry_stream_->open()) registry_stream_->send(body);
}

void MsgNode::arm_heartbeat() {
  world_.after(cfg_.heartbeat_period, [this, guard = alive_] {
    if (!*guard || !joined_) return;
    if (registry_stream_ && registry_stream_->open()) {
      Bytes body;
      put_u8(body, regop::beat);
      registry_stream_->send(body);
    }
    arm_heartbeat();
  });
}

bool MsgNode::is_member(const std::string& m) const {
  return std::find(members_.begin(), members_.end(), m) != members_.end();
}

void MsgNode::handle_registry(const Bytes& payload) {
  Reader r(payload);
  if (r.u8() != regop::event) return;
  MembershipEvent ev;
  ev.index = r.u64();
  ev.kind = static_cast<MembershipEvent::Kind>(r.u8());
  ev.member = r.str();
  std::string hub = r.str(), node = r.str();

  switch (ev.kind) {
    case MembershipEvent::Kind::joined:
      members_.push_back(ev.member);
      member_addrs_[ev.member] = VirtualAddress{ev.member, hub, node};
      if (ev.member == member_id()) joined_ = true;
      break;
    case MembershipEvent::Kind::left:
      members_.erase(std::remove(members_.begin(), members_.end(), ev.member), members_.end());
      member_addrs_.erase(ev.member);
      break;
    case MembershipEvent::Kind::died:
      members_.erase(std::remove(members_.begin(), members_.end(), ev.member), members_.end());
      member_addrs_.erase(ev.member);
      died_.insert(ev.member);
      break;
  }
  event_log_.push_back(ev);
  if (on_event_) {
    auto fn = on_event_;
    fn(ev);
  }
}

VirtualAddress MsgNode::member_address(const std::string& member) const {
  if (died_.count(member)) throw PeerGone(member);
  auto it = member_addrs_.find(member);
  if (it == member_addrs_.end()) throw PeerGone(member + " (not in pool)");
  return it->second;
}

ReceivePortPtr MsgNode::receive_port(const std::string& name) {
  auto it = receive_ports_.find(name);
  if (it != receive_ports_.end())
    if (auto existing = it->second.lock(); existing && !existing->closed()) return existing;
  ReceivePortPtr port(new ReceivePort(*this, name));
  receive_ports_[name] = port;
  return port;
}

SendPortPtr MsgNode::send_port(const std::string& name) {
  return SendPortPtr(new SendPort(*this, name));
}

// Inbound overlay stream: wait for the connect frame, then hand the
// connection to the named receive port. Everything about the peer comes
// from the handshake, not from transport metadata.
void MsgNode::accept_stream(StreamPtr s) {
  auto split = std::make_shared<wire::FrameSplitter>();
  s->on_data([this, s, split](Bytes chunk) {
    split->feed(chunk, [&](std::span<const std::uint8_t> frame) {
      Reader r(frame);
      if (r.u64() != 0) return;  // data before handshake: drop
      if (r.u8() != pctl::connect) return;
      std::string from_member = r.str();
      std::string from_port = r.str();
      std::string to_port = r.str();

      ReceivePortPtr port;
      if (auto it = receive_ports_.find(to_port); it != receive_ports_.end())
        port = it->second.lock();

      Bytes reply;
      if (!port || port->closed()) {
        put_u8(reply, pctl::reject);
        put_string(reply, "no receive port " + to_port + " on " + member_id());
        s->send(msg_frame(0, reply));
        s->close();
        return;
      }
      put_u8(reply, pctl::accept);
      s->send(msg_frame(0, reply));
      port->accept_connection(s, from_member, from_port, split);
    });
  });
}

// ---- SendPort ----

SendPort::~SendPort() { close(); }

void SendPort::close() {
  if (closed_) return;
  closed_ = true;
  for (auto& c : conns_)
    if (c.stream->open()) c.stream->close();
  conns_.clear();
}

std::set<std::pair<std::string, std::string>> SendPort::connected_to() const {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& c : conns_) out.insert({c.member, c.port});
  return out;
}

std::vector<std::tuple<std::string, std::string, overlay::Route>> SendPort::routes() const {
  std::vector<std::tuple<std::string, std::string, overlay::Route>> out;
  out.reserve(conns_.size());
  for (const auto& c : conns_) out.emplace_back(c.member, c.port, c.route);
  return out;
}

void SendPort::connect(const std::string& to_member, const std::string& to_port) {
  if (closed_) throw PortClosed(name_);
  VirtualAddress va = node_.member_address(to_member);
  auto [stream, route] = node_.overlay().smart_connect(va);

  // Handshake: a sequence-0 connect frame, answered by accept or reject.
  auto verdict = std::make_shared<int>(0);
  auto reason = std::make_shared<std::string>();
  auto split = std::make_shared<wire::FrameSplitter>();
  stream->on_data([verdict, reason, split](Bytes chunk) {
    split->feed(chunk, [&](std::span<const std::uint8_t> frame) {
      Reader r(frame);
      if (r.u64() != 0) return;
      std::uint8_t opc = r.u8();
      if (opc == pctl::accept) *verdict = 1;
      if (opc == pctl::reject) {
        *verdict = 2;
        *reason = r.str();
      }
    });
  });

  Bytes body;
  put_u8(body, pctl::connect);
  put_string(body, node_.member_id());
  put_string(body, name_);
  put_string(body, to_port);
  stream->send(msg_frame(0, body));

  node_.world().await([verdict] { return *verdict != 0; }, node_.config().connect_timeout,
                      "port connect " + name_ + " -> " + to_member + "/" + to_port);
  if (*verdict == 2) {
    stream->close();
    throw PortClosed(*reason);
  }
  conns_.push_back(Connection{to_member, to_port, std::move(stream), 1, route});
}

void SendPort::write(const Bytes& payload) {
  if (closed_) throw PortClosed(name_);
  if (conns_.empty()) throw PortClosed(name_ + " is not connected");
  if (payload.size() > kMaxMessageBytes) throw MessageTooLarge();

  // A peer the pool has declared dead outranks any transport state.
  for (const auto& c : conns_)
    if (node_.has_died(c.member)) throw PeerGone(c.member);

  std::vector<std::string> gone;
  for (auto& c : conns_) {
    if (!c.stream->open()) {
      gone.push_back(c.member + "/" + c.port);
      continue;
    }
    try {
      c.stream->send(msg_frame(c.next_seq, payload));
      ++c.next_seq;
    } catch (const overlay::StreamClosed&) {
      gone.push_back(c.member + "/" + c.port);
    }
  }
  if (!gone.empty()) {
    conns_.erase(std::remove_if(conns_.begin(), conns_.end(),
                                [](const Connection& c) { return !c.stream->open(); }),
                 conns_.end());
    throw PortClosed(gone.front());
  }
}

// ---- ReceivePort ----

ReceivePort::~ReceivePort() { close(); }

void ReceivePort::close() {
  if (closed_) return;
  closed_ = true;
  for (auto& c : conns_)
    if (c->stream->open()) c->stream->close();
  conns_.clear();
  node_.receive_ports_.erase(name_);
}

std::set<std::pair<std::string, std::string>> ReceivePort::connected_from() const {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& c : conns_) out.insert({c->member, c->port});
  return out;
}

void ReceivePort::accept_connection(StreamPtr s, std::string member, std::string port,
                                    std::shared_ptr<wire::FrameSplitter> split) {
  auto conn = std::make_shared<Connection>();
  conn->member = std::move(member);
  conn->port = std::move(port);
  conn->stream = std::move(s);
  conn->split = std::move(split);
  conns_.push_back(conn);

  auto self = shared_from_this();
  conn->stream->on_data([self, conn](Bytes chunk) {
    conn->split->feed(chunk, [&](std::span<const std::uint8_t> frame) {
      Reader r(frame);
      std::uint64_t seq = r.u64();
      if (seq == 0) return;  // control frames are not messages
      auto rest = r.rest();
      self->deliver(*conn, seq, Bytes(rest.begin(), rest.end()));
    });
  });
}

void ReceivePort::deliver(Connection& conn, std::uint64_t seq, Bytes payload) {
  if (closed_) return;
  if (seq != conn.expected_seq)
    throw Error("sequence violation on " + name_ + " from " + conn.member + "/" + conn.port +
                ": got " + std::to_string(seq) + ", expected " + std::to_string(conn.expected_seq));
  ++conn.expected_seq;
  Message m{conn.member, conn.port, seq, std::move(payload)};
  if (on_message_) {
    auto fn = on_message_;
    fn(std::move(m));
  } else {
    inbox_.push_back(std::move(m));
  }
}

Message ReceivePort::read(Tick timeout) {
  node_.world().await([this] { return !inbox_.empty(); }, timeout, "read on port " + name_);
  Message m = std::move(inbox_.front());
  inbox_.pop_front();
  return m;
}

void ReceivePort::on_message(std::function<void(Message)> cb) {
  on_message_ = std::move(cb);
  while (on_message_ && !inbox_.empty()) {
    Message m = std::move(inbox_.front());
    inbox_.pop_front();
    auto fn = on_message_;
    fn(std::move(m));
  }
}

}  // namespace jsim::msg
