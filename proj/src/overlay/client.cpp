#include <atomic>

#include "jsim/overlay/overlay.hpp"

namespace jsim::overlay {

using wire::put_string;
using wire::put_u32;
using wire::put_u8;
using wire::Reader;

namespace {

std::atomic<std::uint64_t> g_client_counter{0};

// A direct or reverse conduit wrapped as a Stream. Frames: hello once at
// setup, then data frames; close maps to the conduit close event.
class DirectStream : public Stream,
                     public std::enable_shared_from_this<DirectStream> {
 public:
  DirectStream(ConduitPtr conduit, ConduitEnd& end) : conduit_(std::move(conduit)), end_(&end) {}

  // Wires conduit delivery into the frame splitter. `on_hello` fires for
  // the handshake frame; installs must happen before any data arrives.
  // Handlers capture weakly: dropping the last StreamPtr tears down the
  // stream rather than keeping a conduit-to-stream cycle alive.
  void start(std::function<void(std::string from, std::string kind, std::string token)> on_hello) {
    std::weak_ptr<DirectStream> weak = shared_from_this();
    on_hello_ = std::move(on_hello);
    end_->on_data([weak](Bytes chunk) {
      auto self = weak.lock();
      if (!self) return;
      self->split_.feed(chunk, [&](std::span<const std::uint8_t> frame) { self->handle(frame); });
    });
    end_->on_closed([weak] {
      auto self = weak.lock();
      if (!self) return;
      self->open_ = false;
      if (self->on_closed_) self->on_closed_();
    });
  }

  void send(const Bytes& payload) override {
    if (!open_ || !end_->open()) throw StreamClosed();
    Bytes body;
    put_u8(body, op::data);
    body.insert(body.end(), payload.begin(), payload.end());
    end_->send(wire::frame(body));
  }

  void on_data(std::function<void(Bytes)> cb) override {
    on_data_ = std::move(cb);
    while (on_data_ && !inbox_.empty()) {
      Bytes front = std::move(inbox_.front());
      inbox_.pop_front();
      auto fn = on_data_;
      fn(std::move(front));
    }
  }

  void on_closed(std::function<void()> cb) override { on_closed_ = std::move(cb); }

  void close() override {
    if (!open_) return;
    open_ = false;
    if (end_->open()) end_->close();
  }

  bool open() const override { return open_ && end_->open(); }

 private:
  void handle(std::span<const std::uint8_t> frame) {
    Reader r(frame);
    switch (r.u8()) {
      case op::hello: {
        std::string from = r.str(), kind = r.str(), token = r.str();
        if (on_hello_) {
          auto fn = std::move(on_hello_);
          on_hello_ = nullptr;
          fn(from, kind, token);
        }
        break;
      }
      case op::data: {
        auto rest = r.rest();
        Bytes payload(rest.begin(), rest.end());
        if (on_data_) {
          // Copy before invoking: the handler may replace itself (the
          // message layer rewires streams after its handshake).
          auto fn = on_data_;
          fn(std::move(payload));
        } else {
          inbox_.push_back(std::move(payload));
        }
        break;
      }
      default:
        break;
    }
  }

  ConduitPtr conduit_;
  ConduitEnd* end_;
  wire::FrameSplitter split_;
  bool open_ = true;
  std::function<void(std::string, std::string, std::string)> on_hello_;
  std::function<void(Bytes)> on_data_;
  std::function<void()> on_closed_;
  std::deque<Bytes> inbox_;
};

}  // namespace

// Bytes multiplexed over the client's attach conduit as relay_data frames;
// hubs along the chain forward them by circuit id.
class RelayStream : public Stream {
 public:
  RelayStream(OverlayClient* owner, std::string circuit) : owner_(owner), circuit_(std::move(circuit)) {}

  void send(const Bytes& payload) override {
    if (!open_) throw StreamClosed();
    owner_->relay_send(circuit_, payload);
  }

  void on_data(std::function<void(Bytes)> cb) override {
    on_data_ = std::move(cb);
    while (on_data_ && !inbox_.empty()) {
      Bytes front = std::move(inbox_.front());
      inbox_.pop_front();
      auto fn = on_data_;
      fn(std::move(front));
    }
  }

  void on_closed(std::function<void()> cb) override { on_closed_ = std::move(cb); }

  void close() override {
    if (!open_) return;
    open_ = false;
    owner_->relay_close(circuit_);
  }

  bool open() const override { return open_; }

  void deliver(Bytes payload) {
    if (!open_) return;
    if (on_data_) {
      auto fn = on_data_;  // handler may replace itself mid-dispatch
      fn(std::move(payload));
    } else {
      inbox_.push_back(std::move(payload));
    }
  }

  void peer_closed() {
    if (!open_) return;
    open_ = false;
    if (on_closed_) on_closed_();
  }

 private:
  OverlayClient* owner_;
  std::string circuit_;
  bool open_ = true;
  std::function<void(Bytes)> on_data_;
  std::function<void()> on_closed_;
  std::deque<Bytes> inbox_;
};

// State shared between the strategy steps of one smart_connect.
struct OverlayClient::ConnectAttempt {
  VirtualAddress to;
  ConnectCb cb;
  std::string token;    // reverse listen service key
  std::string circuit;  // relay circuit id once routed starts
  bool settled = false;

  void settle(OverlayClient* self, StreamPtr s, Route route, std::exception_ptr err) {
    if (settled) return;
    settled = true;
    if (!token.empty()) {
      self->fabric_.unlisten(self->node_, "ovlrev:" + token);
      self->reverse_waits_.erase(token);
    }
    if (!circuit.empty()) self->open_waits_.erase(circuit);
    cb(std::move(s), std::move(route), std::move(err));
  }
};

OverlayClient::OverlayClient(Fabric& fabric, std::string node, OverlayConfig cfg)
    : fabric_(fabric), world_(fabric.world()), node_(std::move(node)), cfg_(cfg) {
  fabric_.node(node_);  // validate early
}

OverlayClient::~OverlayClient() {
  if (attached_) {
    fabric_.unlisten(node_, "ovl:" + va_.client_id);
    if (hub_end_ && hub_end_->open()) hub_end_->close();
  }
}

std::string OverlayClient::fresh_token() {
  return va_.client_id + "#" + std::to_string(token_counter_++);
}

void OverlayClient::send_control(const Bytes& body) {
  if (!hub_end_ || !hub_end_->open()) throw HubUnreachable("attach conduit closed");
  hub_end_->send(wire::frame(body));
}

VirtualAddress OverlayClient::attach(const std::string& hub_node, const std::string& name) {
  if (attached_) throw Error("already attached: " + va_.client_id);
  std::string client_id =
      name.empty() ? node_ + "/c" + std::to_string(g_client_counter++) : name;
  va_.client_id = client_id;
  va_.node = node_;
  try {
    hub_conduit_ = fabric_.dial(node_, hub_node, "hub");
  } catch (const netsim::EstablishRefused& e) {
    throw HubUnreachable(e.what());
  }
  hub_end_ = &hub_conduit_->a();
  hub_end_->on_data([this](Bytes chunk) {
    hub_split_.feed(chunk, [&](std::span<const std::uint8_t> frame) {
      Reader r(frame);
      std::uint8_t opc = r.u8();
      handle_hub_frame(r, opc);
    });
  });
  hub_end_->on_closed([this] {
    attached_ = false;
    for (auto& [_, rs] : relays_) rs->peer_closed();
    relays_.clear();
  });

  Bytes body;
  put_u8(body, op::attach);
  put_string(body, client_id);
  put_string(body, node_);
  hub_end_->send(wire::frame(body));

  world_.await([this] { return attached_; }, cfg_.handshake_timeout, "attach to " + hub_node);
  // home_hub was filled by the attach_ok handler before attached_ flipped.

  // Accept direct dials from peers.
  fabric_.listen(node_, "ovl:" + client_id, [this](ConduitPtr c, ConduitEnd& end) {
    auto s = std::make_shared<DirectStream>(std::move(c), end);
    s->start([this, s](std::string from, std::string kind, std::string) {
      deliver_accept(s, from, Route{kind == "reverse" ? Strategy::reverse : Strategy::direct, {}});
    });
  });
  return va_;
}

void OverlayClient::detach() {
  if (!attached_) return;
  fabric_.unlisten(node_, "ovl:" + va_.client_id);
  if (hub_end_ && hub_end_->open()) hub_end_->close();
  attached_ = false;
}

void OverlayClient::listen(StreamAcceptFn accept) {
  accept_fn_ = std::move(accept);
  while (accept_fn_ && !backlog_.empty()) {
    auto [s, from, route] = std::move(backlog_.front());
    backlog_.pop_front();
    accept_fn_(std::move(s), std::move(from), std::move(route));
  }
}

void OverlayClient::deliver_accept(StreamPtr s, const std::string& from, Route route) {
  if (accept_fn_)
    accept_fn_(std::move(s), from, std::move(route));
  else
    backlog_.emplace_back(std::move(s), from, std::move(route));
}

void OverlayClient::handle_hub_frame(Reader& r, std::uint8_t opcode) {
  switch (opcode) {
    case op::attach_ok:
      va_.home_hub = r.str();
      attached_ = true;
      break;

    case op::reverse_request: {
      // We are the target: dial back and hand the stream to the acceptor.
      r.str();  // target == us
      std::string initiator = r.str();
      std::string initiator_node = r.str();
      std::string token = r.str();
      ConduitPtr c;
      try {
        c = fabric_.dial(node_, initiator_node, "ovlrev:" + token);
      } catch (const netsim::EstablishRefused&) {
        Bytes denied;
        put_u8(denied, op::reverse_denied);
        put_string(denied, initiator);
        put_string(denied, token);
        put_string(denied, "cannot dial back from " + node_);
        send_control(denied);
        break;
      }
      ConduitEnd& end = c->a();
      Bytes hello;
      put_u8(hello, op::hello);
      put_string(hello, va_.client_id);
      put_string(hello, "reverse");
      put_string(hello, token);
      end.send(wire::frame(hello));
      auto s = std::make_shared<DirectStream>(std::move(c), end);
      s->start(nullptr);
      deliver_accept(s, initiator, Route{Strategy::reverse, {}});
      break;
    }

    case op::reverse_denied: {
      r.str();  // initiator == us
      std::string token = r.str();
      auto it = reverse_waits_.find(token);
      if (it != reverse_waits_.end()) start_routed(it->second);
      break;
    }

    case op::relay_open: {
      // We are the target of a routed connect.
      std::string circuit = r.str();
      r.str();  // target == us
      std::string initiator = r.str();
      r.u32();  // idx
      std::uint32_t n = r.u32();
      std::vector<std::string> chain(n);
      for (auto& h : chain) h = r.str();
      auto rs = std::make_shared<RelayStream>(this, circuit);
      relays_[circuit] = rs;
      Bytes ok;
      put_u8(ok, op::relay_open_ok);
      put_string(ok, circuit);
      put_u32(ok, n);
      for (const auto& h : chain) put_string(ok, h);
      send_control(ok);
      deliver_accept(rs, initiator, Route{Strategy::routed, std::move(chain)});
      break;
    }

    case op::relay_open_ok: {
      std::string circuit = r.str();
      std::uint32_t n = r.u32();
      std::vector<std::string> chain(n);
      for (auto& h : chain) h = r.str();
      auto it = open_waits_.find(circuit);
      if (it == open_waits_.end()) break;
      auto at = it->second;
      auto rs = std::make_shared<RelayStream>(this, circuit);
      relays_[circuit] = rs;
      at->settle(this, rs, Route{Strategy::routed, std::move(chain)}, nullptr);
      break;
    }

    case op::relay_open_fail: {
      std::string circuit = r.str();
      std::string reason = r.str();
      auto it = open_waits_.find(circuit);
      if (it == open_waits_.end()) break;
      auto at = it->second;
      at->settle(this, nullptr, {},
                 std::make_exception_ptr(NoRoute(va_.client_id + " -> " + at->to.client_id +
                                                 ": direct, reverse and routed all failed (" +
                                                 reason + ")")));
      break;
    }

    case op::relay_data: {
      std::string circuit = r.str();
      auto it = relays_.find(circuit);
      if (it == relays_.end()) break;
      auto rest = r.rest();
      it->second->deliver(Bytes(rest.begin(), rest.end()));
      break;
    }

    case op::relay_close: {
      std::string circuit = r.str();
      auto it = relays_.find(circuit);
      if (it == relays_.end()) break;
      auto rs = it->second;
      relays_.erase(it);
      rs->peer_closed();
      break;
    }

    default:
      break;
  }
}

void OverlayClient::relay_send(const std::string& circuit, const Bytes& payload) {
  Bytes body;
  put_u8(body, op::relay_data);
  put_string(body, circuit);
  body.insert(body.end(), payload.begin(), payload.end());
  send_control(body);
}

void OverlayClient::relay_close(const std::string& circuit) {
  relays_.erase(circuit);
  if (!hub_end_ || !hub_end_->open()) return;
  Bytes body;
  put_u8(body, op::relay_close);
  put_string(body, circuit);
  send_control(body);
}

void OverlayClient::smart_connect_async(const VirtualAddress& to, ConnectCb cb) {
  if (!attached_) {
    cb(nullptr, {}, std::make_exception_ptr(NoRoute("client not attached")));
    return;
  }
  auto at = std::make_shared<ConnectAttempt>();
  at->to = to;
  at->cb = std::move(cb);

  // Strategy 1: plain dial to the target's node.
  if (fabric_.can_dial(node_, to.node)) {
    ConduitPtr c;
    try {
      c = fabric_.dial(node_, to.node, "ovl:" + to.client_id);
    } catch (const netsim::EstablishRefused&) {
      c = nullptr;  // listener gone; fall through to reverse
    }
    if (c) {
      ConduitEnd& end = c->a();
      Bytes hello;
      put_u8(hello, op::hello);
      put_string(hello, va_.client_id);
      put_string(hello, "direct");
      put_string(hello, "");
      end.send(wire::frame(hello));
      auto s = std::make_shared<DirectStream>(std::move(c), end);
      s->start(nullptr);
      at->settle(this, s, Route{Strategy::direct, {}}, nullptr);
      return;
    }
  }
  start_reverse(at);
}

// Strategy 2: ask the target, via the hub overlay, to dial us back. We
// listen on a one-shot service keyed by the attempt token; a denial or the
// timeout window falls through to routed.
void OverlayClient::start_reverse(std::shared_ptr<ConnectAttempt> at) {
  at->token = fresh_token();
  reverse_waits_[at->token] = at;

  fabric_.listen(node_, "ovlrev:" + at->token, [this, at](ConduitPtr c, ConduitEnd& end) {
    auto s = std::make_shared<DirectStream>(std::move(c), end);
    s->start([this, at, s](std::string, std::string, std::string) {
      at->settle(this, s, Route{Strategy::reverse, {}}, nullptr);
    });
  });

  Bytes body;
  put_u8(body, op::reverse_request);
  put_string(body, at->to.client_id);
  put_string(body, va_.client_id);
  put_string(body, node_);
  put_string(body, at->token);
  try {
    send_control(body);
  } catch (...) {
    at->settle(this, nullptr, {}, std::current_exception());
    return;
  }

  world_.after(cfg_.reverse_window, [this, at] {
    if (!at->settled && at->circuit.empty()) start_routed(at);
  });
}

// Strategy 3: ask our home hub to build a relay circuit.
void OverlayClient::start_routed(std::shared_ptr<ConnectAttempt> at) {
  if (at->settled || !at->circuit.empty()) return;
  if (!at->token.empty()) {
    fabric_.unlisten(node_, "ovlrev:" + at->token);
    reverse_waits_.erase(at->token);
    at->token.clear();
  }
  at->circuit = fresh_token();
  open_waits_[at->circuit] = at;

  Bytes body;
  put_u8(body, op::relay_open);
  put_string(body, at->circuit);
  put_string(body, at->to.client_id);
  put_string(body, va_.client_id);
  put_u32(body, 0);  // idx; home hub fills the chain
  put_u32(body, 0);  // empty chain
  try {
    send_control(body);
  } catch (...) {
    at->settle(this, nullptr, {}, std::current_exception());
    return;
  }

  world_.after(cfg_.handshake_timeout, [this, at] {
    at->settle(this, nullptr, {},
               std::make_exception_ptr(NoRoute(va_.client_id + " -> " + at->to.client_id +
                                               ": relay open timed out")));
  });
}

std::pair<StreamPtr, Route> OverlayClient::smart_connect(const VirtualAddress& to) {
  struct Result {
    bool done = false;
    StreamPtr stream;
    Route route;
    std::exception_ptr err;
  };
  auto res = std::make_shared<Result>();
  smart_connect_async(to, [res](StreamPtr s, Route r, std::exception_ptr e) {
    res->done = true;
    res->stream = std::move(s);
    res->route = std::move(r);
    res->err = std::move(e);
  });
  world_.await([res] { return res->done; },
               cfg_.reverse_window + 2 * cfg_.handshake_timeout,
               "smart_connect " + va_.client_id + " -> " + to.client_id);
  if (res->err) std::rethrow_exception(res->err);
  return {std::move(res->stream), std::move(res->route)};
}

}  // namespace jsim::overlay
