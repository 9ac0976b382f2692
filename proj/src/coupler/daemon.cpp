#include "jsim/coupler/daemon.hpp"

#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace jsim::coupler {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string to_text(const wire::Bytes& b) { return std::string(b.begin(), b.end()); }
wire::Bytes to_bytes(const std::string& s) { return wire::Bytes(s.begin(), s.end()); }

void put_blob(wire::Bytes& out, const wire::Bytes& blob) {
  wire::put_u32(out, static_cast<std::uint32_t>(blob.size()));
  out.insert(out.end(), blob.begin(), blob.end());
}

// A reply frame opens with its u32 LE call id; that is all the daemon needs
// to match it, so skip full decoding here.
std::uint32_t peek_call_id(const wire::Bytes& frame) {
  if (frame.size() < 4) return 0;
  return static_cast<std::uint32_t>(frame[0]) | static_cast<std::uint32_t>(frame[1]) << 8 |
         static_cast<std::uint32_t>(frame[2]) << 16 | static_cast<std::uint32_t>(frame[3]) << 24;
}

json route_json(const overlay::Route& route) {
  return json{{"strategy", overlay::to_string(route.strategy)}, {"hubs", route.hub_chain}};
}

bool pid_alive(long pid) {
  if (pid <= 0) return false;
  if (pid == static_cast<long>(::getpid())) return true;
  if (::kill(static_cast<pid_t>(pid), 0) == 0) return true;
  return errno == EPERM;  // exists but owned by someone else
}

// State a deployed worker's rank 0 keeps: the kernel behind a loopback
// conduit, pool membership, and the two relay ports. Dropping it (job kill)
// severs everything without a goodbye, which is exactly the kill semantics
// the pool turns into a died event.
struct WorkerRank0 {
  netsim::Fabric* fabric = nullptr;
  std::string node_id;
  std::string service;
  std::shared_ptr<KernelServer> server;
  netsim::ConduitPtr loop;
  std::unique_ptr<msg::MsgNode> member;
  msg::ReceivePortPtr rpc;
  msg::SendPortPtr out;

  ~WorkerRank0() {
    if (fabric) fabric->unlisten(node_id, service);
  }
};

struct WorkerRankN {
  std::unique_ptr<msg::MsgNode> member;
};

}  // namespace

Daemon::Daemon(DaemonConfig cfg)
    : cfg_(std::move(cfg)), fabric_(world_), units_(units::UnitRegistry::builtin()) {
  acquire_endpoint();
  for (const auto& path : cfg_.unit_tables) units_.load_table_file(path);

  fabric_.add_node({cfg_.daemon_node, netsim::NodeKind::standalone, true});
  deploy_ = std::make_unique<deploy::DeployService>(fabric_, cfg_.daemon_node, cfg_.log_dir,
                                                    cfg_.pool.overlay);
  registry_ = std::make_unique<msg::Registry>(fabric_, cfg_.daemon_node, cfg_.daemon_node,
                                              "workers", cfg_.pool);
  pool_ = std::make_unique<msg::MsgNode>(fabric_, cfg_.daemon_node, cfg_.pool);
  pool_->attach(cfg_.daemon_node, "coupler");
  pool_->join(registry_->address());
  pool_->on_event([this](const msg::MembershipEvent& ev) {
    if (ev.kind == msg::MembershipEvent::Kind::died) mark_dead(ev.member);
  });
  rpc_in_ = pool_->receive_port("rpc-in");
  rpc_in_->on_message([this](msg::Message m) {
    if (!active_) return;  // stray reply from a batch that already failed
    const std::uint32_t id = peek_call_id(m.payload);
    for (auto& slot : active_->slots) {
      if (slot.done || slot.died) continue;
      if (slot.role != m.from_member || slot.call_id != id) continue;
      slot.done = true;
      slot.reply = std::move(m.payload);
      --active_->open;
      workers_[slot.role].rtt_total += world_.now() - slot.sent;
      break;
    }
  });

  register_builtin_kernels();
  deploy_->register_program("jsim-worker", [this](std::shared_ptr<deploy::ProcessContext> ctx) {
    return worker_program(std::move(ctx));
  });
  write_status();
}

Daemon::~Daemon() {
  try {
    if (!stopped_) op_stop();
  } catch (...) {
  }
  release_endpoint();
}

void Daemon::acquire_endpoint() {
  if (cfg_.endpoint.empty()) return;
  const fs::path lock = cfg_.endpoint + ".lock";
  std::error_code ec;
  if (fs::exists(lock, ec)) {
    long pid = -1;
    std::ifstream in(lock);
    in >> pid;
    if (pid_alive(pid)) throw PortInUse(cfg_.endpoint);
    // stale lock from a process that is gone: take it over
  }
  if (lock.has_parent_path()) fs::create_directories(lock.parent_path(), ec);
  std::ofstream out(lock, std::ios::trunc);
  if (!out) throw Error("cannot write lock file " + lock.string());
  out << ::getpid() << "\n";
  own_lock_ = true;
}

void Daemon::release_endpoint() {
  if (!own_lock_) return;
  std::error_code ec;
  fs::remove(cfg_.endpoint + ".lock", ec);
  own_lock_ = false;
}

wire::Bytes Daemon::handle(std::uint8_t op, const wire::Bytes& body) {
  if (stopped_ && op != linkop::status) throw Error("daemon is stopped");
  switch (op) {
    case linkop::load:
      return op_load(body);
    case linkop::create_worker:
      return op_create_worker(body);
    case linkop::calls:
      return op_calls(body);
    case linkop::status:
      return to_bytes(status_json());
    case linkop::checkpoint:
      return op_checkpoint(body);
    case linkop::stop:
      return op_stop();
    default:
      throw Error("unknown link op " + std::to_string(int(op)));
  }
}

wire::Bytes Daemon::op_load(const wire::Bytes& body) {
  if (!on_load_) throw Error("no scenario loader installed");
  on_load_(to_text(body));
  write_status();
  return {};
}

wire::Bytes Daemon::op_create_worker(const wire::Bytes& body) {
  json j;
  try {
    j = json::parse(to_text(body));
  } catch (const json::exception& e) {
    throw Error(std::string("bad worker spec: ") + e.what());
  }
  WorkerSpec spec;
  spec.role = j.value("role", "");
  spec.kernel = j.value("kernel", "");
  spec.resource = j.value("resource", "");
  spec.processes = j.value("processes", 1);
  spec.nodes = j.value("nodes", 1);
  spec.channel = j.value("channel", "ibis");
  for (const auto& pair : j.value("stage_in", json::array()))
    spec.stage_in.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());

  if (spec.role.empty()) throw Error("worker spec without a role");
  if (workers_.count(spec.role)) throw Error("role already in use: " + spec.role);
  if (!KernelRegistry::global().contains(spec.kernel)) throw KernelUnknown(spec.kernel);

  WorkerState ws;
  ws.spec = spec;
  if (spec.channel == "inproc") {
    ws.inproc = KernelRegistry::global().make(spec.kernel);
    ws.node = cfg_.daemon_node;
  } else if (spec.channel == "ibis") {
    deploy::JobSpec job;
    job.program = "jsim-worker";
    job.process_count = spec.processes;
    job.node_count = spec.nodes;
    job.stage_in = spec.stage_in;
    job.arguments = {spec.kernel, spec.role};
    ws.job_id = deploy_->submit(spec.resource, job);
    const auto terminal = [&] {
      auto st = deploy_->poll(ws.job_id);
      return st == deploy::JobState::done || st == deploy::JobState::failed ||
             st == deploy::JobState::killed;
    };
    try {
      world_.await([&] { return pool_->is_member(spec.role) || terminal(); },
                   cfg_.launch_timeout, "worker " + spec.role + " to join");
    } catch (const Timeout&) {
      deploy_->cancel(ws.job_id);
      throw deploy::LaunchFailed("worker " + spec.role + " never joined its pool");
    }
    if (!pool_->is_member(spec.role))
      throw deploy::LaunchFailed("worker " + spec.role + ": " +
                                 deploy_->info(ws.job_id).reason);
    ws.to_worker = pool_->send_port("rpc-to-" + spec.role);
    ws.to_worker->connect(spec.role, "rpc");
    ws.route = std::get<2>(ws.to_worker->routes().at(0));
    ws.node = deploy_->info(ws.job_id).process_nodes.at(0);
  } else {
    throw Error("unknown channel: " + spec.channel);
  }

  json reply{{"role", spec.role},
             {"job", ws.job_id},
             {"node", ws.node},
             {"route", spec.channel == "ibis" ? route_json(ws.route) : json()}};
  workers_.emplace(spec.role, std::move(ws));
  write_status();
  return to_bytes(reply.dump());
}

wire::Bytes Daemon::op_calls(const wire::Bytes& body) {
  if (active_) throw Error("calls op re-entered");
  wire::Reader r(body);
  Batch batch;
  const std::uint32_t n = r.u32();
  batch.slots.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    BatchSlot& slot = batch.slots[i];
    slot.role = r.str();
    const auto span = r.raw(r.u32());
    wire::Bytes frame(span.begin(), span.end());
    slot.call_id = peek_call_id(frame);

    WorkerState& w = need_worker(slot.role);
    if (w.dead) {
      slot.died = true;
      slot.diagnostic = slot.role + " is gone";
      continue;
    }
    w.calls += 1;
    if (w.inproc) {
      auto reply = w.inproc->handle(decode(frame));
      if (reply) {
        slot.done = true;
        slot.reply = encode(*reply);
      } else {
        ++batch.open;  // a muted in-process kernel never answers
      }
      continue;
    }
    slot.sent = world_.now();
    try {
      w.to_worker->write(frame);
      ++batch.open;
    } catch (const Error& e) {
      slot.died = true;
      slot.diagnostic = slot.role + ": " + e.what();
    }
  }

  active_ = &batch;
  try {
    world_.await([&] { return batch.open == 0; }, cfg_.call_timeout, "worker replies");
  } catch (...) {
    active_ = nullptr;
    throw;
  }
  active_ = nullptr;

  wire::Bytes out;
  for (const BatchSlot& slot : batch.slots) {
    if (slot.done) {
      wire::put_u8(out, callkind::reply);
      put_blob(out, slot.reply);
    } else {
      wire::put_u8(out, callkind::worker_died);
      wire::put_string(out, slot.diagnostic);
    }
  }
  return out;
}

wire::Bytes Daemon::op_checkpoint(const wire::Bytes& body) {
  const std::string text = to_text(body);
  try {
    json parsed = json::parse(text);
    (void)parsed;
  } catch (const json::exception& e) {
    throw Error(std::string("bad checkpoint: ") + e.what());
  }
  run_json_ = text;
  write_status();
  return {};
}

wire::Bytes Daemon::op_stop() {
  for (auto& [role, w] : workers_) {
    if (!w.job_id.empty()) deploy_->cancel(w.job_id);
    w.dead = true;
  }
  deploy_->stop_all();
  world_.run_for(cfg_.pool.heartbeat_period);  // let died events drain
  stopped_ = true;
  write_status();
  return {};
}

Daemon::WorkerState& Daemon::need_worker(const std::string& role) {
  auto it = workers_.find(role);
  if (it == workers_.end()) throw Error("unknown worker role: " + role);
  return it->second;
}

void Daemon::mark_dead(const std::string& member) {
  // ranks past 0 join as "<role>#<rank>"; only rank 0 speaks rpc
  auto it = workers_.find(member);
  if (it == workers_.end()) return;
  it->second.dead = true;
  if (active_) {
    for (auto& slot : active_->slots) {
      if (slot.done || slot.died || slot.role != member) continue;
      slot.died = true;
      slot.diagnostic = member + " died mid-call";
      --active_->open;
    }
  }
  write_status();
}

deploy::ProcessState Daemon::worker_program(std::shared_ptr<deploy::ProcessContext> ctx) {
  const std::string kernel = ctx->args().at(0);
  const std::string role = ctx->args().at(1);
  const std::string frontend = deploy_->resource_spec(ctx->resource()).frontend;

  if (ctx->rank() != 0) {
    // passive cohort member: joins the pool so its death is observable
    auto st = std::make_shared<WorkerRankN>();
    st->member = std::make_unique<msg::MsgNode>(fabric_, ctx->node(), cfg_.pool);
    st->member->attach(frontend, role + "#" + std::to_string(ctx->rank()));
    st->member->join(registry_->address());
    return st;
  }

  auto st = std::make_shared<WorkerRank0>();
  st->fabric = &fabric_;
  st->node_id = ctx->node();
  st->service = "kernel:" + role;
  st->server = KernelRegistry::global().make(kernel);
  std::weak_ptr<WorkerRank0> weak = st;

  // Kernel side of the loopback conduit. Weak captures everywhere: when the
  // job is killed, the state dies and these callbacks must go inert.
  fabric_.listen(st->node_id, st->service,
                 [weak, ctx](netsim::ConduitPtr c, netsim::ConduitEnd&) {
                   std::weak_ptr<netsim::Conduit> wc = c;
                   c->b().on_data([weak, wc, ctx](wire::Bytes data) {
                     auto self = weak.lock();
                     if (!self) return;
                     std::optional<CallFrame> reply;
                     try {
                       reply = self->server->handle(decode(data));
                     } catch (const MalformedFrame& e) {
                       reply = error_reply(peek_call_id(data), e.what());
                     }
                     if (reply) {
                       if (auto cc = wc.lock()) cc->b().send(encode(*reply));
                     }
                     if (self->server->stopped()) {
                       // linger long enough for the stop reply to cross the
                       // pool before the cohort is torn down
                       ctx->world().after(100, [ctx] { ctx->exit(0); });
                     }
                   });
                 });
  st->loop = fabric_.dial(st->node_id, st->node_id, st->service);
  st->loop->a().on_data([weak](wire::Bytes reply) {
    if (auto self = weak.lock()) self->out->write(reply);
  });

  st->member = std::make_unique<msg::MsgNode>(fabric_, ctx->node(), cfg_.pool);
  st->member->attach(frontend, role);
  st->member->join(registry_->address());
  st->rpc = st->member->receive_port("rpc");
  st->rpc->on_message([weak](msg::Message m) {
    if (auto self = weak.lock()) self->loop->a().send(m.payload);
  });
  st->out = st->member->send_port("rpc-out");
  st->out->connect("coupler", "rpc-in");
  return st;
}

std::string Daemon::status_json() const {
  json doc;
  doc["daemon"] = {{"node", cfg_.daemon_node},
                   {"hub", deploy_->daemon_hub() ? deploy_->daemon_hub()->id() : ""},
                   {"endpoint", cfg_.endpoint},
                   {"time", world_.now()},
                   {"stopped", stopped_}};

  doc["resources"] = json::array();
  for (const auto& name : deploy_->resource_names()) {
    const auto& spec = deploy_->resource_spec(name);
    doc["resources"].push_back({{"name", spec.name},
                                {"middleware", spec.middleware},
                                {"frontend", spec.frontend},
                                {"nodes", spec.nodes},
                                {"gpu", spec.gpu_capable},
                                {"hub", deploy_->resource_hub(name) != nullptr}});
  }

  doc["jobs"] = json::array();
  for (const auto& info : deploy_->jobs()) {
    doc["jobs"].push_back({{"id", info.id},
                           {"state", deploy::to_string(info.state)},
                           {"resource", info.resource},
                           {"adapter", info.adapter},
                           {"reason", info.reason}});
  }

  doc["workers"] = json::array();
  for (const auto& [role, w] : workers_) {
    json entry{{"role", role},
               {"kernel", w.spec.kernel},
               {"resource", w.spec.resource},
               {"channel", w.spec.channel},
               {"job", w.job_id},
               {"node", w.node},
               {"alive", !w.dead},
               {"calls", w.calls},
               {"mean_rtt", w.calls ? double(w.rtt_total) / double(w.calls) : 0.0},
               {"route", w.spec.channel == "ibis" ? route_json(w.route) : json()}};
    doc["workers"].push_back(std::move(entry));
  }

  const auto& hub = deploy_->daemon_hub();
  doc["overlay"] = {{"hubs", hub ? json(hub->known_hubs()) : json::array()},
                    {"clients", hub ? json(hub->attached_clients()) : json::array()}};
  doc["run"] = run_json_.empty() ? json() : json::parse(run_json_);
  return doc.dump(2);
}

void Daemon::write_status() const {
  if (cfg_.endpoint.empty()) return;
  const fs::path tmp = cfg_.endpoint + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) return;  // status is best-effort; the lock is what matters
    out << status_json() << "\n";
  }
  std::error_code ec;
  fs::rename(tmp, cfg_.endpoint, ec);
}

std::string read_status(const std::string& endpoint) {
  std::ifstream in(endpoint, std::ios::binary);
  if (!in) throw DaemonUnreachable("no status document at " + endpoint);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace jsim::coupler
