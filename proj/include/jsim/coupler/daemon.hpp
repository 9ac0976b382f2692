#ifndef JSIM_COUPLER_DAEMON_HPP_
#define JSIM_COUPLER_DAEMON_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "jsim/coupler/callframe.hpp"
#include "jsim/coupler/kernelhost.hpp"
#include "jsim/coupler/manifest.hpp"
#include "jsim/deploy/deploy.hpp"
#include "jsim/msg/msg.hpp"
#include "jsim/units/units.hpp"

// The coupling daemon and the script-side API that talks to it.
//
// The daemon owns the simulated world: fabric, deployment service, worker
// pool registry. Scripts never touch those directly; they speak a small
// framed link protocol (see docs/protocol.md) through a Session, either
// in-process or over pipes to a daemon child process. Every remote kernel
// runs as a deployed job whose rank 0 joins the "workers" pool and relays
// call frames between its message ports and the kernel proper.

namespace jsim::coupler {

class PortInUse : public Error {
 public:
  explicit PortInUse(const std::string& endpoint)
      : Error("endpoint in use: " + endpoint) {}
};

class DaemonUnreachable : public Error {
 public:
  explicit DaemonUnreachable(const std::string& what)
      : Error("daemon unreachable: " + what) {}
};

// A call could not complete because the worker's pool membership ended.
class WorkerDied : public Error {
 public:
  explicit WorkerDied(const std::string& what) : Error("worker died: " + what) {}
};

// The kernel itself reported an error (reply frame with function id 0).
class RemoteError : public Error {
 public:
  explicit RemoteError(const std::string& what) : Error("remote error: " + what) {}
};

struct WorkerSpec {
  std::string role;      // unique per daemon; doubles as the pool member id
  std::string kernel;    // name in the kernel registry
  std::string resource;  // deploy resource; ignored for the inproc channel
  int processes = 1;
  int nodes = 1;
  std::string channel = "ibis";  // "ibis" (deployed, message ports) or "inproc"
  std::vector<std::pair<std::string, std::string>> stage_in;
};

// Link protocol opcodes. Bodies and replies are described in
// docs/protocol.md; everything rides Session::request.
namespace linkop {
constexpr std::uint8_t load = 1;           // scenario text -> empty
constexpr std::uint8_t create_worker = 2;  // spec JSON -> placement JSON
constexpr std::uint8_t calls = 3;          // call batch -> reply batch
constexpr std::uint8_t status = 4;         // empty -> status JSON
constexpr std::uint8_t checkpoint = 5;     // run JSON -> empty
constexpr std::uint8_t stop = 6;           // empty -> empty
}  // namespace linkop

// Per-entry result kinds inside a `calls` reply batch.
namespace callkind {
constexpr std::uint8_t reply = 0;        // body is a reply frame
constexpr std::uint8_t worker_died = 1;  // body is a diagnostic string
}  // namespace callkind

// One blocking request/reply exchange with a daemon. Implementations throw
// jsim::Error (or a subclass) when the daemon reports failure or the
// transport breaks.
class Session {
 public:
  virtual ~Session() = default;
  virtual wire::Bytes request(std::uint8_t op, const wire::Bytes& body) = 0;
};
using SessionPtr = std::shared_ptr<Session>;

struct DaemonConfig {
  std::string daemon_node = "daemon";
  std::string log_dir = "daemon-logs";
  // Path of the status document. A sibling "<endpoint>.lock" file holding
  // the owner pid guards it; constructing a second daemon on a held
  // endpoint throws PortInUse. Empty disables both files.
  std::string endpoint;
  std::vector<std::string> unit_tables;  // loaded over the builtin registry
  netsim::Tick launch_timeout = 60'000;  // worker join deadline
  netsim::Tick call_timeout = 600'000;   // batch completion deadline
  msg::PoolConfig pool;
};

class Daemon {
 public:
  explicit Daemon(DaemonConfig cfg = {});
  ~Daemon();

  Daemon(const Daemon&) = delete;
  Daemon& operator=(const Daemon&) = delete;

  netsim::World& world() { return world_; }
  netsim::Fabric& fabric() { return fabric_; }
  deploy::DeployService& deploy() { return *deploy_; }
  units::UnitRegistry& units() { return units_; }
  const DaemonConfig& config() const { return cfg_; }
  bool stopped() const { return stopped_; }

  // The load op hands the body to this hook; the CLI installs the scenario
  // interpreter here. Unset, load is an error.
  void on_load(std::function<void(const std::string&)> fn) { on_load_ = std::move(fn); }

  // Single entry point of the link protocol. Throws jsim::Error on failure;
  // Session implementations decide how that crosses their transport.
  wire::Bytes handle(std::uint8_t op, const wire::Bytes& body);

  std::string status_json() const;
  void write_status() const;  // to the endpoint path, when one is set

 private:
  struct WorkerState {
    WorkerSpec spec;
    std::string job_id;                     // empty for inproc
    std::string node;                       // rank-0 placement
    std::unique_ptr<KernelServer> inproc;   // inproc channel only
    msg::SendPortPtr to_worker;             // ibis: daemon -> worker "rpc"
    overlay::Route route;                   // ibis only
    bool dead = false;
    std::uint64_t calls = 0;
    std::uint64_t rtt_total = 0;  // ticks over completed ibis calls
  };

  // One in-flight `calls` batch. Replies arrive on rpc_in_ and are matched
  // by (role, call id). The script side is single-threaded, so at most one
  // batch is active at a time.
  struct BatchSlot {
    std::string role;
    std::uint32_t call_id = 0;
    netsim::Tick sent = 0;
    bool done = false;
    bool died = false;
    wire::Bytes reply;
    std::string diagnostic;
  };
  struct Batch {
    std::vector<BatchSlot> slots;
    std::size_t open = 0;  // slots neither done nor died
  };

  wire::Bytes op_load(const wire::Bytes& body);
  wire::Bytes op_create_worker(const wire::Bytes& body);
  wire::Bytes op_calls(const wire::Bytes& body);
  wire::Bytes op_checkpoint(const wire::Bytes& body);
  wire::Bytes op_stop();

  deploy::ProcessState worker_program(std::shared_ptr<deploy::ProcessContext> ctx);
  WorkerState& need_worker(const std::string& role);
  void mark_dead(const std::string& member);
  void acquire_endpoint();
  void release_endpoint();

  DaemonConfig cfg_;
  netsim::World world_;
  netsim::Fabric fabric_;
  units::UnitRegistry units_;
  std::unique_ptr<deploy::DeployService> deploy_;
  std::unique_ptr<msg::Registry> registry_;
  std::unique_ptr<msg::MsgNode> pool_;
  msg::ReceivePortPtr rpc_in_;
  std::map<std::string, WorkerState> workers_;
  Batch* active_ = nullptr;
  std::function<void(const std::string&)> on_load_;
  std::string run_json_;  // latest checkpoint body, empty until one arrives
  bool stopped_ = false;
  bool own_lock_ = false;
};

// Session bound to a Daemon living in the same process. Requests pump the
// daemon's world directly; errors propagate as the original exceptions.
class InprocSession : public Session {
 public:
  explicit InprocSession(Daemon& daemon) : daemon_(daemon) {}
  wire::Bytes request(std::uint8_t op, const wire::Bytes& body) override {
    return daemon_.handle(op, body);
  }

 private:
  Daemon& daemon_;
};

// Session that forks `binary daemon-serve --endpoint <endpoint> <extra...>`
// and speaks the framed link protocol over its stdin/stdout (request:
// u8 op, u32 LE length, body; reply: u8 status, u32 LE length, body where
// status 1 carries an error message). The child is terminated on
// destruction if still alive.
class PipeSession : public Session {
 public:
  PipeSession(const std::string& binary, const std::string& endpoint,
              std::vector<std::string> extra_args = {});
  ~PipeSession() override;

  wire::Bytes request(std::uint8_t op, const wire::Bytes& body) override;
  int wait();  // reaps the child, returns its exit code

 private:
  int to_child_ = -1;
  int from_child_ = -1;
  long pid_ = -1;
};

// Child side of PipeSession: serves framed requests from `in_fd` until a
// stop op is answered or input closes. Returns a process exit code.
int serve_pipe(Daemon& daemon, int in_fd, int out_fd);

// Reads the status document some daemon wrote at `endpoint`. Throws
// DaemonUnreachable when no document exists.
std::string read_status(const std::string& endpoint);

class Coupler;
class Worker;
using WorkerPtr = std::shared_ptr<Worker>;

namespace detail {
struct PendingCall {
  Coupler* owner = nullptr;
  WorkerPtr worker;
  const FunctionSig* sig = nullptr;
  wire::Bytes frame;
  bool resolved = false;
  std::vector<Value> results;
  std::exception_ptr error;
};
}  // namespace detail

// Handle on one queued call. Results come back unit-tagged per the kernel
// manifest; get() flushes the batch if needed and rethrows worker failures
// (RemoteError, WorkerDied, MalformedFrame).
class Future {
 public:
  Future() = default;
  std::vector<Value> get();
  bool resolved() const { return st_ && st_->resolved; }

 private:
  friend class Coupler;
  explicit Future(std::shared_ptr<detail::PendingCall> st) : st_(std::move(st)) {}
  std::shared_ptr<detail::PendingCall> st_;
};

// Script-side proxy for one kernel instance. Arguments are checked and
// converted against the kernel manifest before anything leaves the script,
// so unit mistakes fail at the call site.
class Worker : public std::enable_shared_from_this<Worker> {
 public:
  const WorkerSpec& spec() const { return spec_; }
  const KernelManifest& manifest() const { return manifest_; }
  const std::string& job_id() const { return job_id_; }  // empty for inproc
  const std::string& node() const { return node_; }
  bool remote() const { return spec_.channel != "inproc"; }
  const overlay::Route& route() const { return route_; }  // meaningful when remote

  std::vector<Value> call(const std::string& fn, const std::vector<Value>& args = {},
                          std::uint32_t call_count = 1);
  Future call_async(const std::string& fn, const std::vector<Value>& args = {},
                    std::uint32_t call_count = 1);

  // Polite shutdown: sends the stop function; a deployed worker then exits
  // on its own and its job finishes as done.
  void stop();

 private:
  friend class Coupler;
  Worker() = default;
  Coupler* coupler_ = nullptr;
  WorkerSpec spec_;
  KernelManifest manifest_;
  std::string job_id_;
  std::string node_;
  overlay::Route route_;
};

// The script's connection to a daemon: creates workers, queues calls into
// batches, and moves them over the session in one round trip per flush.
class Coupler {
 public:
  explicit Coupler(SessionPtr session,
                   units::UnitRegistry units = units::UnitRegistry::builtin());

  const units::UnitRegistry& units() const { return units_; }

  void load(const std::string& scenario_text);
  WorkerPtr create_worker(const WorkerSpec& spec);  // KernelUnknown before any I/O

  // Sends every queued call as one batch and resolves their futures.
  void flush();
  std::size_t queued() const { return batch_.size(); }

  std::string status();  // status JSON text
  void checkpoint(const std::string& run_json);
  void stop_daemon();

 private:
  friend class Worker;
  friend class Future;
  Future enqueue(WorkerPtr worker, const std::string& fn, const std::vector<Value>& args,
                 std::uint32_t call_count);

  SessionPtr session_;
  units::UnitRegistry units_;
  std::vector<std::shared_ptr<detail::PendingCall>> batch_;
  std::map<std::string, WorkerPtr> workers_;
  std::uint32_t next_call_ = 1;
};

}  // namespace jsim::coupler

#endif  // JSIM_COUPLER_DAEMON_HPP_
