#ifndef JSIM_DEPLOY_DEPLOY_HPP_
#define JSIM_DEPLOY_DEPLOY_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "jsim/error.hpp"
#include "jsim/netsim/fabric.hpp"
#include "jsim/overlay/overlay.hpp"

// Deployment of simulated jobs onto simulated resources: resource and job
// descriptions, pluggable middleware adapters picked automatically, file
// staging onto a per-resource shared filesystem, multi-process jobs, and one
// overlay hub per resource linked back to the daemon's hub.

namespace jsim::deploy {

class NoAdapter : public Error {
 public:
  explicit NoAdapter(const std::string& mw) : Error("no adapter for middleware " + mw) {}
};
class StageInFailed : public Error {
 public:
  explicit StageInFailed(const std::string& what) : Error("stage-in failed: " + what) {}
};
class LaunchFailed : public Error {
 public:
  explicit LaunchFailed(const std::string& what) : Error("launch failed: " + what) {}
};
class InsufficientNodes : public Error {
 public:
  InsufficientNodes(int want, int have)
      : Error("job wants " + std::to_string(want) + " nodes, resource has " +
              std::to_string(have)) {}
};
class HubStartFailed : public Error {
 public:
  explicit HubStartFailed(const std::string& what) : Error("hub start failed: " + what) {}
};
class UnknownJob : public Error {
 public:
  explicit UnknownJob(const std::string& id) : Error("unknown job " + id) {}
};
class UnknownResource : public Error {
 public:
  explicit UnknownResource(const std::string& name) : Error("unknown resource " + name) {}
};

struct ResourceSpec {
  std::string name;
  std::string middleware = "local";  // must match a registered adapter at submit time
  std::string frontend;              // fabric node id; defaults to "<name>-fe"
  int nodes = 1;                     // compute nodes, "<name>-n<i>"
  std::string install_path = "/opt/jsim";
  bool gpu_capable = false;
  bool computes_addressable = true;
  netsim::Tick reservation = 0;  // simsched: job walltime budget, 0 = unlimited
  int slots_per_node = 1;        // simsched: process slots per node
};

struct JobSpec {
  std::string program;  // name registered with register_program
  int process_count = 1;
  int node_count = 1;
  std::vector<std::pair<std::string, std::string>> stage_in;  // host path -> remote name
  std::vector<std::string> arguments;
};

enum class JobState { pending, running, done, failed, killed };
std::string to_string(JobState s);

struct JobInfo {
  std::string id;
  JobState state = JobState::pending;
  std::string resource;
  std::string adapter;
  std::vector<std::string> process_nodes;  // fabric node per rank, once placed
  std::string reason;                      // populated for failed/killed
};

class DeployService;

// Environment handed to a launched process. Lives as long as the program's
// state object keeps it; calls are ignored once the job is finished.
class ProcessContext : public std::enable_shared_from_this<ProcessContext> {
 public:
  netsim::World& world() const;
  netsim::Fabric& fabric() const;
  const std::string& job_id() const { return job_id_; }
  int rank() const { return rank_; }
  int size() const { return size_; }
  const std::string& node() const { return node_; }
  const std::string& resource() const { return resource_; }
  const std::vector<std::string>& args() const { return args_; }
  const std::string& install_path() const { return install_path_; }

  bool has_file(const std::string& name) const;      // resource shared filesystem
  wire::Bytes read_file(const std::string& name) const;  // Error when absent
  void print(const std::string& text);   // job stdout
  void eprint(const std::string& text);  // job stderr
  void exit(int code);                   // ends this rank

 private:
  friend class DeployService;
  DeployService* service_ = nullptr;
  std::string job_id_;
  int rank_ = 0;
  int size_ = 1;
  std::string node_;
  std::string resource_;
  std::vector<std::string> args_;
  std::string install_path_;
};

// A program returns an opaque state handle; dropping it (kill, reservation
// expiry) destroys whatever the process held, closing its conduits without
// any goodbye. Clean shutdown goes through ctx->exit(code) instead.
using ProcessState = std::shared_ptr<void>;
using ProgramFn = std::function<ProcessState(std::shared_ptr<ProcessContext>)>;

class Adapter {
 public:
  virtual ~Adapter() = default;
  virtual const std::string& name() const = 0;
  virtual bool supports(const std::string& middleware) const = 0;
  virtual std::vector<std::string> capabilities() const {
    return {"submit", "cancel", "status", "copyFile"};
  }

 protected:
  // Move the job from pending to running (or throw). Called with files
  // already staged and the resource hub up.
  virtual void launch(DeployService& svc, const std::string& job_id);
  virtual void cancel_job(DeployService& svc, const std::string& job_id);
  // Runs after a job reaches a terminal state; queueing adapters release
  // capacity and start whatever is next.
  virtual void job_finished(DeployService& svc, const std::string& job_id);
  friend class DeployService;
};

class DeployService {
 public:
  DeployService(netsim::Fabric& fabric, std::string daemon_node, std::string log_dir,
                overlay::OverlayConfig overlay_cfg = {});
  ~DeployService();

  DeployService(const DeployService&) = delete;
  DeployService& operator=(const DeployService&) = delete;

  // Adapters are tried in registration order; built-ins (local, shell,
  // simsched) are registered by the constructor.
  void register_adapter(std::shared_ptr<Adapter> adapter);
  Adapter& select_adapter(const ResourceSpec& spec) const;  // NoAdapter

  void register_program(const std::string& name, ProgramFn fn);

  // Creates the resource's fabric nodes when they don't exist yet and seeds
  // its shared filesystem with the install marker (unless installed=false,
  // which models a resource the framework was never rolled out to).
  void add_resource(const ResourceSpec& spec, bool installed = true);
  bool has_resource(const std::string& name) const;
  const ResourceSpec& resource_spec(const std::string& name) const;
  std::vector<std::string> resource_names() const;

  // At most one hub per resource, linked to the daemon hub; returns the hub's
  // fabric node. Idempotent.
  std::string ensure_hub(const std::string& resource);
  const overlay::HubPtr& daemon_hub() const { return daemon_hub_; }
  overlay::HubPtr resource_hub(const std::string& resource) const;

  std::string submit(const std::string& resource, const JobSpec& job);
  JobState poll(const std::string& job_id) const;  // UnknownJob
  JobInfo info(const std::string& job_id) const;
  void cancel(const std::string& job_id);  // forces killed; no-op when terminal
  std::vector<JobInfo> jobs() const;
  void stop_all();  // cancel everything still pending or running

  netsim::Fabric& fabric() { return fabric_; }
  netsim::World& world() { return fabric_.world(); }
  const std::string& daemon_node() const { return daemon_node_; }
  const std::string& log_dir() const { return log_dir_; }

 private:
  struct Resource;
  struct ManagedJob;
  class LocalAdapter;
  class ShellAdapter;
  class SimschedAdapter;
  friend class ProcessContext;

  Resource& need_resource(const std::string& name);
  const Resource& need_resource(const std::string& name) const;
  static std::vector<std::string> first_nodes(const Resource& res, int count);
  ManagedJob& need_job(const std::string& job_id);
  const ManagedJob& need_job(const std::string& job_id) const;

  // adapter toolbox
  void place_and_spawn(ManagedJob& job, std::vector<std::string> nodes);
  void finish(ManagedJob& job, JobState state, const std::string& reason);
  void rank_exited(const std::string& job_id, int rank, int code);
  void write_logs(ManagedJob& job);

  netsim::Fabric& fabric_;
  std::string daemon_node_;
  std::string log_dir_;
  overlay::OverlayConfig overlay_cfg_;
  overlay::HubPtr daemon_hub_;
  std::vector<std::shared_ptr<Adapter>> adapters_;
  std::map<std::string, ProgramFn> programs_;
  std::map<std::string, std::unique_ptr<Resource>> resources_;
  std::map<std::string, std::unique_ptr<ManagedJob>> jobs_;
  std::uint64_t next_job_ = 1;
  // deferred events (rank exits, reservation expiry) check this before
  // touching the service, in case it died first
  std::shared_ptr<bool> alive_ = std::make_shared<bool>(true);
};

}  // namespace jsim::deploy

#endif  // JSIM_DEPLOY_DEPLOY_HPP_
