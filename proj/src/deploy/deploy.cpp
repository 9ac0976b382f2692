#include "jsim/deploy/deploy.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "deploy_internal.hpp"

namespace jsim::deploy {

namespace fs = std::filesystem;
using netsim::ConduitEnd;
using netsim::ConduitPtr;

std::string to_string(JobState s) {
  switch (s) {
    case JobState::pending: return "pending";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
    case JobState::killed: return "killed";
  }
  return "?";
}

bool terminal(JobState s) {
  return s == JobState::done || s == JobState::failed || s == JobState::killed;
}

std::vector<std::string> DeployService::first_nodes(const Resource& res, int count) {
  return {res.compute_nodes.begin(), res.compute_nodes.begin() + count};
}

// ---- ProcessContext ----------------------------------------------------

netsim::World& ProcessContext::world() const { return service_->world(); }
netsim::Fabric& ProcessContext::fabric() const { return service_->fabric(); }

bool ProcessContext::has_file(const std::string& name) const {
  return service_->need_resource(resource_).files.count(name) != 0;
}

wire::Bytes ProcessContext::read_file(const std::string& name) const {
  const auto& files = service_->need_resource(resource_).files;
  auto it = files.find(name);
  if (it == files.end()) throw Error("no file " + name + " on resource " + resource_);
  return it->second;
}

void ProcessContext::print(const std::string& text) {
  auto it = service_->jobs_.find(job_id_);
  if (it == service_->jobs_.end() || terminal(it->second->state)) return;
  it->second->out += text;
}

void ProcessContext::eprint(const std::string& text) {
  auto it = service_->jobs_.find(job_id_);
  if (it == service_->jobs_.end() || terminal(it->second->state)) return;
  it->second->err += text;
}

void ProcessContext::exit(int code) {
  auto it = service_->jobs_.find(job_id_);
  if (it == service_->jobs_.end() || terminal(it->second->state)) return;
  if (it->second->exit_codes[static_cast<std::size_t>(rank_)] != kStillRunning) return;
  // defer: exits land on an event boundary, never mid-spawn
  auto* svc = service_;
  auto alive = svc->alive_;
  const std::string id = job_id_;
  const int rank = rank_;
  svc->world().at(svc->world().now(), [svc, alive, id, rank, code] {
    if (*alive) svc->rank_exited(id, rank, code);
  });
}

// ---- Adapter defaults ---------------------------------------------------

void Adapter::launch(DeployService&, const std::string&) {
  throw LaunchFailed("adapter " + name() + " cannot launch jobs");
}
void Adapter::cancel_job(DeployService&, const std::string&) {}
void Adapter::job_finished(DeployService&, const std::string&) {}

// ---- local adapter ------------------------------------------------------

void DeployService::LocalAdapter::launch(DeployService& svc, const std::string& job_id) {
  ManagedJob& job = svc.need_job(job_id);
  Resource& res = svc.need_resource(job.resource);
  if (job.spec.node_count > res.spec.nodes)
    throw InsufficientNodes(job.spec.node_count, res.spec.nodes);
  svc.place_and_spawn(job, svc.first_nodes(res, job.spec.node_count));
}

void DeployService::LocalAdapter::cancel_job(DeployService&, const std::string&) {}

// ---- shell adapter ------------------------------------------------------

// Stand-in for launching over ssh: a conduit is dialled from the daemon node
// to the resource frontend's exec service and the job starts only after the
// frontend acknowledges. Firewalled or missing frontends surface here.
void DeployService::ShellAdapter::launch(DeployService& svc, const std::string& job_id) {
  ManagedJob& job = svc.need_job(job_id);
  Resource& res = svc.need_resource(job.resource);
  if (job.spec.node_count > res.spec.nodes)
    throw InsufficientNodes(job.spec.node_count, res.spec.nodes);

  ConduitPtr conduit;
  try {
    conduit = svc.fabric().dial(svc.daemon_node(), res.spec.frontend, "shellexec");
  } catch (const Error& e) {
    throw LaunchFailed(std::string("cannot reach frontend: ") + e.what());
  }
  ConduitEnd& end = conduit->a();
  auto acked = std::make_shared<bool>(false);
  end.on_data([acked](const wire::Bytes&) { *acked = true; });
  end.send(wire::Bytes{'e', 'x', 'e', 'c'});
  try {
    svc.world().await([acked] { return *acked; }, 5000, "shell launch ack");
  } catch (const Timeout&) {
    end.close();
    throw LaunchFailed("frontend did not acknowledge");
  }
  end.close();
  svc.place_and_spawn(job, svc.first_nodes(res, job.spec.node_count));
}

void DeployService::ShellAdapter::cancel_job(DeployService&, const std::string&) {}

// ---- DeployService ------------------------------------------------------

DeployService::DeployService(netsim::Fabric& fabric, std::string daemon_node, std::string log_dir,
                             overlay::OverlayConfig overlay_cfg)
    : fabric_(fabric),
      daemon_node_(std::move(daemon_node)),
      log_dir_(std::move(log_dir)),
      overlay_cfg_(overlay_cfg) {
  try {
    daemon_hub_ = overlay::start_hub(fabric_, daemon_node_, overlay_cfg_);
  } catch (const Error& e) {
    throw HubStartFailed(std::string("daemon hub: ") + e.what());
  }
  register_adapter(std::make_shared<LocalAdapter>());
  register_adapter(std::make_shared<ShellAdapter>());
  register_adapter(std::make_shared<SimschedAdapter>());
}

DeployService::~DeployService() {
  *alive_ = false;
  try {
    stop_all();
  } catch (...) {
  }
}

void DeployService::register_adapter(std::shared_ptr<Adapter> adapter) {
  adapters_.push_back(std::move(adapter));
}

Adapter& DeployService::select_adapter(const ResourceSpec& spec) const {
  for (const auto& a : adapters_) {
    if (a->supports(spec.middleware)) return *a;
  }
  throw NoAdapter(spec.middleware);
}

void DeployService::register_program(const std::string& name, ProgramFn fn) {
  programs_[name] = std::move(fn);
}

void DeployService::add_resource(const ResourceSpec& spec, bool installed) {
  if (spec.name.empty()) throw Error("resource needs a name");
  if (resources_.count(spec.name)) throw Error("resource " + spec.name + " already defined");
  if (spec.nodes < 1) throw Error("resource " + spec.name + " needs at least one node");

  auto res = std::make_unique<Resource>();
  res->spec = spec;
  if (res->spec.frontend.empty()) res->spec.frontend = spec.name + "-fe";

  if (!fabric_.has_node(res->spec.frontend)) {
    fabric_.add_node({res->spec.frontend, netsim::NodeKind::frontend, true});
  }
  for (int i = 0; i < spec.nodes; ++i) {
    const std::string id = spec.name + "-n" + std::to_string(i);
    if (!fabric_.has_node(id)) {
      fabric_.add_node({id, netsim::NodeKind::compute, spec.computes_addressable});
    }
    res->compute_nodes.push_back(id);
  }
  if (installed) {
    const std::string marker = res->spec.install_path + "/.installed";
    res->files[marker] = wire::Bytes{'j', 's', 'i', 'm', '\n'};
  }
  res->free_slots.assign(static_cast<std::size_t>(spec.nodes), std::max(1, spec.slots_per_node));

  // the frontend's exec service; replies to every request
  fabric_.listen(res->spec.frontend, "shellexec", [](ConduitPtr conduit, ConduitEnd& accepted) {
    accepted.on_data([conduit](const wire::Bytes&) { conduit->b().send(wire::Bytes{'o', 'k'}); });
  });

  resources_[spec.name] = std::move(res);
}

bool DeployService::has_resource(const std::string& name) const {
  return resources_.count(name) != 0;
}

const ResourceSpec& DeployService::resource_spec(const std::string& name) const {
  return need_resource(name).spec;
}

std::vector<std::string> DeployService::resource_names() const {
  std::vector<std::string> names;
  names.reserve(resources_.size());
  for (const auto& [name, res] : resources_) names.push_back(name);
  return names;
}

std::string DeployService::ensure_hub(const std::string& resource) {
  Resource& res = need_resource(resource);
  if (res.hub) return res.spec.frontend;
  overlay::HubPtr hub;
  try {
    hub = overlay::start_hub(fabric_, res.spec.frontend, overlay_cfg_);
  } catch (const Error& e) {
    throw HubStartFailed(resource + ": " + e.what());
  }
  try {
    overlay::link_hubs(*hub, *daemon_hub_);
  } catch (const Error& e) {
    // roll back: a hub that cannot join the daemon's overlay is useless
    throw HubStartFailed(resource + ": " + e.what());
  }
  res.hub = std::move(hub);
  return res.spec.frontend;
}

overlay::HubPtr DeployService::resource_hub(const std::string& resource) const {
  return need_resource(resource).hub;
}

std::string DeployService::submit(const std::string& resource, const JobSpec& job) {
  Resource& res = need_resource(resource);
  if (job.node_count < 1 || job.process_count < job.node_count)
    throw Error("invalid job spec: need process_count >= node_count >= 1");
  Adapter& adapter = select_adapter(res.spec);
  if (!programs_.count(job.program)) throw LaunchFailed("unknown program " + job.program);
  if (!res.files.count(res.spec.install_path + "/.installed"))
    throw LaunchFailed("install path " + res.spec.install_path + " missing on " + resource);

  // stage-in from the host filesystem onto the resource's shared one
  for (const auto& [src, remote] : job.stage_in) {
    std::ifstream in(src, std::ios::binary);
    if (!in) throw StageInFailed("cannot read " + src);
    wire::Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    res.files[remote] = std::move(data);
  }

  ensure_hub(resource);

  const std::string id = "job-" + std::to_string(next_job_++);
  auto managed = std::make_unique<ManagedJob>();
  managed->id = id;
  managed->spec = job;
  managed->resource = resource;
  managed->adapter = &adapter;
  jobs_[id] = std::move(managed);
  try {
    adapter.launch(*this, id);
  } catch (...) {
    jobs_.erase(id);
    throw;
  }
  return id;
}

JobState DeployService::poll(const std::string& job_id) const { return need_job(job_id).state; }

JobInfo DeployService::info(const std::string& job_id) const {
  const ManagedJob& job = need_job(job_id);
  JobInfo out;
  out.id = job.id;
  out.state = job.state;
  out.resource = job.resource;
  out.adapter = job.adapter ? job.adapter->name() : "";
  out.process_nodes = job.nodes;
  out.reason = job.reason;
  return out;
}

void DeployService::cancel(const std::string& job_id) {
  ManagedJob& job = need_job(job_id);
  if (terminal(job.state)) return;
  job.adapter->cancel_job(*this, job_id);
  finish(job, JobState::killed, "cancelled");
}

std::vector<JobInfo> DeployService::jobs() const {
  std::vector<JobInfo> out;
  out.reserve(jobs_.size());
  for (const auto& [id, job] : jobs_) out.push_back(info(id));
  return out;
}

void DeployService::stop_all() {
  for (auto& [id, job] : jobs_) {
    if (!terminal(job->state)) cancel(id);
  }
}

DeployService::Resource& DeployService::need_resource(const std::string& name) {
  auto it = resources_.find(name);
  if (it == resources_.end()) throw UnknownResource(name);
  return *it->second;
}

const DeployService::Resource& DeployService::need_resource(const std::string& name) const {
  auto it = resources_.find(name);
  if (it == resources_.end()) throw UnknownResource(name);
  return *it->second;
}

DeployService::ManagedJob& DeployService::need_job(const std::string& job_id) {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw UnknownJob(job_id);
  return *it->second;
}

const DeployService::ManagedJob& DeployService::need_job(const std::string& job_id) const {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw UnknownJob(job_id);
  return *it->second;
}

void DeployService::place_and_spawn(ManagedJob& job, std::vector<std::string> nodes) {
  const auto& prog = programs_.at(job.spec.program);
  const Resource& res = need_resource(job.resource);
  const int n = job.spec.process_count;
  job.state = JobState::running;
  job.nodes.clear();
  job.ctxs.clear();
  job.exit_codes.assign(static_cast<std::size_t>(n), kStillRunning);
  for (int rank = 0; rank < n; ++rank) {
    auto ctx = std::shared_ptr<ProcessContext>(new ProcessContext());
    ctx->service_ = this;
    ctx->job_id_ = job.id;
    ctx->rank_ = rank;
    ctx->size_ = n;
    ctx->node_ = nodes[static_cast<std::size_t>(rank) % nodes.size()];
    ctx->resource_ = job.resource;
    ctx->args_ = job.spec.arguments;
    ctx->install_path_ = res.spec.install_path;
    job.nodes.push_back(ctx->node_);
    job.ctxs.push_back(std::move(ctx));
  }
  job.states.clear();
  for (int rank = 0; rank < n; ++rank) {
    job.states.push_back(prog(job.ctxs[static_cast<std::size_t>(rank)]));
    if (terminal(job.state)) break;  // a synchronous failure tore the job down
  }
}

void DeployService::finish(ManagedJob& job, JobState state, const std::string& reason) {
  if (terminal(job.state)) return;
  job.state = state;
  job.reason = reason;
  job.states.clear();  // drops every rank's state; conduits close without goodbye
  job.ctxs.clear();
  if (job.adapter) job.adapter->job_finished(*this, job.id);
  write_logs(job);
}

void DeployService::rank_exited(const std::string& job_id, int rank, int code) {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return;
  ManagedJob& job = *it->second;
  if (terminal(job.state)) return;
  auto& slot = job.exit_codes[static_cast<std::size_t>(rank)];
  if (slot != kStillRunning) return;
  slot = code;
  if (static_cast<std::size_t>(rank) < job.states.size()) {
    job.states[static_cast<std::size_t>(rank)].reset();
  }
  if (code != 0) {
    finish(job, JobState::failed,
           "rank " + std::to_string(rank) + " exited with code " + std::to_string(code));
    return;
  }
  // rank 0 finishing cleanly ends the whole cohort
  const bool all_done = std::all_of(job.exit_codes.begin(), job.exit_codes.end(),
                                    [](int c) { return c != kStillRunning; });
  if (rank == 0 || all_done) finish(job, JobState::done, "");
}

void DeployService::write_logs(ManagedJob& job) {
  if (job.logged) return;
  job.logged = true;
  std::error_code ec;
  fs::create_directories(log_dir_, ec);
  std::ofstream(log_dir_ + "/" + job.id + ".out", std::ios::binary) << job.out;
  std::ofstream(log_dir_ + "/" + job.id + ".err", std::ios::binary) << job.err;
}

}  // namespace jsim::deploy
