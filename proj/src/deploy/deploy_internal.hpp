#ifndef JSIM_SRC_DEPLOY_DEPLOY_INTERNAL_HPP_
#define JSIM_SRC_DEPLOY_DEPLOY_INTERNAL_HPP_

#include <climits>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "jsim/deploy/deploy.hpp"

// Shared between deploy.cpp (service, local and shell adapters) and
// simsched.cpp (queueing adapter). Private to the library.

namespace jsim::deploy {

inline constexpr int kStillRunning = INT_MIN;

struct DeployService::Resource {
  ResourceSpec spec;
  std::vector<std::string> compute_nodes;
  std::map<std::string, wire::Bytes> files;  // resource-wide shared filesystem
  overlay::HubPtr hub;

  // simsched bookkeeping
  std::vector<int> free_slots;      // per compute node
  std::deque<std::string> queue;    // pending job ids, strict FIFO
};

struct DeployService::ManagedJob {
  std::string id;
  JobSpec spec;
  std::string resource;
  Adapter* adapter = nullptr;
  JobState state = JobState::pending;
  std::string reason;
  std::vector<std::string> nodes;  // per rank
  std::vector<ProcessState> states;
  std::vector<std::shared_ptr<ProcessContext>> ctxs;
  std::vector<int> exit_codes;  // kStillRunning until the rank ends
  std::string out, err;
  bool logged = false;
  std::vector<std::pair<std::size_t, int>> slots_taken;  // node index -> procs
};

class DeployService::LocalAdapter : public Adapter {
 public:
  const std::string& name() const override { return name_; }
  bool supports(const std::string& middleware) const override { return middleware == "local"; }

 protected:
  void launch(DeployService& svc, const std::string& job_id) override;
  void cancel_job(DeployService& svc, const std::string& job_id) override;

 private:
  std::string name_ = "local";
};

class DeployService::ShellAdapter : public Adapter {
 public:
  const std::string& name() const override { return name_; }
  bool supports(const std::string& middleware) const override { return middleware == "shell"; }

 protected:
  void launch(DeployService& svc, const std::string& job_id) override;
  void cancel_job(DeployService& svc, const std::string& job_id) override;

 private:
  std::string name_ = "shell";
};

class DeployService::SimschedAdapter : public Adapter {
 public:
  const std::string& name() const override { return name_; }
  bool supports(const std::string& middleware) const override { return middleware == "simsched"; }

 protected:
  void launch(DeployService& svc, const std::string& job_id) override;
  void job_finished(DeployService& svc, const std::string& job_id) override;

 private:
  void pump(DeployService& svc, Resource& res);

  std::string name_ = "simsched";
};

bool terminal(JobState s);

}  // namespace jsim::deploy

#endif  // JSIM_SRC_DEPLOY_DEPLOY_INTERNAL_HPP_
