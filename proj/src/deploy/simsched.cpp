#include <algorithm>

#include "deploy_internal.hpp"

// Simulated batch scheduler: strict FIFO queue per resource, per-node process
// slots, and optional reservations that expire mid-run. An expired
// reservation tears the job down without any goodbye, which is exactly how a
// batch system ending a reservation looks from the inside.

namespace jsim::deploy {

void DeployService::SimschedAdapter::launch(DeployService& svc, const std::string& job_id) {
  ManagedJob& job = svc.need_job(job_id);
  Resource& res = svc.need_resource(job.resource);
  if (job.spec.node_count > res.spec.nodes)
    throw InsufficientNodes(job.spec.node_count, res.spec.nodes);
  res.queue.push_back(job_id);  // pending until the head of the queue fits
  pump(svc, res);
}

void DeployService::SimschedAdapter::pump(DeployService& svc, Resource& res) {
  while (!res.queue.empty()) {
    ManagedJob& job = svc.need_job(res.queue.front());
    const int nodes_wanted = job.spec.node_count;
    // ranks are dealt round-robin, so the j-th granted node hosts every rank
    // with rank % node_count == j
    std::vector<int> need(static_cast<std::size_t>(nodes_wanted), 0);
    for (int r = 0; r < job.spec.process_count; ++r)
      need[static_cast<std::size_t>(r % nodes_wanted)]++;

    std::vector<std::size_t> granted;
    for (std::size_t i = 0; i < res.free_slots.size() && granted.size() < need.size(); ++i) {
      if (res.free_slots[i] >= need[granted.size()]) granted.push_back(i);
    }
    if (granted.size() < need.size()) return;  // head blocks; strict FIFO, no skipping

    res.queue.pop_front();
    job.slots_taken.clear();
    std::vector<std::string> names;
    for (std::size_t j = 0; j < granted.size(); ++j) {
      res.free_slots[granted[j]] -= need[j];
      job.slots_taken.emplace_back(granted[j], need[j]);
      names.push_back(res.compute_nodes[granted[j]]);
    }
    svc.place_and_spawn(job, std::move(names));

    if (res.spec.reservation > 0) {
      auto* svcp = &svc;
      auto alive = svc.alive_;
      const std::string id = job.id;
      svc.world().at(svc.world().now() + res.spec.reservation, [svcp, alive, id] {
        if (!*alive) return;
        auto it = svcp->jobs_.find(id);
        if (it == svcp->jobs_.end() || terminal(it->second->state)) return;
        svcp->finish(*it->second, JobState::failed, "reservation expired");
      });
    }
  }
}

void DeployService::SimschedAdapter::job_finished(DeployService& svc, const std::string& job_id) {
  ManagedJob& job = svc.need_job(job_id);
  Resource& res = svc.need_resource(job.resource);
  auto queued = std::find(res.queue.begin(), res.queue.end(), job_id);
  if (queued != res.queue.end()) res.queue.erase(queued);  // cancelled while pending
  for (auto [node, count] : job.slots_taken) res.free_slots[node] += count;
  job.slots_taken.clear();
  pump(svc, res);
}

}  // namespace jsim::deploy
