#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "jsim/deploy/deploy.hpp"
#include "jsim/msg/msg.hpp"

using namespace jsim;
using namespace jsim::deploy;
using netsim::Fabric;
using netsim::LinkRule;
using netsim::NodeKind;
using netsim::World;
using wire::Bytes;

namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a64(const Bytes& data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / "jsim-deploy-tests" / tag;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Daemon node plus a service logging under a per-test directory.
struct Rig {
  World world;
  Fabric fabric{world};
  fs::path dir;
  std::unique_ptr<DeployService> svc;

  explicit Rig(const std::string& tag) : dir(fresh_dir(tag)) {
    fabric.add_node({"daemon", NodeKind::standalone, true});
    svc = std::make_unique<DeployService>(fabric, "daemon", dir.string());
  }

  void add_pool(const std::string& name, int nodes, const std::string& mw = "local",
                int slots = 1, netsim::Tick reservation = 0) {
    ResourceSpec spec;
    spec.name = name;
    spec.middleware = mw;
    spec.nodes = nodes;
    spec.slots_per_node = slots;
    spec.reservation = reservation;
    svc->add_resource(spec);
  }

  // exits with args[0] (default 0) as the code, immediately
  void register_quit() {
    svc->register_program("quit", [](std::shared_ptr<ProcessContext> ctx) -> ProcessState {
      const int code = ctx->args().empty() ? 0 : std::stoi(ctx->args()[0]);
      ctx->exit(code);
      return nullptr;
    });
  }

  // exits 0 after args[0] ticks (default 50)
  void register_napper() {
    svc->register_program("napper", [](std::shared_ptr<ProcessContext> ctx) -> ProcessState {
      const netsim::Tick delay = ctx->args().empty() ? 50 : std::stoul(ctx->args()[0]);
      ctx->world().after(delay, [ctx] { ctx->exit(0); });
      return nullptr;
    });
  }

  // never exits; must be killed
  void register_sleeper() {
    svc->register_program("sleeper", [](std::shared_ptr<ProcessContext> ctx) -> ProcessState {
      return std::make_shared<std::shared_ptr<ProcessContext>>(std::move(ctx));
    });
  }
};

JobSpec job(const std::string& program, int procs = 1, int nodes = 1,
            std::vector<std::string> args = {}) {
  JobSpec spec;
  spec.program = program;
  spec.process_count = procs;
  spec.node_count = nodes;
  spec.arguments = std::move(args);
  return spec;
}

// Claims one middleware name, records launches, starts nothing.
class ProbeAdapter : public Adapter {
 public:
  explicit ProbeAdapter(std::string mw) : mw_(std::move(mw)) {}
  const std::string& name() const override { return name_; }
  bool supports(const std::string& middleware) const override { return middleware == mw_; }
  std::vector<std::string> launched;

 protected:
  void launch(DeployService&, const std::string& job_id) override { launched.push_back(job_id); }

 private:
  std::string mw_;
  std::string name_ = "probe";
};

}  // namespace

TEST_CASE("local job: submit -> running -> done, logs written exactly once") {
  Rig rig("local-lifecycle");
  rig.add_pool("pool", 4);
  rig.svc->register_program("greet", [](std::shared_ptr<ProcessContext> ctx) -> ProcessState {
    ctx->print("hello from rank " + std::to_string(ctx->rank()) + " of " +
               std::to_string(ctx->size()) + "\n");
    ctx->exit(0);
    return nullptr;
  });

  const std::string id = rig.svc->submit("pool", job("greet", 2, 2));
  CHECK(rig.svc->poll(id) == JobState::running);

  JobInfo inf = rig.svc->info(id);
  CHECK(inf.adapter == "local");
  CHECK(inf.resource == "pool");
  REQUIRE(inf.process_nodes.size() == 2);
  CHECK(inf.process_nodes[0] == "pool-n0");
  CHECK(inf.process_nodes[1] == "pool-n1");

  rig.world.run_for(10);
  CHECK(rig.svc->poll(id) == JobState::done);
  CHECK(rig.svc->info(id).reason.empty());

  CHECK(slurp(rig.dir / (id + ".out")) == "hello from rank 0 of 2\nhello from rank 1 of 2\n");
  CHECK(slurp(rig.dir / (id + ".err")).empty());
  const auto entries = std::distance(fs::directory_iterator(rig.dir), fs::directory_iterator{});
  CHECK(entries == 2);  // one .out/.err pair, written once

  REQUIRE(rig.svc->jobs().size() == 1);
  CHECK(rig.svc->jobs()[0].id == id);
}

TEST_CASE("ranks round-robin over the granted nodes") {
  Rig rig("placement");
  rig.add_pool("pool", 4);
  rig.register_sleeper();

  const std::string id = rig.svc->submit("pool", job("sleeper", 5, 2));
  const auto nodes = rig.svc->info(id).process_nodes;
  const std::vector<std::string> want = {"pool-n0", "pool-n1", "pool-n0", "pool-n1", "pool-n0"};
  CHECK(nodes == want);
}

TEST_CASE("adapter selection: first registered match wins, none -> NoAdapter") {
  Rig rig("adapters");
  rig.add_pool("loc", 1, "local");
  rig.add_pool("grid", 1, "gridftp");
  rig.register_quit();

  // registered after the built-ins: never sees "local" jobs
  auto local_probe = std::make_shared<ProbeAdapter>("local");
  auto grid_probe = std::make_shared<ProbeAdapter>("gridftp");
  rig.svc->register_adapter(local_probe);
  rig.svc->register_adapter(grid_probe);

  const std::string a = rig.svc->submit("loc", job("quit"));
  CHECK(rig.svc->info(a).adapter == "local");
  CHECK(local_probe->launched.empty());

  // only the probe claims gridftp; it records the launch and starts nothing
  const std::string b = rig.svc->submit("grid", job("quit"));
  CHECK(rig.svc->info(b).adapter == "probe");
  CHECK(grid_probe->launched == std::vector<std::string>{b});
  CHECK(rig.svc->poll(b) == JobState::pending);

  ResourceSpec spec;
  spec.name = "nowhere";
  spec.middleware = "slurm";
  rig.svc->add_resource(spec);
  CHECK_THROWS_AS(rig.svc->submit("nowhere", job("quit")), NoAdapter);
}

TEST_CASE("submit rejects jobs the resource cannot hold") {
  Rig rig("too-big");
  rig.add_pool("pool", 4);
  rig.register_quit();

  CHECK_THROWS_AS(rig.svc->submit("pool", job("quit", 8, 8)), InsufficientNodes);
  CHECK_THROWS_WITH_AS(rig.svc->submit("pool", job("quit", 8, 8)),
                       "job wants 8 nodes, resource has 4", InsufficientNodes);

  // malformed counts never reach the adapter
  CHECK_THROWS_AS(rig.svc->submit("pool", job("quit", 1, 0)), Error);
  CHECK_THROWS_AS(rig.svc->submit("pool", job("quit", 1, 2)), Error);
  CHECK(rig.svc->jobs().empty());
}

TEST_CASE("stage-in copies exact bytes onto the resource filesystem") {
  Rig rig("stage-in");
  rig.add_pool("pool", 1);

  // pseudo-random payload; the program hashes what it reads, the test
  // hashes what it wrote, and the log must carry the same digest
  std::mt19937 gen(12345);
  Bytes payload(4096);
  for (auto& b : payload) b = static_cast<unsigned char>(gen() & 0xff);
  const fs::path host = rig.dir / "payload.bin";
  std::ofstream(host, std::ios::binary).write(reinterpret_cast<const char*>(payload.data()),
                                              static_cast<std::streamsize>(payload.size()));

  rig.svc->register_program("hasher", [](std::shared_ptr<ProcessContext> ctx) -> ProcessState {
    ctx->print(hex64(fnv1a64(ctx->read_file(ctx->args()[0]))) + "\n");
    ctx->exit(0);
    return nullptr;
  });

  JobSpec spec = job("hasher", 1, 1, {"inputs/ic.dat"});
  spec.stage_in = {{host.string(), "inputs/ic.dat"}};
  const std::string id = rig.svc->submit("pool", spec);
  rig.world.run_for(5);

  REQUIRE(rig.svc->poll(id) == JobState::done);
  CHECK(slurp(rig.dir / (id + ".out")) == hex64(fnv1a64(payload)) + "\n");

  JobSpec bad = job("hasher", 1, 1, {"x"});
  bad.stage_in = {{(rig.dir / "missing.bin").string(), "x"}};
  CHECK_THROWS_AS(rig.svc->submit("pool", bad), StageInFailed);
}

TEST_CASE("unknown program and uninstalled resource refuse to launch") {
  Rig rig("preflight");
  rig.add_pool("pool", 1);
  CHECK_THROWS_AS(rig.svc->submit("pool", job("not-registered")), LaunchFailed);

  ResourceSpec bare;
  bare.name = "bare";
  bare.nodes = 1;
  rig.svc->add_resource(bare, /*installed=*/false);
  rig.register_quit();
  CHECK_THROWS_AS(rig.svc->submit("bare", job("quit")), LaunchFailed);
  CHECK(rig.svc->jobs().empty());  // failed submits leave no job behind
}

TEST_CASE("each resource gets one hub, linked to the daemon overlay") {
  Rig rig("hubs");
  rig.add_pool("pool", 2);
  rig.register_quit();

  CHECK(rig.svc->resource_hub("pool") == nullptr);  // lazily started

  rig.svc->submit("pool", job("quit"));
  overlay::HubPtr hub = rig.svc->resource_hub("pool");
  REQUIRE(hub != nullptr);
  CHECK(hub->host() == "pool-fe");
  CHECK(hub->linked_to(rig.svc->daemon_hub()->id()));
  CHECK(rig.svc->daemon_hub()->linked_to(hub->id()));

  rig.world.run_for(5);
  rig.svc->submit("pool", job("quit"));
  CHECK(rig.svc->resource_hub("pool") == hub);  // second submit reuses it
}

TEST_CASE("a process exiting later moves the job to done at that tick") {
  Rig rig("napper");
  rig.add_pool("pool", 1);
  rig.register_napper();

  const std::string id = rig.svc->submit("pool", job("napper", 1, 1, {"50"}));
  CHECK(rig.svc->poll(id) == JobState::running);
  rig.world.run_for(10);
  CHECK(rig.svc->poll(id) == JobState::running);
  rig.world.run_for(100);
  CHECK(rig.svc->poll(id) == JobState::done);
}

TEST_CASE("a nonzero exit fails the whole job and names the rank") {
  Rig rig("nonzero");
  rig.add_pool("pool", 2);
  rig.register_quit();

  const std::string id = rig.svc->submit("pool", job("quit", 1, 1, {"3"}));
  rig.world.run_for(5);
  CHECK(rig.svc->poll(id) == JobState::failed);
  CHECK(rig.svc->info(id).reason == "rank 0 exited with code 3");

  // a non-root rank failing drags its peers down too
  rig.svc->register_program("split", [](std::shared_ptr<ProcessContext> ctx) -> ProcessState {
    if (ctx->rank() == 1) {
      ctx->exit(2);
      return nullptr;
    }
    ctx->world().after(100, [ctx] { ctx->exit(0); });
    return nullptr;
  });
  const std::string id2 = rig.svc->submit("pool", job("split", 2, 2));
  rig.world.run_for(5);
  CHECK(rig.svc->poll(id2) == JobState::failed);
  CHECK(rig.svc->info(id2).reason == "rank 1 exited with code 2");
  rig.world.run_for(200);  // rank 0's late clean exit must not resurrect it
  CHECK(rig.svc->poll(id2) == JobState::failed);
}

TEST_CASE("rank 0 exiting cleanly ends the cohort; stragglers are dropped") {
  Rig rig("cohort");
  rig.add_pool("pool", 2);

  std::weak_ptr<int> straggler;
  rig.svc->register_program("mixed", [&](std::shared_ptr<ProcessContext> ctx) -> ProcessState {
    if (ctx->rank() == 0) {
      ctx->exit(0);
      return nullptr;
    }
    auto state = std::make_shared<int>(ctx->rank());
    straggler = state;
    return state;
  });

  const std::string id = rig.svc->submit("pool", job("mixed", 2, 2));
  REQUIRE(!straggler.expired());
  rig.world.run_for(5);
  CHECK(rig.svc->poll(id) == JobState::done);
  CHECK(straggler.expired());  // rank 1's state died with the job
}

TEST_CASE("cancel kills the pool: membership sees died, not left") {
  Rig rig("cancel-pool");
  rig.add_pool("pool", 2);

  // registry rides the daemon hub; a watcher joins from its own node
  msg::Registry registry(rig.fabric, "daemon", "daemon", "workers");
  rig.fabric.add_node({"watch", NodeKind::standalone, true});
  msg::MsgNode watcher(rig.fabric, "watch");
  watcher.attach("daemon", "watcher");
  watcher.join(registry.address());

  const msg::VirtualAddress reg_va = registry.address();
  rig.svc->register_program("member", [reg_va](std::shared_ptr<ProcessContext> ctx) -> ProcessState {
    auto node = std::make_shared<msg::MsgNode>(ctx->fabric(), ctx->node());
    node->attach("pool-fe", "m" + std::to_string(ctx->rank()));
    node->join(reg_va);
    return node;
  });

  const std::string id = rig.svc->submit("pool", job("member", 2, 2));
  rig.world.run_for(50);
  REQUIRE(rig.svc->poll(id) == JobState::running);
  REQUIRE(watcher.members().size() == 3);  // watcher + both ranks

  rig.svc->cancel(id);
  CHECK(rig.svc->poll(id) == JobState::killed);
  CHECK(rig.svc->info(id).reason == "cancelled");

  rig.world.run_for(1000);
  CHECK(watcher.has_died("m0"));
  CHECK(watcher.has_died("m1"));
  CHECK(watcher.members() == std::vector<std::string>{"watcher"});

  rig.svc->cancel(id);  // terminal: a second cancel is a no-op
  CHECK(rig.svc->poll(id) == JobState::killed);
}

TEST_CASE("shell adapter: launches via the frontend, firewalls refuse it") {
  Rig rig("shell");
  rig.add_pool("open", 2, "shell");
  rig.register_quit();

  const std::string id = rig.svc->submit("open", job("quit"));
  CHECK(rig.svc->info(id).adapter == "shell");
  rig.world.run_for(5);
  CHECK(rig.svc->poll(id) == JobState::done);

  // the daemon cannot reach a firewalled frontend to exec anything
  rig.fabric.add_policy({"daemon", "fw-fe", LinkRule::deny_inbound});
  rig.add_pool("fw", 2, "shell");
  CHECK_THROWS_AS(rig.svc->submit("fw", job("quit")), LaunchFailed);
  CHECK(rig.svc->jobs().size() == 1);  // the refused job left no trace
}

TEST_CASE("simsched: strict FIFO, the head blocks the queue") {
  Rig rig("simsched-fifo");
  rig.add_pool("batch", 2, "simsched");
  rig.register_napper();

  // A holds one node; B wants both and must wait; C fits the free node
  // but stays queued behind B
  const std::string a = rig.svc->submit("batch", job("napper", 1, 1, {"100"}));
  const std::string b = rig.svc->submit("batch", job("napper", 2, 2, {"100"}));
  const std::string c = rig.svc->submit("batch", job("napper", 1, 1, {"100"}));
  CHECK(rig.svc->poll(a) == JobState::running);
  CHECK(rig.svc->poll(b) == JobState::pending);
  CHECK(rig.svc->poll(c) == JobState::pending);

  rig.world.run_for(150);  // A ends, B takes both nodes, C still behind it
  CHECK(rig.svc->poll(a) == JobState::done);
  CHECK(rig.svc->poll(b) == JobState::running);
  CHECK(rig.svc->poll(c) == JobState::pending);

  rig.world.run_for(150);
  CHECK(rig.svc->poll(c) == JobState::done);
}

TEST_CASE("simsched: random load never oversubscribes and starts in order") {
  const int kNodes = 3, kSlots = 2;
  Rig rig("simsched-random");
  rig.add_pool("batch", kNodes, "simsched", kSlots);
  rig.register_napper();

  std::mt19937 gen(99);
  std::vector<std::string> submitted;
  for (int j = 0; j < 12; ++j) {
    const int nodes = 1 + static_cast<int>(gen() % kNodes);
    const int max_procs = nodes * kSlots;
    const int procs = nodes + static_cast<int>(gen() % static_cast<unsigned>(max_procs - nodes + 1));
    const auto delay = std::to_string(10 + gen() % 190);
    submitted.push_back(rig.svc->submit("batch", job("napper", procs, nodes, {delay})));
  }

  std::vector<std::string> started;
  std::set<std::string> seen;
  const auto observe = [&] {
    std::map<std::string, int> per_node;
    for (const auto& id : submitted) {  // submit order, not map order
      const JobInfo inf = rig.svc->info(id);
      if (inf.state != JobState::running) continue;
      if (!seen.count(inf.id)) {
        started.push_back(inf.id);
        seen.insert(inf.id);
      }
      for (const auto& node : inf.process_nodes) per_node[node]++;
    }
    for (const auto& [node, used] : per_node) {
      INFO("node ", node);
      CHECK(used <= kSlots);
    }
  };

  const auto all_done = [&] {
    return std::all_of(submitted.begin(), submitted.end(),
                       [&](const std::string& id) { return rig.svc->poll(id) == JobState::done; });
  };

  // hubs gossip forever, so drive by job completion rather than queue drain
  observe();
  int guard = 0;
  while (!all_done() && ++guard < 200000) {
    rig.world.step();
    observe();
  }
  REQUIRE(all_done());

  CHECK(started == submitted);  // strict FIFO: start order is submit order
}

TEST_CASE("simsched: a reservation expiring kills the allocation") {
  Rig rig("reservation");
  rig.add_pool("batch", 1, "simsched", 1, /*reservation=*/200);

  std::weak_ptr<int> state_alive;
  rig.svc->register_program("outstay", [&](std::shared_ptr<ProcessContext> ctx) -> ProcessState {
    ctx->world().after(500, [ctx] { ctx->exit(0); });
    auto state = std::make_shared<int>(0);
    state_alive = state;
    return state;
  });

  const std::string id = rig.svc->submit("batch", job("outstay"));
  rig.world.run_for(150);
  CHECK(rig.svc->poll(id) == JobState::running);
  rig.world.run_for(100);
  CHECK(rig.svc->poll(id) == JobState::failed);
  CHECK(rig.svc->info(id).reason == "reservation expired");
  CHECK(state_alive.expired());

  rig.world.run_for(500);  // the would-be clean exit fires into a dead job
  CHECK(rig.svc->poll(id) == JobState::failed);

  // the expiry released the slots: the next job runs to completion
  rig.register_napper();
  const std::string next = rig.svc->submit("batch", job("napper", 1, 1, {"20"}));
  CHECK(rig.svc->poll(next) == JobState::running);
  rig.world.run_for(50);
  CHECK(rig.svc->poll(next) == JobState::done);
}

TEST_CASE("unknown ids and duplicate resources are rejected") {
  Rig rig("unknowns");
  rig.add_pool("pool", 1);

  CHECK_THROWS_AS(rig.svc->poll("job-99"), UnknownJob);
  CHECK_THROWS_AS(rig.svc->info("job-99"), UnknownJob);
  CHECK_THROWS_AS(rig.svc->cancel("job-99"), UnknownJob);
  CHECK_THROWS_AS(rig.svc->submit("ghost", job("quit")), UnknownResource);
  CHECK_THROWS_AS(rig.svc->resource_spec("ghost"), UnknownResource);
  CHECK(rig.svc->has_resource("pool"));
  CHECK(!rig.svc->has_resource("ghost"));

  ResourceSpec dup;
  dup.name = "pool";
  CHECK_THROWS_AS(rig.svc->add_resource(dup), Error);
  ResourceSpec empty;
  empty.nodes = 0;
  CHECK_THROWS_AS(rig.svc->add_resource(empty), Error);
}

TEST_CASE("stop_all kills running work; teardown leaves no live timers") {
  Rig rig("stop-all");
  rig.add_pool("pool", 2);
  rig.register_sleeper();
  rig.register_napper();

  const std::string a = rig.svc->submit("pool", job("sleeper"));
  const std::string b = rig.svc->submit("pool", job("sleeper"));
  const std::string c = rig.svc->submit("pool", job("napper", 1, 1, {"5"}));
  rig.world.run_for(10);
  CHECK(rig.svc->poll(c) == JobState::done);

  rig.svc->stop_all();
  CHECK(rig.svc->poll(a) == JobState::killed);
  CHECK(rig.svc->poll(b) == JobState::killed);
  CHECK(rig.svc->poll(c) == JobState::done);  // terminal jobs stay put

  rig.svc.reset();          // service dies with events still queued
  rig.world.run_for(1000);  // deferred exits fire harmlessly
}
