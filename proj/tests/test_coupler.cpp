#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "jsim/coupler/daemon.hpp"
#include "jsim/kernels/plummer.hpp"

using namespace jsim;
using namespace jsim::coupler;
using json = nlohmann::json;

namespace {

std::filesystem::path fresh_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / "jsim-coupler-tests" / tag;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

units::UnitRegistry nbody_units() {
  auto reg = units::UnitRegistry::builtin();
  reg.load_table_file(std::string(JSIM_SHARE_DIR) + "/units/default.units");
  return reg;
}

// Wraps a session and counts requests per op, so tests can prove what does
// and does not cross the link.
struct CountingSession : Session {
  explicit CountingSession(SessionPtr inner) : inner(std::move(inner)) {}
  wire::Bytes request(std::uint8_t op, const wire::Bytes& body) override {
    ++ops[op];
    return inner->request(op, body);
  }
  SessionPtr inner;
  std::map<int, int> ops;
};

struct Rig {
  Daemon daemon;
  std::shared_ptr<CountingSession> session;
  Coupler coupler;

  explicit Rig(DaemonConfig cfg = {})
      : daemon(std::move(cfg)),
        session(std::make_shared<CountingSession>(std::make_shared<InprocSession>(daemon))),
        coupler(session, nbody_units()) {}

  void pool(const std::string& name, int nodes, bool addressable = true) {
    deploy::ResourceSpec spec;
    spec.name = name;
    spec.nodes = nodes;
    spec.computes_addressable = addressable;
    daemon.deploy().add_resource(spec);
  }
};

WorkerSpec inproc_spec(const std::string& role, const std::string& kernel) {
  WorkerSpec s;
  s.role = role;
  s.kernel = kernel;
  s.channel = "inproc";
  return s;
}

WorkerSpec ibis_spec(const std::string& role, const std::string& kernel,
                     const std::string& resource) {
  WorkerSpec s;
  s.role = role;
  s.kernel = kernel;
  s.resource = resource;
  return s;
}

}  // namespace

TEST_CASE("inproc channel: echo roundtrip without any deployment") {
  Rig rig;
  auto w = rig.coupler.create_worker(inproc_spec("t", "testbed"));
  CHECK(w->job_id().empty());
  CHECK_FALSE(w->remote());
  CHECK(w->node() == "daemon");
  CHECK(rig.daemon.deploy().jobs().empty());

  const std::vector<double> vals{1.5, -2.25, 1e-9};
  auto res = w->call("echo", {Value::doubles(vals)}, 3);
  REQUIRE(res.size() == 1);
  CHECK(res[0].type == ValueType::f64);
  CHECK(res[0].f64s == vals);
}

TEST_CASE("ibis channel: deployed worker answers over the pool") {
  Rig rig;
  rig.pool("pool", 2);
  auto w = rig.coupler.create_worker(ibis_spec("echoer", "testbed", "pool"));
  CHECK_FALSE(w->job_id().empty());
  CHECK(w->remote());
  CHECK(w->route().strategy == overlay::Strategy::direct);
  CHECK(rig.daemon.deploy().poll(w->job_id()) == deploy::JobState::running);
  CHECK(w->node() == "pool-n0");

  const std::vector<double> vals{3.25, 0.0, -1.0, 42.0};
  auto res = w->call("echo", {Value::doubles(vals)}, 4);
  REQUIRE(res.size() == 1);
  CHECK(res[0].f64s == vals);

  // unit conversion happens at the caller, against the manifest
  auto len = w->call("echo_length", {Value::of(2.0, "km")});
  CHECK(len[0].as_f64() == 2000.0);
  CHECK(len[0].unit == "m");
}

TEST_CASE("async batches pipeline: one link round trip, FIFO arrival") {
  Rig rig;
  rig.pool("pool", 1);
  auto w = rig.coupler.create_worker(ibis_spec("s", "testbed", "pool"));

  rig.session->ops.clear();
  std::vector<Future> futures;
  for (int i = 0; i < 5; ++i) futures.push_back(w->call_async("stamp"));
  CHECK(rig.coupler.queued() == 5);
  rig.coupler.flush();
  CHECK(rig.session->ops[linkop::calls] == 1);
  for (int i = 0; i < 5; ++i) CHECK(futures[i].get()[0].as_i64() == i + 1);

  // get() on an unflushed future flushes the whole queue
  auto f6 = w->call_async("stamp");
  auto f7 = w->call_async("stamp");
  CHECK(f6.get()[0].as_i64() == 6);
  CHECK(f7.resolved());
  CHECK(f7.get()[0].as_i64() == 7);
  CHECK(rig.session->ops[linkop::calls] == 2);
}

TEST_CASE("kernel failures surface as RemoteError and leave the worker usable") {
  Rig rig;
  rig.pool("pool", 1);
  auto w = rig.coupler.create_worker(ibis_spec("flaky", "testbed", "pool"));

  CHECK_THROWS_WITH_AS(w->call("fail", {Value::of(std::string("kaput"))}),
                       "remote error: kaput", RemoteError);
  auto res = w->call("echo", {Value::doubles({7.0})}, 1);
  CHECK(res[0].f64s == std::vector<double>{7.0});
}

TEST_CASE("unknown kernels and bad units are rejected before anything crosses the link") {
  Rig rig;
  CHECK_THROWS_AS(rig.coupler.create_worker(inproc_spec("x", "gravity-gpu")), KernelUnknown);
  CHECK(rig.session->ops[linkop::create_worker] == 0);

  auto w = rig.coupler.create_worker(inproc_spec("t", "testbed"));
  const int calls_before = rig.session->ops[linkop::calls];
  CHECK_THROWS_AS(w->call("echo_length", {Value::of(2.0, "s")}), units::DimensionMismatch);
  CHECK_THROWS_AS(w->call("frobnicate"), jsim::Error);
  CHECK(rig.session->ops[linkop::calls] == calls_before);
  CHECK(rig.coupler.queued() == 0);
}

TEST_CASE("endpoint lock: held by a live pid, released on shutdown, stale locks stolen") {
  const auto dir = fresh_dir("lock");
  DaemonConfig cfg;
  cfg.endpoint = (dir / "status.json").string();
  const std::string lock = cfg.endpoint + ".lock";

  {
    Daemon first(cfg);
    CHECK(std::filesystem::exists(lock));
    CHECK(std::filesystem::exists(cfg.endpoint));
    CHECK_THROWS_AS(([&] { Daemon second(cfg); }()), PortInUse);
  }
  CHECK_FALSE(std::filesystem::exists(lock));

  // a lock left by a dead process must not wedge the endpoint forever
  std::ofstream(lock) << 99999999 << "\n";
  Daemon stealer(cfg);
  long pid = -1;
  std::ifstream(lock) >> pid;
  CHECK(pid == static_cast<long>(::getpid()));
}

TEST_CASE("a killed worker fails its pending future and every later call") {
  Rig rig;
  rig.pool("pool", 1);
  auto w = rig.coupler.create_worker(ibis_spec("victim", "testbed", "pool"));
  CHECK(w->call("echo", {Value::doubles({1.0})}, 1)[0].f64s == std::vector<double>{1.0});

  const std::string job = w->job_id();
  rig.daemon.world().after(300, [&] { rig.daemon.deploy().cancel(job); });
  auto f = w->call_async("hang");
  CHECK_THROWS_AS(f.get(), WorkerDied);
  CHECK_THROWS_AS(w->call("echo", {Value::doubles({2.0})}, 1), WorkerDied);
  CHECK(rig.daemon.deploy().poll(job) == deploy::JobState::killed);

  const json st = json::parse(rig.coupler.status());
  REQUIRE(st["workers"].size() == 1);
  CHECK(st["workers"][0]["alive"] == false);
}

TEST_CASE("ten thousand randomized calls arrive exactly once, in order") {
  Rig rig;
  rig.pool("pool", 2);
  auto w = rig.coupler.create_worker(ibis_spec("mill", "testbed", "pool"));

  std::mt19937_64 gen(2026);
  std::uniform_real_distribution<double> noise(-1e3, 1e3);

  struct Expect {
    Future f;
    std::vector<double> want;
    std::int64_t stamp = 0;  // nonzero: a stamp call expecting this index
  };

  int sent = 0;
  std::int64_t stamps = 0;
  bool all_ok = true;
  while (sent < 10000) {
    const int batch = std::min<int>(1 + int(gen() % 40), 10000 - sent);
    std::vector<Expect> expect;
    expect.reserve(batch);
    for (int i = 0; i < batch; ++i) {
      if (gen() % 8 == 0) {
        ++stamps;
        expect.push_back({w->call_async("stamp"), {}, stamps});
      } else {
        std::vector<double> vals(1 + gen() % 5);
        for (auto& v : vals) v = noise(gen);
        auto f = w->call_async("echo", {Value::doubles(vals)},
                               static_cast<std::uint32_t>(vals.size()));
        expect.push_back({std::move(f), std::move(vals), 0});
      }
      ++sent;
    }
    rig.coupler.flush();
    for (auto& e : expect) {
      auto res = e.f.get();
      if (e.stamp) {
        all_ok = all_ok && res[0].as_i64() == e.stamp;
      } else {
        all_ok = all_ok && res[0].f64s == e.want;
      }
    }
    if (!all_ok) break;  // keep the failure readable, not 10k lines of it
  }
  CHECK(sent == 10000);
  CHECK(all_ok);
  CHECK(stamps > 100);

  const json st = json::parse(rig.coupler.status());
  CHECK(st["workers"][0]["calls"] == 10000);
}

TEST_CASE("inproc and deployed channels produce bitwise identical dynamics") {
  Rig rig;
  rig.pool("pool", 1);
  auto near = rig.coupler.create_worker(inproc_spec("near", "gravity-direct"));
  auto far = rig.coupler.create_worker(ibis_spec("far", "gravity-direct", "pool"));

  const Eigen::Index n = 64;
  const auto ics = kernels::plummer_sphere(n, 42);
  std::vector<double> mass, x, y, z, vx, vy, vz;
  for (Eigen::Index i = 0; i < n; ++i) {
    mass.push_back(ics.mass(i));
    x.push_back(ics.pos(0, i));
    y.push_back(ics.pos(1, i));
    z.push_back(ics.pos(2, i));
    vx.push_back(ics.vel(0, i));
    vy.push_back(ics.vel(1, i));
    vz.push_back(ics.vel(2, i));
  }

  auto drive = [&](const WorkerPtr& w) {
    w->call("new_particles",
            {Value::doubles(mass, "nbody_m"), Value::doubles(x, "nbody_l"),
             Value::doubles(y, "nbody_l"), Value::doubles(z, "nbody_l"),
             Value::doubles(vx, "nbody_v"), Value::doubles(vy, "nbody_v"),
             Value::doubles(vz, "nbody_v")},
            static_cast<std::uint32_t>(n));
    w->call("set_eps", {Value::of(0.05, "nbody_l")});
    for (int s = 0; s < 10; ++s) w->call("step", {Value::of(1.0 / 64, "nbody_t")});
    return w->call("get_positions", {}, static_cast<std::uint32_t>(n));
  };

  const auto a = drive(near);
  const auto b = drive(far);
  REQUIRE(a.size() == 3);
  REQUIRE(b.size() == 3);
  for (int axis = 0; axis < 3; ++axis) {
    REQUIRE(a[axis].f64s.size() == static_cast<std::size_t>(n));
    REQUIRE(b[axis].f64s.size() == static_cast<std::size_t>(n));
    CHECK(std::memcmp(a[axis].f64s.data(), b[axis].f64s.data(),
                      sizeof(double) * static_cast<std::size_t>(n)) == 0);
  }
}

TEST_CASE("polite stop finishes the job; the daemon then serves new workers") {
  Rig rig;
  rig.pool("pool", 1);
  auto a = rig.coupler.create_worker(ibis_spec("a", "testbed", "pool"));
  CHECK(a->call("echo", {Value::doubles({1.0})}, 1)[0].f64s == std::vector<double>{1.0});
  a->stop();
  rig.daemon.world().run_for(400);  // worker lingers briefly, then exits clean
  CHECK(rig.daemon.deploy().poll(a->job_id()) == deploy::JobState::done);

  auto b = rig.coupler.create_worker(ibis_spec("b", "testbed", "pool"));
  CHECK(b->call("echo", {Value::doubles({2.0})}, 1)[0].f64s == std::vector<double>{2.0});

  rig.coupler.stop_daemon();
  CHECK(rig.daemon.stopped());
  CHECK(rig.daemon.deploy().poll(a->job_id()) == deploy::JobState::done);
  CHECK(rig.daemon.deploy().poll(b->job_id()) == deploy::JobState::killed);
  CHECK_THROWS_AS(rig.coupler.create_worker(inproc_spec("c", "testbed")), jsim::Error);
  const json st = json::parse(rig.coupler.status());  // status stays available
  CHECK(st["daemon"]["stopped"] == true);
}

TEST_CASE("firewalled resources connect reverse, then routed once nothing can dial back") {
  Rig rig;
  rig.pool("farm", 2, /*addressable=*/false);

  auto w1 = rig.coupler.create_worker(ibis_spec("r1", "testbed", "farm"));
  CHECK(w1->route().strategy == overlay::Strategy::reverse);
  CHECK(w1->call("echo", {Value::doubles({5.0})}, 1)[0].f64s == std::vector<double>{5.0});

  // now the daemon node refuses inbound dials too: only the standing hub
  // link can carry traffic, so new connections relay through the hubs
  rig.daemon.fabric().add_policy({"*", "daemon", netsim::LinkRule::deny_inbound});
  auto w2 = rig.coupler.create_worker(ibis_spec("r2", "testbed", "farm"));
  CHECK(w2->route().strategy == overlay::Strategy::routed);
  CHECK(w2->route().hub_chain ==
        std::vector<std::string>{"hub@daemon", "hub@farm-fe"});
  CHECK(w2->call("echo", {Value::doubles({6.0})}, 1)[0].f64s == std::vector<double>{6.0});

  const json st = json::parse(rig.coupler.status());
  std::map<std::string, std::string> strategies;
  for (const auto& w : st["workers"])
    strategies[w["role"]] = w["route"]["strategy"];
  CHECK(strategies["r1"] == "reverse");
  CHECK(strategies["r2"] == "routed");
}

TEST_CASE("status document: written at the endpoint, merged with checkpoints") {
  const auto dir = fresh_dir("status");
  DaemonConfig cfg;
  cfg.endpoint = (dir / "status.json").string();
  Rig rig(cfg);
  rig.pool("pool", 2);
  auto w1 = rig.coupler.create_worker(ibis_spec("w1", "testbed", "pool"));
  auto w2 = rig.coupler.create_worker(inproc_spec("w2", "gravity-direct"));
  w1->call("echo", {Value::doubles({1.0})}, 1);

  const json st = json::parse(rig.coupler.status());
  CHECK(st["daemon"]["node"] == "daemon");
  CHECK(st["daemon"]["hub"] == "hub@daemon");
  CHECK(st["daemon"]["stopped"] == false);
  REQUIRE(st["resources"].size() == 1);
  CHECK(st["resources"][0]["name"] == "pool");
  CHECK(st["resources"][0]["middleware"] == "local");
  CHECK(st["resources"][0]["hub"] == true);
  REQUIRE(st["jobs"].size() == 1);
  CHECK(st["jobs"][0]["state"] == "running");
  REQUIRE(st["workers"].size() == 2);
  for (const auto& w : st["workers"]) {
    if (w["role"] == "w1") {
      CHECK(w["channel"] == "ibis");
      CHECK(w["route"]["strategy"] == "direct");
      CHECK(w["calls"] == 1);
      CHECK(w["mean_rtt"].get<double>() > 0.0);
    } else {
      CHECK(w["channel"] == "inproc");
      CHECK(w["route"].is_null());
    }
  }
  CHECK(st["run"].is_null());

  rig.coupler.checkpoint(R"({"step": 12, "drift": 2.5e-06})");
  const json on_disk = json::parse(read_status(cfg.endpoint));
  CHECK(on_disk["run"]["step"] == 12);
  CHECK(on_disk["run"]["drift"].get<double>() == 2.5e-06);

  CHECK_THROWS_AS(read_status((dir / "absent.json").string()), DaemonUnreachable);
}

TEST_CASE("load op hands the scenario text to the installed loader") {
  Rig rig;
  CHECK_THROWS_AS(rig.coupler.load("[fabric]\n"), jsim::Error);
  std::string seen;
  rig.daemon.on_load([&](const std::string& text) { seen = text; });
  rig.coupler.load("[fabric]\nlatency = 2\n");
  CHECK(seen == "[fabric]\nlatency = 2\n");
}
