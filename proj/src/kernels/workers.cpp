#include <Eigen/Dense>
#include <cstdint>
#include <utility>

#include "jsim/coupler/kernelhost.hpp"
#include "jsim/kernels/bridge.hpp"
#include "jsim/kernels/gravity.hpp"
#include "jsim/kernels/leapfrog.hpp"
#include "jsim/kernels/particles.hpp"
#include "jsim/kernels/stellar.hpp"
#include "jsim/kernels/tree.hpp"

namespace jsim::coupler {

KernelServer::KernelServer(KernelManifest manifest) : manifest_(std::move(manifest)) {
  bind(kStopFunction, [this](const CallFrame&, CallFrame&) { stopped_ = true; });
}

void KernelServer::bind(std::uint32_t function_id, Handler fn) {
  handlers_[function_id] = std::move(fn);
}

std::optional<CallFrame> KernelServer::handle(const CallFrame& call) {
  auto it = handlers_.find(call.function_id);
  if (it == handlers_.end())
    return error_reply(call.call_id, "unknown function " + std::to_string(call.function_id));
  if (stopped_ && call.function_id != kStopFunction)
    return error_reply(call.call_id, "kernel is stopped");

  CallFrame reply;
  reply.call_id = call.call_id;
  reply.function_id = call.function_id;
  reply.call_count = call.call_count;
  try {
    it->second(call, reply);
  } catch (const std::exception& e) {
    mute_ = false;
    return error_reply(call.call_id, e.what());
  }
  if (mute_) {
    mute_ = false;
    return std::nullopt;
  }
  return reply;
}

KernelRegistry& KernelRegistry::global() {
  static KernelRegistry reg;
  return reg;
}

void KernelRegistry::add(std::string name, KernelManifest manifest, Factory make) {
  entries_[std::move(name)] = Entry{std::move(manifest), std::move(make)};
}

const KernelManifest& KernelRegistry::manifest(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw KernelUnknown(name);
  return it->second.manifest;
}

std::unique_ptr<KernelServer> KernelRegistry::make(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw KernelUnknown(name);
  return it->second.make();
}

std::vector<std::string> KernelRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

namespace {

using kernels::ParticleSet;

constexpr auto kI32 = ValueType::i32;
constexpr auto kI64 = ValueType::i64;
constexpr auto kF64 = ValueType::f64;
constexpr auto kStr = ValueType::str;

ArgSpec scalar(std::string name, ValueType t, std::string unit = "") {
  return ArgSpec{std::move(name), t, std::move(unit), false};
}

ArgSpec each(std::string name, ValueType t, std::string unit = "") {
  return ArgSpec{std::move(name), t, std::move(unit), true};
}

FunctionSig stop_sig() { return FunctionSig{kStopFunction, "stop", {}, {}}; }

void want_items(const CallFrame& call, std::size_t n, const char* what) {
  if (call.call_count != n)
    throw Error(std::string(what) + ": callCount " + std::to_string(call.call_count) +
                " does not match count " + std::to_string(n));
}

// ---- testbed -------------------------------------------------------------

KernelManifest testbed_manifest() {
  KernelManifest m;
  m.kernel = "testbed";
  m.functions = {
      stop_sig(),
      {101, "echo", {each("values", kF64)}, {each("values", kF64)}},
      {102, "echo_ints", {each("tags", kI32)}, {each("tags", kI32)}},
      {103, "echo_length", {scalar("length", kF64, "m")}, {scalar("length", kF64, "m")}},
      {104, "fail", {scalar("message", kStr)}, {}},
      {105, "stamp", {}, {scalar("arrival", kI64)}},
      {106, "hang", {}, {}},
  };
  return m;
}

class TestbedKernel : public KernelServer {
 public:
  TestbedKernel() : KernelServer(testbed_manifest()) {
    bind(101, [](const CallFrame& c, CallFrame& r) { r.doubles = c.doubles; });
    bind(102, [](const CallFrame& c, CallFrame& r) { r.ints = c.ints; });
    bind(103, [](const CallFrame& c, CallFrame& r) { r.doubles = c.doubles; });
    bind(104, [](const CallFrame& c, CallFrame&) {
      throw Error(c.strings.empty() ? "failed on request" : c.strings[0]);
    });
    bind(105, [this](const CallFrame&, CallFrame& r) { r.longs.push_back(++arrivals_); });
    bind(106, [this](const CallFrame&, CallFrame&) { mute_reply(); });
  }

 private:
  std::int64_t arrivals_ = 0;
};

// ---- particle kernels ----------------------------------------------------

KernelManifest particle_manifest(const std::string& kernel) {
  KernelManifest m;
  m.kernel = kernel;
  m.functions = {
      stop_sig(),
      {110,
       "new_particles",
       {each("mass", kF64, "nbody_m"), each("x", kF64, "nbody_l"), each("y", kF64, "nbody_l"),
        each("z", kF64, "nbody_l"), each("vx", kF64, "nbody_v"), each("vy", kF64, "nbody_v"),
        each("vz", kF64, "nbody_v")},
       {each("id", kI32)}},
      {111, "set_eps", {scalar("eps", kF64, "nbody_l")}, {}},
      {112, "set_theta", {scalar("theta", kF64)}, {}},
      {113, "set_wind", {scalar("wind", kF64, "nbody_v")}, {}},
      {114, "get_count", {}, {scalar("n", kI32)}},
      {115, "get_masses", {}, {each("mass", kF64, "nbody_m")}},
      {116, "set_masses", {each("mass", kF64, "nbody_m")}, {}},
      {117,
       "get_positions",
       {},
       {each("x", kF64, "nbody_l"), each("y", kF64, "nbody_l"), each("z", kF64, "nbody_l")}},
      {118,
       "get_velocities",
       {},
       {each("vx", kF64, "nbody_v"), each("vy", kF64, "nbody_v"), each("vz", kF64, "nbody_v")}},
      {119,
       "apply_dv",
       {each("dvx", kF64, "nbody_v"), each("dvy", kF64, "nbody_v"), each("dvz", kF64, "nbody_v")},
       {}},
      {120, "step", {scalar("dt", kF64, "nbody_t")}, {}},
  };
  return m;
}

class ParticleKernel : public KernelServer {
 public:
  ParticleKernel(const std::string& kernel, bool tree)
      : KernelServer(particle_manifest(kernel)), tree_(tree) {
    bind(110, [this](const CallFrame& c, CallFrame& r) {
      const std::size_t n = c.call_count;
      if (c.doubles.size() != 7 * n) throw Error("new_particles payload size mismatch");
      const double* d = c.doubles.data();
      for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d x(d[n + i], d[2 * n + i], d[3 * n + i]);
        const Eigen::Vector3d v(d[4 * n + i], d[5 * n + i], d[6 * n + i]);
        r.ints.push_back(static_cast<std::int32_t>(set_.add(d[i], x, v)));
      }
    });
    bind(111, [this](const CallFrame& c, CallFrame&) { eps_ = c.doubles.at(0); });
    bind(112, [this](const CallFrame& c, CallFrame&) { theta_ = c.doubles.at(0); });
    bind(113, [this](const CallFrame& c, CallFrame&) { wind_ = c.doubles.at(0); });
    bind(114, [this](const CallFrame&, CallFrame& r) {
      r.ints.push_back(static_cast<std::int32_t>(set_.n()));
    });
    bind(115, [this](const CallFrame& c, CallFrame& r) {
      want_items(c, set_.n(), "get_masses");
      r.doubles.assign(set_.mass.data(), set_.mass.data() + set_.n());
    });
    bind(116, [this](const CallFrame& c, CallFrame&) {
      want_items(c, set_.n(), "set_masses");
      for (Eigen::Index i = 0; i < set_.n(); ++i)
        set_.mass(i) = c.doubles[static_cast<std::size_t>(i)];
    });
    bind(117, [this](const CallFrame& c, CallFrame& r) {
      want_items(c, set_.n(), "get_positions");
      push_rows(set_.pos, r);
    });
    bind(118, [this](const CallFrame& c, CallFrame& r) {
      want_items(c, set_.n(), "get_velocities");
      push_rows(set_.vel, r);
    });
    bind(119, [this](const CallFrame& c, CallFrame&) {
      want_items(c, set_.n(), "apply_dv");
      const std::size_t n = set_.n();
      if (c.doubles.size() != 3 * n) throw Error("apply_dv payload size mismatch");
      for (std::size_t i = 0; i < n; ++i) {
        const auto j = static_cast<Eigen::Index>(i);
        set_.vel(0, j) += c.doubles[i];
        set_.vel(1, j) += c.doubles[n + i];
        set_.vel(2, j) += c.doubles[2 * n + i];
      }
    });
    bind(120, [this](const CallFrame& c, CallFrame&) {
      const double dt = c.doubles.at(0);
      kernels::AccelFn self = tree_ ? kernels::self_gravity_tree(eps_, tree_config())
                                    : kernels::self_gravity(eps_);
      kernels::AccelFn accel = self;
      if (wind_ != 0.0) {
        accel = [this, self](const ParticleSet& s) -> Eigen::Matrix3Xd {
          return self(s) + kernels::radial_wind(s, wind_);
        };
      }
      kernels::kdk_step(set_, dt, accel);
    });
  }

 private:
  kernels::TreeConfig tree_config() const {
    kernels::TreeConfig cfg;
    cfg.theta = theta_;
    return cfg;
  }

  static void push_rows(const Eigen::Matrix3Xd& m, CallFrame& r) {
    for (int row = 0; row < 3; ++row)
      for (Eigen::Index i = 0; i < m.cols(); ++i) r.doubles.push_back(m(row, i));
  }

  bool tree_;
  ParticleSet set_ = ParticleSet::zeros(0);
  double eps_ = 1e-2;
  double theta_ = 0.5;
  double wind_ = 0.0;
};

// ---- coupling kernels ------------------------------------------------------

KernelManifest coupling_manifest(const std::string& kernel) {
  KernelManifest m;
  m.kernel = kernel;
  m.functions = {
      stop_sig(),
      {130,
       "set_sources",
       {each("mass", kF64, "nbody_m"), each("x", kF64, "nbody_l"), each("y", kF64, "nbody_l"),
        each("z", kF64, "nbody_l")},
       {}},
      {131, "set_eps", {scalar("eps", kF64, "nbody_l")}, {}},
      {132, "set_theta", {scalar("theta", kF64)}, {}},
      {133,
       "get_field",
       {each("x", kF64, "nbody_l"), each("y", kF64, "nbody_l"), each("z", kF64, "nbody_l")},
       {each("ax", kF64, "nbody_a"), each("ay", kF64, "nbody_a"), each("az", kF64, "nbody_a")}},
  };
  return m;
}

class CouplingKernel : public KernelServer {
 public:
  CouplingKernel(const std::string& kernel, bool tree)
      : KernelServer(coupling_manifest(kernel)), tree_(tree) {
    bind(130, [this](const CallFrame& c, CallFrame&) {
      const std::size_t n = c.call_count;
      if (c.doubles.size() != 4 * n) throw Error("set_sources payload size mismatch");
      sources_ = ParticleSet::zeros(n);
      const double* d = c.doubles.data();
      for (std::size_t i = 0; i < n; ++i) {
        const auto j = static_cast<Eigen::Index>(i);
        sources_.mass(j) = d[i];
        sources_.pos.col(j) = Eigen::Vector3d(d[n + i], d[2 * n + i], d[3 * n + i]);
      }
    });
    bind(131, [this](const CallFrame& c, CallFrame&) { eps_ = c.doubles.at(0); });
    bind(132, [this](const CallFrame& c, CallFrame&) { theta_ = c.doubles.at(0); });
    bind(133, [this](const CallFrame& c, CallFrame& r) {
      const std::size_t n = c.call_count;
      if (c.doubles.size() != 3 * n) throw Error("get_field payload size mismatch");
      Eigen::Matrix3Xd targets(3, static_cast<Eigen::Index>(n));
      const double* d = c.doubles.data();
      for (std::size_t i = 0; i < n; ++i)
        targets.col(static_cast<Eigen::Index>(i)) =
            Eigen::Vector3d(d[i], d[n + i], d[2 * n + i]);
      kernels::TreeConfig cfg;
      cfg.theta = theta_;
      const Eigen::Matrix3Xd f = tree_ ? kernels::tree_accel(sources_, targets, eps_, cfg)
                                       : kernels::direct_accel(sources_, targets, eps_);
      for (int row = 0; row < 3; ++row)
        for (Eigen::Index i = 0; i < f.cols(); ++i) r.doubles.push_back(f(row, i));
    });
  }

 private:
  bool tree_;
  ParticleSet sources_ = ParticleSet::zeros(0);
  double eps_ = 1e-2;
  double theta_ = 0.5;
};

// ---- stellar kernel --------------------------------------------------------

KernelManifest stellar_manifest() {
  KernelManifest m;
  m.kernel = "stellar";
  m.functions = {
      stop_sig(),
      {140, "load_tracks", {scalar("text", kStr)}, {}},
      {141,
       "new_stars",
       {each("m0", kF64, "MSun"), each("age", kF64, "Myr")},
       {each("id", kI32)}},
      {142, "advance", {scalar("dt", kF64, "Myr")}, {}},
      {143, "get_masses", {}, {each("mass", kF64, "MSun")}},
      {144, "event_count", {}, {scalar("n", kI32)}},
      {145, "take_events", {}, {each("id", kI32)}},
  };
  return m;
}

class StellarKernel : public KernelServer {
 public:
  StellarKernel() : KernelServer(stellar_manifest()) {
    bind(140, [this](const CallFrame& c, CallFrame&) {
      table_ = kernels::EvolutionTable::parse_text(c.strings.at(0));
    });
    bind(141, [this](const CallFrame& c, CallFrame& r) {
      need_table();
      const std::size_t n = c.call_count;
      if (c.doubles.size() != 2 * n) throw Error("new_stars payload size mismatch");
      for (std::size_t i = 0; i < n; ++i) {
        const double m0 = c.doubles[i];
        const double age = c.doubles[n + i];
        const std::int64_t id = stars_.add_star(table_->lookup(m0, age).mass,
                                                Eigen::Vector3d::Zero(),
                                                Eigen::Vector3d::Zero(), age, m0);
        r.ints.push_back(static_cast<std::int32_t>(id));
      }
    });
    bind(142, [this](const CallFrame& c, CallFrame&) {
      need_table();
      for (const auto& ev : kernels::stellar_evolve(stars_, c.doubles.at(0), *table_))
        events_.push_back(static_cast<std::int32_t>(ev.id));
    });
    bind(143, [this](const CallFrame& c, CallFrame& r) {
      want_items(c, stars_.n(), "get_masses");
      r.doubles.assign(stars_.mass.data(), stars_.mass.data() + stars_.n());
    });
    bind(144, [this](const CallFrame&, CallFrame& r) {
      r.ints.push_back(static_cast<std::int32_t>(events_.size()));
    });
    bind(145, [this](const CallFrame& c, CallFrame& r) {
      if (c.call_count > events_.size())
        throw Error("take_events: only " + std::to_string(events_.size()) + " pending");
      r.ints.assign(events_.begin(), events_.begin() + c.call_count);
      events_.erase(events_.begin(), events_.begin() + c.call_count);
    });
  }

 private:
  void need_table() const {
    if (!table_) throw Error("no tracks loaded; call load_tracks first");
  }

  std::optional<kernels::EvolutionTable> table_;
  ParticleSet stars_ = ParticleSet::zeros(0, /*stellar=*/true);
  std::vector<std::int32_t> events_;
};

}  // namespace

void register_builtin_kernels() {
  KernelRegistry& reg = KernelRegistry::global();
  if (reg.contains("testbed")) return;
  reg.add("testbed", testbed_manifest(), [] { return std::make_unique<TestbedKernel>(); });
  reg.add("gravity-direct", particle_manifest("gravity-direct"),
          [] { return std::make_unique<ParticleKernel>("gravity-direct", false); });
  reg.add("gravity-tree", particle_manifest("gravity-tree"),
          [] { return std::make_unique<ParticleKernel>("gravity-tree", true); });
  reg.add("gas", particle_manifest("gas"),
          [] { return std::make_unique<ParticleKernel>("gas", false); });
  reg.add("coupling-direct", coupling_manifest("coupling-direct"),
          [] { return std::make_unique<CouplingKernel>("coupling-direct", false); });
  reg.add("coupling-tree", coupling_manifest("coupling-tree"),
          [] { return std::make_unique<CouplingKernel>("coupling-tree", true); });
  reg.add("stellar", stellar_manifest(), [] { return std::make_unique<StellarKernel>(); });
}

}  // namespace jsim::coupler
