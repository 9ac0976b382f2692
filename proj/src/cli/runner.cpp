#include "jsim/cli/runner.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "jsim/kernels/gravity.hpp"
#include "jsim/kernels/particles.hpp"
#include "jsim/kernels/plummer.hpp"
#include "jsim/kernels/snapshot.hpp"
#include "jsim/overlay/overlay.hpp"
#include "jsim/units/units.hpp"

#ifndef JSIM_SHARE_DIR
#error "JSIM_SHARE_DIR must point at the share/ tree"
#endif

namespace jsim::cli {
namespace {

using coupler::Value;
using coupler::WorkerPtr;
using kernels::ParticleSet;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint32_t count_of(const ParticleSet& s) { return static_cast<std::uint32_t>(s.n()); }

std::vector<double> as_vec(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

std::vector<double> row_of(const Eigen::Matrix3Xd& m, int r) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.cols(); ++i) out[static_cast<std::size_t>(i)] = m(r, i);
  return out;
}

void fill_matrix(Eigen::Matrix3Xd& m, const std::vector<Value>& xyz) {
  for (int r = 0; r < 3; ++r) {
    const auto& col = xyz.at(static_cast<std::size_t>(r)).f64s;
    for (Eigen::Index i = 0; i < m.cols(); ++i)
      m(r, i) = col.at(static_cast<std::size_t>(i));
  }
}

std::string snap_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "snap_%05d.txt", step);
  return buf;
}

// One leapfrog bridge between the two dynamical workers, with the coupling
// worker evaluating each system's field at the other's particle positions.
// Mirrors of both sets are kept script-side for energy and snapshots; they
// are refreshed from the workers, never integrated locally.
struct Bridge {
  coupler::Coupler& coupler;
  WorkerPtr gravity;
  WorkerPtr gas_w;
  WorkerPtr coupling;
  WorkerPtr stellar;  // may be null
  ParticleSet stars;
  ParticleSet gas;
  double dt;
  double mass_scale = 1.0;  // MSun -> dynamical star mass
  double myr_per_t = 1.0;   // Myr per nbody_t, for the stellar clock
  int supernovae = 0;
  std::ostream& out;

  void pull_positions() {
    auto fs = gravity->call_async("get_positions", {}, count_of(stars));
    auto fg = gas_w->call_async("get_positions", {}, count_of(gas));
    coupler.flush();
    fill_matrix(stars.pos, fs.get());
    fill_matrix(gas.pos, fg.get());
  }

  void pull_velocities() {
    auto fs = gravity->call_async("get_velocities", {}, count_of(stars));
    auto fg = gas_w->call_async("get_velocities", {}, count_of(gas));
    coupler.flush();
    fill_matrix(stars.vel, fs.get());
    fill_matrix(gas.vel, fg.get());
  }

  // Both field evaluations ride in one batch: calls to a worker keep their
  // queue order, so the second set_sources cannot overtake the first
  // get_field.
  void cross_kick(double h) {
    coupling->call_async("set_sources",
                         {Value::doubles(as_vec(stars.mass), "nbody_m"),
                          Value::doubles(row_of(stars.pos, 0), "nbody_l"),
                          Value::doubles(row_of(stars.pos, 1), "nbody_l"),
                          Value::doubles(row_of(stars.pos, 2), "nbody_l")},
                         count_of(stars));
    auto at_gas = coupling->call_async("get_field",
                                       {Value::doubles(row_of(gas.pos, 0), "nbody_l"),
                                        Value::doubles(row_of(gas.pos, 1), "nbody_l"),
                                        Value::doubles(row_of(gas.pos, 2), "nbody_l")},
                                       count_of(gas));
    coupling->call_async("set_sources",
                         {Value::doubles(as_vec(gas.mass), "nbody_m"),
                          Value::doubles(row_of(gas.pos, 0), "nbody_l"),
                          Value::doubles(row_of(gas.pos, 1), "nbody_l"),
                          Value::doubles(row_of(gas.pos, 2), "nbody_l")},
                         count_of(gas));
    auto at_stars = coupling->call_async("get_field",
                                         {Value::doubles(row_of(stars.pos, 0), "nbody_l"),
                                          Value::doubles(row_of(stars.pos, 1), "nbody_l"),
                                          Value::doubles(row_of(stars.pos, 2), "nbody_l")},
                                         count_of(stars));
    coupler.flush();

    auto kick = [&](WorkerPtr w, std::vector<Value> acc, std::uint32_t n) {
      std::vector<Value> dv;
      for (auto& a : acc) {
        for (auto& x : a.f64s) x *= h;
        dv.push_back(Value::doubles(std::move(a.f64s), "nbody_v"));
      }
      w->call_async("apply_dv", dv, n);
    };
    kick(gas_w, at_gas.get(), count_of(gas));
    kick(gravity, at_stars.get(), count_of(stars));
    coupler.flush();
  }

  void drift(int /*step*/) {
    gravity->call_async("step", {Value::of(dt, "nbody_t")});
    gas_w->call_async("step", {Value::of(dt, "nbody_t")});
    coupler.flush();
  }

  void stellar_update(int step, int stride) {
    const double dt_myr = dt * stride * myr_per_t;
    stellar->call("advance", {Value::of(dt_myr, "Myr")});
    auto masses = stellar->call("get_masses", {}, count_of(stars)).at(0).f64s;
    for (auto& m : masses) m *= mass_scale;
    gravity->call("set_masses", {Value::doubles(masses, "nbody_m")}, count_of(stars));
    for (Eigen::Index i = 0; i < stars.n(); ++i)
      stars.mass(i) = masses[static_cast<std::size_t>(i)];
    stars.age.array() += dt_myr;
    const auto n_events = stellar->call("event_count").at(0).as_i32();
    if (n_events > 0) {
      auto ids = stellar->call("take_events", {}, static_cast<std::uint32_t>(n_events)).at(0).i32s;
      supernovae += n_events;
      for (auto id : ids) out << "step " << step << ": supernova, star " << id << "\n";
    }
  }

  double energy(double eps) const { return kernels::total_energy(stars, gas, eps); }
};

void require_role(const std::map<std::string, WorkerPtr>& by_role, const std::string& role) {
  if (!by_role.count(role))
    throw ConfigError("scenario defines no worker for role " + role);
}

int run_impl(const Scenario& sc, const std::string& scenario_text, const RunOptions& opts,
             const std::string& out_dir, std::ostream& out, std::ostream& err) {
  std::unique_ptr<coupler::Daemon> local;
  coupler::SessionPtr session;
  if (opts.child_daemon) {
    session = std::make_shared<coupler::PipeSession>(opts.binary, opts.endpoint);
  } else {
    coupler::DaemonConfig dc;
    dc.endpoint = opts.endpoint;
    dc.log_dir = (std::filesystem::path(out_dir) / "job-logs").string();
    dc.unit_tables = {default_units_path()};
    local = std::make_unique<coupler::Daemon>(dc);
    local->on_load([d = local.get()](const std::string& text) {
      apply_scenario(*d, parse_scenario(text));
    });
    session = std::make_shared<coupler::InprocSession>(*local);
  }

  units::UnitRegistry reg = units::UnitRegistry::builtin();
  reg.load_table_file(default_units_path());
  coupler::Coupler coupler(std::move(session), reg);
  coupler.load(scenario_text);

  std::map<std::string, WorkerPtr> by_role;
  for (const auto& wspec : sc.workers) {
    auto w = coupler.create_worker(wspec);
    by_role[wspec.role] = w;
    out << "worker " << wspec.role << ": kernel=" << wspec.kernel << " channel="
        << wspec.channel << " node=" << w->node() << " route="
        << (w->remote() ? overlay::to_string(w->route().strategy) : "local") << "\n";
  }
  require_role(by_role, "gravity");
  require_role(by_role, "gas");
  require_role(by_role, "coupling");

  const auto& ph = sc.physics;
  Bridge b{coupler,
           by_role.at("gravity"),
           by_role.at("gas"),
           by_role.at("coupling"),
           by_role.count("stellar") ? by_role.at("stellar") : nullptr,
           kernels::plummer_sphere(ph.stars, opts.seed, ph.star_mass),
           kernels::plummer_sphere(ph.gas, opts.seed + 1, ph.gas_mass),
           ph.dt,
           1.0,
           reg.get("nbody_t").scale / reg.get("Myr").scale,
           0,
           out};

  if (b.stellar) {
    kernels::assign_stellar(b.stars, opts.seed + 2, ph.m0_lo, ph.m0_hi);
    // assign_stellar leaves MSun numbers in the dynamical mass column;
    // rescale so the cluster keeps its configured total mass in code units.
    b.mass_scale = ph.star_mass / b.stars.mass.sum();
    b.stars.mass *= b.mass_scale;
  } else {
    b.stars.age = Eigen::VectorXd::Zero(b.stars.n());
    b.stars.m0 = Eigen::VectorXd::Zero(b.stars.n());
  }

  auto push_set = [&](WorkerPtr w, const ParticleSet& s) {
    w->call("new_particles",
            {Value::doubles(as_vec(s.mass), "nbody_m"),
             Value::doubles(row_of(s.pos, 0), "nbody_l"),
             Value::doubles(row_of(s.pos, 1), "nbody_l"),
             Value::doubles(row_of(s.pos, 2), "nbody_l"),
             Value::doubles(row_of(s.vel, 0), "nbody_v"),
             Value::doubles(row_of(s.vel, 1), "nbody_v"),
             Value::doubles(row_of(s.vel, 2), "nbody_v")},
            count_of(s));
  };
  push_set(b.gravity, b.stars);
  push_set(b.gas_w, b.gas);
  for (auto w : {b.gravity, b.gas_w, b.coupling}) {
    w->call("set_eps", {Value::of(ph.eps, "nbody_l")});
    w->call("set_theta", {Value::of(ph.theta)});
  }
  if (b.stellar) {
    const std::string tracks = ph.tracks.empty() ? default_tracks_path() : ph.tracks;
    b.stellar->call("load_tracks", {Value::of(slurp(tracks))});
    b.stellar->call("new_stars",
                    {Value::doubles(as_vec(b.stars.m0), "MSun"),
                     Value::doubles(std::vector<double>(b.stars.m0.size(), 0.0), "Myr")},
                    count_of(b.stars));
  }

  const double e0 = b.energy(ph.eps);
  out << "initial energy " << e0 << " (" << b.stars.n() << " stars, " << b.gas.n()
      << " gas)\n";

  double drift = 0.0;
  for (int step = 1; step <= opts.steps; ++step) {
    b.pull_positions();
    if (b.stellar) {
      auto fm = b.gravity->call_async("get_masses", {}, count_of(b.stars));
      coupler.flush();
      const auto& m = fm.get().at(0).f64s;
      for (Eigen::Index i = 0; i < b.stars.n(); ++i)
        b.stars.mass(i) = m[static_cast<std::size_t>(i)];
    }
    b.cross_kick(ph.dt / 2);
    b.drift(step);
    b.pull_positions();
    b.cross_kick(ph.dt / 2);
    if (b.stellar && ph.stellar_stride > 0 && step % ph.stellar_stride == 0)
      b.stellar_update(step, ph.stellar_stride);

    const bool snap = sc.output.snapshot_every > 0 && step % sc.output.snapshot_every == 0;
    const bool chk = sc.output.checkpoint_every > 0 && step % sc.output.checkpoint_every == 0;
    if (snap || chk) b.pull_velocities();
    if (snap) {
      kernels::Snapshot s{b.stars, b.gas, {"nbody_l", "nbody_m", "nbody_t"}};
      kernels::save_snapshot((std::filesystem::path(out_dir) / snap_name(step)).string(), s);
    }
    if (chk) {
      const double e = b.energy(ph.eps);
      drift = (e - e0) / std::abs(e0);
      nlohmann::json run{{"step", step},
                         {"steps", opts.steps},
                         {"time", step * ph.dt},
                         {"energy", e},
                         {"drift", drift},
                         {"supernovae", b.supernovae}};
      coupler.checkpoint(run.dump());
      out << "step " << step << "/" << opts.steps << " drift " << drift << "\n";
    }
  }

  coupler.stop_daemon();
  out << "done: " << opts.steps << " steps, drift " << drift << ", supernovae "
      << b.supernovae << "\n";
  (void)err;
  return kExitOk;
}

}  // namespace

std::string default_units_path() {
  return std::string(JSIM_SHARE_DIR) + "/units/default.units";
}

std::string default_tracks_path() {
  return std::string(JSIM_SHARE_DIR) + "/stellar/default.tracks";
}

void apply_scenario(coupler::Daemon& daemon, const Scenario& sc) {
  daemon.fabric().set_default_latency(sc.latency);
  for (const auto& p : sc.policies)
    daemon.fabric().add_policy({p.from, p.to, p.rule, p.latency});
  for (const auto& r : sc.resources)
    if (!daemon.deploy().has_resource(r.spec.name))
      daemon.deploy().add_resource(r.spec, r.installed);
}

int run_scenario(const RunOptions& opts, std::ostream& out, std::ostream& err) {
  Scenario sc;
  std::string text;
  try {
    text = slurp(opts.scenario_path);
    sc = parse_scenario(text);
    if (!sc.physics.tracks.empty()) {
      // parse_scenario keeps paths as written; resolve like the file loader.
      std::filesystem::path t(sc.physics.tracks);
      if (t.is_relative())
        sc.physics.tracks =
            (std::filesystem::path(opts.scenario_path).parent_path() / t).string();
    }
  } catch (const ConfigError& e) {
    err << e.what() << "\n";
    return kExitConfig;
  }

  if (!opts.channel.empty())
    for (auto& w : sc.workers) w.channel = opts.channel;
  const std::string out_dir = opts.out_dir.empty() ? sc.output.dir : opts.out_dir;

  try {
    std::filesystem::create_directories(out_dir);
    return run_impl(sc, text, opts, out_dir, out, err);
  } catch (const ConfigError& e) {
    err << e.what() << "\n";
    return kExitConfig;
  } catch (const coupler::PortInUse& e) {
    err << e.what() << "\n";
    return kExitDaemon;
  } catch (const coupler::DaemonUnreachable& e) {
    err << e.what() << "\n";
    return kExitDaemon;
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << "\n";
    return kExitRun;
  }
}

int serve_daemon(const std::string& endpoint) {
  try {
    coupler::DaemonConfig dc;
    dc.endpoint = endpoint;
    dc.log_dir = endpoint.empty() ? "daemon-logs" : endpoint + ".logs";
    dc.unit_tables = {default_units_path()};
    coupler::Daemon daemon(dc);
    daemon.on_load([&daemon](const std::string& text) {
      apply_scenario(daemon, parse_scenario(text));
    });
    return coupler::serve_pipe(daemon, 0, 1);
  } catch (const coupler::PortInUse& e) {
    std::cerr << e.what() << "\n";
    return kExitDaemon;
  } catch (const std::exception& e) {
    std::cerr << "daemon failed: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace jsim::cli
