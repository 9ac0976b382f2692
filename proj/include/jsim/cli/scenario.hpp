#ifndef JSIM_CLI_SCENARIO_HPP_
#define JSIM_CLI_SCENARIO_HPP_

#include <string>
#include <vector>

#include "jsim/coupler/daemon.hpp"
#include "jsim/deploy/deploy.hpp"
#include "jsim/netsim/fabric.hpp"

// Scenario files describe one run: the simulated network, the resources,
// which worker runs which kernel where, the physics knobs, and the output
// cadence. Line-oriented: `[section]` headers, `key = value` pairs, `#`
// comments. `[policy]` holds raw firewall lines `<rule> <from> <to>
// [latency]`; `[resource <name>]` and `[worker <role>]` repeat per entry.

namespace jsim::cli {

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("scenario: " + what) {}
};

struct PolicyLine {
  netsim::LinkRule rule = netsim::LinkRule::allow;
  std::string from;
  std::string to;
  netsim::Tick latency = 1;
};

struct ResourceConfig {
  deploy::ResourceSpec spec;
  bool installed = true;  // false models a resource the stack never reached
};

struct PhysicsConfig {
  int stars = 100;
  int gas = 500;
  double star_mass = 0.5;  // cluster mass, natural units (G = 1, total ~1)
  double gas_mass = 0.5;
  double eps = 0.05;     // softening, nbody_l
  double dt = 1.0 / 64;  // bridge step, nbody_t
  double theta = 0.5;    // opening angle for tree kernels
  int stellar_stride = 4;  // bridge steps per stellar-evolution advance
  double m0_lo = 0.5;      // initial stellar masses, MSun
  double m0_hi = 6.0;
  std::string tracks;  // evolution table path; empty = bundled default
};

struct OutputConfig {
  std::string dir = "out";
  int snapshot_every = 10;    // bridge steps; 0 disables
  int checkpoint_every = 5;   // bridge steps; 0 disables
};

struct Scenario {
  netsim::Tick latency = 1;  // default link latency, ticks
  std::vector<PolicyLine> policies;
  std::vector<ResourceConfig> resources;
  std::vector<coupler::WorkerSpec> workers;
  PhysicsConfig physics;
  OutputConfig output;

  const coupler::WorkerSpec* worker(const std::string& role) const;
  bool has_resource(const std::string& name) const;
};

// Throws ConfigError naming the offending section, key, or reference.
Scenario parse_scenario(const std::string& text);

// parse_scenario on the file's contents; the tracks path, when relative,
// is resolved against the scenario file's directory.
Scenario load_scenario_file(const std::string& path);

}  // namespace jsim::cli

#endif  // JSIM_CLI_SCENARIO_HPP_
