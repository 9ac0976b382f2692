#ifndef JSIM_CLI_RUNNER_HPP_
#define JSIM_CLI_RUNNER_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>

#include "jsim/cli/scenario.hpp"
#include "jsim/coupler/daemon.hpp"

// Scenario runner: stands up a coupling daemon (in-process or as a child
// served over pipes), deploys one worker per [worker] section, and drives the
// bridged leapfrog loop for a fixed number of steps, writing snapshots and
// checkpoints along the way.

namespace jsim::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;  // scenario or setup errors
inline constexpr int kExitRun = 3;     // worker death, launch failure
inline constexpr int kExitDaemon = 4;  // endpoint taken, daemon unreachable

struct RunOptions {
  std::string scenario_path;
  std::uint64_t seed = 1;
  int steps = 50;
  std::string out_dir;        // overrides [output] dir when set
  std::string channel;        // "ibis" or "inproc": overrides every worker
  bool child_daemon = false;  // fork the daemon and talk over pipes
  std::string endpoint;       // status document path ("" = none)
  std::string binary;         // this executable, for the child daemon
};

std::string default_units_path();
std::string default_tracks_path();

// Installs [fabric], [policy], and [resource] sections into a daemon.
// Resources already present are left alone so a repeated load is harmless.
void apply_scenario(coupler::Daemon& daemon, const Scenario& sc);

// Runs a scenario end to end. Progress goes to `out`, failures to `err`.
// Returns one of the kExit* codes above.
int run_scenario(const RunOptions& opts, std::ostream& out, std::ostream& err);

// daemon-serve mode: binds `endpoint`, applies scenarios arriving over the
// link protocol's load op, and serves requests on stdin/stdout until told to
// stop. Returns a kExit* code.
int serve_daemon(const std::string& endpoint);

}  // namespace jsim::cli

#endif  // JSIM_CLI_RUNNER_HPP_
