#include <filesystem>
#include <iostream>
#include <string>
#include <system_error>

#include "CLI11.hpp"

#include "jsim/cli/runner.hpp"
#include "jsim/coupler/daemon.hpp"

int main(int argc, char** argv) {
  CLI::App app{"multi-model particle runs across simulated overlay networks"};
  app.require_subcommand(1);

  jsim::cli::RunOptions opts;
  auto* run = app.add_subcommand("run", "run a scenario end to end");
  run->add_option("scenario", opts.scenario_path, "scenario file")->required();
  run->add_option("--seed", opts.seed, "random seed for the initial conditions");
  run->add_option("--steps", opts.steps, "number of bridge steps");
  run->add_option("--out-dir", opts.out_dir, "output directory (overrides the scenario)");
  run->add_option("--channel", opts.channel, "force every worker onto one channel")
      ->check(CLI::IsMember({"ibis", "inproc"}));
  run->add_flag("--child-daemon", opts.child_daemon,
                "fork the daemon and talk to it over pipes");
  run->add_option("--endpoint", opts.endpoint, "status document path");

  std::string status_endpoint;
  auto* status = app.add_subcommand("status", "print a daemon's status document");
  status->add_option("--endpoint", status_endpoint, "status document path")->required();

  std::string serve_endpoint;
  auto* serve =
      app.add_subcommand("daemon-serve", "serve the link protocol on stdin/stdout");
  serve->add_option("--endpoint", serve_endpoint, "status document path");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) {
    std::error_code ec;
    auto self = std::filesystem::read_symlink("/proc/self/exe", ec);
    opts.binary = ec ? std::string(argv[0]) : self.string();
    return jsim::cli::run_scenario(opts, std::cout, std::cerr);
  }
  if (status->parsed()) {
    try {
      std::cout << jsim::coupler::read_status(status_endpoint) << "\n";
      return jsim::cli::kExitOk;
    } catch (const jsim::coupler::DaemonUnreachable& e) {
      std::cerr << e.what() << "\n";
      return jsim::cli::kExitDaemon;
    }
  }
  return jsim::cli::serve_daemon(serve_endpoint);
}
