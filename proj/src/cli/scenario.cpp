#include "jsim/cli/scenario.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace jsim::cli {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string strip_comment(const std::string& line) {
  const auto hash = line.find('#');
  return hash == std::string::npos ? line : line.substr(0, hash);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

int parse_int(const std::string& v, const std::string& where) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError(where + ": not an integer: " + v);
  return out;
}

double parse_double(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(where + ": not a number: " + v);
  }
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError(where + ": not a boolean: " + v);
}

netsim::LinkRule parse_rule(const std::string& v, const std::string& where) {
  if (v == "allow") return netsim::LinkRule::allow;
  if (v == "deny_inbound") return netsim::LinkRule::deny_inbound;
  if (v == "deny_all") return netsim::LinkRule::deny_all;
  throw ConfigError(where + ": unknown rule: " + v);
}

}  // namespace

const coupler::WorkerSpec* Scenario::worker(const std::string& role) const {
  for (const auto& w : workers)
    if (w.role == role) return &w;
  return nullptr;
}

bool Scenario::has_resource(const std::string& name) const {
  for (const auto& r : resources)
    if (r.spec.name == name) return true;
  return false;
}

Scenario parse_scenario(const std::string& text) {
  Scenario sc;
  std::string section;     // "fabric", "policy", "physics", "output", "resource", "worker"
  ResourceConfig* res = nullptr;
  coupler::WorkerSpec* wrk = nullptr;

  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const std::string at = "line " + std::to_string(lineno);

    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(at + ": unterminated section header");
      const auto tokens = split_ws(line.substr(1, line.size() - 2));
      if (tokens.empty()) throw ConfigError(at + ": empty section header");
      section = tokens[0];
      res = nullptr;
      wrk = nullptr;
      if (section == "resource") {
        if (tokens.size() != 2) throw ConfigError(at + ": [resource] needs a name");
        if (sc.has_resource(tokens[1]))
          throw ConfigError(at + ": duplicate resource " + tokens[1]);
        sc.resources.emplace_back();
        res = &sc.resources.back();
        res->spec.name = tokens[1];
        res->spec.frontend = tokens[1] + "-fe";
      } else if (section == "worker") {
        if (tokens.size() != 2) throw ConfigError(at + ": [worker] needs a role");
        if (sc.worker(tokens[1])) throw ConfigError(at + ": duplicate worker " + tokens[1]);
        sc.workers.emplace_back();
        wrk = &sc.workers.back();
        wrk->role = tokens[1];
      } else if (section != "fabric" && section != "policy" && section != "physics" &&
                 section != "output") {
        throw ConfigError(at + ": unknown section [" + section + "]");
      }
      continue;
    }

    if (section == "policy") {
      const auto tokens = split_ws(line);
      if (tokens.size() != 3 && tokens.size() != 4)
        throw ConfigError(at + ": policy lines are `<rule> <from> <to> [latency]`");
      PolicyLine p;
      p.rule = parse_rule(tokens[0], at);
      p.from = tokens[1];
      p.to = tokens[2];
      if (tokens.size() == 4)
        p.latency = static_cast<netsim::Tick>(parse_int(tokens[3], at));
      sc.policies.push_back(std::move(p));
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(at + ": expected `key = value`");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(at + ": expected `key = value`");
    const std::string where = at + " [" + section + "] " + key;

    if (section == "fabric") {
      if (key == "latency")
        sc.latency = static_cast<netsim::Tick>(parse_int(value, where));
      else
        throw ConfigError(where + ": unknown key");
    } else if (section == "resource") {
      auto& spec = res->spec;
      if (key == "middleware")
        spec.middleware = value;
      else if (key == "nodes")
        spec.nodes = parse_int(value, where);
      else if (key == "frontend")
        spec.frontend = value;
      else if (key == "gpu")
        spec.gpu_capable = parse_bool(value, where);
      else if (key == "addressable")
        spec.computes_addressable = parse_bool(value, where);
      else if (key == "reservation")
        spec.reservation = static_cast<netsim::Tick>(parse_int(value, where));
      else if (key == "slots")
        spec.slots_per_node = parse_int(value, where);
      else if (key == "install_path")
        spec.install_path = value;
      else if (key == "installed")
        res->installed = parse_bool(value, where);
      else
        throw ConfigError(where + ": unknown key");
    } else if (section == "worker") {
      if (key == "kernel")
        wrk->kernel = value;
      else if (key == "resource")
        wrk->resource = value;
      else if (key == "processes")
        wrk->processes = parse_int(value, where);
      else if (key == "nodes")
        wrk->nodes = parse_int(value, where);
      else if (key == "channel")
        wrk->channel = value;
      else
        throw ConfigError(where + ": unknown key");
    } else if (section == "physics") {
      auto& ph = sc.physics;
      if (key == "stars")
        ph.stars = parse_int(value, where);
      else if (key == "gas")
        ph.gas = parse_int(value, where);
      else if (key == "star_mass")
        ph.star_mass = parse_double(value, where);
      else if (key == "gas_mass")
        ph.gas_mass = parse_double(value, where);
      else if (key == "eps")
        ph.eps = parse_double(value, where);
      else if (key == "dt")
        ph.dt = parse_double(value, where);
      else if (key == "theta")
        ph.theta = parse_double(value, where);
      else if (key == "stellar_stride")
        ph.stellar_stride = parse_int(value, where);
      else if (key == "m0_lo")
        ph.m0_lo = parse_double(value, where);
      else if (key == "m0_hi")
        ph.m0_hi = parse_double(value, where);
      else if (key == "tracks")
        ph.tracks = value;
      else
        throw ConfigError(where + ": unknown key");
    } else if (section == "output") {
      if (key == "dir")
        sc.output.dir = value;
      else if (key == "snapshot_every")
        sc.output.snapshot_every = parse_int(value, where);
      else if (key == "checkpoint_every")
        sc.output.checkpoint_every = parse_int(value, where);
      else
        throw ConfigError(where + ": unknown key");
    } else {
      throw ConfigError(at + ": `key = value` before any [section]");
    }
  }

  for (const auto& w : sc.workers) {
    if (w.kernel.empty()) throw ConfigError("worker " + w.role + ": no kernel");
    if (w.channel == "ibis" && !sc.has_resource(w.resource))
      throw ConfigError("worker " + w.role + ": unknown resource " +
                        (w.resource.empty() ? "(none)" : w.resource));
  }
  return sc;
}

Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  Scenario sc = parse_scenario(ss.str());
  if (!sc.physics.tracks.empty()) {
    const std::filesystem::path tracks(sc.physics.tracks);
    if (tracks.is_relative())
      sc.physics.tracks = (std::filesystem::path(path).parent_path() / tracks).string();
  }
  return sc;
}

}  // namespace jsim::cli
