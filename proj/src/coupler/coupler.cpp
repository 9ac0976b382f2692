#include <json.hpp>

#include "jsim/coupler/daemon.hpp"

// Script-side half of the coupling layer: Coupler, Worker, Future. Calls are
// checked and unit-converted against the kernel manifest locally, queued as
// encoded frames, and shipped in batches of one link round trip each.

namespace jsim::coupler {

using nlohmann::json;

namespace {

std::string to_text(const wire::Bytes& b) { return std::string(b.begin(), b.end()); }
wire::Bytes to_bytes(const std::string& s) { return wire::Bytes(s.begin(), s.end()); }

}  // namespace

Coupler::Coupler(SessionPtr session, units::UnitRegistry units)
    : session_(std::move(session)), units_(std::move(units)) {
  register_builtin_kernels();
}

void Coupler::load(const std::string& scenario_text) {
  session_->request(linkop::load, to_bytes(scenario_text));
}

WorkerPtr Coupler::create_worker(const WorkerSpec& spec) {
  if (!KernelRegistry::global().contains(spec.kernel)) throw KernelUnknown(spec.kernel);
  if (workers_.count(spec.role)) throw Error("role already in use: " + spec.role);

  json j{{"role", spec.role},           {"kernel", spec.kernel}, {"resource", spec.resource},
         {"processes", spec.processes}, {"nodes", spec.nodes},   {"channel", spec.channel}};
  j["stage_in"] = json::array();
  for (const auto& [src, dst] : spec.stage_in) j["stage_in"].push_back({src, dst});

  const auto reply = session_->request(linkop::create_worker, to_bytes(j.dump()));
  const json rj = json::parse(to_text(reply));

  auto w = WorkerPtr(new Worker());
  w->coupler_ = this;
  w->spec_ = spec;
  w->manifest_ = KernelRegistry::global().manifest(spec.kernel);
  w->job_id_ = rj.value("job", "");
  w->node_ = rj.value("node", "");
  if (rj.contains("route") && !rj["route"].is_null()) {
    const std::string strategy = rj["route"].value("strategy", "direct");
    w->route_.strategy = strategy == "reverse"  ? overlay::Strategy::reverse
                         : strategy == "routed" ? overlay::Strategy::routed
                                                : overlay::Strategy::direct;
    w->route_.hub_chain = rj["route"].value("hubs", std::vector<std::string>{});
  }
  workers_[spec.role] = w;
  return w;
}

Future Coupler::enqueue(WorkerPtr worker, const std::string& fn, const std::vector<Value>& args,
                        std::uint32_t call_count) {
  const FunctionSig& sig = worker->manifest_.need(fn);
  CallFrame frame = pack(sig, next_call_++, call_count, args, units_);
  auto st = std::make_shared<detail::PendingCall>();
  st->owner = this;
  st->worker = std::move(worker);
  st->sig = &sig;
  st->frame = encode(frame);
  batch_.push_back(st);
  return Future(st);
}

void Coupler::flush() {
  if (batch_.empty()) return;
  auto batch = std::move(batch_);
  batch_.clear();

  wire::Bytes body;
  wire::put_u32(body, static_cast<std::uint32_t>(batch.size()));
  for (const auto& st : batch) {
    wire::put_string(body, st->worker->spec().role);
    wire::put_u32(body, static_cast<std::uint32_t>(st->frame.size()));
    body.insert(body.end(), st->frame.begin(), st->frame.end());
  }

  wire::Bytes reply;
  try {
    reply = session_->request(linkop::calls, body);
  } catch (...) {
    const auto err = std::current_exception();
    for (const auto& st : batch) {
      st->resolved = true;
      st->error = err;
    }
    throw;
  }

  wire::Reader r(reply);
  for (const auto& st : batch) {
    const std::uint8_t kind = r.u8();
    if (kind == callkind::worker_died) {
      st->error = std::make_exception_ptr(WorkerDied(r.str()));
    } else {
      const auto span = r.raw(r.u32());
      const wire::Bytes fb(span.begin(), span.end());
      try {
        const CallFrame f = decode(fb);
        if (is_error(f)) throw RemoteError(error_message(f));
        st->results = unpack(*st->sig, f);
      } catch (...) {
        st->error = std::current_exception();
      }
    }
    st->resolved = true;
  }
}

std::string Coupler::status() { return to_text(session_->request(linkop::status, {})); }

void Coupler::checkpoint(const std::string& run_json) {
  session_->request(linkop::checkpoint, to_bytes(run_json));
}

void Coupler::stop_daemon() { session_->request(linkop::stop, {}); }

std::vector<Value> Future::get() {
  if (!st_) throw Error("empty future");
  if (!st_->resolved) st_->owner->flush();
  if (st_->error) std::rethrow_exception(st_->error);
  return st_->results;
}

std::vector<Value> Worker::call(const std::string& fn, const std::vector<Value>& args,
                                std::uint32_t call_count) {
  return call_async(fn, args, call_count).get();
}

Future Worker::call_async(const std::string& fn, const std::vector<Value>& args,
                          std::uint32_t call_count) {
  return coupler_->enqueue(shared_from_this(), fn, args, call_count);
}

void Worker::stop() { call("stop"); }

}  // namespace jsim::coupler
