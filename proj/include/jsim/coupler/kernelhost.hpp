#ifndef JSIM_COUPLER_KERNELHOST_HPP_
#define JSIM_COUPLER_KERNELHOST_HPP_

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "jsim/coupler/manifest.hpp"

// Kernel hosting: a KernelServer answers call frames for one model
// instance. Kernels are pure frame-in/frame-out machines; they never see the
// overlay, the pool, or another kernel's address. All inter-model traffic
// goes through the coupler.

namespace jsim::coupler {

class KernelUnknown : public Error {
 public:
  explicit KernelUnknown(const std::string& name) : Error("unknown kernel: " + name) {}
};

class KernelServer {
 public:
  virtual ~KernelServer() = default;

  const KernelManifest& manifest() const { return manifest_; }

  // Dispatches one call. Unknown functions and handler exceptions become
  // error replies (functionId 0). nullopt means "no reply at all" - only
  // the testbed kernel's hang uses it, to simulate a wedged worker.
  std::optional<CallFrame> handle(const CallFrame& call);

  // Set once the stop function ran; the host should wind the worker down.
  bool stopped() const { return stopped_; }

 protected:
  explicit KernelServer(KernelManifest manifest);

  using Handler = std::function<void(const CallFrame& call, CallFrame& reply)>;
  void bind(std::uint32_t function_id, Handler fn);
  void mute_reply() { mute_ = true; }  // current call produces no reply

 private:
  KernelManifest manifest_;
  std::map<std::uint32_t, Handler> handlers_;
  bool stopped_ = false;
  bool mute_ = false;
};

// Name -> (manifest, factory). The caller side packs against the manifest;
// the worker side instantiates the server. Both come from the same table so
// the two can never disagree within one build.
class KernelRegistry {
 public:
  using Factory = std::function<std::unique_ptr<KernelServer>()>;

  static KernelRegistry& global();

  void add(std::string name, KernelManifest manifest, Factory make);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const KernelManifest& manifest(const std::string& name) const;     // KernelUnknown
  std::unique_ptr<KernelServer> make(const std::string& name) const;  // KernelUnknown
  std::vector<std::string> names() const;

 private:
  struct Entry {
    KernelManifest manifest;
    Factory make;
  };
  std::map<std::string, Entry> entries_;
};

// Registers the bundled kernels into the global registry; idempotent.
//
//   testbed          echo/fail/stamp/hang plumbing probes
//   gravity-direct   self-gravitating particle set, exact pairwise kicks
//   gravity-tree     same state machine, octree self-kicks
//   gas              gravity-direct plus an outward wind acceleration
//   coupling-direct  stateless field evaluator: sources in, field out
//   coupling-tree    same, octree evaluation
//   stellar          table-driven mass evolution and supernova events
void register_builtin_kernels();

}  // namespace jsim::coupler

#endif  // JSIM_COUPLER_KERNELHOST_HPP_
