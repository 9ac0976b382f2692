#ifndef JSIM_KERNELS_SNAPSHOT_HPP_
#define JSIM_KERNELS_SNAPSHOT_HPP_

#include <array>
#include <string>
#include <string_view>

#include "jsim/kernels/particles.hpp"

// Text snapshots. Doubles are written with std::to_chars (shortest exact
// round-trip), so save -> load -> save reproduces the file byte for byte and
// snapshots from bit-identical runs compare equal as strings.
//
//   jsim-snapshot 1
//   units <length> <mass> <time>
//   stars <n>
//   <id> <mass> <x> <y> <z> <vx> <vy> <vz> <age> <m0>   (n lines)
//   gas <n>
//   <id> <mass> <x> <y> <z> <vx> <vy> <vz>              (n lines)

namespace jsim::kernels {

struct Snapshot {
  ParticleSet stars;
  ParticleSet gas;
  std::array<std::string, 3> units = {"nbody_l", "nbody_m", "nbody_t"};
};

std::string to_text(const Snapshot& snap);
Snapshot from_text(std::string_view text);  // Error on malformed input

void save_snapshot(const std::string& path, const Snapshot& snap);
Snapshot load_snapshot(const std::string& path);

}  // namespace jsim::kernels

#endif  // JSIM_KERNELS_SNAPSHOT_HPP_
