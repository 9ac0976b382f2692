#ifndef JSIM_KERNELS_TREE_HPP_
#define JSIM_KERNELS_TREE_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "jsim/kernels/particles.hpp"

namespace jsim::kernels {

struct TreeConfig {
  double theta = 0.5;    // opening angle; 0 means exact (delegates to direct)
  int leaf_capacity = 8;
};

// Barnes-Hut octree over a frozen copy of the source set. Construction and
// traversal are sequential and bucket particles in input order, so the result
// is a deterministic function of (sources, config, eps).
class Octree {
 public:
  Octree(const ParticleSet& sources, TreeConfig cfg);

  // Monopole field at x. A cell of side s at raw distance d from x is
  // accepted iff s^2 < theta^2 d^2, so a coincident cell (d = 0) is always
  // opened rather than dividing by zero.
  Eigen::Vector3d field_at(const Eigen::Vector3d& x, double eps) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double half = 0;  // half the side length
    Eigen::Vector3d com = Eigen::Vector3d::Zero();
    double mass = 0;
    std::int32_t child[8];
    std::int32_t first = 0;  // leaf span into order_
    std::int32_t count = 0;
    bool leaf = true;
  };

  void build(std::int32_t node, std::int32_t lo, std::int32_t hi, int depth);

  TreeConfig cfg_;
  Eigen::Matrix3Xd pos_;
  Eigen::VectorXd mass_;
  std::vector<std::int32_t> order_;
  std::vector<Node> nodes_;
};

// Barnes-Hut field of `sources` at each column of `targets`. theta == 0 is
// special-cased to the direct sum, bit for bit.
Eigen::Matrix3Xd tree_accel(const ParticleSet& sources, const Eigen::Matrix3Xd& targets,
                            double eps, TreeConfig cfg);

}  // namespace jsim::kernels

#endif  // JSIM_KERNELS_TREE_HPP_
