#include "jsim/kernels/tree.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "jsim/kernels/gravity.hpp"

namespace jsim::kernels {

namespace {
// Coincident particles all land in one octant forever; cap the recursion and
// let the leaf loop deal with them.
constexpr int kMaxDepth = 64;
}  // namespace

Octree::Octree(const ParticleSet& sources, TreeConfig cfg)
    : cfg_(cfg), pos_(sources.pos), mass_(sources.mass) {
  if (cfg_.leaf_capacity < 1) cfg_.leaf_capacity = 1;
  const auto n = static_cast<std::int32_t>(sources.n());
  order_.resize(static_cast<std::size_t>(n));
  for (std::int32_t i = 0; i < n; ++i) order_[static_cast<std::size_t>(i)] = i;
  Node root;
  std::fill(std::begin(root.child), std::end(root.child), -1);
  if (n > 0) {
    const Eigen::Vector3d lo = pos_.rowwise().minCoeff();
    const Eigen::Vector3d hi = pos_.rowwise().maxCoeff();
    root.center = 0.5 * (lo + hi);
    root.half = 0.5 * (hi - lo).maxCoeff();
  }
  nodes_.reserve(static_cast<std::size_t>(n) / 2 + 8);
  nodes_.push_back(root);
  if (n > 0) build(0, 0, n, 0);
}

void Octree::build(std::int32_t node, std::int32_t lo, std::int32_t hi, int depth) {
  {
    double m = 0;
    Eigen::Vector3d weighted = Eigen::Vector3d::Zero();
    for (std::int32_t k = lo; k < hi; ++k) {
      const std::int32_t p = order_[static_cast<std::size_t>(k)];
      m += mass_(p);
      weighted += mass_(p) * pos_.col(p);
    }
    Node& nd = nodes_[static_cast<std::size_t>(node)];
    nd.mass = m;
    nd.com = m > 0 ? Eigen::Vector3d(weighted / m) : nd.center;
    nd.first = lo;
    nd.count = hi - lo;
  }
  if (hi - lo <= cfg_.leaf_capacity || depth >= kMaxDepth) return;

  const Eigen::Vector3d c = nodes_[static_cast<std::size_t>(node)].center;
  const double h = nodes_[static_cast<std::size_t>(node)].half;
  // Stable bucketing: particles keep their input order inside each octant,
  // which makes the whole structure a pure function of the input ordering.
  std::array<std::vector<std::int32_t>, 8> bucket;
  for (std::int32_t k = lo; k < hi; ++k) {
    const std::int32_t p = order_[static_cast<std::size_t>(k)];
    const int oct = (pos_(0, p) >= c.x() ? 1 : 0) | (pos_(1, p) >= c.y() ? 2 : 0) |
                    (pos_(2, p) >= c.z() ? 4 : 0);
    bucket[static_cast<std::size_t>(oct)].push_back(p);
  }
  nodes_[static_cast<std::size_t>(node)].leaf = false;
  std::int32_t at = lo;
  for (int o = 0; o < 8; ++o) {
    if (bucket[static_cast<std::size_t>(o)].empty()) continue;
    const std::int32_t child_lo = at;
    for (auto p : bucket[static_cast<std::size_t>(o)]) order_[static_cast<std::size_t>(at++)] = p;
    Node kid;
    std::fill(std::begin(kid.child), std::end(kid.child), -1);
    kid.center = c + 0.5 * h *
                         Eigen::Vector3d((o & 1) ? 1.0 : -1.0, (o & 2) ? 1.0 : -1.0,
                                         (o & 4) ? 1.0 : -1.0);
    kid.half = 0.5 * h;
    const auto kid_index = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(kid);
    nodes_[static_cast<std::size_t>(node)].child[o] = kid_index;
    build(kid_index, child_lo, at, depth + 1);
  }
}

Eigen::Vector3d Octree::field_at(const Eigen::Vector3d& x, double eps) const {
  const double e2 = eps * eps;
  const double th2 = cfg_.theta * cfg_.theta;
  Eigen::Vector3d a = Eigen::Vector3d::Zero();
  std::vector<std::int32_t> stack;
  stack.reserve(128);
  stack.push_back(0);
  while (!stack.empty()) {
    const Node& nd = nodes_[static_cast<std::size_t>(stack.back())];
    stack.pop_back();
    if (nd.count == 0) continue;
    // Cells containing x are always opened: the monopole of a cell that
    // includes the evaluation point would fold the point's own mass into the
    // field. Outside cells use the standard size/distance criterion.
    const bool outside = (x - nd.center).cwiseAbs().maxCoeff() > nd.half;
    if (outside) {
      const Eigen::Vector3d d = nd.com - x;
      const double d2 = d.squaredNorm();
      const double side = 2.0 * nd.half;
      if (side * side < th2 * d2) {
        const double r2 = d2 + e2;
        a += (nd.mass / (r2 * std::sqrt(r2))) * d;
        continue;
      }
    }
    if (nd.leaf) {
      for (std::int32_t k = nd.first; k < nd.first + nd.count; ++k) {
        const std::int32_t p = order_[static_cast<std::size_t>(k)];
        const Eigen::Vector3d d = pos_.col(p) - x;
        const double d2 = d.squaredNorm();
        if (d2 == 0.0) {
          if (e2 == 0.0) throw CoincidentParticles();
          continue;  // zero numerator either way
        }
        const double r2 = d2 + e2;
        a += (mass_(p) / (r2 * std::sqrt(r2))) * d;
      }
    } else {
      for (int o = 7; o >= 0; --o) {
        if (nd.child[o] >= 0) stack.push_back(nd.child[o]);
      }
    }
  }
  return a;
}

Eigen::Matrix3Xd tree_accel(const ParticleSet& sources, const Eigen::Matrix3Xd& targets,
                            double eps, TreeConfig cfg) {
  if (cfg.theta == 0.0) return direct_accel(sources, targets, eps);
  Octree tree(sources, cfg);
  Eigen::Matrix3Xd acc(3, targets.cols());
  for (Eigen::Index t = 0; t < targets.cols(); ++t) {
    acc.col(t) = tree.field_at(targets.col(t), eps);
  }
  return acc;
}

}  // namespace jsim::kernels
