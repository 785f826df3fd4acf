#include "lidpm/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace lidpm {

namespace {
constexpr std::uint32_t kLeafSize = 12;
}

KdTree::KdTree(const Points& pts) : pts_(pts) {
  if (pts.empty()) throw std::invalid_argument("kd-tree over an empty point set");
  if (pts.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("kd-tree point set too large");
  }
  order_.resize(pts.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * pts.size() / kLeafSize + 1);
  build(0, static_cast<std::uint32_t>(pts.size()));
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(pts_[order_[i]]);
    hi = hi.cwiseMax(pts_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all coincident

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) { return pts_[a][axis] < pts_[b][axis]; });
  const double split = pts_[order_[mid]][axis];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  Node& n = nodes_[id];
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

KdTree::Hit KdTree::nearest(const Vec3& q) const {
  Hit best{0, std::numeric_limits<double>::infinity()};
  search(0, q, best);
  return best;
}

void KdTree::search(std::int32_t id, const Vec3& q, Hit& best) const {
  const Node& n = nodes_[id];
  if (n.axis < 0) {
    for (std::uint32_t i = n.begin; i < n.end; ++i) {
      const double d = (pts_[order_[i]] - q).squaredNorm();
      if (d < best.sq_dist) best = {order_[i], d};
    }
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double diff = q[n.axis] - n.split;
  const std::int32_t first = diff < 0 ? n.left : n.right;
  const std::int32_t second = diff < 0 ? n.right : n.left;
  search(first, q, best);
  if (diff * diff <= best.sq_dist) search(second, q, best);
}

}  // namespace lidpm
