#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lidpm/cloud.hpp"

namespace lidpm {

// Static 3D kd-tree over a point set, for exact nearest-neighbour queries.
class KdTree {
 public:
  explicit KdTree(const Points& pts);

  struct Hit {
    std::size_t index = 0;
    double sq_dist = 0.0;
  };

  // Exact nearest neighbour; ties resolve to an arbitrary minimiser.
  Hit nearest(const Vec3& q) const;

  std::size_t size() const noexcept { return pts_.size(); }

 private:
  struct Node {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3& q, Hit& best) const;

  const Points& pts_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace lidpm
