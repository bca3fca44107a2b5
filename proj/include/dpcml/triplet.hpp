#pragma once

#include <vector>

#include "dpcml/data.hpp"

namespace dpcml {

// One positive interaction and the negatives attached to it: S sampled items
// for uniform/popularity sampling, the single selected item for hard sampling.
struct Triplet {
  UserIndex u = 0;
  ItemIndex v_pos = 0;
  std::vector<ItemIndex> v_negs;

  bool operator==(const Triplet&) const = default;
};

}  // namespace dpcml
