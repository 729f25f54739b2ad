#pragma once

#include <vector>

#include "lanetopo/tensor.hpp"

namespace lanetopo {

// Row-sparse attention block mask: for each query row, the list of key
// columns it may attend to. `all` short-circuits the common unmasked case.
struct BlockMask {
  int rows = 0;
  int cols = 0;
  bool all = false;
  std::vector<std::vector<int>> allowed;  // per row, ascending key indices

  static BlockMask all_allowed(int r, int c) {
    BlockMask m;
    m.rows = r;
    m.cols = c;
    m.all = true;
    return m;
  }

  static BlockMask from_rows(int c, std::vector<std::vector<int>> rows_allowed) {
    BlockMask m;
    m.rows = static_cast<int>(rows_allowed.size());
    m.cols = c;
    m.allowed = std::move(rows_allowed);
    return m;
  }

  bool is_allowed(int r, int c) const {
    if (all) return true;
    for (int j : allowed[r])
      if (j == c) return true;
    return false;
  }

  int allowed_count(int r) const {
    return all ? cols : static_cast<int>(allowed[r].size());
  }
};

}  // namespace lanetopo
