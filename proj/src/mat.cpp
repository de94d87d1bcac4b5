#include "genbp/mat.hpp"

#include <algorithm>

namespace genbp::audit {

namespace {
struct State {
  bool active = false;
  std::size_t max_square = 0;
  std::size_t worst_rows = 0;
  std::size_t worst_cols = 0;
};
thread_local State g_state;
}  // namespace

void on_alloc(std::size_t rows, std::size_t cols) {
  if (!g_state.active) return;
  const std::size_t sq = std::min(rows, cols);
  if (sq > g_state.max_square) {
    g_state.max_square = sq;
    g_state.worst_rows = rows;
    g_state.worst_cols = cols;
  }
}

AllocationAudit::AllocationAudit() { g_state = State{true, 0, 0, 0}; }

AllocationAudit::~AllocationAudit() { g_state.active = false; }

std::size_t AllocationAudit::max_square_dim() const {
  return g_state.max_square;
}

std::pair<std::size_t, std::size_t> AllocationAudit::worst_shape() const {
  return {g_state.worst_rows, g_state.worst_cols};
}

}  // namespace genbp::audit
