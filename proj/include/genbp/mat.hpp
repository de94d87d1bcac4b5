#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace genbp {

using Vec = std::vector<double>;

// Thrown when a computation fails for numerical reasons (non-positive-definite
// matrices, singular systems).  Maps to a distinct process exit code in the
// CLI.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration (CLI / config files / model setup).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace audit {

// Records matrix allocations so tests can assert that no D-by-D dense buffer
// is created on the structured path.  Enabled via AllocationAudit; tracks the
// largest min(rows, cols) seen, i.e. the largest square a buffer contains.
void on_alloc(std::size_t rows, std::size_t cols);

class AllocationAudit {
 public:
  AllocationAudit();
  ~AllocationAudit();
  AllocationAudit(const AllocationAudit&) = delete;
  AllocationAudit& operator=(const AllocationAudit&) = delete;

  // Largest min(rows, cols) over all Mat allocations since construction.
  std::size_t max_square_dim() const;
  // Shape of the offending allocation.
  std::pair<std::size_t, std::size_t> worst_shape() const;
};

}  // namespace audit

// Column-major dense matrix with contiguous columns.  Value semantics; all
// arithmetic goes through the kernels layer.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
    audit::on_alloc(rows, cols);
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i + j * rows_];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i + j * rows_];
  }

  double* col(std::size_t j) { return data_.data() + j * rows_; }
  const double* col(std::size_t j) const { return data_.data() + j * rows_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Mat& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace genbp
