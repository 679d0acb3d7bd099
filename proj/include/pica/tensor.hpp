#ifndef PICA_TENSOR_HPP_
#define PICA_TENSOR_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pica {

using TokenId = std::int32_t;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using RowMatrixXf = RowMatrix<float>;

// Dense row-major array with an explicit shape. Storage container for
// checkpoint payloads; the forward pass works on Eigen views of it.
template <typename Scalar>
class BasicTensor {
 public:
  using Shape = std::vector<std::int64_t>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape) : shape_(std::move(shape)), data_(count(shape_)) {}
  BasicTensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::size_t>(count(shape_)) != data_.size()) {
      throw std::invalid_argument("tensor shape does not match data length");
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }

  std::span<const Scalar> data() const { return data_; }
  std::span<Scalar> data() { return data_; }

  // 2-D view; a rank-1 tensor is viewed as a single row.
  Eigen::Map<const RowMatrix<Scalar>> matrix() const {
    const auto [r, c] = rows_cols();
    return {data_.data(), r, c};
  }
  Eigen::Map<const Vector<Scalar>> vector() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  static std::int64_t count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
  }

 private:
  std::pair<Eigen::Index, Eigen::Index> rows_cols() const {
    if (shape_.size() == 1) return {1, shape_[0]};
    if (shape_.size() != 2) throw std::logic_error("matrix view requires rank 1 or 2");
    return {shape_[0], shape_[1]};
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using Tensor = BasicTensor<float>;

// Engine-produced values are checked for NaN/Inf in debug builds only.
template <typename Derived>
inline void debug_check_finite([[maybe_unused]] const Eigen::DenseBase<Derived>& x,
                               [[maybe_unused]] const char* where) {
#ifndef NDEBUG
  if (!x.allFinite()) throw std::logic_error(std::string("non-finite value produced in ") + where);
#endif
}

}  // namespace pica

#endif  // PICA_TENSOR_HPP_
