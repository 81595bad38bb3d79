#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbsfm/linalg.hpp"

namespace dbsfm {

/// Dense tensor with at most two dimensions. A rank-1 tensor of length n is
/// viewed as a 1 x n matrix.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  std::size_t numel() const { return values.size(); }
  Eigen::Index rows() const;
  Eigen::Index cols() const;

  Matrix as_matrix() const;
  Eigen::Map<Matrix> view();
  Eigen::Map<const Matrix> view() const;

  bool operator==(const Tensor&) const = default;
};

/// Named tensors kept in insertion order. The order is the canonical
/// serialization order for checkpoints.
class ParamStore {
 public:
  /// Adds a zero-filled tensor. Throws ValidationError on a duplicate name or
  /// a shape with more than two dimensions.
  Tensor& add(const std::string& name, std::vector<std::size_t> shape);
  void add(const std::string& name, Tensor tensor);

  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  /// Total number of scalars across all tensors.
  std::size_t total() const;

  /// Same names and shapes, all values zero.
  ParamStore zeros_like() const;

  /// Copies values for the given names from another store with matching
  /// shapes.
  void copy_from(const ParamStore& other, std::span<const std::string> names);

  bool operator==(const ParamStore& other) const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor, std::less<>> tensors_;
};

/// Sum of element counts over the listed tensors.
std::size_t param_count(const ParamStore& store, std::span<const std::string> names);

}  // namespace dbsfm
