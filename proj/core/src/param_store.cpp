#include "dbsfm/param_store.hpp"

#include <functional>
#include <numeric>

#include "dbsfm/error.hpp"

namespace dbsfm {

Eigen::Index Tensor::rows() const {
  if (shape.size() == 2) return static_cast<Eigen::Index>(shape[0]);
  return 1;
}

Eigen::Index Tensor::cols() const {
  if (shape.size() == 2) return static_cast<Eigen::Index>(shape[1]);
  if (shape.size() == 1) return static_cast<Eigen::Index>(shape[0]);
  return 1;
}

Matrix Tensor::as_matrix() const { return view(); }

Eigen::Map<Matrix> Tensor::view() { return {values.data(), rows(), cols()}; }

Eigen::Map<const Matrix> Tensor::view() const { return {values.data(), rows(), cols()}; }

Tensor& ParamStore::add(const std::string& name, std::vector<std::size_t> shape) {
  if (shape.size() > 2) throw ValidationError("tensor '" + name + "' has more than two dimensions");
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  Tensor t{std::move(shape), std::vector<double>(n, 0.0)};
  add(name, std::move(t));
  return tensors_.find(name)->second;
}

void ParamStore::add(const std::string& name, Tensor tensor) {
  if (tensors_.contains(name)) throw ValidationError("duplicate tensor name '" + name + "'");
  const std::size_t n =
      std::accumulate(tensor.shape.begin(), tensor.shape.end(), std::size_t{1}, std::multiplies<>());
  if (n != tensor.values.size()) throw ValidationError("tensor '" + name + "' shape does not match value count");
  order_.push_back(name);
  tensors_.emplace(name, std::move(tensor));
}

bool ParamStore::contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

Tensor& ParamStore::at(std::string_view name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("unknown tensor '" + std::string(name) + "'");
  return it->second;
}

const Tensor& ParamStore::at(std::string_view name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("unknown tensor '" + std::string(name) + "'");
  return it->second;
}

std::size_t ParamStore::total() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.numel();
  return n;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& name : order_) out.add(name, at(name).shape);
  return out;
}

void ParamStore::copy_from(const ParamStore& other, std::span<const std::string> names) {
  for (const auto& name : names) {
    const Tensor& src = other.at(name);
    Tensor& dst = at(name);
    if (src.shape != dst.shape) throw ValidationError("tensor '" + name + "' shape mismatch on copy");
    dst.values = src.values;
  }
}

bool ParamStore::operator==(const ParamStore& other) const {
  return order_ == other.order_ && tensors_ == other.tensors_;
}

std::size_t param_count(const ParamStore& store, std::span<const std::string> names) {
  std::size_t n = 0;
  for (const auto& name : names) n += store.at(name).numel();
  return n;
}

}  // namespace dbsfm
