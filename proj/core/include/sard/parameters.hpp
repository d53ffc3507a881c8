#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace sard {

/// Named, shaped block of parameters (row-major).
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Ordered collection of tensors. Also used for gradients and optimizer moments.
class ParameterSet {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape);

  std::size_t count() const noexcept { return tensors_.size(); }
  std::size_t total_size() const noexcept;

  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  std::optional<std::size_t> find(std::string_view name) const;

  auto begin() noexcept { return tensors_.begin(); }
  auto end() noexcept { return tensors_.end(); }
  auto begin() const noexcept { return tensors_.begin(); }
  auto end() const noexcept { return tensors_.end(); }

  /// Same names and shapes, all values zero.
  ParameterSet zeros_like() const;
  bool same_layout(const ParameterSet& other) const;

  void fill(double v);
  void scale(double factor);
  /// this += factor * other
  void add_scaled(const ParameterSet& other, double factor);
  bool all_finite() const;
  double max_abs() const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<Tensor> tensors_;
};

nlohmann::json parameters_to_json(const ParameterSet& params);
ParameterSet parameters_from_json(const nlohmann::json& j);

}  // namespace sard
