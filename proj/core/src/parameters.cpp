#include "sard/parameters.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sard/errors.hpp"

namespace sard {

using nlohmann::json;

std::size_t ParameterSet::add(std::string name, std::vector<std::size_t> shape) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name " + name);
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  tensors_.push_back({std::move(name), std::move(shape), std::vector<double>(n, 0.0)});
  return tensors_.size() - 1;
}

std::size_t ParameterSet::total_size() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return i;
  }
  return std::nullopt;
}

Tensor& ParameterSet::at(std::string_view name) {
  auto i = find(name);
  if (!i) throw std::out_of_range("no parameter named " + std::string(name));
  return tensors_[*i];
}

const Tensor& ParameterSet::at(std::string_view name) const {
  auto i = find(name);
  if (!i) throw std::out_of_range("no parameter named " + std::string(name));
  return tensors_[*i];
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out = *this;
  out.fill(0.0);
  return out;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name != other.tensors_[i].name || tensors_[i].shape != other.tensors_[i].shape) {
      return false;
    }
  }
  return true;
}

void ParameterSet::fill(double v) {
  for (auto& t : tensors_) std::fill(t.values.begin(), t.values.end(), v);
}

void ParameterSet::scale(double factor) {
  for (auto& t : tensors_) {
    for (auto& v : t.values) v *= factor;
  }
}

void ParameterSet::add_scaled(const ParameterSet& other, double factor) {
  if (!same_layout(other)) throw std::invalid_argument("parameter layouts differ");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto& a = tensors_[i].values;
    const auto& b = other.tensors_[i].values;
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += factor * b[k];
  }
}

bool ParameterSet::all_finite() const {
  for (const auto& t : tensors_) {
    for (double v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

double ParameterSet::max_abs() const {
  double m = 0.0;
  for (const auto& t : tensors_) {
    for (double v : t.values) m = std::max(m, std::abs(v));
  }
  return m;
}

namespace {

// Doubles are stored as 16-digit hex bit patterns so reloads are bit-exact,
// including signed zeros.
std::string encode_bits(double v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
  return buf;
}

double decode_bits(const std::string& s) {
  if (s.size() != 16) throw DataError("bad encoded double '" + s + "'");
  std::uint64_t bits = 0;
  for (char c : s) {
    bits <<= 4;
    if (c >= '0' && c <= '9') bits |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') bits |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw DataError("bad encoded double '" + s + "'");
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

json parameters_to_json(const ParameterSet& params) {
  json arr = json::array();
  for (const auto& t : params) {
    json bits = json::array();
    for (double v : t.values) bits.push_back(encode_bits(v));
    arr.push_back({{"name", t.name}, {"shape", t.shape}, {"bits", std::move(bits)}});
  }
  return arr;
}

ParameterSet parameters_from_json(const json& j) {
  ParameterSet out;
  try {
    for (const auto& jt : j) {
      const auto idx = out.add(jt.at("name").get<std::string>(),
                               jt.at("shape").get<std::vector<std::size_t>>());
      auto& t = out[idx];
      const auto& bits = jt.at("bits");
      if (bits.size() != t.size()) throw DataError("tensor " + t.name + " has the wrong element count");
      for (std::size_t k = 0; k < t.size(); ++k) t.values[k] = decode_bits(bits[k].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed parameter tensors: ") + e.what());
  }
  return out;
}

}  // namespace sard
