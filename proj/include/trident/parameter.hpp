#pragma once

#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "trident/tensor.hpp"

namespace trident {

/// A named weight stored once and referenced by every site that uses it.
/// Gradients from all uses accumulate into the single value buffer.
class SharedParameter {
 public:
  SharedParameter(std::string name, Tensor value) : name_(std::move(name)), value_(std::move(value)) {
    require(!name_.empty(), "parameter name must not be empty");
    require(value_.is_leaf(), "parameter '", name_, "' must wrap a leaf tensor");
    value_.node().requires_grad = true;
  }

  const std::string& name() const { return name_; }
  const Tensor& value() const { return value_; }
  Tensor& value() { return value_; }
  const Dims& dims() const { return value_.dims(); }
  std::size_t numel() const { return value_.numel(); }

  // Hands out the shared leaf for one forward reference.
  const Tensor& use() {
    ++use_count_;
    return value_;
  }
  std::size_t use_count() const { return use_count_.load(); }

  void zero_grad() {
    value_.zero_grad();
    use_count_ = 0;
  }

  std::vector<Real>& momentum_buffer() { return momentum_; }

 private:
  std::string name_;
  Tensor value_;
  std::atomic<std::size_t> use_count_{0};
  std::vector<Real> momentum_;
};

/// Owns the parameters of a model in creation order. Names are unique.
class ParameterStore {
 public:
  SharedParameter& create(const std::string& name, Dims dims, std::vector<Real> values) {
    require(!index_.count(name), "duplicate parameter name '", name, "'");
    index_[name] = params_.size();
    params_.push_back(std::make_unique<SharedParameter>(name, Tensor(std::move(dims), std::move(values))));
    return *params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  SharedParameter& get(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter '", name, "'");
    return *params_[it->second];
  }
  const SharedParameter& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter '", name, "'");
    return *params_[it->second];
  }

  std::size_t size() const { return params_.size(); }
  SharedParameter& operator[](std::size_t i) { return *params_[i]; }
  const SharedParameter& operator[](std::size_t i) const { return *params_[i]; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& p : params_) out.push_back(p->name());
    return out;
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->numel();
    return n;
  }

  std::vector<SharedParameter*> all() {
    std::vector<SharedParameter*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<SharedParameter>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Initializer shared by every module: He-normal weights scaled by `gain`,
/// zero biases, drawn in parameter-creation order from one seeded stream.
class ParameterInit {
 public:
  ParameterInit(ParameterStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  void operator()(const std::string& name, const Dims& dims, std::size_t fan_in, Real gain = 1.0) {
    std::vector<Real> values(product(dims), 0.0);
    if (fan_in > 0) normal(values, gain * std::sqrt(2.0 / static_cast<Real>(fan_in)));
    store_.create(name, dims, std::move(values));
  }

  void with_std(const std::string& name, const Dims& dims, Real stddev) {
    std::vector<Real> values(product(dims), 0.0);
    normal(values, stddev);
    store_.create(name, dims, std::move(values));
  }

 private:
  void normal(std::vector<Real>& values, Real stddev) {
    std::normal_distribution<Real> dist(0.0, stddev);
    for (auto& v : values) v = dist(rng_);
  }

  ParameterStore& store_;
  std::mt19937_64 rng_;
};

/// SGD with heavy-ball momentum and L2 weight decay:
///   v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v
/// The first step seeds v with the raw update. Grads are zeroed afterwards.
inline void sgd_step(const std::vector<SharedParameter*>& params, Real lr, Real momentum = 0.0,
                     Real weight_decay = 0.0) {
  require(lr > 0.0, "sgd_step: learning rate must be positive, got ", lr);
  require(momentum >= 0.0, "sgd_step: momentum must be non-negative");
  for (auto* p : params) {
    require(p->value().has_grad(), "sgd_step: parameter '", p->name(), "' has no gradient");
  }
  for (auto* p : params) {
    auto w = p->value().mutable_data();
    auto g = p->value().grad();
    auto& v = p->momentum_buffer();
    bool first = v.empty();
    if (first) v.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      Real d = g[i] + weight_decay * w[i];
      v[i] = (first || momentum == 0.0) ? d : momentum * v[i] + d;
      w[i] -= lr * v[i];
    }
    p->zero_grad();
  }
}

inline void sgd_step(ParameterStore& store, Real lr, Real momentum = 0.0, Real weight_decay = 0.0) {
  sgd_step(store.all(), lr, momentum, weight_decay);
}

}  // namespace trident
