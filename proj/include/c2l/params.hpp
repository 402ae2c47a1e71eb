#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "c2l/tensor.hpp"

namespace c2l {

enum class Role { student, teacher };

inline std::string_view role_name(Role r) { return r == Role::student ? "student" : "teacher"; }

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

// Ordered, named parameter tensors of one encoder instance.
template <typename T>
struct NetworkParams {
  Role role = Role::student;
  std::vector<Parameter<T>> entries;

  std::size_t size() const { return entries.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : entries) n += p.tensor.size();
    return n;
  }

  const Tensor<T>& at(std::string_view name) const {
    for (const auto& p : entries) {
      if (p.name == name) return p.tensor;
    }
    throw std::out_of_range("no parameter named " + std::string(name));
  }
  Tensor<T>& at(std::string_view name) {
    return const_cast<Tensor<T>&>(static_cast<const NetworkParams&>(*this).at(name));
  }

  // Same names, shapes and ordering.
  bool same_layout(const NetworkParams& other) const {
    if (entries.size() != other.entries.size()) return false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].name != other.entries[i].name) return false;
      if (entries[i].tensor.shape() != other.entries[i].tensor.shape()) return false;
    }
    return true;
  }

  void clear_grads() {
    for (auto& p : entries) p.tensor.clear_grad();
  }

  template <typename U>
  NetworkParams<U> cast() const {
    NetworkParams<U> out;
    out.role = role;
    for (const auto& p : entries) {
      Tensor<U> t = p.tensor.template cast<U>();
      t.set_requires_grad(p.tensor.requires_grad());
      out.entries.push_back({p.name, std::move(t)});
    }
    return out;
  }

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    if (a.role != b.role || a.entries.size() != b.entries.size()) return false;
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
      if (a.entries[i].name != b.entries[i].name || !(a.entries[i].tensor == b.entries[i].tensor)) return false;
    }
    return true;
  }
};

/// Deep copy with the given role. Teacher copies never require gradients;
/// student copies require them on every tensor.
template <typename T>
NetworkParams<T> clone_params(const NetworkParams<T>& src, Role role) {
  NetworkParams<T> out;
  out.role = role;
  out.entries.reserve(src.entries.size());
  for (const auto& p : src.entries) {
    Tensor<T> t(p.tensor.shape(), AlignedVector<T>(p.tensor.data().begin(), p.tensor.data().end()));
    t.set_requires_grad(role == Role::student);
    out.entries.push_back({p.name, std::move(t)});
  }
  return out;
}

/// Plain SGD with L2 weight decay: p <- p - lr * (grad + wd * p).
/// Every trainable tensor must carry a gradient; gradients are cleared after.
template <typename T>
void sgd_step(NetworkParams<T>& params, double lr, double weight_decay) {
  for (const auto& p : params.entries) {
    if (p.tensor.requires_grad() && !p.tensor.has_grad()) {
      throw std::logic_error("sgd_step: parameter " + p.name + " has no gradient");
    }
  }
  const T step = static_cast<T>(lr), decay = static_cast<T>(weight_decay);
  for (auto& p : params.entries) {
    if (!p.tensor.requires_grad()) continue;
    auto d = p.tensor.data();
    auto g = p.tensor.grad();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= step * (g[i] + decay * d[i]);
    p.tensor.clear_grad();
  }
}

/// Heavy-ball variant: v <- m v + (grad + wd p); p <- p - lr v. `velocity`
/// must share the layout of `params`.
template <typename T>
void sgd_momentum_step(NetworkParams<T>& params, NetworkParams<T>& velocity, double lr, double weight_decay,
                       double momentum) {
  if (!params.same_layout(velocity)) throw std::invalid_argument("sgd_momentum_step: velocity layout mismatch");
  for (const auto& p : params.entries) {
    if (p.tensor.requires_grad() && !p.tensor.has_grad()) {
      throw std::logic_error("sgd_momentum_step: parameter " + p.name + " has no gradient");
    }
  }
  const T step = static_cast<T>(lr), decay = static_cast<T>(weight_decay), mom = static_cast<T>(momentum);
  for (std::size_t k = 0; k < params.entries.size(); ++k) {
    auto& p = params.entries[k].tensor;
    if (!p.requires_grad()) continue;
    auto d = p.data();
    auto g = p.grad();
    auto v = velocity.entries[k].tensor.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      v[i] = mom * v[i] + g[i] + decay * d[i];
      d[i] -= step * v[i];
    }
    p.clear_grad();
  }
}

}  // namespace c2l
