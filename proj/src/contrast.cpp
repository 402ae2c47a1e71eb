#include "c2l/contrast.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace c2l {

template <typename T>
void require_unit_rows(const Tensor<T>& rows, double tol) {
  if (rows.rank() != 2) throw ShapeError("expected a [Z x D] feature matrix, got " + shape_str(rows.shape()));
  for (std::size_t r = 0; r < rows.dim(0); ++r) {
    double ss = 0;
    for (T v : rows.row(r)) ss += static_cast<double>(v) * v;
    if (std::abs(std::sqrt(ss) - 1.0) > tol) {
      throw NumericError("feature row " + std::to_string(r) + " has norm " + std::to_string(std::sqrt(ss)));
    }
  }
}

template <typename T>
MemoryQueue<T> MemoryQueue<T>::random(std::size_t capacity, std::size_t dim, const StreamKey& key) {
  if (capacity < 1) throw std::invalid_argument("memory queue capacity must be >= 1");
  if (dim < 2) throw std::invalid_argument("memory queue dimension must be >= 2");
  Tensor<T> raw({capacity, dim});
  RngStream rng(key);
  for (T& v : raw.data()) v = static_cast<T>(rng.normal());
  MemoryQueue q;
  q.storage_ = l2_normalize(raw);
  return q;
}

template <typename T>
MemoryQueue<T> MemoryQueue<T>::restore(Tensor<T> storage, std::size_t head, std::uint64_t inserted) {
  if (storage.rank() != 2) throw ShapeError("memory queue storage must be [N x D]");
  if (head >= storage.dim(0)) throw std::invalid_argument("memory queue head out of range");
  MemoryQueue q;
  q.storage_ = std::move(storage);
  q.head_ = head;
  q.inserted_ = inserted;
  return q;
}

template <typename T>
void MemoryQueue<T>::insert(const Tensor<T>& rows) {
  if (rows.rank() != 2 || rows.dim(1) != dim()) {
    throw ShapeError("queue insert: rows " + shape_str(rows.shape()) + " do not match queue dim " +
                     std::to_string(dim()));
  }
  if (rows.dim(0) > capacity()) {
    throw std::invalid_argument("queue insert: batch of " + std::to_string(rows.dim(0)) +
                                " exceeds capacity " + std::to_string(capacity()));
  }
  const std::size_t d = dim();
  for (std::size_t r = 0; r < rows.dim(0); ++r) {
    std::copy_n(rows.ptr() + r * d, d, storage_.ptr() + head_ * d);
    head_ = (head_ + 1) % capacity();
  }
  inserted_ += rows.dim(0);
}

template <typename T>
std::span<const T> MemoryQueue<T>::entry(std::size_t age) const {
  if (age >= capacity()) throw std::out_of_range("queue entry index out of range");
  return storage_.row((head_ + age) % capacity());
}

template <typename T>
Tensor<T> MemoryQueue<T>::newest(std::size_t n) const {
  if (n == 0 || n > capacity()) throw std::out_of_range("queue newest(n) out of range");
  Tensor<T> out({n, dim()});
  for (std::size_t i = 0; i < n; ++i) {
    auto src = entry(capacity() - n + i);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
std::vector<T> contrastive_logits(std::span<const T> anchor, std::span<const T> positive, const MemoryQueue<T>& queue,
                                  T tau) {
  if (!(tau > T(0))) throw std::invalid_argument("contrastive_logits: temperature must be positive");
  if (anchor.size() != queue.dim() || positive.size() != queue.dim()) {
    throw ShapeError("contrastive_logits: vector length does not match queue dimension");
  }
  auto dot = [](std::span<const T> a, std::span<const T> b) {
    T s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  std::vector<T> logits(queue.capacity() + 1);
  logits[0] = dot(anchor, positive) / tau;
  for (std::size_t k = 0; k < queue.capacity(); ++k) logits[k + 1] = dot(anchor, queue.storage().row(k)) / tau;
  return logits;
}

template <typename T>
T info_nce_loss(const Tensor<T>& logit_rows, Reduction reduction) {
  Tape<T> tape;
  Var<T> z = tape.constant(logit_rows);
  return info_nce_loss(z, reduction).value()[0];
}

template <typename T>
Var<T> info_nce_loss(const Var<T>& logit_rows, Reduction reduction) {
  if (logit_rows.shape().size() != 2) throw ShapeError("info_nce_loss: expected [Z x (N+1)] logits");
  std::vector<std::size_t> targets(logit_rows.shape()[0], 0);
  return softmax_cross_entropy(logit_rows, targets, reduction);
}

template <typename T>
double top1_index0(const Tensor<T>& logit_rows) {
  const std::size_t rows = logit_rows.dim(0);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = logit_rows.row(r);
    const T best_negative = *std::max_element(row.begin() + 1, row.end());
    if (row[0] > best_negative) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows);
}

template <typename T>
C2LLoss<T> c2l_loss(const Var<T>& v1a, const Var<T>& v1m, const FeatureBatch<T>& v2a, const FeatureBatch<T>& v2m,
                    const FeatureBatch<T>& vm, const MemoryQueue<T>& queue, const ContrastOptions& options,
                    const LossTerms& terms) {
  if (!(options.tau > 0.0)) throw std::invalid_argument("c2l_loss: temperature must be positive");
  const T tau = static_cast<T>(options.tau);
  auto check_teacher = [](const FeatureBatch<T>& f, Provenance expected, const char* name) {
    if (f.rows.requires_grad() || f.rows.has_grad()) {
      throw std::logic_error(std::string("c2l_loss: teacher features ") + name + " carry a gradient");
    }
    if (f.tag != expected) throw std::invalid_argument(std::string("c2l_loss: mislabelled feature batch ") + name);
  };

  C2LLoss<T> out;
  double top1_sum = 0.0;
  int sets = 0;
  auto term = [&](const Var<T>& anchor, const FeatureBatch<T>& positive) {
    Var<T> logits = contrastive_logits(anchor, positive.rows, queue.storage(), tau);
    top1_sum += top1_index0(logits.value());
    ++sets;
    return info_nce_loss(logits, options.reduction);
  };

  if (terms.augmented_pair) {
    check_teacher(v2a, Provenance::v2A, "v2A");
    out.loss_a = term(v1a, v2a);
    out.loss_a_value = static_cast<double>(out.loss_a.value()[0]);
  }
  if (terms.mixed_pair) {
    check_teacher(v2m, Provenance::v2M, "v2M");
    out.loss_m = term(v1m, v2m);
  }
  if (terms.feature_mixed_pair) {
    check_teacher(vm, Provenance::vm, "vm");
    Var<T> extra = term(v1m, vm);
    out.loss_m = out.loss_m.valid() ? add(out.loss_m, extra) : extra;
  }
  if (out.loss_m.valid()) out.loss_m_value = static_cast<double>(out.loss_m.value()[0]);
  if (sets == 0) throw std::invalid_argument("c2l_loss: no loss term enabled");

  if (out.loss_a.valid() && out.loss_m.valid()) {
    out.total = add(out.loss_a, out.loss_m);
  } else {
    out.total = out.loss_a.valid() ? out.loss_a : out.loss_m;
  }
  out.top1 = top1_sum / sets;
  return out;
}

#define C2L_INSTANTIATE_CONTRAST(T)                                                                          \
  template void require_unit_rows(const Tensor<T>&, double);                                                 \
  template class MemoryQueue<T>;                                                                             \
  template std::vector<T> contrastive_logits(std::span<const T>, std::span<const T>, const MemoryQueue<T>&, T); \
  template T info_nce_loss(const Tensor<T>&, Reduction);                                                     \
  template Var<T> info_nce_loss(const Var<T>&, Reduction);                                                   \
  template double top1_index0(const Tensor<T>&);                                                             \
  template C2LLoss<T> c2l_loss(const Var<T>&, const Var<T>&, const FeatureBatch<T>&, const FeatureBatch<T>&, \
                               const FeatureBatch<T>&, const MemoryQueue<T>&, const ContrastOptions&,        \
                               const LossTerms&);

C2L_INSTANTIATE_CONTRAST(float)
C2L_INSTANTIATE_CONTRAST(double)

}  // namespace c2l
