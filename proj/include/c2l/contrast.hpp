#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "c2l/ops.hpp"
#include "c2l/rng.hpp"
#include "c2l/tape.hpp"
#include "c2l/tensor.hpp"

namespace c2l {

// Which of the five per-iteration feature sets a batch holds.
enum class Provenance { v1A, v1M, v2A, v2M, vm };

template <typename T>
struct FeatureBatch {
  Tensor<T> rows;  // [Z x D], unit-norm rows
  Provenance tag = Provenance::v2A;

  std::size_t size() const { return rows.dim(0); }
};

inline constexpr double kUnitNormTolerance = 1e-5;

/// Throws NumericError if any row of `rows` is not unit-norm within `tol`.
template <typename T>
void require_unit_rows(const Tensor<T>& rows, double tol = kUnitNormTolerance);

// Fixed-capacity FIFO of past feature vectors stored as a ring buffer.
// Slot k of storage() is what negative logit k+1 is computed against; the
// slot at head() holds the oldest entry.
template <typename T>
class MemoryQueue {
 public:
  MemoryQueue() = default;

  /// N standard-normal vectors, each scaled to unit length.
  static MemoryQueue random(std::size_t capacity, std::size_t dim, const StreamKey& key);

  /// Rebuilds a queue from checkpointed state.
  static MemoryQueue restore(Tensor<T> storage, std::size_t head, std::uint64_t inserted);

  std::size_t capacity() const { return storage_.dim(0); }
  std::size_t dim() const { return storage_.dim(1); }
  std::size_t head() const { return head_; }
  std::uint64_t inserted() const { return inserted_; }
  const Tensor<T>& storage() const { return storage_; }

  /// Appends rows in order, evicting as many of the oldest entries.
  void insert(const Tensor<T>& rows);
  void insert(const FeatureBatch<T>& batch) { insert(batch.rows); }

  /// Entry by age: 0 is the oldest, capacity()-1 the newest.
  std::span<const T> entry(std::size_t age) const;

  /// The n newest entries, oldest of them first.
  Tensor<T> newest(std::size_t n) const;

  friend bool operator==(const MemoryQueue&, const MemoryQueue&) = default;

 private:
  Tensor<T> storage_;
  std::size_t head_ = 0;
  std::uint64_t inserted_ = 0;
};

/// [anchor . positive, anchor . q_1, ..., anchor . q_N] / tau.
template <typename T>
std::vector<T> contrastive_logits(std::span<const T> anchor, std::span<const T> positive, const MemoryQueue<T>& queue,
                                  T tau);

/// Softmax cross-entropy with target index 0 for every row of [Z x (N+1)].
template <typename T>
T info_nce_loss(const Tensor<T>& logit_rows, Reduction reduction = Reduction::mean);

template <typename T>
Var<T> info_nce_loss(const Var<T>& logit_rows, Reduction reduction = Reduction::mean);

/// Fraction of rows whose index-0 logit is strictly the largest.
template <typename T>
double top1_index0(const Tensor<T>& logit_rows);

struct ContrastOptions {
  double tau = 0.2;
  Reduction reduction = Reduction::mean;
};

// Which cross-entropy sets contribute. The default is the complete method:
// (v1A, v2A) in loss_A, (v1M, v2M) and (v1M, vm) in loss_M.
struct LossTerms {
  bool augmented_pair = true;
  bool mixed_pair = true;
  bool feature_mixed_pair = true;
};

template <typename T>
struct C2LLoss {
  Var<T> loss_a;  // invalid when the term is disabled
  Var<T> loss_m;
  Var<T> total;
  double loss_a_value = 0.0;
  double loss_m_value = 0.0;
  double top1 = 0.0;  // averaged over the sets that were computed
};

/// Student features v1A / v1M are tape variables; teacher-side batches must
/// not require gradients. Inputs belonging to disabled terms may be empty.
template <typename T>
C2LLoss<T> c2l_loss(const Var<T>& v1a, const Var<T>& v1m, const FeatureBatch<T>& v2a, const FeatureBatch<T>& v2m,
                    const FeatureBatch<T>& vm, const MemoryQueue<T>& queue, const ContrastOptions& options,
                    const LossTerms& terms = {});

}  // namespace c2l
