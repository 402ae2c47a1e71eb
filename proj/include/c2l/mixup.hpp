#pragma once

#include <cstddef>
#include <vector>

#include "c2l/augment.hpp"
#include "c2l/rng.hpp"
#include "c2l/tensor.hpp"

namespace c2l {

// One mixing factor and one shuffle, shared by both augmented batches of an
// iteration and by the feature mixup of the teacher's outputs.
struct MixSpec {
  double lambda = 1.0;
  std::vector<std::size_t> perm;

  /// Throws unless perm is a bijection on 0..z-1 and lambda lies in [0, 1].
  void validate(std::size_t z) const;
};

/// lambda ~ Beta(1, 1), i.e. Uniform(0, 1); perm uniform over all z!
/// permutations, fixed points allowed. Requires z >= 2.
MixSpec sample_mixspec(std::size_t z, RngStream& rng);

/// out[j] = lambda * in[j] + (1 - lambda) * in[perm[j]].
ImageBatch batch_mixup(const ImageBatch& batch, const MixSpec& spec);

/// Row-wise mixing with the batch formula, each mixed row rescaled to unit
/// length.
template <typename T>
Tensor<T> feature_mixup(const Tensor<T>& features, const MixSpec& spec);

// Classic per-pair mixup: an independent lambda for every sample.
struct PairwiseMixSpec {
  std::vector<double> lambdas;
  std::vector<std::size_t> perm;
};

PairwiseMixSpec sample_pairwise_mixspec(std::size_t z, RngStream& rng);

ImageBatch pairwise_mixup(const ImageBatch& batch, const PairwiseMixSpec& spec);

}  // namespace c2l
