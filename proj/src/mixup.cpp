#include "c2l/mixup.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "c2l/ops.hpp"

namespace c2l {

void MixSpec::validate(std::size_t z) const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("mixup: lambda outside [0, 1]");
  if (perm.size() != z) {
    throw std::invalid_argument("mixup: permutation of length " + std::to_string(perm.size()) +
                                " for batch of " + std::to_string(z));
  }
  std::vector<bool> seen(z, false);
  for (std::size_t p : perm) {
    if (p >= z || seen[p]) throw std::invalid_argument("mixup: permutation is not a bijection");
    seen[p] = true;
  }
}

MixSpec sample_mixspec(std::size_t z, RngStream& rng) {
  if (z < 2) throw std::invalid_argument("mixup needs a batch of at least 2 samples");
  MixSpec spec;
  spec.lambda = rng.uniform();
  spec.perm = rng.permutation(z);
  return spec;
}

namespace {

ImageBatch mix_rows(const ImageBatch& batch, const std::vector<std::size_t>& perm, auto lambda_of) {
  const std::size_t n = batch.image_size();
  Tensor<float> out(batch.pixels().shape());
  const float* src = batch.pixels().ptr();
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const double lam = lambda_of(j);
    const float* a = src + j * n;
    const float* b = src + perm[j] * n;
    float* dst = out.ptr() + j * n;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = lam * a[i] + (1.0 - lam) * b[i];
      // Convex combination of [0,1] values; clamp only guards rounding.
      dst[i] = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
    }
  }
  return ImageBatch(std::move(out));
}

}  // namespace

ImageBatch batch_mixup(const ImageBatch& batch, const MixSpec& spec) {
  spec.validate(batch.size());
  return mix_rows(batch, spec.perm, [&](std::size_t) { return spec.lambda; });
}

template <typename T>
Tensor<T> feature_mixup(const Tensor<T>& features, const MixSpec& spec) {
  if (features.rank() != 2) throw ShapeError("feature_mixup: expected [Z x D], got " + shape_str(features.shape()));
  spec.validate(features.dim(0));
  const std::size_t z = features.dim(0), d = features.dim(1);
  Tensor<T> mixed(features.shape());
  const T lam = static_cast<T>(spec.lambda);
  for (std::size_t j = 0; j < z; ++j) {
    auto a = features.row(j);
    auto b = features.row(spec.perm[j]);
    auto dst = mixed.row(j);
    for (std::size_t i = 0; i < d; ++i) dst[i] = lam * a[i] + (T(1) - lam) * b[i];
  }
  return l2_normalize(mixed);
}

PairwiseMixSpec sample_pairwise_mixspec(std::size_t z, RngStream& rng) {
  if (z < 2) throw std::invalid_argument("mixup needs a batch of at least 2 samples");
  PairwiseMixSpec spec;
  spec.lambdas.resize(z);
  for (double& l : spec.lambdas) l = rng.uniform();
  spec.perm = rng.permutation(z);
  return spec;
}

ImageBatch pairwise_mixup(const ImageBatch& batch, const PairwiseMixSpec& spec) {
  MixSpec check{0.5, spec.perm};
  check.validate(batch.size());
  if (spec.lambdas.size() != batch.size()) throw std::invalid_argument("pairwise_mixup: lambda count mismatch");
  return mix_rows(batch, spec.perm, [&](std::size_t j) { return spec.lambdas[j]; });
}

template Tensor<float> feature_mixup(const Tensor<float>&, const MixSpec&);
template Tensor<double> feature_mixup(const Tensor<double>&, const MixSpec&);

}  // namespace c2l
