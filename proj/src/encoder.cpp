#include "c2l/encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "c2l/rng.hpp"

namespace c2l {

void EncoderConfig::validate() const {
  if (channels.empty()) throw std::invalid_argument("encoder: at least one stage is required");
  if (feature_dim < 2) throw std::invalid_argument("encoder: feature_dim must be >= 2");
  const std::size_t factor = std::size_t{1} << channels.size();
  if (height % factor != 0 || width % factor != 0) {
    throw std::invalid_argument("encoder: input " + std::to_string(height) + "x" + std::to_string(width) +
                                " is not divisible by 2^" + std::to_string(channels.size()));
  }
  if (height / factor < 1 || width / factor < 1) throw std::invalid_argument("encoder: input too small");
  for (std::size_t c : channels) {
    if (c == 0) throw std::invalid_argument("encoder: stage width must be positive");
    if (normalization == Normalization::group_norm && (groups == 0 || c % groups != 0)) {
      throw std::invalid_argument("encoder: stage width " + std::to_string(c) + " not divisible by " +
                                  std::to_string(groups) + " groups");
    }
  }
}

template <typename T>
NetworkParams<T> init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  NetworkParams<T> params;
  params.role = Role::student;
  std::uint64_t index = 0;
  auto he = [&](Shape shape, std::size_t fan_in) {
    RngStream rng({seed, 0, stream::kInit, index++, 0});
    Tensor<T> t(std::move(shape));
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (T& v : t.data()) v = static_cast<T>(sd * rng.normal());
    return t;
  };
  auto constant = [&](std::size_t n, T value) {
    ++index;
    return Tensor<T>({n}, value);
  };

  std::size_t in = 1;
  for (std::size_t s = 0; s < config.channels.size(); ++s) {
    const std::size_t out = config.channels[s];
    const std::string prefix = "stage" + std::to_string(s) + ".";
    params.entries.push_back({prefix + "conv.weight", he({out, in, 3, 3}, in * 9)});
    params.entries.push_back({prefix + "conv.bias", constant(out, T(0))});
    if (config.normalization == Normalization::group_norm) {
      params.entries.push_back({prefix + "norm.gamma", constant(out, T(1))});
      params.entries.push_back({prefix + "norm.beta", constant(out, T(0))});
    }
    in = out;
  }
  params.entries.push_back({"head.weight", he({config.feature_dim, in}, in)});
  params.entries.push_back({"head.bias", constant(config.feature_dim, T(0))});
  for (auto& p : params.entries) p.tensor.set_requires_grad(true);
  return params;
}

namespace {

template <typename T>
void check_images(const EncoderConfig& config, const Tensor<T>& images) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != config.height || s[3] != config.width) {
    throw ShapeError("encoder: expected images [Z x 1 x " + std::to_string(config.height) + " x " +
                     std::to_string(config.width) + "], got " + shape_str(s));
  }
}

// Shared body; `bind` turns a parameter index into a tape leaf.
template <typename T, typename Bind>
EncoderOutput<T> forward_impl(Tape<T>& tape, const EncoderConfig& config, const Tensor<T>& images, Bind bind) {
  config.validate();
  check_images(config, images);
  Var<T> x = tape.constant(images);
  std::size_t k = 0;
  for (std::size_t s = 0; s < config.channels.size(); ++s) {
    Var<T> w = bind(k++);
    Var<T> b = bind(k++);
    x = conv2d(x, w, b, ConvSpec{1, 1});
    if (config.normalization == Normalization::group_norm) {
      Var<T> gamma = bind(k++);
      Var<T> beta = bind(k++);
      x = group_norm(x, gamma, beta, config.groups);
    }
    x = max_pool_2x2(relu(x));
  }
  Var<T> pooled = global_avg_pool(x);
  Var<T> hw = bind(k++);
  Var<T> hb = bind(k++);
  Var<T> feats = l2_normalize(linear(pooled, hw, hb));
  return {pooled, feats};
}

template <typename T>
void check_layout(const NetworkParams<T>& params, const EncoderConfig& config) {
  const std::size_t expected =
      config.channels.size() * (config.normalization == Normalization::group_norm ? 4 : 2) + 2;
  if (params.size() != expected) {
    throw std::invalid_argument("encoder: parameter set has " + std::to_string(params.size()) +
                                " tensors, config expects " + std::to_string(expected));
  }
}

}  // namespace

template <typename T>
EncoderOutput<T> encoder_forward(Tape<T>& tape, NetworkParams<T>& params, const EncoderConfig& config,
                                 const Tensor<T>& images) {
  check_layout(params, config);
  return forward_impl<T>(tape, config, images,
                         [&](std::size_t i) { return tape.parameter(params.entries[i].tensor); });
}

template <typename T>
Tensor<T> encode(const NetworkParams<T>& params, const EncoderConfig& config, const Tensor<T>& images) {
  check_layout(params, config);
  Tape<T> tape;
  auto out = forward_impl<T>(tape, config, images,
                             [&](std::size_t i) { return tape.constant(params.entries[i].tensor); });
  return out.features.value();
}

template <typename T>
Tensor<T> encode_backbone(const NetworkParams<T>& params, const EncoderConfig& config, const Tensor<T>& images) {
  check_layout(params, config);
  Tape<T> tape;
  auto out = forward_impl<T>(tape, config, images,
                             [&](std::size_t i) { return tape.constant(params.entries[i].tensor); });
  return out.backbone.value();
}

template NetworkParams<float> init_params<float>(const EncoderConfig&, std::uint64_t);
template NetworkParams<double> init_params<double>(const EncoderConfig&, std::uint64_t);
template EncoderOutput<float> encoder_forward(Tape<float>&, NetworkParams<float>&, const EncoderConfig&,
                                              const Tensor<float>&);
template EncoderOutput<double> encoder_forward(Tape<double>&, NetworkParams<double>&, const EncoderConfig&,
                                               const Tensor<double>&);
template Tensor<float> encode(const NetworkParams<float>&, const EncoderConfig&, const Tensor<float>&);
template Tensor<double> encode(const NetworkParams<double>&, const EncoderConfig&, const Tensor<double>&);
template Tensor<float> encode_backbone(const NetworkParams<float>&, const EncoderConfig&, const Tensor<float>&);
template Tensor<double> encode_backbone(const NetworkParams<double>&, const EncoderConfig&, const Tensor<double>&);

}  // namespace c2l
