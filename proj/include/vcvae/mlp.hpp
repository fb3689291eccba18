#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vcvae/rng.hpp"
#include "vcvae/tensor.hpp"

namespace vcvae {

enum class Activation { kIdentity, kTanh, kRelu, kSoftplus };

std::string activation_name(Activation act);
Activation parse_activation(const std::string& name);

double softplus(double x);
double apply_activation(Activation act, double pre);

struct Layer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
  Activation activation = Activation::kIdentity;
};

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<Layer> layers);

  // widths = {in, h1, ..., out}. Weights ~ N(0, 2 / (fan_in + fan_out)), biases 0.
  static Mlp initialize(std::span<const std::size_t> widths, Activation hidden,
                        Activation output, Rng& rng);

  bool empty() const noexcept { return layers_.empty(); }
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  // Parameters in the order W0, b0, W1, b1, ...
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;

 private:
  std::vector<Layer> layers_;
};

// Intermediates of one forward pass.
struct GradientTape {
  std::vector<Tensor> inputs;    // input to each layer
  std::vector<Tensor> pre_acts;  // affine output of each layer
  Tensor output;
};

struct ForwardResult {
  Tensor output;
  GradientTape tape;
};

struct BackwardResult {
  std::vector<Tensor> param_grads;  // aligned with Mlp::parameters()
  Tensor input_grad;
};

ForwardResult forward(const Mlp& net, const Tensor& x);
// Forward pass without recording intermediates.
Tensor predict(const Mlp& net, const Tensor& x);
BackwardResult backward(const Mlp& net, const GradientTape& tape, const Tensor& output_grad);

}  // namespace vcvae
