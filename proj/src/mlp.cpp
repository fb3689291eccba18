#include "vcvae/mlp.hpp"

#include <cmath>

#include "vcvae/error.hpp"
#include "vcvae/linalg.hpp"

namespace vcvae {

std::string activation_name(Activation act) {
  switch (act) {
    case Activation::kIdentity: return "identity";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kSoftplus: return "softplus";
  }
  return "identity";
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "softplus") return Activation::kSoftplus;
  throw InvalidArgument("unknown activation '" + name + "'");
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double apply_activation(Activation act, double pre) {
  switch (act) {
    case Activation::kIdentity: return pre;
    case Activation::kTanh: return std::tanh(pre);
    case Activation::kRelu: return pre > 0.0 ? pre : 0.0;
    case Activation::kSoftplus: return softplus(pre);
  }
  return pre;
}

namespace {

double activation_slope(Activation act, double pre, double post) {
  switch (act) {
    case Activation::kIdentity: return 1.0;
    case Activation::kTanh: return 1.0 - post * post;
    case Activation::kRelu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::kSoftplus: return 1.0 / (1.0 + std::exp(-pre));
  }
  return 1.0;
}

Tensor affine(const Layer& layer, const Tensor& x) {
  Tensor pre = matmul(x, layer.weight);
  const std::size_t out = pre.cols();
  for (std::size_t r = 0; r < pre.rows(); ++r) {
    auto row = pre.row(r);
    for (std::size_t c = 0; c < out; ++c) row[c] += layer.bias[c];
  }
  return pre;
}

Tensor activate(Activation act, const Tensor& pre) {
  if (act == Activation::kIdentity) return pre;
  Tensor post = pre;
  for (auto& v : post.values()) v = apply_activation(act, v);
  return post;
}

void check_input(const Mlp& net, const Tensor& x) {
  if (net.empty()) throw InvalidArgument("forward on an empty network");
  if (x.rank() != 2 || x.cols() != net.input_dim()) {
    throw DimensionError("mlp input " + shape_string(x.shape()) +
                         " does not match input width " +
                         std::to_string(net.input_dim()));
  }
}

}  // namespace

Mlp::Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.weight.cols()) {
      throw DimensionError("layer " + std::to_string(i) + " has weight " +
                           shape_string(l.weight.shape()) + " and bias " +
                           shape_string(l.bias.shape()));
    }
    if (i > 0 && layers_[i - 1].weight.cols() != l.weight.rows()) {
      throw DimensionError("layer " + std::to_string(i) + " input width " +
                           std::to_string(l.weight.rows()) +
                           " does not chain with previous output width " +
                           std::to_string(layers_[i - 1].weight.cols()));
    }
  }
}

Mlp Mlp::initialize(std::span<const std::size_t> widths, Activation hidden,
                    Activation output, Rng& rng) {
  if (widths.size() < 2) throw InvalidArgument("an mlp needs at least two widths");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t fan_in = widths[i], fan_out = widths[i + 1];
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    Layer layer{sample_standard_normal(rng, {fan_in, fan_out}), Tensor({fan_out}),
                i + 2 == widths.size() ? output : hidden};
    for (auto& w : layer.weight.values()) w *= stddev;
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(layers));
}

std::size_t Mlp::input_dim() const { return layers_.front().weight.rows(); }
std::size_t Mlp::output_dim() const { return layers_.back().weight.cols(); }

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Tensor*> Mlp::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

ForwardResult forward(const Mlp& net, const Tensor& x) {
  check_input(net, x);
  ForwardResult result;
  Tensor h = x;
  for (const Layer& layer : net.layers()) {
    Tensor pre = affine(layer, h);
    Tensor post = activate(layer.activation, pre);
    result.tape.inputs.push_back(std::move(h));
    result.tape.pre_acts.push_back(std::move(pre));
    h = std::move(post);
  }
  result.tape.output = h;
  result.output = std::move(h);
  return result;
}

Tensor predict(const Mlp& net, const Tensor& x) {
  check_input(net, x);
  Tensor h = x;
  for (const Layer& layer : net.layers()) h = activate(layer.activation, affine(layer, h));
  return h;
}

BackwardResult backward(const Mlp& net, const GradientTape& tape, const Tensor& output_grad) {
  const auto& layers = net.layers();
  if (tape.inputs.size() != layers.size() || tape.pre_acts.size() != layers.size()) {
    throw InvalidArgument("gradient tape does not belong to this network (layer count)");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (tape.inputs[i].rank() != 2 || tape.inputs[i].cols() != layers[i].weight.rows() ||
        tape.pre_acts[i].cols() != layers[i].weight.cols() ||
        tape.pre_acts[i].rows() != tape.inputs[i].rows()) {
      throw InvalidArgument("gradient tape does not match layer " + std::to_string(i));
    }
  }
  if (output_grad.shape() != tape.output.shape()) {
    throw DimensionError("output gradient " + shape_string(output_grad.shape()) +
                         " does not match forward output " +
                         shape_string(tape.output.shape()));
  }

  BackwardResult result;
  result.param_grads.resize(2 * layers.size());
  Tensor grad = output_grad;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Layer& layer = layers[li];
    const Tensor& pre = tape.pre_acts[li];
    const Tensor& post = li + 1 < layers.size() ? tape.inputs[li + 1] : tape.output;
    if (layer.activation != Activation::kIdentity) {
      for (std::size_t i = 0; i < grad.size(); ++i) {
        grad[i] *= activation_slope(layer.activation, pre[i], post[i]);
      }
    }
    result.param_grads[2 * li] = matmul_tn(tape.inputs[li], grad);
    Tensor bias_grad({grad.cols()});
    for (std::size_t r = 0; r < grad.rows(); ++r) {
      auto row = grad.row(r);
      for (std::size_t c = 0; c < grad.cols(); ++c) bias_grad[c] += row[c];
    }
    result.param_grads[2 * li + 1] = std::move(bias_grad);
    grad = matmul_nt(grad, layer.weight);
  }
  result.input_grad = std::move(grad);
  return result;
}

}  // namespace vcvae
