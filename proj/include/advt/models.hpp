#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "advt/errors.hpp"
#include "advt/nn.hpp"
#include "advt/ops.hpp"

namespace advt {

enum class Architecture { kLinear, kMlp, kSmallCnn };

inline std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::kLinear: return "linear";
    case Architecture::kMlp: return "mlp";
    case Architecture::kSmallCnn: return "cnn";
  }
  return "?";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "linear") return Architecture::kLinear;
  if (s == "mlp") return Architecture::kMlp;
  if (s == "cnn") return Architecture::kSmallCnn;
  throw ConfigError("unknown architecture '" + s + "' (expected linear, mlp or cnn)");
}

/// Architecture descriptor of a target classifier.
struct TargetSpec {
  Architecture arch = Architecture::kSmallCnn;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t num_classes = 10;
  std::size_t hidden = 128;  // MLP width
  std::size_t conv1 = 32;    // CNN block widths
  std::size_t conv2 = 64;
  /// Side of the average-pooled grid fed to the CNN head (1 = global pooling).
  std::size_t pool_grid = 2;

  std::size_t input_size() const { return channels * height * width; }
};

/// Target classifier f(x; w): linear, two-layer MLP, or a CNN made of two
/// conv+BN+ReLU blocks (the second with stride 2), average pooling and a
/// fully-connected head.
template <typename T>
class TargetNet {
 public:
  explicit TargetNet(TargetSpec spec = {}) : spec_(spec) {
    if (spec.num_classes < 2) throw ConfigError("TargetNet: need at least two classes");
    if (spec.input_size() == 0) throw ConfigError("TargetNet: empty input shape");
    switch (spec.arch) {
      case Architecture::kLinear:
        head_ = nn::Linear<T>(spec.input_size(), spec.num_classes);
        break;
      case Architecture::kMlp:
        hidden_ = nn::Linear<T>(spec.input_size(), spec.hidden);
        head_ = nn::Linear<T>(spec.hidden, spec.num_classes);
        break;
      case Architecture::kSmallCnn: {
        conv1_ = nn::Conv2d<T>(spec.channels, spec.conv1, 3, {1, 1}, false);
        bn1_ = nn::BatchNorm2d<T>(spec.conv1);
        conv2_ = nn::Conv2d<T>(spec.conv1, spec.conv2, 3, {2, 1}, false);
        bn2_ = nn::BatchNorm2d<T>(spec.conv2);
        const std::size_t oh = (spec.height + 1) / 2, ow = (spec.width + 1) / 2;
        if (spec.pool_grid == 0 || oh % spec.pool_grid != 0 || ow % spec.pool_grid != 0 ||
            oh / spec.pool_grid != ow / spec.pool_grid) {
          throw ConfigError("TargetNet: pool grid " + std::to_string(spec.pool_grid) +
                            " does not tile the " + std::to_string(oh) + "x" + std::to_string(ow) + " feature map");
        }
        head_ = nn::Linear<T>(spec.conv2 * spec.pool_grid * spec.pool_grid, spec.num_classes);
        break;
      }
    }
  }

  const TargetSpec& spec() const { return spec_; }

  /// x[N,C,H,W] -> logits[N,num_classes]
  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, const nn::ForwardOptions& opt) const {
    if (x.rank() != 4 || x.dim(1) != spec_.channels || x.dim(2) != spec_.height ||
        x.dim(3) != spec_.width) {
      throw ShapeError("target_forward: input " + to_string(x.shape()) + " does not match [N, " +
                       std::to_string(spec_.channels) + ", " + std::to_string(spec_.height) + ", " +
                       std::to_string(spec_.width) + "]");
    }
    switch (spec_.arch) {
      case Architecture::kLinear:
        return head_.forward(g, flatten(g, x), opt);
      case Architecture::kMlp:
        return head_.forward(g, relu(g, hidden_.forward(g, flatten(g, x), opt)), opt);
      case Architecture::kSmallCnn: {
        auto h = relu(g, bn1_.forward(g, conv1_.forward(g, x, opt), opt));
        h = relu(g, bn2_.forward(g, conv2_.forward(g, h, opt), opt));
        h = avg_pool2d(g, h, h.dim(2) / spec_.pool_grid);
        return head_.forward(g, flatten(g, h), opt);
      }
    }
    throw ConfigError("target_forward: unknown architecture");
  }

  /// Logits without recording anything.
  Tensor<T> logits(const Tensor<T>& x, BatchNormMode bn = BatchNormMode::kEval) const {
    Graph<T> g;
    return forward(g, x.detach(), {bn, false});
  }

  /// He init for weights, zero biases, BN scale 1 / shift 0. Fully determined by seed.
  void init_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    if (spec_.arch == Architecture::kSmallCnn) {
      conv1_.reset(rng);
      bn1_.reset();
      conv2_.reset(rng);
      bn2_.reset();
    }
    if (spec_.arch == Architecture::kMlp) hidden_.reset(rng);
    head_.reset(rng);
  }

  /// Every tensor in a stable order; buffers (BN running stats) included.
  nn::ParameterList<T> parameters() const {
    nn::ParameterList<T> out;
    switch (spec_.arch) {
      case Architecture::kLinear:
        head_.collect("fc", out);
        break;
      case Architecture::kMlp:
        hidden_.collect("hidden", out);
        head_.collect("fc", out);
        break;
      case Architecture::kSmallCnn:
        conv1_.collect("conv1", out);
        bn1_.collect("bn1", out);
        conv2_.collect("conv2", out);
        bn2_.collect("bn2", out);
        head_.collect("fc", out);
        break;
    }
    return out;
  }

  nn::Linear<T>& head() { return head_; }

 private:
  TargetSpec spec_;
  nn::Conv2d<T> conv1_, conv2_;
  nn::BatchNorm2d<T> bn1_, bn2_;
  nn::Linear<T> hidden_;
  nn::Linear<T> head_;
};

struct GeneratorSpec {
  std::size_t image_channels = 3;
  std::size_t width = 64;
  /// Reserved for a spectrally normalized ResBlock; not implemented.
  bool spectral_norm = false;
};

/// Initialization generator g(x, s_x; theta):
///   conv(2C->64, 3x3, s1, p1) + BN + ReLU
///   ResBlock(64)
///   conv(64->C, 3x3, s1, p1) + BN
///   tanh, so every output lies in [-1, 1].
template <typename T>
class GeneratorNet {
 public:
  explicit GeneratorNet(GeneratorSpec spec = {})
      : spec_(spec),
        conv1_(2 * spec.image_channels, spec.width, 3, {1, 1}, false),
        bn1_(spec.width),
        block_(spec.width),
        conv3_(spec.width, spec.image_channels, 3, {1, 1}, false),
        bn3_(spec.image_channels) {
    if (spec.spectral_norm) throw ConfigError("GeneratorNet: spectral normalization is not supported");
    if (spec.image_channels == 0 || spec.width == 0) throw ConfigError("GeneratorNet: empty layer");
  }

  const GeneratorSpec& spec() const { return spec_; }

  /// Raw output in [-1, 1] with the shape of `x`.
  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& signed_grad,
                    const nn::ForwardOptions& opt) const {
    if (x.shape() != signed_grad.shape()) {
      throw ShapeError("generator_forward: image " + to_string(x.shape()) + " vs signed gradient " +
                       to_string(signed_grad.shape()));
    }
    if (x.rank() != 4 || x.dim(1) != spec_.image_channels) {
      throw ShapeError("generator_forward: expected [N, " + std::to_string(spec_.image_channels) +
                       ", H, W] input, got " + to_string(x.shape()));
    }
    auto h = concat_channels(g, x, signed_grad);
    h = relu(g, bn1_.forward(g, conv1_.forward(g, h, opt), opt));
    h = block_.forward(g, h, opt);
    h = bn3_.forward(g, conv3_.forward(g, h, opt), opt);
    return tanh(g, h);
  }

  void init_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    conv1_.reset(rng);
    bn1_.reset();
    block_.reset(rng);
    conv3_.reset(rng);
    bn3_.reset();
  }

  nn::ParameterList<T> parameters() const {
    nn::ParameterList<T> out;
    conv1_.collect("conv1", out);
    bn1_.collect("bn1", out);
    block_.collect("block", out);
    conv3_.collect("conv3", out);
    bn3_.collect("bn3", out);
    return out;
  }

  /// Zero scale and shift on the last BN: the generator then outputs exactly 0.
  void silence() {
    std::fill(bn3_.gamma().data().begin(), bn3_.gamma().data().end(), T{0});
    std::fill(bn3_.beta().data().begin(), bn3_.beta().data().end(), T{0});
  }

 private:
  GeneratorSpec spec_;
  nn::Conv2d<T> conv1_;
  nn::BatchNorm2d<T> bn1_;
  nn::ResBlock<T> block_;
  nn::Conv2d<T> conv3_;
  nn::BatchNorm2d<T> bn3_;
};

}  // namespace advt
