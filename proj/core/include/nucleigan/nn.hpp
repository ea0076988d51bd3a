#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nucleigan/ops.hpp"
#include "nucleigan/spectral_norm.hpp"
#include "nucleigan/tensor.hpp"

namespace nucleigan {

enum class NetworkKind { ResnetGenerator, UnetGenerator, PatchDiscriminator };
enum class NormKind { Instance, Batch, None };

std::string to_string(NetworkKind kind);
std::string to_string(NormKind kind);
NetworkKind network_kind_from_string(const std::string& s);
NormKind norm_kind_from_string(const std::string& s);

/// Architecture description shared by the three builders.
struct NetworkSpec {
  NetworkKind kind = NetworkKind::ResnetGenerator;
  int in_channels = 3;
  int out_channels = 3;
  int base_width = 64;
  int n_resblocks = 9;  // resnet only
  int n_levels = 8;     // unet only
  NormKind norm = NormKind::Instance;
  bool spectral_norm = false;
  int n_power_iters = 1;

  static NetworkSpec resnet_generator(int in_ch, int out_ch, int width = 64, int blocks = 9);
  static NetworkSpec unet_generator(int in_ch, int out_ch, int width = 64, int levels = 8);
  /// No normalization layers; spectral normalization on every conv.
  static NetworkSpec patch_discriminator(int in_ch, int width = 64);

  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

/// One convolution (regular or fractionally strided) with its parameters and,
/// when spectrally normalized, the persistent power-iteration vector.
template <class T>
struct ConvLayer {
  std::string name;
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 1;
  int pad = 0;
  bool reflect_pad = false;  // pad by reflection before a pad-0 convolution
  bool transposed = false;
  int output_pad = 0;
  bool spectral = false;
  std::vector<T> u;

  Tensor<T> forward(const Tensor<T>& x, int power_iters, bool update_u);
  /// Weight as seen by the convolution (spectrally normalized if enabled).
  Tensor<T> effective_weight(int power_iters, bool update_u);
  int kernel() const { return weight.shape().h; }
};

template <class T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

template <class T>
class Network {
 public:
  explicit Network(NetworkSpec spec) : spec_(std::move(spec)) {}
  virtual ~Network() = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  virtual Tensor<T> forward(const Tensor<T>& x) = 0;

  const NetworkSpec& spec() const { return spec_; }
  std::vector<NamedParameter<T>> parameters();
  std::vector<Tensor<T>> parameter_tensors();
  Tensor<T> parameter(const std::string& name);
  std::vector<NamedBuffer<T>> buffers();
  std::size_t parameter_count();
  void zero_grad();

  /// Whether forward passes advance the spectral-norm power iteration.
  void set_power_iteration_updates(bool on) { update_u_ = on; }
  bool power_iteration_updates() const { return update_u_; }

  /// Shape of the innermost feature map seen by the last forward pass
  /// (generators only; zero shape otherwise).
  const Shape& bottleneck_shape() const { return bottleneck_; }

 protected:
  Tensor<T> conv(std::size_t layer, const Tensor<T>& x) {
    return layers_[layer].forward(x, spec_.n_power_iters, update_u_);
  }
  Tensor<T> norm(const Tensor<T>& x) const;
  void register_parameter(std::string name, Tensor<T> t);

  NetworkSpec spec_;
  std::vector<ConvLayer<T>> layers_;
  std::vector<NamedParameter<T>> extra_;
  bool update_u_ = true;
  Shape bottleneck_{0, 0, 0, 0};
};

/// Stem 7x7 conv, two stride-2 convs, residual blocks, two fractionally
/// strided convs, 7x7 output conv, Tanh. Reflection padding on all
/// regular convs. Input height and width must be divisible by 4.
template <class T>
std::unique_ptr<Network<T>> build_resnet_generator(const NetworkSpec& spec, std::uint64_t seed);

/// Encoder of n_levels stride-2 4x4 convs (leaky ReLU 0.2), mirrored
/// decoder of 4x4 fractionally strided convs (ReLU) with skip concatenation,
/// then a 3x3 conv and Tanh. Input dims must be divisible by 2^n_levels.
template <class T>
std::unique_ptr<Network<T>> build_unet_generator(const NetworkSpec& spec, std::uint64_t seed);

/// 70x70 PatchGAN: 4x4 convs with strides 2,2,2,1,1 and padding 1, leaky
/// ReLU 0.2. Produces a one-channel score map of pre-sigmoid logits.
template <class T>
std::unique_ptr<Network<T>> build_patch_discriminator(const NetworkSpec& spec,
                                                      std::uint64_t seed);

template <class T>
std::unique_ptr<Network<T>> build_network(const NetworkSpec& spec, std::uint64_t seed);

struct ConvGeometry {
  int kernel;
  int stride;
  int pad;
};

/// Convolution stack of the patch discriminator, input to output.
std::vector<ConvGeometry> patch_discriminator_geometry();
/// Receptive field (pixels along one axis) of one output unit of a conv stack.
int receptive_field(const std::vector<ConvGeometry>& stack);
/// Output extent of a conv stack for an input extent.
int conv_output_extent(const std::vector<ConvGeometry>& stack, int input);

/// Adam with bias correction. Learning rate is passed per step.
template <class T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, double beta1 = 0.5, double beta2 = 0.999,
       double eps = 1e-8);
  void step(double lr);
  void zero_grad();
  long steps() const { return t_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Sum of squared gradient entries over all parameters with a gradient.
template <class T>
double grad_norm_squared(Network<T>& net);

}  // namespace nucleigan
