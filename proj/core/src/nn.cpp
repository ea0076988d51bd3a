#include "nucleigan/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "nucleigan/errors.hpp"
#include "nucleigan/rng.hpp"

namespace nucleigan {

std::string to_string(NetworkKind kind) {
  switch (kind) {
    case NetworkKind::ResnetGenerator: return "resnet_generator";
    case NetworkKind::UnetGenerator: return "unet_generator";
    case NetworkKind::PatchDiscriminator: return "patch_discriminator";
  }
  return "unknown";
}

std::string to_string(NormKind kind) {
  switch (kind) {
    case NormKind::Instance: return "instance";
    case NormKind::Batch: return "batch";
    case NormKind::None: return "none";
  }
  return "unknown";
}

NetworkKind network_kind_from_string(const std::string& s) {
  if (s == "resnet_generator") return NetworkKind::ResnetGenerator;
  if (s == "unet_generator") return NetworkKind::UnetGenerator;
  if (s == "patch_discriminator") return NetworkKind::PatchDiscriminator;
  throw ArgumentError("unknown network kind '" + s + "'");
}

NormKind norm_kind_from_string(const std::string& s) {
  if (s == "instance") return NormKind::Instance;
  if (s == "batch") return NormKind::Batch;
  if (s == "none") return NormKind::None;
  throw ArgumentError("unknown norm kind '" + s + "'");
}

NetworkSpec NetworkSpec::resnet_generator(int in_ch, int out_ch, int width, int blocks) {
  NetworkSpec s;
  s.kind = NetworkKind::ResnetGenerator;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.base_width = width;
  s.n_resblocks = blocks;
  return s;
}

NetworkSpec NetworkSpec::unet_generator(int in_ch, int out_ch, int width, int levels) {
  NetworkSpec s;
  s.kind = NetworkKind::UnetGenerator;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.base_width = width;
  s.n_levels = levels;
  return s;
}

NetworkSpec NetworkSpec::patch_discriminator(int in_ch, int width) {
  NetworkSpec s;
  s.kind = NetworkKind::PatchDiscriminator;
  s.in_channels = in_ch;
  s.out_channels = 1;
  s.base_width = width;
  s.norm = NormKind::None;
  s.spectral_norm = true;
  return s;
}

void NetworkSpec::validate() const {
  if (in_channels < 1 || out_channels < 1 || base_width < 1)
    throw ArgumentError("network channel counts must be positive");
  if (kind == NetworkKind::ResnetGenerator && n_resblocks < 1)
    throw ArgumentError("resnet_generator requires n_resblocks >= 1");
  if (kind == NetworkKind::UnetGenerator && n_levels < 2)
    throw ArgumentError("unet_generator requires n_levels >= 2");
  if (n_power_iters < 1) throw ArgumentError("n_power_iters must be >= 1");
}

// ---------------------------------------------------------------------------
// Spectral normalization

template <class T>
SpectralNormResult<T> spectral_normalize(std::span<const T> weight, int rows, int cols,
                                         std::span<const T> u_in, int n_power_iters) {
  if (rows < 1 || cols < 1 || weight.size() != static_cast<std::size_t>(rows) * cols)
    throw ArgumentError("spectral_normalize: weight size does not match rows x cols");
  if (u_in.size() != static_cast<std::size_t>(rows))
    throw ArgumentError("spectral_normalize: u must have one entry per row");
  if (n_power_iters < 1) throw ArgumentError("spectral_normalize: n_power_iters must be >= 1");
  static constexpr double kEps = 1e-12;
  using Vec = std::vector<double>;

  auto dot = [](const Vec& a, const Vec& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
  };
  auto norm = [&](const Vec& a) { return std::sqrt(dot(a, a)); };
  auto mul = [&](const Vec& x) {
    Vec y(rows, 0.0);
    for (int r = 0; r < rows; ++r) {
      const T* row = weight.data() + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) y[r] += static_cast<double>(row[c]) * x[c];
    }
    return y;
  };
  auto mul_t = [&](const Vec& x) {
    Vec y(cols, 0.0);
    for (int r = 0; r < rows; ++r) {
      const T* row = weight.data() + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) y[c] += static_cast<double>(row[c]) * x[r];
    }
    return y;
  };
  // Two passes of Gram-Schmidt; returns false when x lies in span(basis).
  auto orthonormalize = [&](Vec& x, const std::vector<Vec>& basis) {
    const double before = norm(x);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) {
        const double d = dot(x, b);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= d * b[i];
      }
    const double after = norm(x);
    if (after <= kEps || after <= 1e-10 * before) return false;
    for (double& e : x) e /= after;
    return true;
  };

  // Golub-Kahan bidiagonalization with full reorthogonalization. Each round
  // costs one Wᵀu and one Wv product, like a power-iteration round, and the
  // Ritz pair of the accumulated Krylov bases is at least as accurate.
  std::vector<Vec> U, V, WV;
  Vec u0(u_in.begin(), u_in.end());
  if (!orthonormalize(u0, {})) {
    u0.assign(rows, 0.0);
    u0[0] = 1.0;
  }
  U.push_back(u0);
  for (int it = 0; it < n_power_iters; ++it) {
    Vec p = mul_t(U.back());
    if (!orthonormalize(p, V)) break;
    V.push_back(p);
    WV.push_back(mul(p));
    Vec q = WV.back();
    if (!orthonormalize(q, U)) break;
    U.push_back(std::move(q));
  }

  Vec u = U.front(), v(cols, 0.0);
  if (!V.empty()) {
    Eigen::MatrixXd B(U.size(), V.size());
    for (std::size_t i = 0; i < U.size(); ++i)
      for (std::size_t j = 0; j < V.size(); ++j) B(i, j) = dot(U[i], WV[j]);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::VectorXd a = svd.matrixU().col(0), b = svd.matrixV().col(0);
    if (b(0) < 0) a = -a, b = -b;
    std::fill(u.begin(), u.end(), 0.0);
    for (std::size_t i = 0; i < U.size(); ++i)
      for (int r = 0; r < rows; ++r) u[r] += a(i) * U[i][r];
    for (std::size_t j = 0; j < V.size(); ++j)
      for (int c = 0; c < cols; ++c) v[c] += b(j) * V[j][c];
    const double nu = std::max(norm(u), kEps), nv = std::max(norm(v), kEps);
    for (double& e : u) e /= nu;
    for (double& e : v) e /= nv;
  }
  const double sigma = std::max(dot(u, mul(v)), kEps);

  SpectralNormResult<T> out;
  out.sigma = static_cast<T>(sigma);
  out.weight.resize(weight.size());
  for (std::size_t i = 0; i < weight.size(); ++i)
    out.weight[i] = static_cast<T>(weight[i] / sigma);
  out.u.assign(u.begin(), u.end());
  out.v.assign(v.begin(), v.end());
  return out;
}

template SpectralNormResult<float> spectral_normalize(std::span<const float>, int, int,
                                                      std::span<const float>, int);
template SpectralNormResult<double> spectral_normalize(std::span<const double>, int, int,
                                                       std::span<const double>, int);

// ---------------------------------------------------------------------------
// Layers

template <class T>
Tensor<T> ConvLayer<T>::effective_weight(int power_iters, bool update_u) {
  if (!spectral) return weight;
  return ops::spectral_normalized(weight, u, power_iters, update_u);
}

template <class T>
Tensor<T> ConvLayer<T>::forward(const Tensor<T>& x, int power_iters, bool update_u) {
  Tensor<T> w = effective_weight(power_iters, update_u);
  if (transposed) return ops::conv_transpose2d(x, w, bias, stride, pad, output_pad);
  if (reflect_pad && pad > 0) return ops::conv2d(ops::reflection_pad(x, pad), w, bias, stride, 0);
  return ops::conv2d(x, w, bias, stride, pad);
}

template <class T>
std::vector<NamedParameter<T>> Network<T>::parameters() {
  std::vector<NamedParameter<T>> out;
  for (auto& l : layers_) {
    out.push_back({l.name + ".weight", l.weight});
    if (l.bias.defined()) out.push_back({l.name + ".bias", l.bias});
  }
  for (auto& p : extra_) out.push_back(p);
  return out;
}

template <class T>
std::vector<Tensor<T>> Network<T>::parameter_tensors() {
  std::vector<Tensor<T>> out;
  for (auto& p : parameters()) out.push_back(p.tensor);
  return out;
}

template <class T>
Tensor<T> Network<T>::parameter(const std::string& name) {
  for (auto& p : parameters())
    if (p.name == name) return p.tensor;
  throw ArgumentError("no parameter named '" + name + "'");
}

template <class T>
std::vector<NamedBuffer<T>> Network<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  for (auto& l : layers_)
    if (l.spectral) out.push_back({l.name + ".u", &l.u});
  return out;
}

template <class T>
std::size_t Network<T>::parameter_count() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <class T>
void Network<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <class T>
Tensor<T> Network<T>::norm(const Tensor<T>& x) const {
  switch (spec_.norm) {
    case NormKind::Instance: return ops::instance_norm(x);
    case NormKind::Batch: return ops::batch_norm(x);
    case NormKind::None: return x;
  }
  return x;
}

template <class T>
void Network<T>::register_parameter(std::string name, Tensor<T> t) {
  t.set_requires_grad(true);
  extra_.push_back({std::move(name), std::move(t)});
}

namespace {

constexpr double kInitStd = 0.02;

template <class T>
struct LayerFactory {
  Rng rng;
  bool spectral = false;

  ConvLayer<T> make(std::string name, int in, int out, int k, int stride, int pad, bool reflect) {
    ConvLayer<T> l;
    l.name = std::move(name);
    std::vector<T> w(static_cast<std::size_t>(in) * out * k * k);
    for (auto& e : w) e = static_cast<T>(rng.normal() * kInitStd);
    l.weight = Tensor<T>(Shape{out, in, k, k}, std::move(w), true);
    l.bias = Tensor<T>(Shape{1, out, 1, 1}, T(0), true);
    l.stride = stride;
    l.pad = pad;
    l.reflect_pad = reflect;
    if (spectral) {
      l.spectral = true;
      l.u.resize(out);
      double n = 0.0;
      for (auto& e : l.u) {
        e = static_cast<T>(rng.normal());
        n += static_cast<double>(e) * e;
      }
      n = std::sqrt(n);
      for (auto& e : l.u) e = static_cast<T>(e / n);
    }
    return l;
  }

  ConvLayer<T> make_transposed(std::string name, int in, int out, int k, int stride, int pad,
                               int output_pad) {
    ConvLayer<T> l;
    l.name = std::move(name);
    std::vector<T> w(static_cast<std::size_t>(in) * out * k * k);
    for (auto& e : w) e = static_cast<T>(rng.normal() * kInitStd);
    l.weight = Tensor<T>(Shape{in, out, k, k}, std::move(w), true);
    l.bias = Tensor<T>(Shape{1, out, 1, 1}, T(0), true);
    l.stride = stride;
    l.pad = pad;
    l.transposed = true;
    l.output_pad = output_pad;
    return l;
  }
};

template <class T>
class ResnetGenerator final : public Network<T> {
 public:
  ResnetGenerator(const NetworkSpec& spec, std::uint64_t seed) : Network<T>(spec) {
    LayerFactory<T> f{Rng(seed), spec.spectral_norm};
    const int w = spec.base_width;
    auto& L = this->layers_;
    L.push_back(f.make("stem", spec.in_channels, w, 7, 1, 3, true));
    L.push_back(f.make("down1", w, 2 * w, 3, 2, 1, true));
    L.push_back(f.make("down2", 2 * w, 4 * w, 3, 2, 1, true));
    for (int b = 0; b < spec.n_resblocks; ++b) {
      L.push_back(f.make("res" + std::to_string(b) + ".conv1", 4 * w, 4 * w, 3, 1, 1, true));
      L.push_back(f.make("res" + std::to_string(b) + ".conv2", 4 * w, 4 * w, 3, 1, 1, true));
    }
    L.push_back(f.make_transposed("up1", 4 * w, 2 * w, 3, 2, 1, 1));
    L.push_back(f.make_transposed("up2", 2 * w, w, 3, 2, 1, 1));
    L.push_back(f.make("head", w, spec.out_channels, 7, 1, 3, true));
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    const auto& s = x.shape();
    if (s.c != this->spec_.in_channels)
      throw ArgumentError("resnet_generator: expected " + std::to_string(this->spec_.in_channels) +
                          " input channels, got " + s.str());
    if (s.h % 4 != 0 || s.w % 4 != 0)
      throw ArgumentError("resnet_generator: input spatial dims must be divisible by 4, got " +
                          s.str());
    std::size_t i = 0;
    Tensor<T> h = ops::relu(this->norm(this->conv(i++, x)));
    h = ops::relu(this->norm(this->conv(i++, h)));
    h = ops::relu(this->norm(this->conv(i++, h)));
    this->bottleneck_ = h.shape();
    for (int b = 0; b < this->spec_.n_resblocks; ++b) {
      Tensor<T> r = ops::relu(this->norm(this->conv(i++, h)));
      r = this->norm(this->conv(i++, r));
      h = ops::add(h, r);
    }
    h = ops::relu(this->norm(this->conv(i++, h)));
    h = ops::relu(this->norm(this->conv(i++, h)));
    return ops::tanh(this->conv(i++, h));
  }
};

inline int unet_width(int base, int level) {  // level is 1-based
  return base * std::min(1 << std::min(level - 1, 3), 8);
}

template <class T>
class UnetGenerator final : public Network<T> {
 public:
  UnetGenerator(const NetworkSpec& spec, std::uint64_t seed) : Network<T>(spec) {
    LayerFactory<T> f{Rng(seed), spec.spectral_norm};
    const int levels = spec.n_levels;
    const int base = spec.base_width;
    auto& L = this->layers_;
    for (int i = 1; i <= levels; ++i) {
      const int in = i == 1 ? spec.in_channels : unet_width(base, i - 1);
      L.push_back(f.make("enc" + std::to_string(i), in, unet_width(base, i), 4, 2, 1, false));
    }
    for (int i = levels; i >= 1; --i) {
      const int in = i == levels ? unet_width(base, i) : 2 * unet_width(base, i);
      const int out = i == 1 ? base : unet_width(base, i - 1);
      L.push_back(f.make_transposed("dec" + std::to_string(i), in, out, 4, 2, 1, 0));
    }
    L.push_back(f.make("head", base, spec.out_channels, 3, 1, 1, true));
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    const auto& s = x.shape();
    const int levels = this->spec_.n_levels;
    const int div = 1 << levels;
    if (s.c != this->spec_.in_channels)
      throw ArgumentError("unet_generator: expected " + std::to_string(this->spec_.in_channels) +
                          " input channels, got " + s.str());
    if (s.h % div != 0 || s.w % div != 0)
      throw ArgumentError("unet_generator: input spatial dims must be divisible by 2^" +
                          std::to_string(levels) + ", got " + s.str());
    std::vector<Tensor<T>> enc;
    enc.reserve(levels);
    enc.push_back(this->conv(0, x));
    for (int i = 2; i <= levels; ++i) {
      Tensor<T> h = this->conv(i - 1, ops::leaky_relu(enc.back(), T(0.2)));
      if (i < levels) h = this->norm(h);
      enc.push_back(h);
    }
    this->bottleneck_ = enc.back().shape();
    Tensor<T> h = enc.back();
    std::size_t layer = levels;
    for (int i = levels; i >= 1; --i) {
      if (i < levels) h = ops::concat_channels(h, enc[i - 1]);
      h = this->norm(this->conv(layer++, ops::relu(h)));
    }
    return ops::tanh(this->conv(layer, ops::relu(h)));
  }
};

template <class T>
class PatchDiscriminator final : public Network<T> {
 public:
  PatchDiscriminator(const NetworkSpec& spec, std::uint64_t seed) : Network<T>(spec) {
    LayerFactory<T> f{Rng(seed), spec.spectral_norm};
    const int w = spec.base_width;
    const int widths[] = {w, 2 * w, 4 * w, 8 * w, 1};
    const auto geo = patch_discriminator_geometry();
    int in = spec.in_channels;
    for (std::size_t i = 0; i < geo.size(); ++i) {
      this->layers_.push_back(f.make("conv" + std::to_string(i + 1), in, widths[i], geo[i].kernel,
                                     geo[i].stride, geo[i].pad, false));
      in = widths[i];
    }
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.shape().c != this->spec_.in_channels)
      throw ArgumentError("patch_discriminator: expected " +
                          std::to_string(this->spec_.in_channels) + " input channels, got " +
                          x.shape().str());
    Tensor<T> h = ops::leaky_relu(this->conv(0, x), T(0.2));
    for (std::size_t i = 1; i + 1 < this->layers_.size(); ++i)
      h = ops::leaky_relu(this->norm(this->conv(i, h)), T(0.2));
    return this->conv(this->layers_.size() - 1, h);
  }
};

}  // namespace

template <class T>
std::unique_ptr<Network<T>> build_resnet_generator(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.kind != NetworkKind::ResnetGenerator)
    throw ArgumentError("build_resnet_generator: spec.kind must be resnet_generator");
  return std::make_unique<ResnetGenerator<T>>(spec, seed);
}

template <class T>
std::unique_ptr<Network<T>> build_unet_generator(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.kind != NetworkKind::UnetGenerator)
    throw ArgumentError("build_unet_generator: spec.kind must be unet_generator");
  return std::make_unique<UnetGenerator<T>>(spec, seed);
}

template <class T>
std::unique_ptr<Network<T>> build_patch_discriminator(const NetworkSpec& spec,
                                                      std::uint64_t seed) {
  spec.validate();
  if (spec.kind != NetworkKind::PatchDiscriminator)
    throw ArgumentError("build_patch_discriminator: spec.kind must be patch_discriminator");
  return std::make_unique<PatchDiscriminator<T>>(spec, seed);
}

template <class T>
std::unique_ptr<Network<T>> build_network(const NetworkSpec& spec, std::uint64_t seed) {
  switch (spec.kind) {
    case NetworkKind::ResnetGenerator: return build_resnet_generator<T>(spec, seed);
    case NetworkKind::UnetGenerator: return build_unet_generator<T>(spec, seed);
    case NetworkKind::PatchDiscriminator: return build_patch_discriminator<T>(spec, seed);
  }
  throw ArgumentError("unknown network kind");
}

std::vector<ConvGeometry> patch_discriminator_geometry() {
  return {{4, 2, 1}, {4, 2, 1}, {4, 2, 1}, {4, 1, 1}, {4, 1, 1}};
}

int receptive_field(const std::vector<ConvGeometry>& stack) {
  int rf = 1;
  for (auto it = stack.rbegin(); it != stack.rend(); ++it) rf = (rf - 1) * it->stride + it->kernel;
  return rf;
}

int conv_output_extent(const std::vector<ConvGeometry>& stack, int input) {
  int n = input;
  for (const auto& g : stack) {
    n = (n + 2 * g.pad - g.kernel) / g.stride + 1;
    if (n < 1) throw ArgumentError("input extent too small for the conv stack");
  }
  return n;
}

// ---------------------------------------------------------------------------
// Adam

template <class T>
Adam<T>::Adam(std::vector<Tensor<T>> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

template <class T>
void Adam<T>::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * static_cast<double>(g[i]) * g[i];
      if (lr == 0.0) continue;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      w[i] = static_cast<T>(w[i] - lr * mh / (std::sqrt(vh) + eps_));
    }
  }
}

template <class T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <class T>
double grad_norm_squared(Network<T>& net) {
  double acc = 0.0;
  for (auto& p : net.parameters())
    if (p.tensor.has_grad())
      for (auto g : p.tensor.grad()) acc += static_cast<double>(g) * g;
  return acc;
}

#define NUCLEIGAN_INSTANTIATE_NN(T)                                                            \
  template struct ConvLayer<T>;                                                                \
  template class Network<T>;                                                                   \
  template class Adam<T>;                                                                      \
  template std::unique_ptr<Network<T>> build_resnet_generator<T>(const NetworkSpec&,          \
                                                                 std::uint64_t);               \
  template std::unique_ptr<Network<T>> build_unet_generator<T>(const NetworkSpec&,            \
                                                               std::uint64_t);                 \
  template std::unique_ptr<Network<T>> build_patch_discriminator<T>(const NetworkSpec&,       \
                                                                    std::uint64_t);            \
  template std::unique_ptr<Network<T>> build_network<T>(const NetworkSpec&, std::uint64_t);   \
  template double grad_norm_squared<T>(Network<T>&);

NUCLEIGAN_INSTANTIATE_NN(float)
NUCLEIGAN_INSTANTIATE_NN(double)

}  // namespace nucleigan
