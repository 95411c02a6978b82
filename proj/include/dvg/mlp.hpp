#pragma once

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "dvg/types.hpp"

namespace dvg {

/// Activation applied element-wise after a linear layer.
/// TanhScaled squashes to (-bound, bound) per coordinate: y = bound * tanh(z).
/// Tanh is the plain unscaled squash (smooth everywhere, used where
/// finite-difference checks need differentiability).
enum class Activation { Identity, Relu, Tanh, TanhScaled };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::TanhScaled: return "tanh_scaled";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "tanh_scaled") return Activation::TanhScaled;
  throw ValidationError("unknown activation name: " + s);
}

/// Fully connected feed-forward network with explicit reverse-mode gradients.
///
/// Everything is deterministic and allocation-transparent: a forward pass can
/// record a Cache, and the backward passes consume that cache to produce exact
/// parameter gradients and/or input gradients (vector-Jacobian products).
/// Batches are column-major: X is (in_dim x n), one sample per column.
class Mlp {
 public:
  struct Layer {
    Mat W;            // (out x in)
    Vec b;            // (out)
    Activation act = Activation::Identity;
    Vec bound;        // per-coordinate scale, TanhScaled only
  };

  /// Forward-pass record for one batch; consumed by the backward passes.
  struct Cache {
    std::vector<Mat> inputs;  // per-layer input, inputs[l] is (in_l x n)
    std::vector<Mat> pre;     // per-layer pre-activation, (out_l x n)
  };

  Mlp() = default;

  explicit Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ValidationError("Mlp needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& L = layers_[l];
      if (L.W.rows() != L.b.size())
        throw ValidationError("Mlp layer bias size does not match weight rows");
      if (l > 0 && layers_[l - 1].W.rows() != L.W.cols())
        throw ValidationError("Mlp layer dimensions do not chain");
      if (L.act == Activation::TanhScaled) {
        if (L.bound.size() != L.W.rows())
          throw ValidationError("tanh_scaled layer needs one bound per output");
        if ((L.bound.array() <= 0.0).any())
          throw ValidationError("tanh_scaled bounds must be positive");
      }
    }
  }

  /// Build a net with the given layer widths, e.g. dims={3,64,64,1}.
  /// Hidden layers use `hidden`, the last layer uses `out` (with `bound`
  /// when `out` is TanhScaled). Weights start at zero; call init_* to fill.
  static Mlp make(const std::vector<int>& dims, Activation hidden,
                  Activation out, const Vec& bound = Vec()) {
    if (dims.size() < 2) throw ValidationError("Mlp::make needs >= 2 dims");
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      Layer L;
      L.W = Mat::Zero(dims[i + 1], dims[i]);
      L.b = Vec::Zero(dims[i + 1]);
      const bool last = (i + 2 == dims.size());
      L.act = last ? out : hidden;
      if (last && out == Activation::TanhScaled) L.bound = bound;
      layers.push_back(std::move(L));
    }
    return Mlp(std::move(layers));
  }

  int in_dim() const { return static_cast<int>(layers_.front().W.cols()); }
  int out_dim() const { return static_cast<int>(layers_.back().W.rows()); }
  int num_layers() const { return static_cast<int>(layers_.size()); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  int param_size() const {
    int n = 0;
    for (const Layer& L : layers_) n += static_cast<int>(L.W.size() + L.b.size());
    return n;
  }

  /// Flat parameter vector: per layer, W in row-major order, then b.
  Vec params_flat() const {
    Vec p(param_size());
    int at = 0;
    for (const Layer& L : layers_) {
      for (Eigen::Index r = 0; r < L.W.rows(); ++r)
        for (Eigen::Index c = 0; c < L.W.cols(); ++c) p[at++] = L.W(r, c);
      for (Eigen::Index r = 0; r < L.b.size(); ++r) p[at++] = L.b[r];
    }
    return p;
  }

  void set_params_flat(const Vec& p) {
    if (p.size() != param_size())
      throw ValidationError("set_params_flat: size mismatch");
    int at = 0;
    for (Layer& L : layers_) {
      for (Eigen::Index r = 0; r < L.W.rows(); ++r)
        for (Eigen::Index c = 0; c < L.W.cols(); ++c) L.W(r, c) = p[at++];
      for (Eigen::Index r = 0; r < L.b.size(); ++r) L.b[r] = p[at++];
    }
  }

  /// Uniform fan-in initialization: every weight and bias of layer l drawn
  /// from U[-1/sqrt(in_l), 1/sqrt(in_l)). Draw order is fixed (layer by
  /// layer, W row-major then b) so a given rng state reproduces exactly.
  void init_fan_in(Rng& rng) {
    for (Layer& L : layers_) {
      const double s = 1.0 / std::sqrt(static_cast<double>(L.W.cols()));
      for (Eigen::Index r = 0; r < L.W.rows(); ++r)
        for (Eigen::Index c = 0; c < L.W.cols(); ++c) L.W(r, c) = uniform(rng, -s, s);
      for (Eigen::Index r = 0; r < L.b.size(); ++r) L.b[r] = uniform(rng, -s, s);
    }
  }

  /// Re-draw only the final layer from U[-scale, scale); used to start
  /// actor/critic outputs near zero.
  void init_final_uniform(Rng& rng, double scale) {
    Layer& L = layers_.back();
    for (Eigen::Index r = 0; r < L.W.rows(); ++r)
      for (Eigen::Index c = 0; c < L.W.cols(); ++c) L.W(r, c) = uniform(rng, -scale, scale);
    for (Eigen::Index r = 0; r < L.b.size(); ++r) L.b[r] = uniform(rng, -scale, scale);
  }

  Vec forward(const Vec& x) const {
    Mat y = forward_batch(x, nullptr);
    return y.col(0);
  }

  /// Batched forward. X is (in_dim x n). If cache is non-null it records the
  /// per-layer inputs and pre-activations needed by the backward passes.
  Mat forward_batch(const Mat& X, Cache* cache = nullptr) const {
    if (X.rows() != in_dim())
      throw ValidationError("forward_batch: input dimension mismatch");
    if (cache) {
      cache->inputs.clear();
      cache->pre.clear();
      cache->inputs.reserve(layers_.size());
      cache->pre.reserve(layers_.size());
    }
    Mat h = X;
    for (const Layer& L : layers_) {
      if (cache) cache->inputs.push_back(h);
      Mat z = (L.W * h).colwise() + L.b;
      if (cache) cache->pre.push_back(z);
      h = apply_activation(L, z);
    }
    return h;
  }

  /// Reverse pass for parameters: returns d/dtheta of sum_j <U.col(j), f(x_j)>
  /// as a flat vector. If input_grads is non-null it also receives the
  /// per-column input gradients (in_dim x n).
  Vec backward_params(const Cache& cache, const Mat& U,
                      Mat* input_grads = nullptr) const {
    Vec g = Vec::Zero(param_size());
    backward_impl(cache, U, &g, input_grads);
    return g;
  }

  /// Reverse pass for inputs only (vector-Jacobian product per column):
  /// returns (in_dim x n) with column j = (d f(x_j)/d x_j)^T * U.col(j).
  Mat backward_inputs(const Cache& cache, const Mat& U) const {
    Mat gin;
    backward_impl(cache, U, nullptr, &gin);
    return gin;
  }

  /// Full Jacobian of the output w.r.t. the input at one point (out x in),
  /// built by forward accumulation through the layers.
  Mat input_jacobian(const Vec& x) const {
    if (x.size() != in_dim())
      throw ValidationError("input_jacobian: input dimension mismatch");
    Mat J = Mat::Identity(in_dim(), in_dim());
    Vec h = x;
    for (const Layer& L : layers_) {
      Vec z = L.W * h + L.b;
      J = (L.W * J).eval();
      Vec d = activation_deriv(L, z);
      J.array().colwise() *= d.array();
      h = apply_activation_vec(L, z);
    }
    return J;
  }

  bool same_bits(const Mlp& o) const {
    if (layers_.size() != o.layers_.size()) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer &a = layers_[l], &b = o.layers_[l];
      if (a.W.rows() != b.W.rows() || a.W.cols() != b.W.cols()) return false;
      if (a.act != b.act) return false;
      if (std::memcmp(a.W.data(), b.W.data(), sizeof(double) * a.W.size()) != 0)
        return false;
      if (std::memcmp(a.b.data(), b.b.data(), sizeof(double) * a.b.size()) != 0)
        return false;
      if (a.bound.size() != b.bound.size()) return false;
      if (a.bound.size() &&
          std::memcmp(a.bound.data(), b.bound.data(),
                      sizeof(double) * a.bound.size()) != 0)
        return false;
    }
    return true;
  }

  // ---- checkpointing ------------------------------------------------------
  // Text format, one file per network:
  //   dvg-net 1
  //   role <tag>
  //   layers <L>
  //   layer <in> <out> <activation> [bound values...]
  //   params <count>
  //   <count shortest-round-trip doubles, whitespace separated>
  // Doubles are written with std::to_chars, so a load reproduces every bit.

  void save(std::ostream& os, const std::string& role) const {
    os << "dvg-net 1\n";
    os << "role " << role << "\n";
    os << "layers " << layers_.size() << "\n";
    for (const Layer& L : layers_) {
      os << "layer " << L.W.cols() << " " << L.W.rows() << " "
         << activation_name(L.act);
      for (Eigen::Index i = 0; i < L.bound.size(); ++i)
        os << " " << format_double(L.bound[i]);
      os << "\n";
    }
    Vec p = params_flat();
    os << "params " << p.size() << "\n";
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      os << format_double(p[i]);
      os << ((i + 1) % 8 == 0 ? '\n' : ' ');
    }
    if (p.size() % 8 != 0) os << "\n";
  }

  void save_file(const std::string& path, const std::string& role) const {
    std::ofstream f(path);
    if (!f) throw ValidationError("cannot open checkpoint for writing: " + path);
    save(f, role);
    if (!f) throw ValidationError("checkpoint write failed: " + path);
  }

  /// Load a checkpoint. If expected_role is non-empty the stored role tag
  /// must match. The stream is fully parsed before any object is returned,
  /// so a malformed file never yields a partially initialized net.
  static std::pair<Mlp, std::string> load(std::istream& is,
                                          const std::string& expected_role = "") {
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != "dvg-net" || version != 1)
      throw ValidationError("checkpoint: bad header");
    std::string kw, role;
    if (!(is >> kw >> role) || kw != "role")
      throw ValidationError("checkpoint: missing role");
    if (!expected_role.empty() && role != expected_role)
      throw ValidationError("checkpoint: role is '" + role + "', expected '" +
                            expected_role + "'");
    std::size_t nlayers = 0;
    if (!(is >> kw >> nlayers) || kw != "layers" || nlayers == 0)
      throw ValidationError("checkpoint: missing layer count");
    std::vector<Layer> layers;
    for (std::size_t l = 0; l < nlayers; ++l) {
      int in = 0, out = 0;
      std::string act;
      if (!(is >> kw >> in >> out >> act) || kw != "layer" || in <= 0 || out <= 0)
        throw ValidationError("checkpoint: bad layer line");
      Layer L;
      L.W = Mat::Zero(out, in);
      L.b = Vec::Zero(out);
      L.act = activation_from_name(act);
      if (L.act == Activation::TanhScaled) {
        L.bound = Vec(out);
        for (int i = 0; i < out; ++i) {
          std::string tok;
          if (!(is >> tok)) throw ValidationError("checkpoint: missing bound");
          L.bound[i] = parse_double(tok);
        }
      }
      layers.push_back(std::move(L));
    }
    Eigen::Index nparams = 0;
    if (!(is >> kw >> nparams) || kw != "params")
      throw ValidationError("checkpoint: missing params count");
    Mlp net(std::move(layers));
    if (nparams != net.param_size())
      throw ValidationError("checkpoint: parameter count does not match layers");
    Vec p(nparams);
    for (Eigen::Index i = 0; i < nparams; ++i) {
      std::string tok;
      if (!(is >> tok)) throw ValidationError("checkpoint: truncated parameters");
      p[i] = parse_double(tok);
    }
    net.set_params_flat(p);
    return {std::move(net), role};
  }

  static std::pair<Mlp, std::string> load_file(
      const std::string& path, const std::string& expected_role = "") {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open checkpoint: " + path);
    return load(f, expected_role);
  }

  static std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  }

  static double parse_double(const std::string& tok) {
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
      throw ValidationError("checkpoint: bad number '" + tok + "'");
    return v;
  }

 private:
  static Mat apply_activation(const Layer& L, const Mat& z) {
    switch (L.act) {
      case Activation::Identity: return z;
      case Activation::Relu: return z.cwiseMax(0.0);
      case Activation::Tanh: return z.array().tanh().matrix();
      case Activation::TanhScaled: {
        Mat y = z.array().tanh().matrix();
        y.array().colwise() *= L.bound.array();
        return y;
      }
    }
    return z;
  }

  static Vec apply_activation_vec(const Layer& L, const Vec& z) {
    Mat y = apply_activation(L, Mat(z));
    return y.col(0);
  }

  /// Element-wise activation derivative at pre-activation z (single column).
  static Vec activation_deriv(const Layer& L, const Vec& z) {
    switch (L.act) {
      case Activation::Identity: return Vec::Ones(z.size());
      case Activation::Relu: return (z.array() > 0.0).cast<double>();
      case Activation::Tanh: {
        Vec t = z.array().tanh();
        return (1.0 - t.array().square()).matrix();
      }
      case Activation::TanhScaled: {
        Vec t = z.array().tanh();
        return (L.bound.array() * (1.0 - t.array().square())).matrix();
      }
    }
    return Vec::Ones(z.size());
  }

  static Mat activation_deriv_batch(const Layer& L, const Mat& z) {
    switch (L.act) {
      case Activation::Identity: return Mat::Ones(z.rows(), z.cols());
      case Activation::Relu: return (z.array() > 0.0).cast<double>();
      case Activation::Tanh: {
        Mat t = z.array().tanh();
        return (1.0 - t.array().square()).matrix();
      }
      case Activation::TanhScaled: {
        Mat t = z.array().tanh();
        Mat d = (1.0 - t.array().square()).matrix();
        d.array().colwise() *= L.bound.array();
        return d;
      }
    }
    return Mat::Ones(z.rows(), z.cols());
  }

  void backward_impl(const Cache& cache, const Mat& U, Vec* param_grad,
                     Mat* input_grads) const {
    const auto L = layers_.size();
    if (cache.inputs.size() != L || cache.pre.size() != L)
      throw ValidationError("backward: cache does not match network");
    if (U.rows() != out_dim() || U.cols() != cache.inputs[0].cols())
      throw ValidationError("backward: cotangent shape mismatch");
    // Flat offsets of each layer's W block.
    std::vector<int> w_at(L), b_at(L);
    {
      int at = 0;
      for (std::size_t l = 0; l < L; ++l) {
        w_at[l] = at;
        at += static_cast<int>(layers_[l].W.size());
        b_at[l] = at;
        at += static_cast<int>(layers_[l].b.size());
      }
    }
    Mat delta = U.cwiseProduct(activation_deriv_batch(layers_[L - 1], cache.pre[L - 1]));
    for (std::size_t l = L; l-- > 0;) {
      const Layer& lay = layers_[l];
      if (param_grad) {
        Mat gW = delta * cache.inputs[l].transpose();  // (out x in)
        Vec gb = delta.rowwise().sum();
        // Scatter into the flat layout (row-major W, then b).
        double* base = param_grad->data() + w_at[l];
        for (Eigen::Index r = 0; r < gW.rows(); ++r)
          for (Eigen::Index c = 0; c < gW.cols(); ++c)
            base[r * gW.cols() + c] += gW(r, c);
        param_grad->segment(b_at[l], gb.size()) += gb;
      }
      if (l > 0) {
        delta = (lay.W.transpose() * delta)
                    .cwiseProduct(activation_deriv_batch(layers_[l - 1], cache.pre[l - 1]));
      } else if (input_grads) {
        *input_grads = lay.W.transpose() * delta;
      }
    }
  }

  std::vector<Layer> layers_;
};

}  // namespace dvg
