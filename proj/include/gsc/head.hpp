#ifndef GSC_HEAD_HPP
#define GSC_HEAD_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gsc/error.hpp"
#include "gsc/numcore.hpp"

namespace gsc {

enum class Activation { none, relu, tanh };

constexpr std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "none";
}

inline Activation parse_activation(std::string_view name) {
  if (name == "none") return Activation::none;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw Error(ErrorCode::unknown_activation, "unknown activation '" + std::string(name) + "'");
}

struct LayerSpec {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::none;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// The differentiable tail that maps a flat feature vector to logits.
///
/// The cut point is always the flat feature vector: any pooling belongs to the
/// part of the network that produced the features.
class HeadModel {
 public:
  HeadModel() = default;

  explicit HeadModel(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw Error(ErrorCode::dim_mismatch, "head needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& layer = layers_[i];
      if (layer.bias.size() != layer.weight.rows()) {
        throw Error(ErrorCode::dim_mismatch, "layer " + std::to_string(i) + ": bias length " +
                                                 std::to_string(layer.bias.size()) + " != weight rows " +
                                                 std::to_string(layer.weight.rows()));
      }
      if (i > 0 && layers_[i - 1].weight.rows() != layer.weight.cols()) {
        throw Error(ErrorCode::dim_mismatch, "layer " + std::to_string(i) + " expects input " +
                                                 std::to_string(layer.weight.cols()) + " but layer " +
                                                 std::to_string(i - 1) + " emits " +
                                                 std::to_string(layers_[i - 1].weight.rows()));
      }
    }
    if (layers_.back().activation != Activation::none) {
      throw Error(ErrorCode::dim_mismatch, "final layer must be affine (activation none)");
    }
  }

  static HeadModel affine(Matrix weight, Vector bias) {
    std::vector<LayerSpec> layers;
    layers.push_back(LayerSpec{std::move(weight), std::move(bias), Activation::none});
    return HeadModel(std::move(layers));
  }

  std::size_t input_dim() const { return layers_.front().weight.cols(); }
  std::size_t output_dim() const { return layers_.back().weight.rows(); }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }

  bool uses(Activation a) const {
    for (const auto& layer : layers_) {
      if (layer.activation == a) return true;
    }
    return false;
  }

  bool is_affine() const { return layers_.size() == 1; }

  friend bool operator==(const HeadModel&, const HeadModel&) = default;

 private:
  std::vector<LayerSpec> layers_;
};

/// Per-call FLOP counter: 2 per multiply-add, 1 per activation (or activation
/// derivative) evaluation. Bias additions are not counted.
struct FlopTally {
  std::uint64_t count = 0;
  void add(std::uint64_t n) noexcept { count += n; }
};

/// Pre-activations and layer outputs of one forward pass, kept so the backward
/// and tangent sweeps do not repeat the forward.
class ForwardTrace {
 public:
  ForwardTrace(const HeadModel& head, const Vector& features, FlopTally& tally) : head_(&head) {
    if (features.size() != head.input_dim()) {
      throw Error(ErrorCode::dimension, "forward: feature length " + std::to_string(features.size()) +
                                            " != head input " + std::to_string(head.input_dim()));
    }
    std::vector<double> input(features.values());
    for (const auto& layer : head.layers()) {
      const Matrix& w = layer.weight;
      std::vector<double> pre(w.rows());
      for (std::size_t r = 0; r < w.rows(); ++r) pre[r] = detail::dot(w.row(r), input) + layer.bias[r];
      tally.add(2ull * w.rows() * w.cols());
      std::vector<double> out(pre);
      switch (layer.activation) {
        case Activation::none: break;
        case Activation::relu:
          for (double& x : out) x = x > 0.0 ? x : 0.0;
          tally.add(out.size());
          break;
        case Activation::tanh:
          for (double& x : out) x = std::tanh(x);
          tally.add(out.size());
          break;
      }
      pre_.push_back(std::move(pre));
      post_.push_back(out);
      input = std::move(out);
    }
    logits_ = Vector(post_.back());
  }

  const HeadModel& head() const noexcept { return *head_; }
  const Vector& logits() const noexcept { return logits_; }

  /// Reverse-mode gradient of logit `cls` with respect to the features.
  Vector grad_logit(std::size_t cls, FlopTally& tally) const {
    const auto& layers = head_->layers();
    if (cls >= head_->output_dim()) {
      throw Error(ErrorCode::index, "class index " + std::to_string(cls) + " out of range for " +
                                        std::to_string(head_->output_dim()) + " logits");
    }
    std::vector<double> delta(head_->output_dim(), 0.0);
    delta[cls] = 1.0;
    for (std::size_t l = layers.size(); l-- > 0;) {
      apply_activation_derivative(l, delta, tally);
      const Matrix& w = layers[l].weight;
      std::vector<double> below(w.cols(), 0.0);
      for (std::size_t r = 0; r < w.rows(); ++r) {
        const double d = delta[r];
        const auto row = w.row(r);
        for (std::size_t c = 0; c < w.cols(); ++c) below[c] += row[c] * d;
      }
      tally.add(2ull * w.rows() * w.cols());
      delta = std::move(below);
    }
    return Vector(std::move(delta));
  }

  /// Forward-mode directional derivative J(F) * tangent. Zero tangent
  /// entries are skipped and not counted.
  Vector jvp(const Vector& tangent, FlopTally& tally) const {
    if (tangent.size() != head_->input_dim()) {
      throw Error(ErrorCode::dimension, "jvp: tangent length " + std::to_string(tangent.size()) +
                                            " != head input " + std::to_string(head_->input_dim()));
    }
    const auto& layers = head_->layers();
    std::vector<double> t(tangent.values());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Matrix& w = layers[l].weight;
      std::vector<double> next(w.rows(), 0.0);
      std::uint64_t nnz = 0;
      for (std::size_t c = 0; c < w.cols(); ++c) {
        const double tc = t[c];
        if (tc == 0.0) continue;
        ++nnz;
        for (std::size_t r = 0; r < w.rows(); ++r) next[r] += w(r, c) * tc;
      }
      tally.add(2ull * w.rows() * nnz);
      apply_activation_derivative(l, next, tally);
      t = std::move(next);
    }
    return Vector(std::move(t));
  }

  /// Hidden-unit activity pattern (pre-activation > 0) of every relu layer,
  /// concatenated. Empty for heads without relu.
  std::vector<bool> relu_pattern() const {
    std::vector<bool> pattern;
    const auto& layers = head_->layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].activation != Activation::relu) continue;
      for (double z : pre_[l]) pattern.push_back(z > 0.0);
    }
    return pattern;
  }

 private:
  void apply_activation_derivative(std::size_t layer, std::vector<double>& v, FlopTally& tally) const {
    switch (head_->layers()[layer].activation) {
      case Activation::none: return;
      case Activation::relu:
        // subgradient at exactly 0 is 0
        for (std::size_t i = 0; i < v.size(); ++i) {
          if (!(pre_[layer][i] > 0.0)) v[i] = 0.0;
        }
        break;
      case Activation::tanh:
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double a = post_[layer][i];
          v[i] *= 1.0 - a * a;
        }
        break;
    }
    tally.add(v.size());
  }

  const HeadModel* head_;
  std::vector<std::vector<double>> pre_;
  std::vector<std::vector<double>> post_;
  Vector logits_;
};

inline Vector forward(const HeadModel& head, const Vector& features, FlopTally& tally) {
  return ForwardTrace(head, features, tally).logits();
}

inline Vector forward(const HeadModel& head, const Vector& features) {
  FlopTally tally;
  return forward(head, features, tally);
}

inline Vector grad_logit(const HeadModel& head, const Vector& features, std::size_t cls) {
  FlopTally tally;
  if (cls >= head.output_dim()) {
    throw Error(ErrorCode::index, "class index " + std::to_string(cls) + " out of range");
  }
  return ForwardTrace(head, features, tally).grad_logit(cls, tally);
}

inline Vector jvp(const HeadModel& head, const Vector& features, const Vector& tangent) {
  FlopTally tally;
  return ForwardTrace(head, features, tally).jvp(tangent, tally);
}

/// Full K x d logit Jacobian. Diagnostic path; the engine itself only needs
/// one gradient row and one directional derivative per sample.
inline Matrix jacobian(const HeadModel& head, const Vector& features) {
  FlopTally tally;
  const ForwardTrace trace(head, features, tally);
  const std::size_t k = head.output_dim();
  const std::size_t d = head.input_dim();
  std::vector<double> data;
  data.reserve(k * d);
  for (std::size_t j = 0; j < k; ++j) {
    const Vector row = trace.grad_logit(j, tally);
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(k, d, std::move(data));
}

struct LogitBundle {
  Vector y;
  std::size_t c = 0;
  Vector g;
  std::uint64_t flops_forward = 0;
  std::uint64_t flops_backward = 0;
};

/// Forward, predicted class, and the predicted-class gradient in one call.
inline LogitBundle evaluate(const HeadModel& head, const Vector& features) {
  FlopTally fwd;
  const ForwardTrace trace(head, features, fwd);
  FlopTally bwd;
  LogitBundle out;
  out.y = trace.logits();
  out.c = argmax(out.y);
  out.g = trace.grad_logit(out.c, bwd);
  out.flops_forward = fwd.count;
  out.flops_backward = bwd.count;
  return out;
}

struct FlopReport {
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
  std::uint64_t approx_extra = 0;  // predicted-logit dot product g . dF
  std::uint64_t two_forward = 0;
  std::uint64_t approx_path = 0;   // forward + backward + approx_extra
  std::uint64_t exact_path = 0;    // forward + backward + second forward
  std::uint64_t jvp_dense = 0;     // full K-logit tangent sweep with a dense tangent
};

/// Analytic cost model of the approximate and exact short-circuit paths.
inline FlopReport flop_report(const HeadModel& head) {
  FlopReport r;
  std::uint64_t macs = 0;
  std::uint64_t act = 0;
  for (const auto& layer : head.layers()) {
    macs += 2ull * layer.weight.rows() * layer.weight.cols();
    if (layer.activation != Activation::none) act += layer.weight.rows();
  }
  r.forward = macs + act;
  r.backward = macs + act;
  r.approx_extra = 2ull * head.input_dim();
  r.two_forward = 2 * r.forward;
  r.approx_path = r.forward + r.backward + r.approx_extra;
  r.exact_path = 2 * r.forward + r.backward;
  r.jvp_dense = macs + act;
  return r;
}

}  // namespace gsc

#endif  // GSC_HEAD_HPP
