#ifndef IMA_NN_HPP
#define IMA_NN_HPP

#include "ima/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ima {

enum class LayerKind { linear, leaky_relu, layer_norm };

struct LayerSpec {
  LayerKind kind = LayerKind::linear;
  int in_dim = 0;   // linear; layer_norm uses in_dim == out_dim == dim
  int out_dim = 0;
  double negative_slope = 0.01;
  double epsilon = 1e-5;

  static LayerSpec linear(int in, int out) { return {LayerKind::linear, in, out, 0.01, 1e-5}; }
  static LayerSpec leaky_relu(double slope = 0.01) { return {LayerKind::leaky_relu, 0, 0, slope, 1e-5}; }
  static LayerSpec layer_norm(int dim, double eps = 1e-5) { return {LayerKind::layer_norm, dim, dim, 0.01, eps}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

enum class LossKind { cross_entropy, logit_margin };

inline std::string to_string(LossKind k) { return k == LossKind::cross_entropy ? "ce" : "margin"; }

// Anything that maps a batch of inputs (one per column) to logits.
template <class M>
concept Classifier = requires(const M& m, const Mat& x) {
  { m.logits(x) } -> std::convertible_to<Mat>;
  { m.input_dim() } -> std::convertible_to<int>;
  { m.num_classes() } -> std::convertible_to<int>;
};

struct InputGradient {
  Mat logits;  // logits at the evaluation points
  Mat grad;    // column j: d loss_j / d x_j
};

template <class M>
concept DifferentiableClassifier = Classifier<M> && requires(const M& m, const Mat& x, std::span<const int> y) {
  { m.input_gradient(x, y, LossKind::cross_entropy) } -> std::convertible_to<InputGradient>;
};

// ---------------------------------------------------------------------------
// Loss primitives on a single logit vector.

inline void require_finite(const Eigen::Ref<const Vec>& z) {
  if (!z.allFinite()) throw NumericError("non-finite logits");
}

inline Vec softmax_probs(const Eigen::Ref<const Vec>& logits) {
  require_finite(logits);
  Vec p = (logits.array() - logits.maxCoeff()).exp();
  p /= p.sum();
  return p;
}

inline double log_sum_exp(const Eigen::Ref<const Vec>& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

inline int argmax(const Eigen::Ref<const Vec>& z) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < z.size(); ++j)
    if (z[j] > z[best]) best = j;
  return static_cast<int>(best);
}

// Largest competing logit; ties resolve to the lowest class index.
inline int runner_up(const Eigen::Ref<const Vec>& z, int y) {
  int best = -1;
  for (int j = 0; j < z.size(); ++j) {
    if (j == y) continue;
    if (best < 0 || z[j] > z[best]) best = j;
  }
  return best;
}

inline void check_label(int y, int num_classes) {
  if (y < 0 || y >= num_classes)
    throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
}

// cross_entropy: -log P_y.  logit_margin: max_{j != y} z_j - z_y.
inline double loss_from_logits(const Eigen::Ref<const Vec>& z, int y, LossKind kind) {
  require_finite(z);
  check_label(y, static_cast<int>(z.size()));
  if (kind == LossKind::cross_entropy) return log_sum_exp(z) - z[y];
  return z[runner_up(z, y)] - z[y];
}

// d loss / d logits, written into `out`.
inline void loss_logit_gradient(const Eigen::Ref<const Vec>& z, int y, LossKind kind, Eigen::Ref<Vec> out) {
  if (kind == LossKind::cross_entropy) {
    const double m = z.maxCoeff();
    out = (z.array() - m).exp();
    out /= out.sum();
    // -sum of the others keeps precision when P_y rounds to 1.
    out[y] = 0.0;
    out[y] = -out.sum();
  } else {
    out.setZero();
    out[runner_up(z, y)] = 1.0;
    out[y] = -1.0;
  }
}

// ---------------------------------------------------------------------------

struct ParamGradient {
  Vec grad;
  Vec losses;  // unweighted per-sample loss
};

class Model {
public:
  Model(std::vector<LayerSpec> layers, int num_classes, std::uint64_t seed)
      : layers_(std::move(layers)), num_classes_(num_classes), seed_(seed) {
    validate();
    initialize();
  }

  Model(std::vector<LayerSpec> layers, int num_classes, Vec params, std::uint64_t seed)
      : layers_(std::move(layers)), num_classes_(num_classes), seed_(seed) {
    validate();
    if (params.size() != static_cast<Eigen::Index>(num_params_))
      throw ShapeError("parameter vector has " + std::to_string(params.size()) + " entries, expected " +
                       std::to_string(num_params_));
    params_ = std::move(params);
  }

  [[nodiscard]] const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  [[nodiscard]] int input_dim() const noexcept { return input_dim_; }
  [[nodiscard]] int num_classes() const noexcept { return num_classes_; }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] std::size_t num_params() const noexcept { return num_params_; }
  [[nodiscard]] const Vec& params() const noexcept { return params_; }

  void set_params(Vec p) {
    if (p.size() != params_.size()) throw ShapeError("parameter length mismatch");
    params_ = std::move(p);
  }
  // Exclusive-writer access for optimizers.
  Vec& mutable_params() noexcept { return params_; }

  // (offset, length) of every parameter block: weights then biases per linear layer.
  [[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> param_blocks() const {
    std::vector<std::pair<std::size_t, std::size_t>> blocks;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& l = layers_[k];
      if (l.kind != LayerKind::linear) continue;
      const std::size_t w = static_cast<std::size_t>(l.in_dim) * l.out_dim;
      blocks.emplace_back(offsets_[k], w);
      blocks.emplace_back(offsets_[k] + w, static_cast<std::size_t>(l.out_dim));
    }
    return blocks;
  }

  [[nodiscard]] Mat logits(const Mat& x) const {
    check_input(x);
    Mat a = x;
    for (std::size_t k = 0; k < layers_.size(); ++k) a = apply_layer(k, a, nullptr);
    return a;
  }

  [[nodiscard]] InputGradient input_gradient(const Mat& x, std::span<const int> y, LossKind kind) const {
    check_input(x);
    check_labels(y, x.cols());
    Tape tape;
    Mat z = run_forward(x, tape);
    Mat dz = logit_gradients(z, y, kind, {});
    InputGradient out;
    out.grad = backward(tape, std::move(dz), nullptr, true);
    out.logits = std::move(z);
    return out;
  }

  // Gradient of sum_j w_j * loss_j with respect to the parameters.
  [[nodiscard]] ParamGradient param_gradient(const Mat& x, std::span<const int> y, std::span<const double> w,
                                             LossKind kind) const {
    check_input(x);
    check_labels(y, x.cols());
    if (x.cols() == 0) throw UsageError("empty batch");
    if (w.size() != static_cast<std::size_t>(x.cols())) throw ShapeError("weight count does not match batch");
    for (double wi : w)
      if (!std::isfinite(wi)) throw NumericError("non-finite sample weight");
    Tape tape;
    Mat z = run_forward(x, tape);
    ParamGradient out;
    out.losses.resize(z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) out.losses[j] = loss_from_logits(z.col(j), y[j], kind);
    Mat dz = logit_gradients(z, y, kind, w);
    out.grad = Vec::Zero(params_.size());
    backward(tape, std::move(dz), &out.grad, false);
    return out;
  }

private:
  struct Tape {
    std::vector<Mat> inputs;   // input seen by each layer
    std::vector<Mat> normed;   // layer_norm output, by layer index
    std::vector<Eigen::RowVectorXd> inv_std;
  };

  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  void validate() {
    if (num_classes_ < 1) throw ShapeError("num_classes must be positive");
    std::optional<int> width;
    bool has_linear = false;
    offsets_.assign(layers_.size(), 0);
    std::size_t offset = 0;
    input_dim_ = 0;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      auto& l = layers_[k];
      const std::string where = "layer " + std::to_string(k) + ": ";
      switch (l.kind) {
        case LayerKind::linear:
          if (l.in_dim <= 0 || l.out_dim <= 0) throw ShapeError(where + "linear dimensions must be positive");
          if (width && *width != l.in_dim)
            throw ShapeError(where + "in_dim " + std::to_string(l.in_dim) + " does not chain with width " +
                             std::to_string(*width));
          if (!width) input_dim_ = l.in_dim;
          width = l.out_dim;
          has_linear = true;
          offsets_[k] = offset;
          offset += static_cast<std::size_t>(l.in_dim) * l.out_dim + l.out_dim;
          break;
        case LayerKind::leaky_relu:
          if (!(l.negative_slope > 0.0 && l.negative_slope < 1.0))
            throw ShapeError(where + "negative_slope must lie in (0, 1)");
          break;
        case LayerKind::layer_norm:
          if (!(l.epsilon > 0.0)) throw ShapeError(where + "layer_norm epsilon must be positive");
          if (l.in_dim <= 0) throw ShapeError(where + "layer_norm dim must be positive");
          l.out_dim = l.in_dim;
          if (width && *width != l.in_dim) throw ShapeError(where + "layer_norm dim does not match width");
          if (!width) input_dim_ = l.in_dim;
          width = l.in_dim;
          break;
      }
    }
    if (!has_linear) throw ShapeError("model needs at least one linear layer");
    if (*width != num_classes_) throw ShapeError("output width does not equal num_classes");
    num_params_ = offset;
  }

  void initialize() {
    params_.resize(static_cast<Eigen::Index>(num_params_));
    auto rng = make_rng(seed_, Stream::init);
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& l = layers_[k];
      if (l.kind != LayerKind::linear) continue;
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_dim));
      std::uniform_real_distribution<double> u(-bound, bound);
      const std::size_t n = static_cast<std::size_t>(l.in_dim) * l.out_dim + l.out_dim;
      for (std::size_t i = 0; i < n; ++i) params_[static_cast<Eigen::Index>(offsets_[k] + i)] = u(rng);
    }
  }

  void check_input(const Mat& x) const {
    if (x.rows() != input_dim_)
      throw ShapeError("input has dimension " + std::to_string(x.rows()) + ", model expects " +
                       std::to_string(input_dim_));
  }

  void check_labels(std::span<const int> y, Eigen::Index n) const {
    if (y.size() != static_cast<std::size_t>(n)) throw ShapeError("label count does not match batch");
    for (int label : y) check_label(label, num_classes_);
  }

  [[nodiscard]] Eigen::Map<const RowMajor> weights(std::size_t k) const {
    const auto& l = layers_[k];
    return {params_.data() + offsets_[k], l.out_dim, l.in_dim};
  }
  [[nodiscard]] Eigen::Map<const Vec> bias(std::size_t k) const {
    const auto& l = layers_[k];
    return {params_.data() + offsets_[k] + static_cast<std::size_t>(l.in_dim) * l.out_dim, l.out_dim};
  }

  Mat apply_layer(std::size_t k, const Mat& a, Tape* tape) const {
    const auto& l = layers_[k];
    switch (l.kind) {
      case LayerKind::linear: {
        Mat z = weights(k) * a;
        z.colwise() += bias(k);
        return z;
      }
      case LayerKind::leaky_relu:
        return (a.array() > 0.0).select(a, l.negative_slope * a);
      case LayerKind::layer_norm: {
        const Eigen::RowVectorXd mean = a.colwise().mean();
        Mat centered = a.rowwise() - mean;
        const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
        const Eigen::RowVectorXd inv = (var.array() + l.epsilon).rsqrt();
        Mat y = centered.array().rowwise() * inv.array();
        if (tape) {
          tape->normed[k] = y;
          tape->inv_std[k] = inv;
        }
        return y;
      }
    }
    return a;
  }

  Mat run_forward(const Mat& x, Tape& tape) const {
    tape.inputs.resize(layers_.size());
    tape.normed.resize(layers_.size());
    tape.inv_std.resize(layers_.size());
    Mat a = x;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      tape.inputs[k] = a;
      a = apply_layer(k, a, &tape);
    }
    return a;
  }

  static Mat logit_gradients(const Mat& z, std::span<const int> y, LossKind kind, std::span<const double> w) {
    Mat dz(z.rows(), z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      require_finite(z.col(j));
      loss_logit_gradient(z.col(j), y[j], kind, dz.col(j));
      if (!w.empty()) dz.col(j) *= w[j];
    }
    return dz;
  }

  // Propagates dz back through the tape. Parameter gradients accumulate into
  // `dparams` when given; the input gradient is formed only when requested.
  Mat backward(const Tape& tape, Mat grad, Vec* dparams, bool want_input) const {
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const auto& l = layers_[k];
      const bool need_dx = want_input || k > 0;
      switch (l.kind) {
        case LayerKind::linear: {
          if (dparams) {
            const std::size_t w_len = static_cast<std::size_t>(l.in_dim) * l.out_dim;
            Eigen::Map<RowMajor> dw(dparams->data() + offsets_[k], l.out_dim, l.in_dim);
            Eigen::Map<Vec> db(dparams->data() + offsets_[k] + w_len, l.out_dim);
            dw.noalias() += grad * tape.inputs[k].transpose();
            db += grad.rowwise().sum();
          }
          if (need_dx) grad = weights(k).transpose() * grad;
          break;
        }
        case LayerKind::leaky_relu: {
          // Slope at exactly zero is negative_slope.
          const auto& in = tape.inputs[k];
          grad = (in.array() > 0.0).select(grad, l.negative_slope * grad);
          break;
        }
        case LayerKind::layer_norm: {
          const Mat& y = tape.normed[k];
          const Eigen::RowVectorXd mean_g = grad.colwise().mean();
          const Eigen::RowVectorXd mean_gy = (grad.array() * y.array()).colwise().mean();
          Mat dx = grad.rowwise() - mean_g;
          dx.array() -= y.array().rowwise() * mean_gy.array();
          dx.array().rowwise() *= tape.inv_std[k].array();
          grad = std::move(dx);
          break;
        }
      }
      if (!need_dx) break;
    }
    return grad;
  }

  std::vector<LayerSpec> layers_;
  int num_classes_ = 0;
  std::uint64_t seed_ = 0;
  int input_dim_ = 0;
  std::size_t num_params_ = 0;
  std::vector<std::size_t> offsets_;
  Vec params_;
};

// ---------------------------------------------------------------------------
// Single-sample conveniences.

template <Classifier M>
Vec forward(const M& model, const Vec& x) {
  if (x.size() != model.input_dim()) throw ShapeError("input dimension mismatch");
  return model.logits(x);
}

template <Classifier M>
double loss(const M& model, const Vec& x, int y, LossKind kind) {
  check_label(y, model.num_classes());
  return loss_from_logits(forward(model, x), y, kind);
}

template <Classifier M>
int predict(const M& model, const Vec& x) {
  return argmax(forward(model, x));
}

// Argmax class of every column.
template <Classifier M>
std::vector<int> predict(const M& model, const Mat& x) {
  const Mat z = model.logits(x);
  std::vector<int> out(static_cast<std::size_t>(z.cols()));
  for (Eigen::Index j = 0; j < z.cols(); ++j) out[static_cast<std::size_t>(j)] = argmax(z.col(j));
  return out;
}

template <DifferentiableClassifier M>
Vec grad_input(const M& model, const Vec& x, int y, LossKind kind) {
  if (x.size() != model.input_dim()) throw ShapeError("input dimension mismatch");
  const int labels[1] = {y};
  return model.input_gradient(x, labels, kind).grad.col(0);
}

struct WeightedSample {
  Vec x;
  int y = 0;
  double weight = 1.0;
};

inline Vec grad_params(const Model& model, std::span<const WeightedSample> batch, LossKind kind) {
  if (batch.empty()) throw UsageError("empty batch");
  Mat x(model.input_dim(), static_cast<Eigen::Index>(batch.size()));
  std::vector<int> y;
  std::vector<double> w;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (batch[j].x.size() != model.input_dim()) throw ShapeError("input dimension mismatch");
    x.col(static_cast<Eigen::Index>(j)) = batch[j].x;
    y.push_back(batch[j].y);
    w.push_back(batch[j].weight);
  }
  return model.param_gradient(x, y, w, kind).grad;
}

// ---------------------------------------------------------------------------
// Adaptive-moment optimizer with bias correction.

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vec m;
  Vec v;
  std::int64_t step = 0;
};

inline void adam_step(Model& model, const Vec& grad, AdamState& state, const AdamHyper& hyper) {
  Vec& p = model.mutable_params();
  if (grad.size() != p.size()) throw ShapeError("gradient length does not match parameters");
  if (!grad.allFinite()) throw NumericError("non-finite gradient; step rejected");
  if (state.m.size() != p.size()) {
    state.m = Vec::Zero(p.size());
    state.v = Vec::Zero(p.size());
  }
  ++state.step;
  state.m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grad;
  state.v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  p.array() -= hyper.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + hyper.eps);
}

// ---------------------------------------------------------------------------
// Architecture strings such as "Linear(2,32)-LR-Linear(32,64)-LN-LR-Linear(64,2)".
// LN takes the width of the preceding linear layer.

inline std::vector<LayerSpec> parse_architecture(const std::string& text, double negative_slope = 0.01,
                                                 double ln_epsilon = 1e-5) {
  std::vector<LayerSpec> layers;
  std::optional<int> width;
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) -> void {
    throw ConfigError("bad architecture '" + text + "': " + why);
  };
  while (pos <= text.size()) {
    // A '-' inside parentheses is not a separator.
    std::size_t end = pos;
    int depth = 0;
    while (end < text.size() && (text[end] != '-' || depth > 0)) {
      if (text[end] == '(') ++depth;
      if (text[end] == ')') --depth;
      ++end;
    }
    std::string tok;
    for (char c : text.substr(pos, end - pos))
      if (!std::isspace(static_cast<unsigned char>(c))) tok += c;
    std::string lower = tok;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "lr") {
      layers.push_back(LayerSpec::leaky_relu(negative_slope));
    } else if (lower == "ln") {
      if (!width) fail("LN before any linear layer");
      layers.push_back(LayerSpec::layer_norm(*width, ln_epsilon));
    } else if (lower.rfind("linear(", 0) == 0 && lower.back() == ')') {
      const std::string args = lower.substr(7, lower.size() - 8);
      const auto comma = args.find(',');
      int in = 0, out = 0;
      if (comma == std::string::npos || !parse_int(args.substr(0, comma), in) ||
          !parse_int(args.substr(comma + 1), out))
        fail("cannot read '" + tok + "'");
      layers.push_back(LayerSpec::linear(in, out));
      width = out;
    } else {
      fail("unknown layer '" + tok + "'");
    }
    pos = end + 1;
  }
  return layers;
}

inline std::string describe_architecture(const std::vector<LayerSpec>& layers) {
  std::string out;
  for (const auto& l : layers) {
    if (!out.empty()) out += '-';
    switch (l.kind) {
      case LayerKind::linear: out += "Linear(" + std::to_string(l.in_dim) + "," + std::to_string(l.out_dim) + ")"; break;
      case LayerKind::leaky_relu: out += "LR"; break;
      case LayerKind::layer_norm: out += "LN"; break;
    }
  }
  return out;
}

}  // namespace ima

#endif  // IMA_NN_HPP
