#ifndef IMA_TESTS_SUPPORT_HPP
#define IMA_TESTS_SUPPORT_HPP

#include "ima/nn.hpp"

#include <atomic>
#include <cmath>
#include <random>
#include <span>
#include <vector>

namespace ima::test {

// Row-major W (out x in) then b.
inline Vec pack_linear(const Mat& w, const Vec& b) {
  Vec p(w.size() + b.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c) p[k++] = w(r, c);
  for (Eigen::Index r = 0; r < b.size(); ++r) p[k++] = b[r];
  return p;
}

inline Model linear_model(const Mat& w, const Vec& b) {
  return Model({LayerSpec::linear(static_cast<int>(w.cols()), static_cast<int>(w.rows()))}, static_cast<int>(w.rows()),
               pack_linear(w, b), 0);
}

// Two-class linear model whose logit difference z1 - z0 = n.x - c for unit n.
inline Model hyperplane_model(const Vec& n, double c, double scale = 1.0) {
  Mat w(2, n.size());
  w.row(0) = -0.5 * scale * n.transpose();
  w.row(1) = 0.5 * scale * n.transpose();
  Vec b(2);
  b << 0.5 * scale * c, -0.5 * scale * c;
  return linear_model(w, b);
}

// 1-D model predicting class 1 for x > t.
inline Model threshold_model(double t, double scale = 10.0) {
  Vec n(1);
  n << 1.0;
  return hyperplane_model(n, t, scale);
}

inline std::vector<LayerSpec> random_architecture(std::mt19937_64& rng, int max_layers = 4, int max_dim = 64) {
  std::uniform_int_distribution<int> n_lin(1, max_layers);
  std::uniform_int_distribution<int> dim(1, max_dim);
  std::uniform_int_distribution<int> classes(2, 5);
  std::uniform_int_distribution<int> act(0, 2);
  const int layers = n_lin(rng);
  std::vector<LayerSpec> out;
  int in = dim(rng);
  for (int k = 0; k < layers; ++k) {
    const int last = k + 1 == layers;
    const int o = last ? classes(rng) : dim(rng);
    out.push_back(LayerSpec::linear(in, o));
    if (!last) {
      const int a = act(rng);
      if (a == 1 && o >= 2) out.push_back(LayerSpec::layer_norm(o));
      out.push_back(LayerSpec::leaky_relu(0.01 + 0.3 * std::uniform_real_distribution<double>(0, 1)(rng)));
    }
    in = o;
  }
  return out;
}

inline int output_dim(const std::vector<LayerSpec>& layers) {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (it->kind == LayerKind::linear) return it->out_dim;
  return 0;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

inline double max_rel_err(const Vec& a, const Vec& b) {
  const double scale = std::max({1e-8, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

// Central-difference gradient of f at x.
template <class F>
Vec central_diff(F&& f, const Vec& x, double h = 1e-4) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

// Wraps a model and counts calls; gradient access can be disabled.
template <class Inner>
struct Counting {
  const Inner* inner;
  mutable std::atomic<long> logit_calls{0};
  mutable std::atomic<long> logit_columns{0};
  mutable std::atomic<long> grad_calls{0};
  mutable std::atomic<long> grad_columns{0};

  explicit Counting(const Inner& m) : inner(&m) {}
  [[nodiscard]] Mat logits(const Mat& x) const {
    ++logit_calls;
    logit_columns += x.cols();
    return inner->logits(x);
  }
  [[nodiscard]] InputGradient input_gradient(const Mat& x, std::span<const int> y, LossKind kind) const {
    ++grad_calls;
    grad_columns += x.cols();
    return inner->input_gradient(x, y, kind);
  }
  [[nodiscard]] int input_dim() const { return inner->input_dim(); }
  [[nodiscard]] int num_classes() const { return inner->num_classes(); }
};

// Forward-only view: no input_gradient member at all.
template <class Inner>
struct BlackBox {
  const Inner* inner;
  mutable long calls = 0;
  [[nodiscard]] Mat logits(const Mat& x) const {
    ++calls;
    return inner->logits(x);
  }
  [[nodiscard]] int input_dim() const { return inner->input_dim(); }
  [[nodiscard]] int num_classes() const { return inner->num_classes(); }
};

}  // namespace ima::test

#endif  // IMA_TESTS_SUPPORT_HPP
