#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crashseq/random.hpp"

namespace crashseq {

struct ModelConfig {
  std::size_t input_dim = 2048;
  std::size_t d_model = 512;
  std::size_t num_layers = 3;
  std::size_t num_heads = 8;
  std::size_t ffn_dim = 2048;
  double dropout_rate = 0.1;
  std::size_t num_classes = 2;
  std::size_t max_len = 512;

  std::size_t head_dim() const { return d_model / num_heads; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, T fill = T{}) : shape(std::move(dims)) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    values.assign(n, fill);
  }
  std::size_t size() const { return values.size(); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Weight matrices are stored [out][in], so y = W x + b.
template <typename T>
struct EncoderLayerParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> norm1_gamma, norm1_beta, norm2_gamma, norm2_beta;

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& fn) {
    fn(prefix + "attn.wq", self.wq);
    fn(prefix + "attn.bq", self.bq);
    fn(prefix + "attn.wk", self.wk);
    fn(prefix + "attn.bk", self.bk);
    fn(prefix + "attn.wv", self.wv);
    fn(prefix + "attn.bv", self.bv);
    fn(prefix + "attn.wo", self.wo);
    fn(prefix + "attn.bo", self.bo);
    fn(prefix + "ffn.w1", self.w1);
    fn(prefix + "ffn.b1", self.b1);
    fn(prefix + "ffn.w2", self.w2);
    fn(prefix + "ffn.b2", self.b2);
    fn(prefix + "norm1.gamma", self.norm1_gamma);
    fn(prefix + "norm1.beta", self.norm1_beta);
    fn(prefix + "norm2.gamma", self.norm2_gamma);
    fn(prefix + "norm2.beta", self.norm2_beta);
  }
  friend bool operator==(const EncoderLayerParams&, const EncoderLayerParams&) = default;
};

// All learnable tensors. The float instantiation holds the model, the double
// one holds gradients and optimizer moments with identical layout.
template <typename T>
struct BasicParams {
  Tensor<T> proj_w, proj_b;
  std::vector<EncoderLayerParams<T>> layers;
  Tensor<T> head_w, head_b;

  // fn(name, tensor) in a fixed canonical order.
  template <typename F>
  void for_each(F&& fn) {
    visit_all(*this, fn);
  }
  template <typename F>
  void for_each(F&& fn) const {
    visit_all(*this, fn);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }

  // Zero-filled tensors with this layout, in another element type.
  template <typename U>
  BasicParams<U> zeros_like() const {
    BasicParams<U> out;
    out.proj_w = Tensor<U>(proj_w.shape);
    out.proj_b = Tensor<U>(proj_b.shape);
    for (const auto& layer : layers) {
      EncoderLayerParams<U> l;
      auto copy_shape = [](const Tensor<T>& src) { return Tensor<U>(src.shape); };
      l.wq = copy_shape(layer.wq);
      l.bq = copy_shape(layer.bq);
      l.wk = copy_shape(layer.wk);
      l.bk = copy_shape(layer.bk);
      l.wv = copy_shape(layer.wv);
      l.bv = copy_shape(layer.bv);
      l.wo = copy_shape(layer.wo);
      l.bo = copy_shape(layer.bo);
      l.w1 = copy_shape(layer.w1);
      l.b1 = copy_shape(layer.b1);
      l.w2 = copy_shape(layer.w2);
      l.b2 = copy_shape(layer.b2);
      l.norm1_gamma = copy_shape(layer.norm1_gamma);
      l.norm1_beta = copy_shape(layer.norm1_beta);
      l.norm2_gamma = copy_shape(layer.norm2_gamma);
      l.norm2_beta = copy_shape(layer.norm2_beta);
      out.layers.push_back(std::move(l));
    }
    out.head_w = Tensor<U>(head_w.shape);
    out.head_b = Tensor<U>(head_b.shape);
    return out;
  }

  friend bool operator==(const BasicParams&, const BasicParams&) = default;

 private:
  template <typename Self, typename F>
  static void visit_all(Self& self, F& fn) {
    fn(std::string("proj.weight"), self.proj_w);
    fn(std::string("proj.bias"), self.proj_b);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      EncoderLayerParams<T>::visit(self.layers[i], "layers." + std::to_string(i) + ".", fn);
    }
    fn(std::string("head.weight"), self.head_w);
    fn(std::string("head.bias"), self.head_b);
  }
};

using ModelParams = BasicParams<float>;
using Gradients = BasicParams<double>;

// Correctly shaped tensors: zero weights and biases, unit layer-norm gains.
ModelParams zero_params(const ModelConfig& config);

// Xavier-uniform weights, zero biases, unit layer-norm gains.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Throws FormatError when a tensor shape disagrees with the config.
void check_shapes(const ModelParams& params, const ModelConfig& config);

// Dense row-major double matrix for activations.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
  friend bool operator==(const Matrix&, const Matrix&) = default;
};

// B clips padded to T_max frames. mask[b * t_max + t] is 1 on real frames.
struct PaddedBatch {
  std::size_t batch = 0;
  std::size_t t_max = 0;
  std::size_t dim = 0;
  std::vector<float> features;  // B x T_max x D
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> lengths;

  std::span<const float> frame(std::size_t b, std::size_t t) const {
    return {features.data() + (b * t_max + t) * dim, dim};
  }
  bool valid(std::size_t b, std::size_t t) const { return mask[b * t_max + t] != 0; }
};

// z_t = W_p x_t + b_p for every position, padded ones included.
std::vector<Matrix> project(const PaddedBatch& batch, const ModelParams& params);

// PE(t, 2i) = sin(t / 10000^(2i/d)), PE(t, 2i+1) = cos(t / 10000^(2i/d)).
Matrix positional_encoding(std::size_t length, std::size_t d_model, std::size_t max_len);

// Post-norm encoder stack with key masking. Padded rows of the result are
// zero. When `training` is set, dropout masks are drawn from `rng`.
std::vector<Matrix> encoder_forward(const std::vector<Matrix>& z_prime, const PaddedBatch& batch,
                                    const ModelParams& params, const ModelConfig& config,
                                    bool training = false, Rng* rng = nullptr);

// Mean over valid rows; divisor is the valid count.
Matrix masked_mean_pool(const std::vector<Matrix>& hidden, const PaddedBatch& batch);

Matrix classify(const Matrix& pooled, const ModelParams& params);
Matrix softmax_rows(const Matrix& logits);
// Batch mean of -log softmax(logits)[label].
double cross_entropy(const Matrix& logits, std::span<const int> labels);

// project -> +PE -> dropout -> encoder -> pool -> head. Returns B x 2 logits.
Matrix forward(const PaddedBatch& batch, const ModelParams& params, const ModelConfig& config,
               bool training = false, Rng* rng = nullptr);

struct LossAndGradients {
  double loss = 0.0;
  Matrix logits;
  Gradients grads;
};

// Exact reverse-mode gradients of the batch-mean cross-entropy. With a
// non-null rng, dropout is active and its masks are drawn exactly as the
// training-mode forward would draw them from the same generator state.
LossAndGradients backward(const PaddedBatch& batch, std::span<const int> labels,
                          const ModelParams& params, const ModelConfig& config,
                          Rng* dropout_rng = nullptr);

// Post-softmax attention, [layer][b][head][query][key] flattened. Padded
// query rows and padded key columns are zero.
struct AttentionMaps {
  std::size_t layers = 0;
  std::size_t batch = 0;
  std::size_t heads = 0;
  std::size_t t_max = 0;
  std::vector<double> values;

  double at(std::size_t l, std::size_t b, std::size_t h, std::size_t q, std::size_t k) const {
    return values[(((l * batch + b) * heads + h) * t_max + q) * t_max + k];
  }
};

AttentionMaps attention_weights(const PaddedBatch& batch, const ModelParams& params,
                                const ModelConfig& config);

}  // namespace crashseq
