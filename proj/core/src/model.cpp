#include "crashseq/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "crashseq/error.hpp"
#include "crashseq/parallel.hpp"

namespace crashseq {

void ModelConfig::validate() const {
  if (input_dim < 1 || d_model < 1 || num_layers < 1 || num_heads < 1 || ffn_dim < 1 || max_len < 1) {
    throw InvalidArgument("model dimensions must be >= 1");
  }
  if (d_model % num_heads != 0) throw InvalidArgument("d_model must be divisible by num_heads");
  if (num_classes != 2) throw InvalidArgument("num_classes must be 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("dropout_rate must lie in [0, 1)");
}

namespace {

constexpr double kLayerNormEps = 1e-5;
// Below this many multiply-adds a kernel runs on the calling thread.
constexpr std::size_t kParallelWork = 1 << 18;

void xavier(Tensor<float>& t, Rng& rng) {
  const double fan_out = static_cast<double>(t.shape[0]);
  const double fan_in = static_cast<double>(t.shape[1]);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (float& w : t.values) w = static_cast<float>((2.0 * unit_uniform(rng) - 1.0) * limit);
}

Tensor<float> matrix(std::size_t rows, std::size_t cols) { return Tensor<float>({rows, cols}); }
Tensor<float> vec(std::size_t n, float fill = 0.0f) { return Tensor<float>({n}, fill); }

void for_rows(std::size_t rows, std::size_t work, const std::function<void(std::size_t)>& fn) {
  if (work < kParallelWork) {
    for (std::size_t r = 0; r < rows; ++r) fn(r);
  } else {
    parallel_for(rows, fn);
  }
}

// y = x W^T + b with W stored [out][in].
Matrix linear(const Matrix& x, const Tensor<float>& w, const Tensor<float>& b) {
  const std::size_t out = w.shape[0];
  const std::size_t in = w.shape[1];
  Matrix y(x.rows, out);
  for_rows(out, x.rows * out * in, [&](std::size_t o) {
    const float* wr = &w.values[o * in];
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double* xr = &x.values[i * in];
      double acc = 0.0;
      for (std::size_t k = 0; k < in; ++k) acc += xr[k] * static_cast<double>(wr[k]);
      y.values[i * out + o] = acc + static_cast<double>(b.values[o]);
    }
  });
  return y;
}

// Accumulates dW += dy^T x, db += colsum(dy); returns dx = dy W when wanted.
void linear_backward(const Matrix& x, const Matrix& dy, const Tensor<float>& w, Tensor<double>& dw,
                     Tensor<double>& db, Matrix* dx) {
  const std::size_t out = w.shape[0];
  const std::size_t in = w.shape[1];
  const std::size_t work = x.rows * out * in;
  for_rows(out, work, [&](std::size_t o) {
    double* dwr = &dw.values[o * in];
    double bsum = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double g = dy.values[i * out + o];
      bsum += g;
      if (g == 0.0) continue;
      const double* xr = &x.values[i * in];
      for (std::size_t k = 0; k < in; ++k) dwr[k] += g * xr[k];
    }
    db.values[o] += bsum;
  });
  if (dx == nullptr) return;
  *dx = Matrix(x.rows, in);
  for_rows(x.rows, work, [&](std::size_t i) {
    double* dxr = &dx->values[i * in];
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dy.values[i * out + o];
      if (g == 0.0) continue;
      const float* wr = &w.values[o * in];
      for (std::size_t k = 0; k < in; ++k) dxr[k] += g * static_cast<double>(wr[k]);
    }
  });
}

struct NormCache {
  Matrix xhat;
  std::vector<double> inv_std;
};

Matrix layer_norm(const Matrix& x, const Tensor<float>& gamma, const Tensor<float>& beta, NormCache* cache) {
  const std::size_t n = x.cols;
  Matrix y(x.rows, n);
  if (cache) {
    cache->xhat = Matrix(x.rows, n);
    cache->inv_std.assign(x.rows, 0.0);
  }
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto r = x.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (r[j] - mean) * inv;
      y.at(i, j) = xh * gamma.values[j] + beta.values[j];
      if (cache) cache->xhat.at(i, j) = xh;
    }
    if (cache) cache->inv_std[i] = inv;
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const NormCache& cache, const Tensor<float>& gamma,
                           Tensor<double>& dgamma, Tensor<double>& dbeta) {
  const std::size_t n = dy.cols;
  Matrix dx(dy.rows, n);
  std::vector<double> dxhat(n);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    double mean_d = 0.0;
    double mean_dx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double g = dy.at(i, j);
      const double xh = cache.xhat.at(i, j);
      dgamma.values[j] += g * xh;
      dbeta.values[j] += g;
      dxhat[j] = g * gamma.values[j];
      mean_d += dxhat[j];
      mean_dx += dxhat[j] * xh;
    }
    mean_d /= static_cast<double>(n);
    mean_dx /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
      dx.at(i, j) = cache.inv_std[i] * (dxhat[j] - mean_d - cache.xhat.at(i, j) * mean_dx);
    }
  }
  return dx;
}

// Inverted dropout. Returns the per-element scale (empty when inactive) and
// applies it to x in place.
Matrix apply_dropout(Matrix& x, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return {};
  Matrix scale(x.rows, x.cols);
  const double keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    scale.values[i] = unit_uniform(*rng) >= rate ? keep : 0.0;
    x.values[i] *= scale.values[i];
  }
  return scale;
}

void scale_in_place(Matrix& g, const Matrix& scale) {
  if (scale.values.empty()) return;
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] *= scale.values[i];
}

void add_in_place(Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] += b.values[i];
}

struct LayerCache {
  Matrix input;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head, L x L
  Matrix context;             // heads concatenated, L x d
  Matrix drop1;
  NormCache norm1;
  Matrix y1;
  Matrix pre_relu;
  Matrix relu;
  Matrix drop2;
  NormCache norm2;
};

struct ClipCache {
  Matrix x;  // L x D
  Matrix drop0;
  std::vector<LayerCache> layers;
  Matrix hidden;
  std::vector<double> pooled;
};

Matrix encoder_layer(const Matrix& e, const EncoderLayerParams<float>& p, const ModelConfig& cfg, Rng* rng,
                     LayerCache* cache, std::vector<Matrix>* probs_out) {
  const std::size_t len = e.rows;
  const std::size_t heads = cfg.num_heads;
  const std::size_t dk = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix q = linear(e, p.wq, p.bq);
  Matrix k = linear(e, p.wk, p.bk);
  Matrix v = linear(e, p.wv, p.bv);
  Matrix context(len, cfg.d_model);
  std::vector<Matrix> probs(heads, Matrix(len, len));
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dk;
    Matrix& pr = probs[h];
    for (std::size_t i = 0; i < len; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += q.at(i, off + c) * k.at(j, off + c);
        pr.at(i, j) = s * scale;
        mx = std::max(mx, pr.at(i, j));
      }
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        pr.at(i, j) = std::exp(pr.at(i, j) - mx);
        z += pr.at(i, j);
      }
      for (std::size_t j = 0; j < len; ++j) pr.at(i, j) /= z;
      for (std::size_t j = 0; j < len; ++j) {
        const double w = pr.at(i, j);
        for (std::size_t c = 0; c < dk; ++c) context.at(i, off + c) += w * v.at(j, off + c);
      }
    }
  }

  Matrix attn = linear(context, p.wo, p.bo);
  Matrix drop1 = apply_dropout(attn, cfg.dropout_rate, rng);
  add_in_place(attn, e);
  NormCache n1;
  Matrix y1 = layer_norm(attn, p.norm1_gamma, p.norm1_beta, cache ? &n1 : nullptr);

  Matrix pre = linear(y1, p.w1, p.b1);
  Matrix act = pre;
  for (double& x : act.values) x = std::max(x, 0.0);
  Matrix ffn = linear(act, p.w2, p.b2);
  Matrix drop2 = apply_dropout(ffn, cfg.dropout_rate, rng);
  add_in_place(ffn, y1);
  NormCache n2;
  Matrix out = layer_norm(ffn, p.norm2_gamma, p.norm2_beta, cache ? &n2 : nullptr);

  if (probs_out) *probs_out = probs;
  if (cache) {
    cache->input = e;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->context = std::move(context);
    cache->drop1 = std::move(drop1);
    cache->norm1 = std::move(n1);
    cache->y1 = std::move(y1);
    cache->pre_relu = std::move(pre);
    cache->relu = std::move(act);
    cache->drop2 = std::move(drop2);
    cache->norm2 = std::move(n2);
  }
  return out;
}

Matrix encode_stack(Matrix e, const ModelParams& params, const ModelConfig& cfg, Rng* rng, ClipCache* cache,
                    std::vector<std::vector<Matrix>>* attention) {
  if (cache) cache->layers.resize(params.layers.size());
  if (attention) attention->resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    e = encoder_layer(e, params.layers[l], cfg, rng, cache ? &cache->layers[l] : nullptr,
                      attention ? &(*attention)[l] : nullptr);
  }
  for (double x : e.values) {
    if (!std::isfinite(x)) throw NumericError("encoder produced a non-finite activation");
  }
  return e;
}

std::vector<std::size_t> valid_positions(const PaddedBatch& batch, std::size_t b) {
  std::vector<std::size_t> pos;
  for (std::size_t t = 0; t < batch.t_max; ++t) {
    if (batch.valid(b, t)) pos.push_back(t);
  }
  return pos;
}

Matrix gather_features(const PaddedBatch& batch, std::size_t b, std::span<const std::size_t> pos) {
  Matrix x(pos.size(), batch.dim);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const auto f = batch.frame(b, pos[i]);
    std::copy(f.begin(), f.end(), x.row(i).begin());
  }
  return x;
}

// Full per-clip pipeline on the valid frames only; masked keys never enter
// the softmax, which is the same as giving them -inf scores.
std::vector<double> run_clip(const Matrix& x, const ModelParams& params, const ModelConfig& cfg, Rng* rng,
                             ClipCache* cache, std::vector<std::vector<Matrix>>* attention) {
  const std::size_t len = x.rows;
  Matrix z = linear(x, params.proj_w, params.proj_b);
  const Matrix pe = positional_encoding(len, cfg.d_model, cfg.max_len);
  add_in_place(z, pe);
  Matrix drop0 = apply_dropout(z, cfg.dropout_rate, rng);
  Matrix hidden = encode_stack(std::move(z), params, cfg, rng, cache, attention);

  std::vector<double> pooled(cfg.d_model, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j < cfg.d_model; ++j) pooled[j] += hidden.at(i, j);
  }
  for (double& p : pooled) p /= static_cast<double>(len);

  std::vector<double> logits(cfg.num_classes);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    double acc = params.head_b.values[c];
    for (std::size_t j = 0; j < cfg.d_model; ++j) acc += params.head_w.values[c * cfg.d_model + j] * pooled[j];
    logits[c] = acc;
  }
  if (cache) {
    cache->x = x;
    cache->drop0 = std::move(drop0);
    cache->hidden = std::move(hidden);
    cache->pooled = pooled;
  }
  return logits;
}

void backward_layer(const LayerCache& c, const EncoderLayerParams<float>& p, EncoderLayerParams<double>& g,
                    const ModelConfig& cfg, Matrix& grad) {
  const std::size_t len = c.input.rows;
  const std::size_t heads = cfg.num_heads;
  const std::size_t dk = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  // out = LN2(y1 + drop(ffn))
  Matrix d_res2 = layer_norm_backward(grad, c.norm2, p.norm2_gamma, g.norm2_gamma, g.norm2_beta);
  Matrix d_y1 = d_res2;
  Matrix d_ffn = std::move(d_res2);
  scale_in_place(d_ffn, c.drop2);
  Matrix d_act;
  linear_backward(c.relu, d_ffn, p.w2, g.w2, g.b2, &d_act);
  for (std::size_t i = 0; i < d_act.values.size(); ++i) {
    if (c.pre_relu.values[i] <= 0.0) d_act.values[i] = 0.0;
  }
  Matrix d_y1_ffn;
  linear_backward(c.y1, d_act, p.w1, g.w1, g.b1, &d_y1_ffn);
  add_in_place(d_y1, d_y1_ffn);

  // y1 = LN1(e + drop(attn))
  Matrix d_res1 = layer_norm_backward(d_y1, c.norm1, p.norm1_gamma, g.norm1_gamma, g.norm1_beta);
  Matrix d_e = d_res1;
  Matrix d_attn = std::move(d_res1);
  scale_in_place(d_attn, c.drop1);
  Matrix d_context;
  linear_backward(c.context, d_attn, p.wo, g.wo, g.bo, &d_context);

  Matrix dq(len, cfg.d_model), dk_m(len, cfg.d_model), dv(len, cfg.d_model);
  std::vector<double> dp(len);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dk;
    const Matrix& pr = c.probs[h];
    for (std::size_t i = 0; i < len; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < dk; ++t) s += d_context.at(i, off + t) * c.v.at(j, off + t);
        dp[j] = s;
        dot += s * pr.at(i, j);
      }
      for (std::size_t j = 0; j < len; ++j) {
        const double pij = pr.at(i, j);
        for (std::size_t t = 0; t < dk; ++t) dv.at(j, off + t) += pij * d_context.at(i, off + t);
        const double ds = pij * (dp[j] - dot) * scale;
        if (ds == 0.0) continue;
        for (std::size_t t = 0; t < dk; ++t) {
          dq.at(i, off + t) += ds * c.k.at(j, off + t);
          dk_m.at(j, off + t) += ds * c.q.at(i, off + t);
        }
      }
    }
  }
  Matrix tmp;
  linear_backward(c.input, dq, p.wq, g.wq, g.bq, &tmp);
  add_in_place(d_e, tmp);
  linear_backward(c.input, dk_m, p.wk, g.wk, g.bk, &tmp);
  add_in_place(d_e, tmp);
  linear_backward(c.input, dv, p.wv, g.wv, g.bv, &tmp);
  add_in_place(d_e, tmp);
  grad = std::move(d_e);
}

void check_batch(const PaddedBatch& batch, const ModelConfig& cfg) {
  if (batch.dim != cfg.input_dim) {
    throw InvalidArgument("batch feature dim " + std::to_string(batch.dim) + " != model input_dim " +
                          std::to_string(cfg.input_dim));
  }
  if (batch.features.size() != batch.batch * batch.t_max * batch.dim ||
      batch.mask.size() != batch.batch * batch.t_max) {
    throw InvalidArgument("padded batch buffers do not match its shape");
  }
}

std::vector<std::uint64_t> clip_seeds(std::size_t n, Rng* rng) {
  std::vector<std::uint64_t> seeds(n, 0);
  if (rng) {
    for (auto& s : seeds) s = (*rng)();
  }
  return seeds;
}

double log_softmax_at(std::span<const double> logits, std::size_t label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return logits[label] - mx - std::log(z);
}

}  // namespace

ModelParams zero_params(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model;
  ModelParams p;
  p.proj_w = matrix(d, config.input_dim);
  p.proj_b = vec(d);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    EncoderLayerParams<float> layer;
    for (auto* w : {&layer.wq, &layer.wk, &layer.wv, &layer.wo}) *w = matrix(d, d);
    for (auto* b : {&layer.bq, &layer.bk, &layer.bv, &layer.bo, &layer.b2, &layer.norm1_beta, &layer.norm2_beta}) {
      *b = vec(d);
    }
    layer.w1 = matrix(config.ffn_dim, d);
    layer.b1 = vec(config.ffn_dim);
    layer.w2 = matrix(d, config.ffn_dim);
    layer.norm1_gamma = vec(d, 1.0f);
    layer.norm2_gamma = vec(d, 1.0f);
    p.layers.push_back(std::move(layer));
  }
  p.head_w = matrix(config.num_classes, d);
  p.head_b = vec(config.num_classes);
  return p;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zero_params(config);
  Rng rng(derive_seed(seed, 0x6d6f64656cULL));
  xavier(p.proj_w, rng);
  for (auto& layer : p.layers) {
    for (auto* w : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.w1, &layer.w2}) xavier(*w, rng);
  }
  xavier(p.head_w, rng);
  return p;
}

void check_shapes(const ModelParams& params, const ModelConfig& config) {
  const ModelParams expected = zero_params(config);
  if (params.layers.size() != expected.layers.size()) {
    throw FormatError("parameter set has " + std::to_string(params.layers.size()) + " layers, config expects " +
                      std::to_string(expected.layers.size()));
  }
  std::vector<std::pair<std::string, std::vector<std::size_t>>> want;
  expected.for_each([&](const std::string& name, const Tensor<float>& t) { want.emplace_back(name, t.shape); });
  std::size_t i = 0;
  params.for_each([&](const std::string& name, const Tensor<float>& t) {
    if (t.shape != want[i].second) throw FormatError("tensor '" + name + "' has the wrong shape");
    std::size_t n = 1;
    for (std::size_t d : t.shape) n *= d;
    if (t.values.size() != n) throw FormatError("tensor '" + name + "' has the wrong element count");
    ++i;
  });
}

std::vector<Matrix> project(const PaddedBatch& batch, const ModelParams& params) {
  if (params.proj_w.shape.size() != 2 || params.proj_w.shape[1] != batch.dim) {
    throw InvalidArgument("projection weight does not match feature dim");
  }
  std::vector<Matrix> out(batch.batch);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    Matrix x(batch.t_max, batch.dim);
    std::copy(batch.features.begin() + static_cast<std::ptrdiff_t>(b * batch.t_max * batch.dim),
              batch.features.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch.t_max * batch.dim),
              x.values.begin());
    out[b] = linear(x, params.proj_w, params.proj_b);
  }
  return out;
}

Matrix positional_encoding(std::size_t length, std::size_t d_model, std::size_t max_len) {
  if (length > max_len) {
    throw InvalidArgument("sequence length " + std::to_string(length) + " exceeds max_len " +
                          std::to_string(max_len));
  }
  Matrix pe(length, d_model);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t j = 0; j < d_model; ++j) {
      const double pair = static_cast<double>(j - j % 2);
      const double angle = static_cast<double>(t) / std::pow(10000.0, pair / static_cast<double>(d_model));
      pe.at(t, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

std::vector<Matrix> encoder_forward(const std::vector<Matrix>& z_prime, const PaddedBatch& batch,
                                    const ModelParams& params, const ModelConfig& config, bool training,
                                    Rng* rng) {
  config.validate();
  if (z_prime.size() != batch.batch) throw InvalidArgument("encoder_forward: batch size mismatch");
  const auto seeds = clip_seeds(batch.batch, training ? rng : nullptr);
  std::vector<Matrix> out(batch.batch);
  parallel_for(batch.batch, [&](std::size_t b) {
    const auto pos = valid_positions(batch, b);
    Matrix e(pos.size(), config.d_model);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const auto src = z_prime[b].row(pos[i]);
      std::copy(src.begin(), src.end(), e.row(i).begin());
    }
    Rng clip_rng(seeds[b]);
    const Matrix h = encode_stack(std::move(e), params, config, (training && rng) ? &clip_rng : nullptr,
                                  nullptr, nullptr);
    out[b] = Matrix(batch.t_max, config.d_model);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      std::copy(h.row(i).begin(), h.row(i).end(), out[b].row(pos[i]).begin());
    }
  });
  return out;
}

Matrix masked_mean_pool(const std::vector<Matrix>& hidden, const PaddedBatch& batch) {
  if (hidden.size() != batch.batch) throw InvalidArgument("masked_mean_pool: batch size mismatch");
  const std::size_t d = hidden.empty() ? 0 : hidden.front().cols;
  Matrix pooled(batch.batch, d);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    std::size_t count = 0;
    for (std::size_t t = 0; t < batch.t_max; ++t) {
      if (!batch.valid(b, t)) continue;
      ++count;
      for (std::size_t j = 0; j < d; ++j) pooled.at(b, j) += hidden[b].at(t, j);
    }
    if (count == 0) throw InvalidArgument("masked_mean_pool: clip " + std::to_string(b) + " has no valid frames");
    for (std::size_t j = 0; j < d; ++j) pooled.at(b, j) /= static_cast<double>(count);
  }
  return pooled;
}

Matrix classify(const Matrix& pooled, const ModelParams& params) {
  const std::size_t classes = params.head_w.shape[0];
  const std::size_t d = params.head_w.shape[1];
  if (pooled.cols != d) throw InvalidArgument("classify: pooled width does not match head");
  Matrix logits(pooled.rows, classes);
  for (std::size_t b = 0; b < pooled.rows; ++b) {
    for (std::size_t c = 0; c < classes; ++c) {
      double acc = params.head_b.values[c];
      for (std::size_t j = 0; j < d; ++j) acc += params.head_w.values[c * d + j] * pooled.at(b, j);
      logits.at(b, c) = acc;
    }
  }
  return logits;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto r = logits.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      probs.at(i, c) = std::exp(r[c] - mx);
      z += probs.at(i, c);
    }
    for (std::size_t c = 0; c < logits.cols; ++c) probs.at(i, c) /= z;
  }
  return probs;
}

double cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows) throw InvalidArgument("cross_entropy: label count mismatch");
  if (logits.rows == 0) throw InvalidArgument("cross_entropy: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.cols) {
      throw InvalidArgument("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    }
    total -= log_softmax_at(logits.row(i), static_cast<std::size_t>(labels[i]));
  }
  return total / static_cast<double>(logits.rows);
}

Matrix forward(const PaddedBatch& batch, const ModelParams& params, const ModelConfig& config, bool training,
               Rng* rng) {
  config.validate();
  check_batch(batch, config);
  const bool dropout = training && rng != nullptr;
  const auto seeds = clip_seeds(batch.batch, dropout ? rng : nullptr);
  Matrix logits(batch.batch, config.num_classes);
  parallel_for(batch.batch, [&](std::size_t b) {
    const auto pos = valid_positions(batch, b);
    if (pos.empty()) throw InvalidArgument("clip " + std::to_string(b) + " has no valid frames");
    Rng clip_rng(seeds[b]);
    const auto l = run_clip(gather_features(batch, b, pos), params, config, dropout ? &clip_rng : nullptr,
                            nullptr, nullptr);
    std::copy(l.begin(), l.end(), logits.row(b).begin());
  });
  return logits;
}

LossAndGradients backward(const PaddedBatch& batch, std::span<const int> labels, const ModelParams& params,
                          const ModelConfig& config, Rng* dropout_rng) {
  config.validate();
  check_batch(batch, config);
  if (labels.size() != batch.batch) throw InvalidArgument("backward: label count mismatch");
  const auto seeds = clip_seeds(batch.batch, dropout_rng);

  LossAndGradients result;
  result.grads = params.zeros_like<double>();
  result.logits = Matrix(batch.batch, config.num_classes);
  Gradients& g = result.grads;
  const double inv_batch = 1.0 / static_cast<double>(batch.batch);

  // Clips run in order so gradient sums are reproducible for any thread count.
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= config.num_classes) {
      throw InvalidArgument("backward: label " + std::to_string(label) + " out of range");
    }
    const auto pos = valid_positions(batch, b);
    if (pos.empty()) throw InvalidArgument("clip " + std::to_string(b) + " has no valid frames");
    const std::size_t len = pos.size();

    Rng clip_rng(seeds[b]);
    ClipCache cache;
    const auto logits = run_clip(gather_features(batch, b, pos), params, config,
                                 dropout_rng ? &clip_rng : nullptr, &cache, nullptr);
    std::copy(logits.begin(), logits.end(), result.logits.row(b).begin());
    result.loss -= log_softmax_at(logits, static_cast<std::size_t>(label)) * inv_batch;

    // d loss / d logits = (softmax - onehot) / B
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    std::vector<double> dlogits(config.num_classes);
    for (std::size_t c = 0; c < config.num_classes; ++c) {
      dlogits[c] = (std::exp(logits[c] - mx) / z - (static_cast<int>(c) == label ? 1.0 : 0.0)) * inv_batch;
    }

    const std::size_t d = config.d_model;
    std::vector<double> dpooled(d, 0.0);
    for (std::size_t c = 0; c < config.num_classes; ++c) {
      g.head_b.values[c] += dlogits[c];
      for (std::size_t j = 0; j < d; ++j) {
        g.head_w.values[c * d + j] += dlogits[c] * cache.pooled[j];
        dpooled[j] += params.head_w.values[c * d + j] * dlogits[c];
      }
    }

    Matrix grad(len, d);
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t j = 0; j < d; ++j) grad.at(i, j) = dpooled[j] / static_cast<double>(len);
    }
    for (std::size_t l = params.layers.size(); l-- > 0;) {
      backward_layer(cache.layers[l], params.layers[l], g.layers[l], config, grad);
    }
    scale_in_place(grad, cache.drop0);
    linear_backward(cache.x, grad, params.proj_w, g.proj_w, g.proj_b, nullptr);
  }

  g.for_each([](const std::string& name, const Tensor<double>& t) {
    for (double x : t.values) {
      if (!std::isfinite(x)) throw NumericError("non-finite gradient in '" + name + "'");
    }
  });
  return result;
}

AttentionMaps attention_weights(const PaddedBatch& batch, const ModelParams& params, const ModelConfig& config) {
  config.validate();
  check_batch(batch, config);
  AttentionMaps maps;
  maps.layers = config.num_layers;
  maps.batch = batch.batch;
  maps.heads = config.num_heads;
  maps.t_max = batch.t_max;
  maps.values.assign(maps.layers * maps.batch * maps.heads * maps.t_max * maps.t_max, 0.0);
  parallel_for(batch.batch, [&](std::size_t b) {
    const auto pos = valid_positions(batch, b);
    if (pos.empty()) return;
    std::vector<std::vector<Matrix>> attn;
    run_clip(gather_features(batch, b, pos), params, config, nullptr, nullptr, &attn);
    for (std::size_t l = 0; l < maps.layers; ++l) {
      for (std::size_t h = 0; h < maps.heads; ++h) {
        for (std::size_t i = 0; i < pos.size(); ++i) {
          for (std::size_t j = 0; j < pos.size(); ++j) {
            maps.values[(((l * maps.batch + b) * maps.heads + h) * maps.t_max + pos[i]) * maps.t_max + pos[j]] =
                attn[l][h].at(i, j);
          }
        }
      }
    }
  });
  return maps;
}

}  // namespace crashseq
