/*
 * Copyright 2026 The cevkit Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// A small Vision Transformer for 17-way multi-label classification.
//
//   image [C,H,W] -> patches [N, C*P*P] -> linear -> prepend class token
//   -> + learned positions -> L x pre-norm block -> layernorm(class token)
//   -> linear head -> sigmoid
//
// Each block is x + MHSA(LN(x)) followed by x + MLP(LN(x)) with an exact
// (erf) GELU. All arithmetic is double precision. Backward() returns exact
// reverse-mode gradients of the mean binary cross-entropy.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cevkit/error.hpp"
#include "cevkit/io.hpp"
#include "cevkit/rng.hpp"
#include "cevkit/taxonomy.hpp"

namespace cevkit::vit {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ScoreVector = std::array<double, kNumLabels>;

inline constexpr double kLayerNormEps = 1e-12;
inline constexpr double kInitStddev = 0.02;
inline constexpr double kLogClamp = 1e-12;

struct ViTConfig {
  int image_size = 32;
  int patch_size = 8;
  int channels = 3;
  int hidden_dim = 32;
  int num_layers = 2;
  int num_heads = 4;
  int mlp_dim = 64;
  int num_classes = kNumLabels;

  // ViT-B/16 at 224x224: 14x14 patches plus the class token.
  static ViTConfig Base16() {
    return ViTConfig{224, 16, 3, 768, 12, 12, 3072, kNumLabels};
  }

  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int num_tokens() const { return num_patches() + 1; }
  int patch_dim() const { return channels * patch_size * patch_size; }
  int head_dim() const { return hidden_dim / num_heads; }

  void Validate() const {
    auto fail = [](const std::string& what) {
      return Error(ErrorCode::kInvalidConfig, "vit config: " + what);
    };
    if (image_size <= 0 || patch_size <= 0 || channels <= 0 || hidden_dim <= 0 ||
        num_layers < 0 || num_heads <= 0 || mlp_dim <= 0) {
      throw fail("sizes must be positive");
    }
    if (image_size % patch_size != 0) throw fail("image_size % patch_size != 0");
    if (hidden_dim % num_heads != 0) throw fail("hidden_dim % num_heads != 0");
    if (num_classes != kNumLabels) throw fail("num_classes must be 17");
  }

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

// Row-major dense tensor; used for images and for checkpoint I/O.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims)
      : shape(std::move(dims)), data(ElementCount(shape), 0.0) {}

  static std::size_t ElementCount(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * shape[1] + y) * shape[2] + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * shape[1] + y) * shape[2] + x];
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct LayerParams {
  Mat ln1_gain, ln1_bias;
  // No key bias: it shifts every logit of a softmax row equally.
  Mat wq, bq, wk, wv, bv, wo, bo;
  Mat ln2_gain, ln2_bias;
  Mat w1, b1, w2, b2;
};

struct ModelParams {
  ViTConfig config;
  Mat patch_weight, patch_bias;
  Mat cls_token;
  Mat pos_embed;
  std::vector<LayerParams> layers;
  Mat final_gain, final_bias;
  Mat head_weight, head_bias;
};

// Gradients share the parameter layout.
using Gradients = ModelParams;

enum class InitKind { kGaussian, kZero, kOne };

// Visits every tensor in a fixed order (the checkpoint and init order).
template <typename Params, typename Fn>
void ForEachTensor(Params& p, Fn&& fn) {
  fn("patch_embed.weight", p.patch_weight, InitKind::kGaussian);
  fn("patch_embed.bias", p.patch_bias, InitKind::kZero);
  fn("cls_token", p.cls_token, InitKind::kZero);
  fn("pos_embed", p.pos_embed, InitKind::kGaussian);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    fn(prefix + "ln1.gain", L.ln1_gain, InitKind::kOne);
    fn(prefix + "ln1.bias", L.ln1_bias, InitKind::kZero);
    fn(prefix + "attn.wq", L.wq, InitKind::kGaussian);
    fn(prefix + "attn.bq", L.bq, InitKind::kZero);
    fn(prefix + "attn.wk", L.wk, InitKind::kGaussian);
    fn(prefix + "attn.wv", L.wv, InitKind::kGaussian);
    fn(prefix + "attn.bv", L.bv, InitKind::kZero);
    fn(prefix + "attn.wo", L.wo, InitKind::kGaussian);
    fn(prefix + "attn.bo", L.bo, InitKind::kZero);
    fn(prefix + "ln2.gain", L.ln2_gain, InitKind::kOne);
    fn(prefix + "ln2.bias", L.ln2_bias, InitKind::kZero);
    fn(prefix + "mlp.w1", L.w1, InitKind::kGaussian);
    fn(prefix + "mlp.b1", L.b1, InitKind::kZero);
    fn(prefix + "mlp.w2", L.w2, InitKind::kGaussian);
    fn(prefix + "mlp.b2", L.b2, InitKind::kZero);
  }
  fn("final_ln.gain", p.final_gain, InitKind::kOne);
  fn("final_ln.bias", p.final_bias, InitKind::kZero);
  fn("head.weight", p.head_weight, InitKind::kGaussian);
  fn("head.bias", p.head_bias, InitKind::kZero);
}

// Pointers to every tensor, in ForEachTensor order.
inline std::vector<Mat*> TensorList(ModelParams& p) {
  std::vector<Mat*> out;
  ForEachTensor(p, [&](const std::string&, Mat& m, InitKind) { out.push_back(&m); });
  return out;
}

inline std::vector<const Mat*> TensorList(const ModelParams& p) {
  std::vector<const Mat*> out;
  ForEachTensor(p, [&](const std::string&, const Mat& m, InitKind) { out.push_back(&m); });
  return out;
}

// All tensors allocated to their shapes and zero-filled.
inline ModelParams ZeroParams(const ViTConfig& cfg) {
  cfg.Validate();
  const int D = cfg.hidden_dim, M = cfg.mlp_dim;
  ModelParams p;
  p.config = cfg;
  p.patch_weight = Mat::Zero(cfg.patch_dim(), D);
  p.patch_bias = Mat::Zero(1, D);
  p.cls_token = Mat::Zero(1, D);
  p.pos_embed = Mat::Zero(cfg.num_tokens(), D);
  p.layers.resize(cfg.num_layers);
  for (auto& L : p.layers) {
    L.ln1_gain = Mat::Zero(1, D);
    L.ln1_bias = Mat::Zero(1, D);
    for (Mat* w : {&L.wq, &L.wk, &L.wv, &L.wo}) *w = Mat::Zero(D, D);
    for (Mat* b : {&L.bq, &L.bv, &L.bo}) *b = Mat::Zero(1, D);
    L.ln2_gain = Mat::Zero(1, D);
    L.ln2_bias = Mat::Zero(1, D);
    L.w1 = Mat::Zero(D, M);
    L.b1 = Mat::Zero(1, M);
    L.w2 = Mat::Zero(M, D);
    L.b2 = Mat::Zero(1, D);
  }
  p.final_gain = Mat::Zero(1, D);
  p.final_bias = Mat::Zero(1, D);
  p.head_weight = Mat::Zero(D, cfg.num_classes);
  p.head_bias = Mat::Zero(1, cfg.num_classes);
  return p;
}

// Gaussian(0, stddev) weights and positions; zero biases and class token;
// unit layernorm gains. Draws follow ForEachTensor order, row-major.
inline ModelParams InitParams(const ViTConfig& cfg, std::uint64_t seed,
                              double stddev = kInitStddev) {
  ModelParams p = ZeroParams(cfg);
  Rng rng(DeriveSeed(seed, 0x766974ULL));  // "vit"
  ForEachTensor(p, [&](const std::string&, Mat& m, InitKind kind) {
    switch (kind) {
      case InitKind::kGaussian:
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.Normal(0.0, stddev);
        break;
      case InitKind::kOne:
        m.setOnes();
        break;
      case InitKind::kZero:
        m.setZero();
        break;
    }
  });
  return p;
}

inline std::size_t ParameterCount(const ModelParams& p) {
  std::size_t n = 0;
  ForEachTensor(p, [&](const std::string&, const Mat& m, InitKind) { n += m.size(); });
  return n;
}

// ---------------------------------------------------------------------------
// Building blocks.

inline double Gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
}

inline double GeluGrad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

inline double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct LayerNormCache {
  Mat xhat;                 // normalized input
  Eigen::VectorXd inv_std;  // per row
};

// Per-row layer normalization (biased variance).
inline Mat LayerNorm(const Mat& x, const Mat& gain, const Mat& bias,
                     LayerNormCache* cache = nullptr) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  Mat xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).mean();
    const auto centered = x.row(r).array() - mean;
    const double var = centered.square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = centered * inv_std(r);
  }
  Mat out = (xhat.array().rowwise() * gain.row(0).array()).rowwise() +
            bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

inline Mat LayerNormBackward(const Mat& dout, const Mat& gain,
                             const LayerNormCache& cache, Mat& dgain, Mat& dbias) {
  dgain += (dout.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias += dout.colwise().sum();
  const double D = static_cast<double>(dout.cols());
  Mat dxhat = dout.array().rowwise() * gain.row(0).array();
  Mat dx(dout.rows(), dout.cols());
  for (Eigen::Index r = 0; r < dout.rows(); ++r) {
    const double sum = dxhat.row(r).sum();
    const double dot = dxhat.row(r).dot(cache.xhat.row(r));
    dx.row(r) = (cache.inv_std(r) / D) *
                (D * dxhat.row(r).array() - sum - cache.xhat.row(r).array() * dot);
  }
  return dx;
}

// Row-wise softmax with max subtraction.
inline Mat SoftmaxRows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    auto e = (logits.row(r).array() - m).exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

inline Mat AddBias(Mat m, const Mat& bias) {
  m.rowwise() += bias.row(0);
  return m;
}

struct AttentionCache {
  Mat input, q, k, v;
  std::vector<Mat> probs;  // per head, T x T
  Mat concat;
};

// Multi-head self-attention on `x` (no normalization): per head
// softmax(Q K^T / sqrt(head_dim)) V, heads concatenated, then projected.
// Queries and values carry a bias, keys do not.
inline Mat Attention(const Mat& x, const LayerParams& L, int num_heads,
                     AttentionCache* cache = nullptr) {
  const Eigen::Index D = x.cols();
  if (L.wq.rows() != D || D % num_heads != 0) {
    throw Error(ErrorCode::kShapeMismatch, "attention input width " + std::to_string(D));
  }
  const Eigen::Index dh = D / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat q = AddBias(x * L.wq, L.bq);
  Mat k = x * L.wk;
  Mat v = AddBias(x * L.wv, L.bv);
  Mat concat(x.rows(), D);
  std::vector<Mat> probs;
  for (int h = 0; h < num_heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    const auto vh = v.middleCols(h * dh, dh);
    Mat p = SoftmaxRows((qh * kh.transpose()) * scale);
    concat.middleCols(h * dh, dh) = p * vh;
    probs.push_back(std::move(p));
  }
  Mat out = AddBias(concat * L.wo, L.bo);
  if (cache) {
    cache->input = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->concat = std::move(concat);
  }
  return out;
}

// Returns d(input); accumulates parameter gradients into `g`.
inline Mat AttentionBackward(const Mat& dout, const LayerParams& L, int num_heads,
                             const AttentionCache& c, LayerParams& g) {
  const Eigen::Index D = dout.cols();
  const Eigen::Index dh = D / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  g.wo += c.concat.transpose() * dout;
  g.bo += dout.colwise().sum();
  const Mat dconcat = dout * L.wo.transpose();
  Mat dq(dout.rows(), D), dk(dout.rows(), D), dv(dout.rows(), D);
  for (int h = 0; h < num_heads; ++h) {
    const Mat& p = c.probs[h];
    const auto dOh = dconcat.middleCols(h * dh, dh);
    const Mat dp = dOh * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh) = p.transpose() * dOh;
    Mat ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
    ds *= scale;
    dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  g.wq += c.input.transpose() * dq;
  g.bq += dq.colwise().sum();
  g.wk += c.input.transpose() * dk;
  g.wv += c.input.transpose() * dv;
  g.bv += dv.colwise().sum();
  return dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
}

// ---------------------------------------------------------------------------
// Model.

inline void CheckImage(const Tensor& image, const ViTConfig& cfg) {
  const std::vector<std::size_t> want = {static_cast<std::size_t>(cfg.channels),
                                         static_cast<std::size_t>(cfg.image_size),
                                         static_cast<std::size_t>(cfg.image_size)};
  if (image.shape != want || image.data.size() != Tensor::ElementCount(want)) {
    std::string got;
    for (auto d : image.shape) got += (got.empty() ? "" : "x") + std::to_string(d);
    throw Error(ErrorCode::kShapeMismatch,
                "image shape " + got + ", expected " + std::to_string(cfg.channels) +
                    "x" + std::to_string(cfg.image_size) + "x" +
                    std::to_string(cfg.image_size));
  }
}

// [N, C*P*P]; patch n = row-major over the patch grid, features ordered
// (channel, y, x) within the patch.
inline Mat ExtractPatches(const Tensor& image, const ViTConfig& cfg) {
  CheckImage(image, cfg);
  const int P = cfg.patch_size, G = cfg.patches_per_side();
  Mat patches(cfg.num_patches(), cfg.patch_dim());
  for (int py = 0; py < G; ++py) {
    for (int px = 0; px < G; ++px) {
      const int n = py * G + px;
      int f = 0;
      for (int c = 0; c < cfg.channels; ++c) {
        for (int y = 0; y < P; ++y) {
          for (int x = 0; x < P; ++x) {
            patches(n, f++) = image.at(c, py * P + y, px * P + x);
          }
        }
      }
    }
  }
  return patches;
}

// [N+1, D]: class token then projected patches, plus positional embeddings.
inline Mat PatchEmbed(const Tensor& image, const ModelParams& params,
                      Mat* patches_out = nullptr) {
  const ViTConfig& cfg = params.config;
  Mat patches = ExtractPatches(image, cfg);
  Mat tokens(cfg.num_tokens(), cfg.hidden_dim);
  tokens.row(0) = params.cls_token.row(0);
  tokens.bottomRows(cfg.num_patches()) = AddBias(patches * params.patch_weight,
                                                 params.patch_bias);
  tokens += params.pos_embed;
  if (patches_out) *patches_out = std::move(patches);
  return tokens;
}

struct BlockCache {
  LayerNormCache ln1;
  AttentionCache attn;
  LayerNormCache ln2;
  Mat mlp_in, hidden_pre, hidden_act;
};

struct ForwardCache {
  Mat patches;
  std::vector<BlockCache> blocks;
  LayerNormCache final_ln;
  Mat pooled;  // 1 x D, normalized class token
  ScoreVector scores{};
};

inline Mat Block(const Mat& x, const LayerParams& L, int num_heads,
                 BlockCache* cache = nullptr) {
  LayerNormCache ln1, ln2;
  AttentionCache attn;
  const Mat a = LayerNorm(x, L.ln1_gain, L.ln1_bias, cache ? &ln1 : nullptr);
  Mat mid = x + Attention(a, L, num_heads, cache ? &attn : nullptr);
  Mat b = LayerNorm(mid, L.ln2_gain, L.ln2_bias, cache ? &ln2 : nullptr);
  Mat pre = AddBias(b * L.w1, L.b1);
  Mat act = pre.unaryExpr([](double v) { return Gelu(v); });
  Mat out = mid + AddBias(act * L.w2, L.b2);
  if (cache) {
    cache->ln1 = std::move(ln1);
    cache->attn = std::move(attn);
    cache->ln2 = std::move(ln2);
    cache->mlp_in = std::move(b);
    cache->hidden_pre = std::move(pre);
    cache->hidden_act = std::move(act);
  }
  return out;
}

inline ScoreVector Forward(const Tensor& image, const ModelParams& params,
                           ForwardCache* cache = nullptr) {
  const ViTConfig& cfg = params.config;
  Mat patches;
  Mat x = PatchEmbed(image, params, cache ? &patches : nullptr);
  if (cache) {
    cache->patches = std::move(patches);
    cache->blocks.assign(params.layers.size(), BlockCache{});
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    x = Block(x, params.layers[l], cfg.num_heads, cache ? &cache->blocks[l] : nullptr);
  }
  LayerNormCache final_ln;
  const Mat pooled = LayerNorm(x.topRows(1), params.final_gain, params.final_bias,
                               cache ? &final_ln : nullptr);
  const Mat logits = AddBias(pooled * params.head_weight, params.head_bias);
  ScoreVector scores;
  for (int c = 0; c < kNumLabels; ++c) {
    if (!std::isfinite(logits(0, c))) {
      throw Error(ErrorCode::kNonFinite, "non-finite logit for class " +
                                             std::string(kLabelNames[c]));
    }
    scores[c] = Sigmoid(logits(0, c));
  }
  if (cache) {
    cache->final_ln = std::move(final_ln);
    cache->pooled = pooled;
    cache->scores = scores;
  }
  return scores;
}

// Mean over the 17 classes of -[y log s + (1-y) log(1-s)], with the log
// arguments clamped at 1e-12.
inline double BceLoss(const ScoreVector& scores, LabelSet target) {
  double sum = 0.0;
  for (int c = 0; c < kNumLabels; ++c) {
    const double s = scores[c];
    sum -= target.contains(c) ? std::log(std::max(s, kLogClamp))
                              : std::log(std::max(1.0 - s, kLogClamp));
  }
  return sum / kNumLabels;
}

struct BackwardResult {
  double loss = 0.0;
  ScoreVector scores{};
  Gradients grads;
};

// Exact gradients of BceLoss(Forward(image), target) w.r.t. every parameter.
inline BackwardResult Backward(const Tensor& image, LabelSet target,
                               const ModelParams& params) {
  const ViTConfig& cfg = params.config;
  ForwardCache cache;
  BackwardResult result;
  result.scores = Forward(image, params, &cache);
  result.loss = BceLoss(result.scores, target);
  Gradients& g = result.grads;
  g = ZeroParams(cfg);

  // d loss / d logit. Where the log clamp is active the term is constant.
  Mat dlogits(1, kNumLabels);
  for (int c = 0; c < kNumLabels; ++c) {
    const double s = result.scores[c];
    double d = 0.0;
    if (target.contains(c)) {
      if (s > kLogClamp) d = s - 1.0;
    } else {
      if (1.0 - s > kLogClamp) d = s;
    }
    dlogits(0, c) = d / kNumLabels;
  }
  g.head_weight += cache.pooled.transpose() * dlogits;
  g.head_bias += dlogits;
  const Mat dpooled = dlogits * params.head_weight.transpose();

  Mat dx = Mat::Zero(cfg.num_tokens(), cfg.hidden_dim);
  dx.topRows(1) = LayerNormBackward(dpooled, params.final_gain, cache.final_ln,
                                    g.final_gain, g.final_bias);

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const LayerParams& L = params.layers[l];
    LayerParams& gl = g.layers[l];
    const BlockCache& bc = cache.blocks[l];
    // out = mid + mlp(ln2(mid))
    gl.w2 += bc.hidden_act.transpose() * dx;
    gl.b2 += dx.colwise().sum();
    Mat dhidden = dx * L.w2.transpose();
    dhidden.array() *= bc.hidden_pre.unaryExpr([](double v) { return GeluGrad(v); }).array();
    gl.w1 += bc.mlp_in.transpose() * dhidden;
    gl.b1 += dhidden.colwise().sum();
    const Mat dmlp_in = dhidden * L.w1.transpose();
    Mat dmid = dx + LayerNormBackward(dmlp_in, L.ln2_gain, bc.ln2, gl.ln2_gain, gl.ln2_bias);
    // mid = x + attn(ln1(x))
    const Mat dattn_in = AttentionBackward(dmid, L, cfg.num_heads, bc.attn, gl);
    dx = dmid + LayerNormBackward(dattn_in, L.ln1_gain, bc.ln1, gl.ln1_gain, gl.ln1_bias);
  }

  g.pos_embed += dx;
  g.cls_token += dx.topRows(1);
  const Mat dpatch = dx.bottomRows(cfg.num_patches());
  g.patch_weight += cache.patches.transpose() * dpatch;
  g.patch_bias += dpatch.colwise().sum();
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: {"format", "version", "config", "tensors": [{name, shape,
// data}]}, tensors in ForEachTensor order, data row-major. Doubles are written
// as shortest round-trip decimals, so save/load/save is byte-identical.

inline constexpr std::string_view kCheckpointFormat = "cevkit.vit.checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline Json ConfigToJson(const ViTConfig& cfg) {
  Json j = Json::object();
  j["image_size"] = cfg.image_size;
  j["patch_size"] = cfg.patch_size;
  j["channels"] = cfg.channels;
  j["hidden_dim"] = cfg.hidden_dim;
  j["num_layers"] = cfg.num_layers;
  j["num_heads"] = cfg.num_heads;
  j["mlp_dim"] = cfg.mlp_dim;
  j["num_classes"] = cfg.num_classes;
  return j;
}

// Missing keys keep their defaults; unknown keys are rejected.
inline ViTConfig ConfigFromJson(const Json& j) {
  ViTConfig cfg;
  if (!j.is_object()) throw Error(ErrorCode::kSchemaMismatch, "vit config must be an object");
  const std::pair<const char*, int*> fields[] = {
      {"image_size", &cfg.image_size}, {"patch_size", &cfg.patch_size},
      {"channels", &cfg.channels},     {"hidden_dim", &cfg.hidden_dim},
      {"num_layers", &cfg.num_layers}, {"num_heads", &cfg.num_heads},
      {"mlp_dim", &cfg.mlp_dim},       {"num_classes", &cfg.num_classes}};
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const auto& [name, field] : fields) {
      if (key == name) {
        if (!value.is_number_integer()) {
          throw Error(ErrorCode::kSchemaMismatch, "vit config: " + key + " must be an integer");
        }
        *field = value.get<int>();
        known = true;
      }
    }
    if (!known) throw Error(ErrorCode::kSchemaMismatch, "vit config: unknown key " + key);
  }
  cfg.Validate();
  return cfg;
}

inline Json CheckpointToJson(const ModelParams& params) {
  Json tensors = Json::array();
  ForEachTensor(params, [&](const std::string& name, const Mat& m, InitKind) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (!std::isfinite(m.data()[i])) {
        throw Error(ErrorCode::kNonFinite, "tensor " + name + " has non-finite values");
      }
    }
    Json t = Json::object();
    t["name"] = name;
    t["shape"] = {m.rows(), m.cols()};
    t["data"] = std::vector<double>(m.data(), m.data() + m.size());
    tensors.push_back(std::move(t));
  });
  Json doc = Json::object();
  doc["format"] = kCheckpointFormat;
  doc["version"] = kCheckpointVersion;
  doc["config"] = ConfigToJson(params.config);
  doc["tensors"] = std::move(tensors);
  return doc;
}

inline ModelParams CheckpointFromJson(const Json& doc) {
  auto fail = [](const std::string& what) {
    return Error(ErrorCode::kSchemaMismatch, "checkpoint: " + what);
  };
  try {
    if (!doc.is_object() || doc.value("format", "") != kCheckpointFormat) {
      throw fail("not a cevkit ViT checkpoint");
    }
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw fail("unsupported version " + doc.at("version").dump());
    }
    ModelParams params = ZeroParams(ConfigFromJson(doc.at("config")));
    const Json& tensors = doc.at("tensors");
    std::size_t i = 0;
    ForEachTensor(params, [&](const std::string& name, Mat& m, InitKind) {
      if (i >= tensors.size()) throw fail("missing tensor " + name);
      const Json& t = tensors[i++];
      if (t.at("name").get<std::string>() != name) {
        throw fail("expected tensor " + name + ", found " + t.at("name").get<std::string>());
      }
      const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
      if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols()) {
        throw Error(ErrorCode::kShapeMismatch, "checkpoint tensor " + name);
      }
      const auto data = t.at("data").get<std::vector<double>>();
      if (data.size() != static_cast<std::size_t>(m.size())) {
        throw Error(ErrorCode::kShapeMismatch, "checkpoint tensor " + name + " data size");
      }
      std::copy(data.begin(), data.end(), m.data());
    });
    if (i != tensors.size()) throw fail("unexpected extra tensors");
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidConfig) throw fail(e.what());
    throw;
  }
}

inline void SaveCheckpoint(const ModelParams& params, const std::filesystem::path& path) {
  WriteFile(path, CheckpointToJson(params).dump() + "\n");
}

inline ModelParams LoadCheckpoint(const std::filesystem::path& path) {
  return CheckpointFromJson(ReadJsonFile(path));
}

}  // namespace cevkit::vit
