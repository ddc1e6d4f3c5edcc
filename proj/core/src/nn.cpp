#include "paraformer/nn.hpp"

#include <cmath>
#include <utility>

namespace paraformer {

namespace {

Tensor xavier_uniform(int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(static_cast<size_t>(fan_in * fan_out));
  for (double& v : data) v = rng.uniform(-bound, bound);
  Tensor t = Tensor::from_data({fan_in, fan_out}, std::move(data));
  t.set_requires_grad(true);
  return t;
}

Tensor zero_param(int64_t n) {
  Tensor t = Tensor::zeros({n});
  t.set_requires_grad(true);
  return t;
}

Tensor ones_param(int64_t n) {
  Tensor t = Tensor::full({n}, 1.0);
  t.set_requires_grad(true);
  return t;
}

// x[..., in] * w[in, out] + b[out], flattening leading axes around the gemm.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  const int64_t in = w.dim(0);
  const int64_t out = w.dim(1);
  const int64_t rows = x.numel() / in;
  Tensor flat = reshape(x, {rows, in}, tape);
  Tensor y = add_bias(matmul(flat, w, tape), b, tape);
  Shape out_shape = x.shape();
  out_shape.back() = out;
  return reshape(y, std::move(out_shape), tape);
}

}  // namespace

Activation activation_from_string(const std::string& name) {
  if (name == "leaky_relu") return Activation::kLeakyRelu;
  if (name == "relu") return Activation::kRelu;
  if (name == "gelu") return Activation::kGelu;
  throw ConfigError("unknown activation \"" + name + "\"");
}

std::string activation_to_string(Activation act) {
  switch (act) {
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kRelu: return "relu";
    case Activation::kGelu: return "gelu";
  }
  throw ConfigError("unknown activation enum value");
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_mult <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (d_model % 2 != 0) {
    throw ConfigError("d_model must be even for sinusoidal positions, got " +
                      std::to_string(d_model));
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("dropout must be in [0,1), got " +
                      std::to_string(dropout));
  }
  if (window_len < 1 || window_len > kMaxWindowLen) {
    throw ConfigError("window_len must be in [1," +
                      std::to_string(kMaxWindowLen) + "], got " +
                      std::to_string(window_len));
  }
  if (f_in <= 0 || f_out <= 0) {
    throw ConfigError("f_in/f_out must be positive");
  }
}

void MlpConfig::validate() const {
  if (hidden_widths.empty()) {
    throw ConfigError("mlp hidden_widths must be nonempty");
  }
  for (int64_t w : hidden_widths) {
    if (w <= 0) throw ConfigError("mlp hidden widths must be positive");
  }
  if (f_in <= 0 || f_out <= 0) {
    throw ConfigError("f_in/f_out must be positive");
  }
}

Tensor positional_encoding(int64_t len, int64_t d_model) {
  if (len < 1) throw ConfigError("positional_encoding: len must be >= 1");
  if (d_model < 2 || d_model % 2 != 0) {
    throw ConfigError("positional_encoding: d_model must be even, got " +
                      std::to_string(d_model));
  }
  std::vector<double> data(static_cast<size_t>(len * d_model));
  for (int64_t t = 0; t < len; ++t) {
    for (int64_t i = 0; i < d_model / 2; ++i) {
      const double rate =
          std::pow(10000.0, static_cast<double>(2 * i) /
                                static_cast<double>(d_model));
      const double angle = static_cast<double>(t) / rate;
      data[t * d_model + 2 * i] = std::sin(angle);
      data[t * d_model + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from_data({len, d_model}, std::move(data));
}

AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k,
                                             const Tensor& v, Tape* tape) {
  if (q.rank() != 4 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("attention: q/k/v shapes must match, got " +
                     shape_to_string(q.shape()) + " / " +
                     shape_to_string(k.shape()) + " / " +
                     shape_to_string(v.shape()));
  }
  const int64_t d_h = q.shape().back();
  Tensor scores = batched_matmul(q, transpose_last2(k, tape), tape);
  Tensor weights =
      softmax_last(scale(scores, 1.0 / std::sqrt(static_cast<double>(d_h)), tape), tape);
  Tensor out = batched_matmul(weights, v, tape);
  return {out, weights};
}

namespace {

Tensor multi_head_attention(const Tensor& x, const EncoderLayerParams& layer,
                            const ModelConfig& config, Tape* tape) {
  const int64_t batch = x.dim(0);
  const int64_t len = x.dim(1);
  const int64_t d = config.d_model;
  const int64_t heads = config.n_heads;
  const int64_t d_h = d / heads;

  auto split_heads = [&](const Tensor& t) {
    return permute(reshape(t, {batch, len, heads, d_h}, tape), {0, 2, 1, 3},
                   tape);
  };

  Tensor q = split_heads(linear(x, layer.w_q, layer.b_q, tape));
  Tensor k = split_heads(linear(x, layer.w_k, layer.b_k, tape));
  Tensor v = split_heads(linear(x, layer.w_v, layer.b_v, tape));

  AttentionResult attn = scaled_dot_product_attention(q, k, v, tape);
  Tensor merged = reshape(permute(attn.out, {0, 2, 1, 3}, tape),
                          {batch, len, d}, tape);
  return linear(merged, layer.w_o, layer.b_o, tape);
}

}  // namespace

Tensor encoder_layer_forward(const Tensor& x, const EncoderLayerParams& layer,
                             const ModelConfig& config, bool train, Rng& rng,
                             Tape* tape) {
  Tensor attn = multi_head_attention(x, layer, config, tape);
  attn = dropout(attn, config.dropout, rng, train, tape);
  Tensor x1 = layer_norm(add(x, attn, tape), layer.ln1_gamma, layer.ln1_beta,
                         1e-5, tape);

  Tensor h = gelu(linear(x1, layer.w1, layer.b1, tape), tape);
  Tensor f = linear(h, layer.w2, layer.b2, tape);
  f = dropout(f, config.dropout, rng, train, tape);
  return layer_norm(add(x1, f, tape), layer.ln2_gamma, layer.ln2_beta, 1e-5,
                    tape);
}

Tensor paraformer_forward(const Tensor& x, const ParaformerParams& params,
                          const ModelConfig& config, bool train, Rng& rng,
                          Tape* tape) {
  if (x.rank() != 3 || x.dim(2) != config.f_in) {
    throw ContractError("paraformer_forward: input " +
                        shape_to_string(x.shape()) + " does not match f_in " +
                        std::to_string(config.f_in));
  }
  const int64_t batch = x.dim(0);
  const int64_t len = x.dim(1);
  if (len > params.pos_table.dim(0)) {
    throw ContractError("paraformer_forward: window " + std::to_string(len) +
                        " exceeds positional table length " +
                        std::to_string(params.pos_table.dim(0)));
  }
  const int64_t d = config.d_model;

  Tensor h = linear(x, params.embed_w, params.embed_b, tape);

  // Add the first `len` rows of the positional table to every sequence,
  // cast as a bias over the flattened [len * d] axis.
  std::vector<double> pos(static_cast<size_t>(len * d));
  auto table = params.pos_table.data();
  for (int64_t i = 0; i < len * d; ++i) pos[i] = table[i];
  Tensor pos_bias = Tensor::from_data({len * d}, std::move(pos));
  h = reshape(add_bias(reshape(h, {batch, len * d}, tape), pos_bias, tape),
              {batch, len, d}, tape);

  for (const EncoderLayerParams& layer : params.layers) {
    h = encoder_layer_forward(h, layer, config, train, rng, tape);
  }
  return linear(h, params.head_w, params.head_b, tape);
}

Tensor mlp_forward(const Tensor& x, const MlpParams& params,
                   const MlpConfig& config, Tape* tape) {
  if (x.shape().back() != config.f_in) {
    throw ContractError("mlp_forward: input " + shape_to_string(x.shape()) +
                        " does not match f_in " + std::to_string(config.f_in));
  }
  Tensor h = x;
  for (size_t i = 0; i < params.weights.size(); ++i) {
    h = linear(h, params.weights[i], params.biases[i], tape);
    if (i + 1 < params.weights.size()) {
      switch (config.activation) {
        case Activation::kLeakyRelu:
          h = leaky_relu(h, config.leaky_slope, tape);
          break;
        case Activation::kRelu:
          h = relu(h, tape);
          break;
        case Activation::kGelu:
          h = gelu(h, tape);
          break;
      }
    }
  }
  return h;
}

ParaformerParams init_paraformer_params(const ModelConfig& config,
                                        uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ParaformerParams p;
  p.embed_w = xavier_uniform(config.f_in, config.d_model, rng);
  p.embed_b = zero_param(config.d_model);
  p.pos_table = positional_encoding(kMaxWindowLen, config.d_model);
  const int64_t d = config.d_model;
  const int64_t ffn = config.ffn_mult * d;
  for (int64_t l = 0; l < config.n_layers; ++l) {
    EncoderLayerParams layer;
    layer.w_q = xavier_uniform(d, d, rng);
    layer.b_q = zero_param(d);
    layer.w_k = xavier_uniform(d, d, rng);
    layer.b_k = zero_param(d);
    layer.w_v = xavier_uniform(d, d, rng);
    layer.b_v = zero_param(d);
    layer.w_o = xavier_uniform(d, d, rng);
    layer.b_o = zero_param(d);
    layer.w1 = xavier_uniform(d, ffn, rng);
    layer.b1 = zero_param(ffn);
    layer.w2 = xavier_uniform(ffn, d, rng);
    layer.b2 = zero_param(d);
    layer.ln1_gamma = ones_param(d);
    layer.ln1_beta = zero_param(d);
    layer.ln2_gamma = ones_param(d);
    layer.ln2_beta = zero_param(d);
    p.layers.push_back(std::move(layer));
  }
  p.head_w = xavier_uniform(d, config.f_out, rng);
  p.head_b = zero_param(config.f_out);
  return p;
}

MlpParams init_mlp_params(const MlpConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed);
  MlpParams p;
  int64_t prev = config.f_in;
  for (int64_t width : config.hidden_widths) {
    p.weights.push_back(xavier_uniform(prev, width, rng));
    p.biases.push_back(zero_param(width));
    prev = width;
  }
  p.weights.push_back(xavier_uniform(prev, config.f_out, rng));
  p.biases.push_back(zero_param(config.f_out));
  return p;
}

std::vector<NamedTensor> named_parameters(ParaformerParams& params) {
  std::vector<NamedTensor> out;
  out.push_back({"embed.weight", params.embed_w});
  out.push_back({"embed.bias", params.embed_b});
  for (size_t l = 0; l < params.layers.size(); ++l) {
    EncoderLayerParams& layer = params.layers[l];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    out.push_back({prefix + "attn.wq", layer.w_q});
    out.push_back({prefix + "attn.bq", layer.b_q});
    out.push_back({prefix + "attn.wk", layer.w_k});
    out.push_back({prefix + "attn.bk", layer.b_k});
    out.push_back({prefix + "attn.wv", layer.w_v});
    out.push_back({prefix + "attn.bv", layer.b_v});
    out.push_back({prefix + "attn.wo", layer.w_o});
    out.push_back({prefix + "attn.bo", layer.b_o});
    out.push_back({prefix + "ffn.w1", layer.w1});
    out.push_back({prefix + "ffn.b1", layer.b1});
    out.push_back({prefix + "ffn.w2", layer.w2});
    out.push_back({prefix + "ffn.b2", layer.b2});
    out.push_back({prefix + "ln1.gamma", layer.ln1_gamma});
    out.push_back({prefix + "ln1.beta", layer.ln1_beta});
    out.push_back({prefix + "ln2.gamma", layer.ln2_gamma});
    out.push_back({prefix + "ln2.beta", layer.ln2_beta});
  }
  out.push_back({"head.weight", params.head_w});
  out.push_back({"head.bias", params.head_b});
  return out;
}

std::vector<NamedTensor> named_parameters(MlpParams& params) {
  std::vector<NamedTensor> out;
  for (size_t i = 0; i < params.weights.size(); ++i) {
    const std::string prefix = "layers." + std::to_string(i) + ".";
    out.push_back({prefix + "weight", params.weights[i]});
    out.push_back({prefix + "bias", params.biases[i]});
  }
  return out;
}

int64_t parameter_count(const ModelConfig& config) {
  const int64_t d = config.d_model;
  const int64_t ffn = config.ffn_mult * d;
  int64_t per_layer = 4 * (d * d + d) + (d * ffn + ffn) + (ffn * d + d) + 4 * d;
  return config.f_in * d + d + config.n_layers * per_layer +
         d * config.f_out + config.f_out;
}

ParaformerModel::ParaformerModel(ModelConfig config, uint64_t seed)
    : config_(config), params_(init_paraformer_params(config, seed)) {}

ParaformerModel::ParaformerModel(ModelConfig config, ParaformerParams params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
}

Tensor ParaformerModel::forward(const Tensor& x, bool train, Rng& rng,
                                Tape* tape) {
  return paraformer_forward(x, params_, config_, train, rng, tape);
}

std::vector<NamedTensor> ParaformerModel::parameters() {
  return named_parameters(params_);
}

MlpModel::MlpModel(MlpConfig config, uint64_t seed)
    : config_(config), params_(init_mlp_params(config, seed)) {}

MlpModel::MlpModel(MlpConfig config, MlpParams params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
}

Tensor MlpModel::forward(const Tensor& x, bool /*train*/, Rng& /*rng*/,
                         Tape* tape) {
  // Tokens are independent: fold the window axis into the batch.
  const int64_t rows = x.numel() / config_.f_in;
  Tensor flat = reshape(x, {rows, config_.f_in}, tape);
  Tensor y = mlp_forward(flat, params_, config_, tape);
  Shape out_shape = x.shape();
  out_shape.back() = config_.f_out;
  return reshape(y, std::move(out_shape), tape);
}

std::vector<NamedTensor> MlpModel::parameters() {
  return named_parameters(params_);
}

}  // namespace paraformer
