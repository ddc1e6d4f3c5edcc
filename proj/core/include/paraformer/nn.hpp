#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "paraformer/tensor.hpp"

namespace paraformer {

// Positional table rows; covers window sizes well past the useful range.
inline constexpr int64_t kMaxWindowLen = 64;

enum class Activation { kLeakyRelu, kRelu, kGelu };

Activation activation_from_string(const std::string& name);
std::string activation_to_string(Activation act);

struct ModelConfig {
  int64_t d_model = 256;
  int64_t n_layers = 6;
  int64_t n_heads = 4;
  int64_t ffn_mult = 4;
  double dropout = 0.1;
  int64_t window_len = 5;
  int64_t f_in = 0;
  int64_t f_out = 0;

  // Throws ConfigError on head divisibility, parity, or range violations.
  void validate() const;
};

struct EncoderLayerParams {
  Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  Tensor w1, b1, w2, b2;
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

struct ParaformerParams {
  Tensor embed_w, embed_b;
  Tensor pos_table;  // [kMaxWindowLen, d_model], fixed, not trained
  std::vector<EncoderLayerParams> layers;
  Tensor head_w, head_b;
};

struct MlpConfig {
  std::vector<int64_t> hidden_widths = {512, 512, 512, 512, 512};
  Activation activation = Activation::kLeakyRelu;
  double leaky_slope = 0.01;
  int64_t f_in = 0;
  int64_t f_out = 0;

  void validate() const;
};

struct MlpParams {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Fixed sinusoidal table: pe[t, 2i] = sin(t / 10000^(2i/d)), pe[t, 2i+1] = cos.
Tensor positional_encoding(int64_t len, int64_t d_model);

struct AttentionResult {
  Tensor out;      // [B, h, L, d_h]
  Tensor weights;  // [B, h, L, L], rows sum to 1
};

// weights = softmax(q k^T / sqrt(d_h)); out = weights v. No causal mask: the
// whole window is context for every position.
AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k,
                                             const Tensor& v,
                                             Tape* tape = nullptr);

// Post-norm residual block: LN(x + Drop(MHA(x))) then LN(. + Drop(FFN(.))).
Tensor encoder_layer_forward(const Tensor& x, const EncoderLayerParams& layer,
                             const ModelConfig& config, bool train, Rng& rng,
                             Tape* tape = nullptr);

// x[B, L, f_in] -> y[B, L, f_out]; the head predicts every window position.
Tensor paraformer_forward(const Tensor& x, const ParaformerParams& params,
                          const ModelConfig& config, bool train, Rng& rng,
                          Tape* tape = nullptr);

// x[B, f_in] -> y[B, f_out]; no temporal context.
Tensor mlp_forward(const Tensor& x, const MlpParams& params,
                   const MlpConfig& config, Tape* tape = nullptr);

// Xavier-uniform weights, zero biases, unit layer-norm gains. Deterministic
// for a given seed.
ParaformerParams init_paraformer_params(const ModelConfig& config,
                                        uint64_t seed);
MlpParams init_mlp_params(const MlpConfig& config, uint64_t seed);

std::vector<NamedTensor> named_parameters(ParaformerParams& params);
std::vector<NamedTensor> named_parameters(MlpParams& params);

int64_t parameter_count(const ModelConfig& config);

// Uniform handle over the two model kinds so training and evaluation share
// one loop. forward takes [B, L, f_in] and returns [B, L, f_out]; the MLP
// treats every token independently.
class Model {
 public:
  virtual ~Model() = default;
  virtual Tensor forward(const Tensor& x, bool train, Rng& rng,
                         Tape* tape) = 0;
  virtual std::vector<NamedTensor> parameters() = 0;
  virtual int64_t input_width() const = 0;
  virtual int64_t output_width() const = 0;
  virtual std::string kind() const = 0;
};

class ParaformerModel final : public Model {
 public:
  ParaformerModel(ModelConfig config, uint64_t seed);
  ParaformerModel(ModelConfig config, ParaformerParams params);

  Tensor forward(const Tensor& x, bool train, Rng& rng, Tape* tape) override;
  std::vector<NamedTensor> parameters() override;
  int64_t input_width() const override { return config_.f_in; }
  int64_t output_width() const override { return config_.f_out; }
  std::string kind() const override { return "paraformer"; }

  const ModelConfig& config() const { return config_; }
  ParaformerParams& params() { return params_; }

 private:
  ModelConfig config_;
  ParaformerParams params_;
};

class MlpModel final : public Model {
 public:
  MlpModel(MlpConfig config, uint64_t seed);
  MlpModel(MlpConfig config, MlpParams params);

  Tensor forward(const Tensor& x, bool train, Rng& rng, Tape* tape) override;
  std::vector<NamedTensor> parameters() override;
  int64_t input_width() const override { return config_.f_in; }
  int64_t output_width() const override { return config_.f_out; }
  std::string kind() const override { return "mlp"; }

  const MlpConfig& config() const { return config_; }
  MlpParams& params() { return params_; }

 private:
  MlpConfig config_;
  MlpParams params_;
};

}  // namespace paraformer
