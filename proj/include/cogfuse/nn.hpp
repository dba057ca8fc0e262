#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cogfuse/random.hpp"
#include "cogfuse/tensor.hpp"

namespace cogfuse {

// Affine map y = x W + b with W stored [in, out].
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out);

  std::size_t in_features() const { return weight.shape.at(0); }
  std::size_t out_features() const { return weight.shape.at(1); }

  Tensor forward(const Tensor& x) const;
  void reset_parameters(Rng& rng);
  double glorot_bound() const;

  void collect(std::vector<Parameter*>& out) { out.insert(out.end(), {&weight, &bias}); }
  void collect(std::vector<const Parameter*>& out) const { out.insert(out.end(), {&weight, &bias}); }

  Parameter weight;
  Parameter bias;
};

struct MlpOutput {
  Tensor output;       // [b, d_out], no activation
  Tensor penultimate;  // activation feeding the last layer
};

// Stack of Linear layers with GELU between them. The activation entering the
// final layer is exposed so that other heads can consume it as a feature.
class MlpHead {
 public:
  MlpHead() = default;
  MlpHead(const std::string& name, std::vector<std::size_t> widths);

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t in_width() const { return widths_.front(); }
  std::size_t out_width() const { return widths_.back(); }
  std::size_t penultimate_width() const { return widths_[widths_.size() - 2]; }

  MlpOutput forward(const Tensor& x) const;
  void reset_parameters(Rng& rng);

  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  std::vector<std::size_t> widths_;
  std::vector<Linear> layers_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t width, double eps = 1e-5);

  Tensor forward(const Tensor& x) const;
  void reset_parameters();

  void collect(std::vector<Parameter*>& out) { out.insert(out.end(), {&gamma, &beta}); }
  void collect(std::vector<const Parameter*>& out) const { out.insert(out.end(), {&gamma, &beta}); }

  Parameter gamma;
  Parameter beta;
  double eps = 1e-5;
};

// Unmasked multi-head scaled dot-product self-attention over [B, L, d].
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, std::size_t width, std::size_t heads);

  std::size_t width() const { return query.in_features(); }
  std::size_t heads() const { return heads_; }

  // When `weights` is given it receives one [B, L, L] probability tensor per head.
  Tensor forward(const Tensor& x, std::vector<Tensor>* weights = nullptr) const;
  void reset_parameters(Rng& rng);

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

  Linear query, key, value, output;

 private:
  std::size_t heads_ = 1;
};

// Post-norm block: y = LN(x + MHA(x)); out = LN(y + W2 GELU(W1 y)).
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(const std::string& name, std::size_t width, std::size_t heads, std::size_t ffn_width);

  Tensor forward(const Tensor& x) const;
  void reset_parameters(Rng& rng);

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

  MultiHeadAttention attention;
  LayerNorm norm1;
  Linear ffn_in;
  Linear ffn_out;
  LayerNorm norm2;
};

struct EncoderSpec {
  std::size_t layers = 2;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t ffn_width = 0;  // 0 means 4 * width

  std::size_t resolved_ffn_width() const { return ffn_width == 0 ? 4 * width : ffn_width; }
  void validate() const;
};

class EncoderStack {
 public:
  EncoderStack() = default;
  EncoderStack(const std::string& name, const EncoderSpec& spec);

  const EncoderSpec& spec() const { return spec_; }
  // Accepts [B, L, d] or a single sequence [L, d]; output has the input shape.
  Tensor forward(const Tensor& x) const;
  void reset_parameters(Rng& rng);

  std::vector<EncoderLayer>& layers() { return layers_; }
  const std::vector<EncoderLayer>& layers() const { return layers_; }

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  EncoderSpec spec_;
  std::vector<EncoderLayer> layers_;
};

// Flat {name: {shape, data}} document for a set of parameters.
nlohmann::json parameters_to_json(const std::vector<const Parameter*>& params);
// Loads values by name; every listed parameter must be present with its shape.
void parameters_from_json(const nlohmann::json& doc, const std::vector<Parameter*>& params);

}  // namespace cogfuse
