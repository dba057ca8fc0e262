#include "cogfuse/nn.hpp"

#include <cmath>

namespace cogfuse {

Linear::Linear(const std::string& name, std::size_t in, std::size_t out)
    : weight(name + ".weight", Shape{in, out}), bias(name + ".bias", Shape{out}) {
  if (in == 0 || out == 0) throw ConfigError("linear layer '" + name + "' has a zero dimension");
}

double Linear::glorot_bound() const {
  return std::sqrt(6.0 / static_cast<double>(in_features() + out_features()));
}

void Linear::reset_parameters(Rng& rng) {
  const double bound = glorot_bound();
  for (double& w : weight.value) w = rng.uniform(-bound, bound);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() == 0 || x.shape().back() != in_features()) {
    throw DimensionError("linear '" + weight.name + "': input " + to_string(x.shape()) + " does not end in width " +
                         std::to_string(in_features()));
  }
  return add_bias(matmul(x, use(weight)), use(bias));
}

MlpHead::MlpHead(const std::string& name, std::vector<std::size_t> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw ConfigError("mlp '" + name + "' needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    layers_.emplace_back(name + ".layer" + std::to_string(i), widths_[i], widths_[i + 1]);
  }
}

MlpOutput MlpHead::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != in_width()) {
    throw DimensionError("mlp: input " + to_string(x.shape()) + " does not match width " + std::to_string(in_width()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) h = gelu(layers_[i].forward(h));
  return MlpOutput{layers_.back().forward(h), h};
}

void MlpHead::reset_parameters(Rng& rng) {
  for (Linear& l : layers_) l.reset_parameters(rng);
}

void MlpHead::collect(std::vector<Parameter*>& out) {
  for (Linear& l : layers_) l.collect(out);
}

void MlpHead::collect(std::vector<const Parameter*>& out) const {
  for (const Linear& l : layers_) l.collect(out);
}

LayerNorm::LayerNorm(const std::string& name, std::size_t width, double eps_)
    : gamma(name + ".gamma", Shape{width}), beta(name + ".beta", Shape{width}), eps(eps_) {
  reset_parameters();
}

void LayerNorm::reset_parameters() {
  std::fill(gamma.value.begin(), gamma.value.end(), 1.0);
  std::fill(beta.value.begin(), beta.value.end(), 0.0);
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, use(gamma), use(beta), eps); }

MultiHeadAttention::MultiHeadAttention(const std::string& name, std::size_t width, std::size_t heads)
    : query(name + ".query", width, width),
      key(name + ".key", width, width),
      value(name + ".value", width, width),
      output(name + ".output", width, width),
      heads_(heads) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention '" + name + "': " + std::to_string(heads) + " heads do not divide width " +
                      std::to_string(width));
  }
}

Tensor MultiHeadAttention::forward(const Tensor& x, std::vector<Tensor>* weights) const {
  if (x.rank() != 3 || x.dim(2) != width()) {
    throw DimensionError("attention: expected [B, L, " + std::to_string(width()) + "], got " + to_string(x.shape()));
  }
  const std::size_t head_width = width() / heads_;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(head_width));
  const Tensor q = query.forward(x);
  const Tensor k = key.forward(x);
  const Tensor v = value.forward(x);
  std::vector<Tensor> heads;
  heads.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t start = h * head_width;
    const Tensor qh = slice_last(q, start, head_width);
    const Tensor kh = slice_last(k, start, head_width);
    const Tensor vh = slice_last(v, start, head_width);
    const Tensor probs = softmax(scale(matmul(qh, transpose(kh)), scale_factor));
    if (weights) weights->push_back(probs);
    heads.push_back(matmul(probs, vh));
  }
  return output.forward(concat_last(heads));
}

void MultiHeadAttention::reset_parameters(Rng& rng) {
  for (Linear* l : {&query, &key, &value, &output}) l->reset_parameters(rng);
}

void MultiHeadAttention::collect(std::vector<Parameter*>& out) {
  for (Linear* l : {&query, &key, &value, &output}) l->collect(out);
}

void MultiHeadAttention::collect(std::vector<const Parameter*>& out) const {
  for (const Linear* l : {&query, &key, &value, &output}) l->collect(out);
}

EncoderLayer::EncoderLayer(const std::string& name, std::size_t width, std::size_t heads, std::size_t ffn_width)
    : attention(name + ".attention", width, heads),
      norm1(name + ".norm1", width),
      ffn_in(name + ".ffn_in", width, ffn_width),
      ffn_out(name + ".ffn_out", ffn_width, width),
      norm2(name + ".norm2", width) {}

Tensor EncoderLayer::forward(const Tensor& x) const {
  const Tensor y = norm1.forward(add(x, attention.forward(x)));
  return norm2.forward(add(y, ffn_out.forward(gelu(ffn_in.forward(y)))));
}

void EncoderLayer::reset_parameters(Rng& rng) {
  attention.reset_parameters(rng);
  norm1.reset_parameters();
  ffn_in.reset_parameters(rng);
  ffn_out.reset_parameters(rng);
  norm2.reset_parameters();
}

void EncoderLayer::collect(std::vector<Parameter*>& out) {
  attention.collect(out);
  norm1.collect(out);
  ffn_in.collect(out);
  ffn_out.collect(out);
  norm2.collect(out);
}

void EncoderLayer::collect(std::vector<const Parameter*>& out) const {
  attention.collect(out);
  norm1.collect(out);
  ffn_in.collect(out);
  ffn_out.collect(out);
  norm2.collect(out);
}

void EncoderSpec::validate() const {
  if (layers == 0 || width == 0) throw ConfigError("encoder needs at least one layer and a nonzero width");
  if (heads == 0 || width % heads != 0) {
    throw ConfigError(std::to_string(heads) + " heads do not divide width " + std::to_string(width));
  }
}

EncoderStack::EncoderStack(const std::string& name, const EncoderSpec& spec) : spec_(spec) {
  spec_.validate();
  for (std::size_t i = 0; i < spec_.layers; ++i) {
    layers_.emplace_back(name + ".layer" + std::to_string(i), spec_.width, spec_.heads, spec_.resolved_ffn_width());
  }
}

Tensor EncoderStack::forward(const Tensor& x) const {
  const bool single = x.rank() == 2;
  if ((x.rank() != 2 && x.rank() != 3) || x.shape().back() != spec_.width) {
    throw DimensionError("encoder: expected [..., L, " + std::to_string(spec_.width) + "], got " + to_string(x.shape()));
  }
  Tensor h = single ? reshape(x, Shape{1, x.dim(0), x.dim(1)}) : x;
  for (const EncoderLayer& layer : layers_) h = layer.forward(h);
  return single ? reshape(h, x.shape()) : h;
}

void EncoderStack::reset_parameters(Rng& rng) {
  for (EncoderLayer& l : layers_) l.reset_parameters(rng);
}

void EncoderStack::collect(std::vector<Parameter*>& out) {
  for (EncoderLayer& l : layers_) l.collect(out);
}

void EncoderStack::collect(std::vector<const Parameter*>& out) const {
  for (const EncoderLayer& l : layers_) l.collect(out);
}

nlohmann::json parameters_to_json(const std::vector<const Parameter*>& params) {
  nlohmann::json doc = nlohmann::json::object();
  for (const Parameter* p : params) {
    doc[p->name] = {{"shape", p->shape}, {"data", p->value}};
  }
  return doc;
}

void parameters_from_json(const nlohmann::json& doc, const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    if (!doc.contains(p->name)) throw ConfigError("checkpoint is missing parameter '" + p->name + "'");
    const auto& entry = doc.at(p->name);
    const auto shape = entry.at("shape").get<Shape>();
    if (shape != p->shape) {
      throw DimensionError("checkpoint parameter '" + p->name + "' has shape " + to_string(shape) + ", expected " +
                           to_string(p->shape));
    }
    auto data = entry.at("data").get<std::vector<double>>();
    if (data.size() != p->size()) throw DimensionError("checkpoint parameter '" + p->name + "' has wrong length");
    p->value = std::move(data);
  }
}

}  // namespace cogfuse
