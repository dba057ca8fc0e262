#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cogfuse/data.hpp"
#include "cogfuse/nn.hpp"
#include "cogfuse/task.hpp"

namespace cogfuse {

enum class Variant { text, similarity, combination, combined_similarity, audio, multimodal };

Variant parse_variant(std::string_view name);
std::string_view to_string(Variant v);

// Variants with one encoder/head pair per language.
bool is_language_routed(Variant v);

struct ModelConfig {
  Variant variant = Variant::text;
  TaskKind task = TaskKind::classification;
  std::size_t seq_len = 16;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t audio_width = 24;
  std::size_t encoder_layers = 2;
  std::size_t ffn_width = 0;  // 0 means 4 * width
  std::vector<std::size_t> mlp_hidden{64, 16};
  // Multimodal only: let the fusion loss update the branch parameters too.
  bool joint_finetune = false;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& doc);
  ModelConfig with_variant(Variant v) const;
};

// S[i][j] = a_i . b_j / (|a_i| |b_j|) for [L, d] (or batched [B, L, d]) inputs.
// Zero rows are rejected unless `padding_rows_to_zero` is set, in which case
// they contribute zero similarity.
Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b, bool padding_rows_to_zero = false);

// Encoder, optional similarity projection and head for one language.
struct LanguageBranch {
  std::optional<EncoderStack> encoder;
  std::optional<Linear> similarity_projection;  // L -> d, combined similarity only
  MlpHead head;

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
};

// One of the six architectures, with parameters for every route it needs.
class Model {
 public:
  // Fresh Glorot-initialized parameters; multimodal needs create_multimodal.
  static Model create(const ModelConfig& cfg, std::uint64_t seed);
  // Fusion head over the penultimate features of two trained branches.
  static Model create_multimodal(const ModelConfig& cfg, Model text_branch, Model audio_branch, std::uint64_t seed);

  Model() = default;
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  std::uint64_t seed() const noexcept { return seed_; }
  bool routed() const { return is_language_routed(cfg_.variant); }

  // All records must share one language when the model is routed.
  MlpOutput forward(std::span<const FeatureRecord* const> batch) const;
  MlpOutput forward(const FeatureRecord& rec) const;
  // Inference over any mix of languages; one row of outputs per record.
  std::vector<std::vector<double>> predict(std::span<const FeatureRecord> records) const;

  // Every parameter, or only those a batch in `route` touches.
  std::vector<Parameter*> parameters(std::optional<Language> route = std::nullopt);
  std::vector<const Parameter*> parameters(std::optional<Language> route = std::nullopt) const;

  LanguageBranch& branch(Language lang);
  const LanguageBranch& branch(Language lang) const;
  MlpHead& audio_head();
  MlpHead& fusion_head();
  const MlpHead& audio_head() const;
  const MlpHead& fusion_head() const;
  Model& text_branch();
  Model& audio_branch();
  const Model& text_branch() const;
  const Model& audio_branch() const;

  void set_branches_trainable(bool trainable);
  // Multimodal only: installs trained branches behind an existing fusion head.
  void attach_branches(Model text_branch, Model audio_branch);

  nlohmann::json to_json() const;  // parameters inline; multimodal branches excluded
  static Model from_json(const nlohmann::json& doc);

 private:
  MlpOutput text_path(const std::vector<const FeatureRecord*>& batch, const LanguageBranch& br) const;

  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  std::map<Language, LanguageBranch> branches_;
  std::optional<MlpHead> audio_head_;
  std::optional<MlpHead> fusion_head_;
  std::unique_ptr<Model> text_branch_;
  std::unique_ptr<Model> audio_branch_;
};

// Builds [B, L, d] from a field of each record.
Tensor stack_sequences(std::span<const FeatureRecord* const> batch, std::size_t seq_len, std::size_t width, bool reference);
Tensor stack_audio(std::span<const FeatureRecord* const> batch, std::size_t audio_width);

// A model directory: checkpoint.json (+ branch files for multimodal) with the
// normalizer that was fitted on its training split.
struct Checkpoint {
  Model model;
  std::optional<Normalizer> normalizer;
  nlohmann::json extra;
};

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const Normalizer* normalizer,
                     const nlohmann::json& extra = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace cogfuse
