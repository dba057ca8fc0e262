#include "cogfuse/models.hpp"

#include <algorithm>
#include <fstream>

#include "cogfuse/errors.hpp"

namespace cogfuse {

namespace {

using nlohmann::json;

constexpr std::string_view kModelFormat = "cogfuse-model/1";
constexpr std::size_t kPredictChunk = 64;

constexpr Variant kAllVariants[] = {Variant::text,        Variant::similarity, Variant::combination,
                                    Variant::combined_similarity, Variant::audio, Variant::multimodal};

std::vector<std::size_t> head_widths(std::size_t in, const ModelConfig& cfg) {
  std::vector<std::size_t> widths{in};
  widths.insert(widths.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
  widths.push_back(output_width(cfg.task));
  return widths;
}

Language batch_language(std::span<const FeatureRecord* const> batch) {
  const Language lang = batch.front()->language;
  for (const FeatureRecord* r : batch) {
    if (r->language != lang) throw RoutingError("batch mixes languages for a language-routed model");
  }
  return lang;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  return json::parse(in);
}

void write_json_file(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

}  // namespace

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::text: return "text";
    case Variant::similarity: return "similarity";
    case Variant::combination: return "combination";
    case Variant::combined_similarity: return "combined_similarity";
    case Variant::audio: return "audio";
    case Variant::multimodal: return "multimodal";
  }
  return "unknown";
}

TaskKind parse_task(std::string_view name) {
  if (name == "cls" || name == "classification") return TaskKind::classification;
  if (name == "reg" || name == "regression") return TaskKind::regression;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

std::string_view to_string(TaskKind t) { return t == TaskKind::classification ? "classification" : "regression"; }

std::size_t output_width(TaskKind t) { return t == TaskKind::classification ? 2 : 1; }

bool is_language_routed(Variant v) { return v != Variant::audio; }

// ---- config ---------------------------------------------------------------

void ModelConfig::validate() const {
  if (seq_len == 0 || width == 0 || audio_width == 0) throw ConfigError("model dimensions must be nonzero");
  EncoderSpec{encoder_layers, width, heads, ffn_width}.validate();
  for (std::size_t w : mlp_hidden) {
    if (w == 0) throw ConfigError("MLP hidden widths must be nonzero");
  }
  if (mlp_hidden.empty()) throw ConfigError("MLP needs at least one hidden layer to expose fusion features");
}

nlohmann::json ModelConfig::to_json() const {
  return json{{"variant", std::string(to_string(variant))},
              {"task", std::string(to_string(task))},
              {"seq_len", seq_len},
              {"width", width},
              {"heads", heads},
              {"audio_width", audio_width},
              {"encoder_layers", encoder_layers},
              {"ffn_width", ffn_width},
              {"mlp_hidden", mlp_hidden},
              {"joint_finetune", joint_finetune}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc) {
  ModelConfig c;
  if (doc.contains("variant")) c.variant = parse_variant(doc["variant"].get<std::string>());
  if (doc.contains("task")) c.task = parse_task(doc["task"].get<std::string>());
  c.seq_len = doc.value("seq_len", c.seq_len);
  c.width = doc.value("width", c.width);
  c.heads = doc.value("heads", c.heads);
  c.audio_width = doc.value("audio_width", c.audio_width);
  c.encoder_layers = doc.value("encoder_layers", c.encoder_layers);
  c.ffn_width = doc.value("ffn_width", c.ffn_width);
  c.mlp_hidden = doc.value("mlp_hidden", c.mlp_hidden);
  c.joint_finetune = doc.value("joint_finetune", c.joint_finetune);
  c.validate();
  return c;
}

ModelConfig ModelConfig::with_variant(Variant v) const {
  ModelConfig c = *this;
  c.variant = v;
  return c;
}

// ---- similarity -----------------------------------------------------------

Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b, bool padding_rows_to_zero) {
  if (a.shape() != b.shape() || (a.rank() != 2 && a.rank() != 3)) {
    throw DimensionError("cosine_similarity_matrix: expected matching [L, d] inputs, got " + to_string(a.shape()) +
                         " and " + to_string(b.shape()));
  }
  const Tensor na = normalize_rows(a, padding_rows_to_zero);
  const Tensor nb = normalize_rows(b, padding_rows_to_zero);
  return matmul(na, transpose(nb));
}

// ---- branches -------------------------------------------------------------

void LanguageBranch::collect(std::vector<Parameter*>& out) {
  if (encoder) encoder->collect(out);
  if (similarity_projection) similarity_projection->collect(out);
  head.collect(out);
}

void LanguageBranch::collect(std::vector<const Parameter*>& out) const {
  if (encoder) encoder->collect(out);
  if (similarity_projection) similarity_projection->collect(out);
  head.collect(out);
}

// ---- model ----------------------------------------------------------------

Model Model::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.variant == Variant::multimodal) {
    throw ConfigError("multimodal models are built from a text branch and an audio branch");
  }
  Model m;
  m.cfg_ = cfg;
  m.seed_ = seed;
  if (cfg.variant == Variant::audio) {
    Rng rng(seed, 20);
    m.audio_head_ = MlpHead("audio.head", head_widths(cfg.audio_width, cfg));
    m.audio_head_->reset_parameters(rng);
    return m;
  }
  const EncoderSpec enc{cfg.encoder_layers, cfg.width, cfg.heads, cfg.ffn_width};
  for (Language lang : {Language::en, Language::zh}) {
    const std::string prefix(to_string(lang));
    // Encoder first, then head, then projection: a text model and a combined
    // similarity model with the same seed share their common parameters.
    Rng rng(seed, 10 + static_cast<std::uint64_t>(lang));
    LanguageBranch br;
    if (cfg.variant == Variant::similarity) {
      br.head = MlpHead(prefix + ".head", head_widths(cfg.seq_len * cfg.seq_len, cfg));
      br.head.reset_parameters(rng);
    } else {
      br.encoder = EncoderStack(prefix + ".encoder", enc);
      br.encoder->reset_parameters(rng);
      br.head = MlpHead(prefix + ".head", head_widths(cfg.width, cfg));
      br.head.reset_parameters(rng);
      if (cfg.variant == Variant::combined_similarity) {
        br.similarity_projection = Linear(prefix + ".similarity_projection", cfg.seq_len, cfg.width);
        br.similarity_projection->reset_parameters(rng);
      }
    }
    m.branches_.emplace(lang, std::move(br));
  }
  return m;
}

Model Model::create_multimodal(const ModelConfig& cfg, Model text_branch, Model audio_branch, std::uint64_t seed) {
  cfg.validate();
  if (cfg.variant != Variant::multimodal) throw ConfigError("create_multimodal needs variant 'multimodal'");
  const Variant tv = text_branch.config().variant;
  if (tv == Variant::audio || tv == Variant::multimodal) throw ConfigError("multimodal text branch must be a text variant");
  if (audio_branch.config().variant != Variant::audio) throw ConfigError("multimodal audio branch must be an audio model");
  if (text_branch.config().task != cfg.task || audio_branch.config().task != cfg.task) {
    throw ConfigError("multimodal branches were trained for a different task");
  }
  Model m;
  m.cfg_ = cfg;
  m.seed_ = seed;
  const std::size_t fused = text_branch.branch(Language::en).head.penultimate_width() +
                            audio_branch.audio_head().penultimate_width();
  Rng rng(seed, 30);
  m.fusion_head_ = MlpHead("fusion.head", head_widths(fused, cfg));
  m.fusion_head_->reset_parameters(rng);
  m.attach_branches(std::move(text_branch), std::move(audio_branch));
  return m;
}

void Model::attach_branches(Model text_branch, Model audio_branch) {
  if (cfg_.variant != Variant::multimodal || !fusion_head_) throw ConfigError("only multimodal models take branches");
  const std::size_t fused = text_branch.branch(Language::en).head.penultimate_width() +
                            audio_branch.audio_head().penultimate_width();
  if (fused != fusion_head_->in_width()) {
    throw DimensionError("branch feature widths (" + std::to_string(fused) + ") do not match fusion input " +
                         std::to_string(fusion_head_->in_width()));
  }
  text_branch_ = std::make_unique<Model>(std::move(text_branch));
  audio_branch_ = std::make_unique<Model>(std::move(audio_branch));
  set_branches_trainable(cfg_.joint_finetune);
}

Model::Model(const Model& other)
    : cfg_(other.cfg_),
      seed_(other.seed_),
      branches_(other.branches_),
      audio_head_(other.audio_head_),
      fusion_head_(other.fusion_head_),
      text_branch_(other.text_branch_ ? std::make_unique<Model>(*other.text_branch_) : nullptr),
      audio_branch_(other.audio_branch_ ? std::make_unique<Model>(*other.audio_branch_) : nullptr) {}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    Model copy(other);
    *this = std::move(copy);
  }
  return *this;
}

LanguageBranch& Model::branch(Language lang) {
  auto it = branches_.find(lang);
  if (it == branches_.end()) throw RoutingError("model has no branch for language '" + std::string(to_string(lang)) + "'");
  return it->second;
}

const LanguageBranch& Model::branch(Language lang) const { return const_cast<Model*>(this)->branch(lang); }

MlpHead& Model::audio_head() {
  if (!audio_head_) throw ConfigError("model has no audio head");
  return *audio_head_;
}

MlpHead& Model::fusion_head() {
  if (!fusion_head_) throw ConfigError("model has no fusion head");
  return *fusion_head_;
}

const MlpHead& Model::audio_head() const { return const_cast<Model&>(*this).audio_head(); }
const MlpHead& Model::fusion_head() const { return const_cast<Model&>(*this).fusion_head(); }

Model& Model::text_branch() {
  if (!text_branch_) throw ConfigError("multimodal model is missing its text branch checkpoint");
  return *text_branch_;
}

Model& Model::audio_branch() {
  if (!audio_branch_) throw ConfigError("multimodal model is missing its audio branch checkpoint");
  return *audio_branch_;
}

const Model& Model::text_branch() const { return const_cast<Model*>(this)->text_branch(); }
const Model& Model::audio_branch() const { return const_cast<Model*>(this)->audio_branch(); }

void Model::set_branches_trainable(bool trainable) {
  for (Model* b : {text_branch_.get(), audio_branch_.get()}) {
    if (!b) continue;
    for (Parameter* p : b->parameters()) p->trainable = trainable;
  }
}

std::vector<Parameter*> Model::parameters(std::optional<Language> route) {
  std::vector<Parameter*> out;
  for (auto& [lang, br] : branches_) {
    if (!route || *route == lang) br.collect(out);
  }
  if (audio_head_) audio_head_->collect(out);
  if (fusion_head_) fusion_head_->collect(out);
  if (text_branch_) {
    auto t = text_branch_->parameters(route);
    out.insert(out.end(), t.begin(), t.end());
  }
  if (audio_branch_) {
    auto a = audio_branch_->parameters(route);
    out.insert(out.end(), a.begin(), a.end());
  }
  return out;
}

std::vector<const Parameter*> Model::parameters(std::optional<Language> route) const {
  auto mutable_params = const_cast<Model*>(this)->parameters(route);
  return {mutable_params.begin(), mutable_params.end()};
}

Tensor stack_sequences(std::span<const FeatureRecord* const> batch, std::size_t seq_len, std::size_t width,
                       bool reference) {
  std::vector<double> data;
  data.reserve(batch.size() * seq_len * width);
  for (const FeatureRecord* r : batch) {
    const auto& seq = reference ? r->reference_seq : r->subject_seq;
    if (seq.size() != seq_len * width) {
      throw DimensionError("sample '" + r->sample_id + "' sequence has " + std::to_string(seq.size()) +
                           " values, expected " + std::to_string(seq_len) + "x" + std::to_string(width));
    }
    data.insert(data.end(), seq.begin(), seq.end());
  }
  return Tensor(Shape{batch.size(), seq_len, width}, std::move(data));
}

Tensor stack_audio(std::span<const FeatureRecord* const> batch, std::size_t audio_width) {
  std::vector<double> data;
  data.reserve(batch.size() * audio_width);
  for (const FeatureRecord* r : batch) {
    if (r->audio_feat.size() != audio_width) {
      throw DimensionError("sample '" + r->sample_id + "' audio width " + std::to_string(r->audio_feat.size()) +
                           " does not match " + std::to_string(audio_width));
    }
    data.insert(data.end(), r->audio_feat.begin(), r->audio_feat.end());
  }
  return Tensor(Shape{batch.size(), audio_width}, std::move(data));
}

MlpOutput Model::text_path(const std::vector<const FeatureRecord*>& batch, const LanguageBranch& br) const {
  const Tensor subject = stack_sequences(batch, cfg_.seq_len, cfg_.width, false);
  Tensor embeddings = subject;
  switch (cfg_.variant) {
    case Variant::text:
      break;
    case Variant::combination:
      embeddings = add(subject, stack_sequences(batch, cfg_.seq_len, cfg_.width, true));
      break;
    case Variant::combined_similarity: {
      const Tensor sim = cosine_similarity_matrix(subject, stack_sequences(batch, cfg_.seq_len, cfg_.width, true), true);
      embeddings = add(subject, br.similarity_projection->forward(sim));
      break;
    }
    default:
      throw ConfigError("variant has no encoder path");
  }
  return br.head.forward(mean_pool(br.encoder->forward(embeddings)));
}

MlpOutput Model::forward(std::span<const FeatureRecord* const> batch) const {
  if (batch.empty()) throw ConfigError("forward on an empty batch");
  const std::vector<const FeatureRecord*> recs(batch.begin(), batch.end());
  switch (cfg_.variant) {
    case Variant::audio:
      return audio_head_->forward(stack_audio(batch, cfg_.audio_width));
    case Variant::similarity: {
      const LanguageBranch& br = branch(batch_language(batch));
      const Tensor sim = cosine_similarity_matrix(stack_sequences(batch, cfg_.seq_len, cfg_.width, false),
                                                  stack_sequences(batch, cfg_.seq_len, cfg_.width, true), true);
      return br.head.forward(reshape(sim, Shape{batch.size(), cfg_.seq_len * cfg_.seq_len}));
    }
    case Variant::multimodal: {
      batch_language(batch);
      const Tensor text_features = text_branch().forward(batch).penultimate;
      const Tensor audio_features = audio_branch().forward(batch).penultimate;
      return fusion_head_->forward(concat_last({text_features, audio_features}));
    }
    default:
      return text_path(recs, branch(batch_language(batch)));
  }
}

MlpOutput Model::forward(const FeatureRecord& rec) const {
  const FeatureRecord* one[] = {&rec};
  return forward(std::span<const FeatureRecord* const>(one));
}

std::vector<std::vector<double>> Model::predict(std::span<const FeatureRecord> records) const {
  NoGradScope no_grad;
  std::vector<std::vector<double>> out(records.size());
  std::map<Language, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    groups[routed() ? records[i].language : Language::en].push_back(i);
  }
  for (const auto& [lang, idx] : groups) {
    for (std::size_t start = 0; start < idx.size(); start += kPredictChunk) {
      const std::size_t end = std::min(idx.size(), start + kPredictChunk);
      std::vector<const FeatureRecord*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&records[idx[i]]);
      const Tensor y = forward(batch).output;
      const std::size_t w = y.dim(1);
      for (std::size_t i = start; i < end; ++i) {
        const auto row = y.data().subspan((i - start) * w, w);
        out[idx[i]].assign(row.begin(), row.end());
      }
    }
  }
  return out;
}

nlohmann::json Model::to_json() const {
  std::vector<const Parameter*> own;
  for (const auto& [lang, br] : branches_) br.collect(own);
  if (audio_head_) audio_head_->collect(own);
  if (fusion_head_) fusion_head_->collect(own);
  json doc{{"format", std::string(kModelFormat)},
           {"config", cfg_.to_json()},
           {"seed", seed_},
           {"parameters", parameters_to_json(own)}};
  if (fusion_head_) doc["fusion_widths"] = fusion_head_->widths();
  return doc;
}

Model Model::from_json(const nlohmann::json& doc) {
  if (doc.value("format", std::string()) != kModelFormat) throw ConfigError("not a cogfuse model document");
  const ModelConfig cfg = ModelConfig::from_json(doc.at("config"));
  const auto seed = doc.at("seed").get<std::uint64_t>();
  Model m;
  if (cfg.variant == Variant::multimodal) {
    m.cfg_ = cfg;
    m.seed_ = seed;
    m.fusion_head_ = MlpHead("fusion.head", doc.at("fusion_widths").get<std::vector<std::size_t>>());
  } else {
    m = create(cfg, seed);
  }
  std::vector<Parameter*> own;
  for (auto& [lang, br] : m.branches_) br.collect(own);
  if (m.audio_head_) m.audio_head_->collect(own);
  if (m.fusion_head_) m.fusion_head_->collect(own);
  parameters_from_json(doc.at("parameters"), own);
  return m;
}

// ---- checkpoints ----------------------------------------------------------

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const Normalizer* normalizer,
                     const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  json doc{{"model", model.to_json()}, {"extra", extra}};
  doc["normalizer"] = normalizer ? normalizer->to_json() : json(nullptr);
  if (model.config().variant == Variant::multimodal) {
    save_checkpoint(dir / "text_branch", model.text_branch(), nullptr);
    save_checkpoint(dir / "audio_branch", model.audio_branch(), nullptr);
    doc["manifest"] = {{"variant", "multimodal"},
                       {"task", std::string(to_string(model.config().task))},
                       {"languages", {"en", "zh"}},
                       {"branches",
                        {{"text", "text_branch"},
                         {"text_variant", std::string(to_string(model.text_branch().config().variant))},
                         {"audio", "audio_branch"}}}};
  } else {
    json langs = json::array();
    if (model.routed()) langs = {"en", "zh"};
    else langs = {"shared"};
    doc["manifest"] = {{"variant", std::string(to_string(model.config().variant))},
                       {"task", std::string(to_string(model.config().task))},
                       {"languages", langs}};
  }
  write_json_file(dir / "checkpoint.json", doc);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const json doc = read_json_file(dir / "checkpoint.json");
  Checkpoint ck;
  ck.model = Model::from_json(doc.at("model"));
  if (ck.model.config().variant == Variant::multimodal) {
    const json& branches = doc.at("manifest").at("branches");
    const auto text_dir = dir / branches.at("text").get<std::string>();
    const auto audio_dir = dir / branches.at("audio").get<std::string>();
    for (const auto& p : {text_dir, audio_dir}) {
      if (!std::filesystem::exists(p / "checkpoint.json")) {
        throw ConfigError("multimodal checkpoint references missing branch " + p.string());
      }
    }
    ck.model.attach_branches(load_checkpoint(text_dir).model, load_checkpoint(audio_dir).model);
  }
  if (doc.contains("normalizer") && !doc["normalizer"].is_null()) ck.normalizer = Normalizer::from_json(doc["normalizer"]);
  ck.extra = doc.value("extra", json::object());
  return ck;
}

}  // namespace cogfuse
