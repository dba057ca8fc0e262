#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cogfuse {

inline constexpr std::string_view kCorpusFormat = "cogfuse/1";

enum class Language { en, zh };

Language parse_language(std::string_view tag);
std::string_view to_string(Language lang);

struct Dims {
  std::size_t seq_len = 16;
  std::size_t width = 32;
  std::size_t audio_width = 24;

  bool operator==(const Dims&) const = default;
};

// One (subject, picture) sample. Sequences are row-major [seq_len, width];
// trailing zero rows are padding.
struct FeatureRecord {
  std::string sample_id;
  std::string subject_id;
  Language language = Language::en;
  int picture_id = 1;
  int label = 0;  // 1 = MCI
  double mmse = 30.0;
  std::vector<double> subject_seq;
  std::vector<double> reference_seq;
  std::vector<double> audio_feat;  // may hold NaN before normalization
};

struct Corpus {
  std::vector<FeatureRecord> records;
  Dims dims;
  std::string provenance;
  bool audio_normalized = false;

  std::size_t subject_count() const;
};

// Throws IntegrityError / RangeError / DegenerateInputError / DimensionError.
void validate_corpus(const Corpus& corpus);

Corpus parse_corpus(std::istream& in);
Corpus load_corpus(const std::filesystem::path& path);
void write_corpus(const Corpus& corpus, std::ostream& out);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

// Subject-grouped assignment to k folds, stratified by (language, label).
struct FoldPlan {
  std::size_t k = 5;
  std::map<std::string, std::size_t> fold_of;

  std::size_t fold(const std::string& subject_id) const;
  std::vector<std::size_t> subjects_per_fold() const;
  nlohmann::json to_json() const;
  static FoldPlan from_json(const nlohmann::json& doc);
};

FoldPlan split_folds(const Corpus& corpus, std::size_t k = 5, std::uint64_t seed = 42);

// Train/validation records for one fold of a plan, in corpus order.
struct FoldSplit {
  std::vector<FeatureRecord> train;
  std::vector<FeatureRecord> validation;
};
FoldSplit split_for_fold(const Corpus& corpus, const FoldPlan& plan, std::size_t fold);

// Per-coordinate z-scoring of audio features, fitted on a training split.
class Normalizer {
 public:
  static Normalizer fit(std::span<const FeatureRecord> train);

  bool fitted() const noexcept { return fitted_; }
  const std::vector<double>& mean() const noexcept { return mean_; }
  const std::vector<double>& scale() const noexcept { return scale_; }
  const std::vector<bool>& zero_variance() const noexcept { return zero_variance_; }

  // NaN entries are imputed with the fitted mean before scaling.
  FeatureRecord apply(const FeatureRecord& rec) const;
  // Refuses corpora that were already normalized.
  Corpus apply(const Corpus& corpus) const;

  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& doc);

 private:
  std::vector<double> mean_;
  std::vector<double> scale_;
  std::vector<bool> zero_variance_;
  bool fitted_ = false;
};

struct NormalizedCorpus {
  Corpus corpus;
  Normalizer normalizer;
};

NormalizedCorpus fit_apply_normalizer(std::span<const FeatureRecord> train, const Corpus& all);

struct SyntheticSpec {
  std::size_t n_mci_subjects = 74;
  std::size_t n_control_subjects = 55;
  std::size_t zh_subjects = 67;
  std::size_t en_subjects = 62;
  Dims dims;
  double text_separation = 1.0;   // shift between class means along the text direction
  double audio_separation = 1.0;  // same, for the audio direction
  double mmse_control_mean = 28.0;
  double mmse_control_sd = 1.5;
  double mmse_mci_mean = 24.0;
  double mmse_mci_sd = 2.5;
  std::uint64_t seed = 42;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& doc);
};

Corpus generate_synthetic(const SyntheticSpec& spec);

}  // namespace cogfuse
