#include "cogfuse/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "cogfuse/errors.hpp"
#include "cogfuse/random.hpp"

namespace cogfuse {

namespace {

using nlohmann::json;

constexpr std::size_t kRecordsPerSubject = 3;

std::vector<double> read_sequence(const json& rows, const Dims& dims, const char* key, std::size_t line) {
  if (!rows.is_array() || rows.size() != dims.seq_len) {
    throw ParseError(std::string(key) + " must hold " + std::to_string(dims.seq_len) + " rows", line);
  }
  std::vector<double> out;
  out.reserve(dims.seq_len * dims.width);
  for (const json& row : rows) {
    if (!row.is_array() || row.size() != dims.width) {
      throw ParseError(std::string(key) + " rows must hold " + std::to_string(dims.width) + " values", line);
    }
    for (const json& v : row) {
      if (!v.is_number()) throw ParseError(std::string(key) + " holds a non-numeric value", line);
      out.push_back(v.get<double>());
    }
  }
  return out;
}

json sequence_to_json(const std::vector<double>& seq, const Dims& dims) {
  json rows = json::array();
  for (std::size_t i = 0; i < dims.seq_len; ++i) {
    rows.push_back(std::vector<double>(seq.begin() + static_cast<std::ptrdiff_t>(i * dims.width),
                                       seq.begin() + static_cast<std::ptrdiff_t>((i + 1) * dims.width)));
  }
  return rows;
}

// A zero row is padding only if every later row is zero too.
void check_padding(const std::vector<double>& seq, const Dims& dims, const FeatureRecord& rec, const char* key) {
  bool seen_zero = false;
  for (std::size_t i = 0; i < dims.seq_len; ++i) {
    const auto begin = seq.begin() + static_cast<std::ptrdiff_t>(i * dims.width);
    const bool zero = std::all_of(begin, begin + static_cast<std::ptrdiff_t>(dims.width), [](double v) { return v == 0.0; });
    if (zero) {
      seen_zero = true;
    } else if (seen_zero) {
      throw DegenerateInputError("sample '" + rec.sample_id + "': " + key + " has a zero-norm token row before row " +
                                 std::to_string(i));
    }
  }
}

FeatureRecord parse_record(const json& doc, const Dims& dims, std::size_t line) {
  FeatureRecord rec;
  try {
    rec.sample_id = doc.at("sample_id").get<std::string>();
    rec.subject_id = doc.at("subject_id").get<std::string>();
    rec.picture_id = doc.at("picture_id").get<int>();
    rec.label = doc.at("label").get<int>();
    rec.mmse = doc.at("mmse").get<double>();
  } catch (const json::exception& e) {
    throw ParseError(e.what(), line);
  }
  try {
    rec.language = parse_language(doc.at("language").get<std::string>());
  } catch (const json::exception& e) {
    throw ParseError(e.what(), line);
  }
  if (!doc.contains("subject_seq") || !doc.contains("reference_seq") || !doc.contains("audio_feat")) {
    throw ParseError("record is missing a feature array", line);
  }
  rec.subject_seq = read_sequence(doc["subject_seq"], dims, "subject_seq", line);
  rec.reference_seq = read_sequence(doc["reference_seq"], dims, "reference_seq", line);
  const json& audio = doc["audio_feat"];
  if (!audio.is_array() || audio.size() != dims.audio_width) {
    throw ParseError("audio_feat must hold " + std::to_string(dims.audio_width) + " values", line);
  }
  for (const json& v : audio) {
    if (v.is_null()) {
      rec.audio_feat.push_back(std::numeric_limits<double>::quiet_NaN());
    } else if (v.is_number()) {
      rec.audio_feat.push_back(v.get<double>());
    } else {
      throw ParseError("audio_feat holds a non-numeric value", line);
    }
  }
  return rec;
}

json record_to_json(const FeatureRecord& rec, const Dims& dims) {
  json audio = json::array();
  for (double v : rec.audio_feat) audio.push_back(std::isnan(v) ? json(nullptr) : json(v));
  return json{{"sample_id", rec.sample_id},
              {"subject_id", rec.subject_id},
              {"language", std::string(to_string(rec.language))},
              {"picture_id", rec.picture_id},
              {"label", rec.label},
              {"mmse", rec.mmse},
              {"subject_seq", sequence_to_json(rec.subject_seq, dims)},
              {"reference_seq", sequence_to_json(rec.reference_seq, dims)},
              {"audio_feat", audio}};
}

std::vector<double> unit_direction(Rng& rng, std::size_t n) {
  std::vector<double> u(n);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& v : u) {
      v = rng.normal();
      norm += v * v;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& v : u) v /= norm;
  return u;
}

}  // namespace

Language parse_language(std::string_view tag) {
  if (tag == "en") return Language::en;
  if (tag == "zh") return Language::zh;
  throw RoutingError("unknown language tag '" + std::string(tag) + "'");
}

std::string_view to_string(Language lang) { return lang == Language::en ? "en" : "zh"; }

std::size_t Corpus::subject_count() const {
  std::set<std::string> subjects;
  for (const auto& r : records) subjects.insert(r.subject_id);
  return subjects.size();
}

void validate_corpus(const Corpus& corpus) {
  const Dims& dims = corpus.dims;
  if (dims.seq_len == 0 || dims.width == 0 || dims.audio_width == 0) throw DimensionError("corpus dimensions must be nonzero");
  std::set<std::string> sample_ids;
  std::map<std::string, std::vector<const FeatureRecord*>> by_subject;
  for (const auto& rec : corpus.records) {
    if (!sample_ids.insert(rec.sample_id).second) throw IntegrityError("duplicate sample_id '" + rec.sample_id + "'");
    if (rec.subject_seq.size() != dims.seq_len * dims.width || rec.reference_seq.size() != dims.seq_len * dims.width ||
        rec.audio_feat.size() != dims.audio_width) {
      throw DimensionError("sample '" + rec.sample_id + "' does not match corpus dimensions");
    }
    if (rec.picture_id < 1 || rec.picture_id > 3) {
      throw RangeError("sample '" + rec.sample_id + "': picture_id " + std::to_string(rec.picture_id) + " outside 1..3");
    }
    if (rec.label != 0 && rec.label != 1) {
      throw RangeError("sample '" + rec.sample_id + "': label " + std::to_string(rec.label) + " is not 0 or 1");
    }
    if (!(rec.mmse >= 0.0 && rec.mmse <= 30.0)) {
      std::ostringstream os;
      os << "sample '" << rec.sample_id << "': mmse " << rec.mmse << " outside [0, 30]";
      throw RangeError(os.str());
    }
    for (const auto* seq : {&rec.subject_seq, &rec.reference_seq}) {
      if (std::any_of(seq->begin(), seq->end(), [](double v) { return !std::isfinite(v); })) {
        throw InvalidValueError("sample '" + rec.sample_id + "': non-finite token embedding");
      }
    }
    if (corpus.audio_normalized &&
        std::any_of(rec.audio_feat.begin(), rec.audio_feat.end(), [](double v) { return std::isnan(v); })) {
      throw InvalidValueError("sample '" + rec.sample_id + "': NaN in normalized audio features");
    }
    check_padding(rec.subject_seq, dims, rec, "subject_seq");
    check_padding(rec.reference_seq, dims, rec, "reference_seq");
    by_subject[rec.subject_id].push_back(&rec);
  }
  for (const auto& [subject, recs] : by_subject) {
    if (recs.size() != kRecordsPerSubject) {
      throw IntegrityError("subject '" + subject + "' has " + std::to_string(recs.size()) + " records, expected 3");
    }
    std::set<int> pictures;
    for (const auto* r : recs) {
      pictures.insert(r->picture_id);
      if (r->language != recs.front()->language || r->label != recs.front()->label || r->mmse != recs.front()->mmse) {
        throw IntegrityError("subject '" + subject + "' has inconsistent language, label or mmse across records");
      }
    }
    if (pictures.size() != kRecordsPerSubject) throw IntegrityError("subject '" + subject + "' repeats a picture_id");
  }
}

Corpus parse_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  bool have_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!doc.is_object()) throw ParseError("expected a JSON object", line_no);
    if (!have_meta) {
      if (!doc.contains("meta")) throw ParseError("first line must be the meta header", line_no);
      const json& meta = doc["meta"];
      try {
        if (meta.at("format").get<std::string>() != kCorpusFormat) {
          throw ParseError("unsupported format '" + meta.at("format").get<std::string>() + "'", line_no);
        }
        corpus.dims = Dims{meta.at("L").get<std::size_t>(), meta.at("d").get<std::size_t>(), meta.at("d_a").get<std::size_t>()};
        corpus.provenance = meta.value("provenance", std::string("file"));
      } catch (const json::exception& e) {
        throw ParseError(std::string("bad meta header: ") + e.what(), line_no);
      }
      have_meta = true;
      continue;
    }
    corpus.records.push_back(parse_record(doc, corpus.dims, line_no));
  }
  if (!have_meta) throw ParseError("empty corpus file", line_no);
  validate_corpus(corpus);
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open corpus file " + path.string());
  return parse_corpus(in);
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  json meta{{"format", std::string(kCorpusFormat)},
            {"L", corpus.dims.seq_len},
            {"d", corpus.dims.width},
            {"d_a", corpus.dims.audio_width},
            {"provenance", corpus.provenance}};
  out << json{{"meta", meta}}.dump() << '\n';
  for (const auto& rec : corpus.records) out << record_to_json(rec, corpus.dims).dump() << '\n';
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write corpus file " + path.string());
  write_corpus(corpus, out);
  if (!out) throw std::ios_base::failure("failed writing corpus file " + path.string());
}

// ---- folds ----------------------------------------------------------------

std::size_t FoldPlan::fold(const std::string& subject_id) const {
  auto it = fold_of.find(subject_id);
  if (it == fold_of.end()) throw IntegrityError("subject '" + subject_id + "' is not in the fold plan");
  return it->second;
}

std::vector<std::size_t> FoldPlan::subjects_per_fold() const {
  std::vector<std::size_t> counts(k, 0);
  for (const auto& [subject, f] : fold_of) ++counts.at(f);
  return counts;
}

nlohmann::json FoldPlan::to_json() const { return json{{"k", k}, {"folds", fold_of}}; }

FoldPlan FoldPlan::from_json(const nlohmann::json& doc) {
  FoldPlan plan;
  plan.k = doc.at("k").get<std::size_t>();
  plan.fold_of = doc.at("folds").get<std::map<std::string, std::size_t>>();
  for (const auto& [subject, f] : plan.fold_of) {
    if (f >= plan.k) throw RangeError("fold plan assigns '" + subject + "' to fold " + std::to_string(f));
  }
  return plan;
}

FoldPlan split_folds(const Corpus& corpus, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("need at least 2 folds");
  // (language, label) -> sorted subject ids
  std::map<std::pair<int, int>, std::set<std::string>> cells;
  for (const auto& rec : corpus.records) {
    cells[{static_cast<int>(rec.language), rec.label}].insert(rec.subject_id);
  }
  FoldPlan plan;
  plan.k = k;
  std::size_t next = 0;
  std::uint64_t stream = 0;
  for (const auto& [cell, subject_set] : cells) {
    if (subject_set.size() < k) {
      throw ConfigError("only " + std::to_string(subject_set.size()) + " subjects in a (language, label) cell, need " +
                        std::to_string(k));
    }
    std::vector<std::string> subjects(subject_set.begin(), subject_set.end());
    Rng rng(seed, stream++);
    rng.shuffle(subjects);
    // Dealing continues across cells so that fold totals stay within one subject.
    for (const auto& s : subjects) plan.fold_of[s] = next++ % k;
  }
  return plan;
}

FoldSplit split_for_fold(const Corpus& corpus, const FoldPlan& plan, std::size_t fold) {
  if (fold >= plan.k) throw RangeError("fold " + std::to_string(fold) + " outside plan of " + std::to_string(plan.k));
  FoldSplit split;
  for (const auto& rec : corpus.records) {
    (plan.fold(rec.subject_id) == fold ? split.validation : split.train).push_back(rec);
  }
  return split;
}

// ---- normalization --------------------------------------------------------

Normalizer Normalizer::fit(std::span<const FeatureRecord> train) {
  if (train.empty()) throw ConfigError("cannot fit a normalizer on an empty training split");
  const std::size_t width = train.front().audio_feat.size();
  Normalizer n;
  n.mean_.assign(width, 0.0);
  n.scale_.assign(width, 1.0);
  n.zero_variance_.assign(width, false);
  for (std::size_t j = 0; j < width; ++j) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& rec : train) {
      if (rec.audio_feat.size() != width) throw DimensionError("audio feature widths differ within training split");
      if (!std::isnan(rec.audio_feat[j])) {
        sum += rec.audio_feat[j];
        ++count;
      }
    }
    const double mu = count ? sum / static_cast<double>(count) : 0.0;
    // Population variance over the imputed column: NaNs sit at the mean.
    double ss = 0.0;
    for (const auto& rec : train) {
      const double v = std::isnan(rec.audio_feat[j]) ? mu : rec.audio_feat[j];
      ss += (v - mu) * (v - mu);
    }
    const double sd = std::sqrt(ss / static_cast<double>(train.size()));
    n.mean_[j] = mu;
    if (sd > 0.0) {
      n.scale_[j] = sd;
    } else {
      n.zero_variance_[j] = true;
    }
  }
  n.fitted_ = true;
  return n;
}

FeatureRecord Normalizer::apply(const FeatureRecord& rec) const {
  if (!fitted_) throw UsageError("normalizer applied before fitting");
  if (rec.audio_feat.size() != mean_.size()) throw DimensionError("audio feature width does not match the normalizer");
  FeatureRecord out = rec;
  for (std::size_t j = 0; j < mean_.size(); ++j) {
    const double v = std::isnan(rec.audio_feat[j]) ? mean_[j] : rec.audio_feat[j];
    out.audio_feat[j] = (v - mean_[j]) / scale_[j];
  }
  return out;
}

Corpus Normalizer::apply(const Corpus& corpus) const {
  if (corpus.audio_normalized) throw UsageError("corpus audio features are already normalized");
  Corpus out;
  out.dims = corpus.dims;
  out.provenance = corpus.provenance;
  out.audio_normalized = true;
  out.records.reserve(corpus.records.size());
  for (const auto& rec : corpus.records) out.records.push_back(apply(rec));
  return out;
}

nlohmann::json Normalizer::to_json() const {
  return json{{"fitted", fitted_}, {"mean", mean_}, {"scale", scale_}, {"zero_variance", zero_variance_}};
}

Normalizer Normalizer::from_json(const nlohmann::json& doc) {
  Normalizer n;
  n.fitted_ = doc.at("fitted").get<bool>();
  n.mean_ = doc.at("mean").get<std::vector<double>>();
  n.scale_ = doc.at("scale").get<std::vector<double>>();
  n.zero_variance_ = doc.at("zero_variance").get<std::vector<bool>>();
  if (n.mean_.size() != n.scale_.size() || n.mean_.size() != n.zero_variance_.size()) {
    throw DimensionError("normalizer arrays have different lengths");
  }
  return n;
}

NormalizedCorpus fit_apply_normalizer(std::span<const FeatureRecord> train, const Corpus& all) {
  Normalizer n = Normalizer::fit(train);
  Corpus normalized = n.apply(all);
  return NormalizedCorpus{std::move(normalized), std::move(n)};
}

// ---- synthetic corpus -----------------------------------------------------

void SyntheticSpec::validate() const {
  if (text_separation < 0.0 || audio_separation < 0.0) throw ConfigError("signal separations must be nonnegative");
  if (zh_subjects + en_subjects != n_mci_subjects + n_control_subjects) {
    throw ConfigError("language subject counts do not add up to the class subject counts");
  }
  if (n_mci_subjects + n_control_subjects == 0) throw ConfigError("synthetic corpus needs at least one subject");
  if (dims.seq_len == 0 || dims.width == 0 || dims.audio_width == 0) throw ConfigError("synthetic dimensions must be nonzero");
  if (mmse_control_sd < 0.0 || mmse_mci_sd < 0.0) throw ConfigError("MMSE standard deviations must be nonnegative");
}

nlohmann::json SyntheticSpec::to_json() const {
  return json{{"n_mci_subjects", n_mci_subjects},
              {"n_control_subjects", n_control_subjects},
              {"zh_subjects", zh_subjects},
              {"en_subjects", en_subjects},
              {"seq_len", dims.seq_len},
              {"width", dims.width},
              {"audio_width", dims.audio_width},
              {"text_separation", text_separation},
              {"audio_separation", audio_separation},
              {"mmse_control_mean", mmse_control_mean},
              {"mmse_control_sd", mmse_control_sd},
              {"mmse_mci_mean", mmse_mci_mean},
              {"mmse_mci_sd", mmse_mci_sd},
              {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& doc) {
  SyntheticSpec s;
  s.n_mci_subjects = doc.value("n_mci_subjects", s.n_mci_subjects);
  s.n_control_subjects = doc.value("n_control_subjects", s.n_control_subjects);
  s.zh_subjects = doc.value("zh_subjects", s.zh_subjects);
  s.en_subjects = doc.value("en_subjects", s.en_subjects);
  s.dims.seq_len = doc.value("seq_len", s.dims.seq_len);
  s.dims.width = doc.value("width", s.dims.width);
  s.dims.audio_width = doc.value("audio_width", s.dims.audio_width);
  s.text_separation = doc.value("text_separation", s.text_separation);
  s.audio_separation = doc.value("audio_separation", s.audio_separation);
  s.mmse_control_mean = doc.value("mmse_control_mean", s.mmse_control_mean);
  s.mmse_control_sd = doc.value("mmse_control_sd", s.mmse_control_sd);
  s.mmse_mci_mean = doc.value("mmse_mci_mean", s.mmse_mci_mean);
  s.mmse_mci_sd = doc.value("mmse_mci_sd", s.mmse_mci_sd);
  s.seed = doc.value("seed", s.seed);
  s.validate();
  return s;
}

Corpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const Dims& dims = spec.dims;
  const std::size_t total = spec.n_mci_subjects + spec.n_control_subjects;

  // Split each class across languages in proportion to the language totals.
  const auto mci_zh = static_cast<std::size_t>(
      std::llround(static_cast<double>(spec.n_mci_subjects * spec.zh_subjects) / static_cast<double>(total)));
  const std::size_t mci_en = spec.n_mci_subjects - std::min(mci_zh, spec.n_mci_subjects);
  if (mci_zh > spec.zh_subjects || mci_en > spec.en_subjects) throw ConfigError("cannot place MCI subjects across languages");
  const std::size_t control_zh = spec.zh_subjects - mci_zh;
  const std::size_t control_en = spec.en_subjects - mci_en;

  struct Subject {
    Language language;
    int label;
  };
  std::vector<Subject> subjects;
  for (std::size_t i = 0; i < mci_zh; ++i) subjects.push_back({Language::zh, 1});
  for (std::size_t i = 0; i < mci_en; ++i) subjects.push_back({Language::en, 1});
  for (std::size_t i = 0; i < control_zh; ++i) subjects.push_back({Language::zh, 0});
  for (std::size_t i = 0; i < control_en; ++i) subjects.push_back({Language::en, 0});

  Rng order_rng(spec.seed, 0);
  order_rng.shuffle(subjects);

  Rng text_dir_rng(spec.seed, 1);
  Rng audio_dir_rng(spec.seed, 2);
  const std::vector<double> text_dir = unit_direction(text_dir_rng, dims.width);
  const std::vector<double> audio_dir = unit_direction(audio_dir_rng, dims.audio_width);

  // One reference description per (language, picture).
  std::array<std::array<std::vector<double>, 3>, 2> references;
  Rng ref_rng(spec.seed, 3);
  for (auto& lang_refs : references) {
    for (auto& ref : lang_refs) {
      ref.resize(dims.seq_len * dims.width);
      for (double& v : ref) v = ref_rng.normal();
    }
  }

  Corpus corpus;
  corpus.dims = dims;
  {
    std::ostringstream os;
    os << "synthetic " << spec.to_json().dump();
    corpus.provenance = os.str();
  }
  corpus.records.reserve(total * kRecordsPerSubject);
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    const Subject& subj = subjects[s];
    Rng rng(spec.seed, 100 + s);
    const double sign = subj.label == 1 ? 1.0 : -1.0;
    const double mmse_mean = subj.label == 1 ? spec.mmse_mci_mean : spec.mmse_control_mean;
    const double mmse_sd = subj.label == 1 ? spec.mmse_mci_sd : spec.mmse_control_sd;
    const double mmse = std::clamp(mmse_sd > 0.0 ? rng.normal(mmse_mean, mmse_sd) : mmse_mean, 0.0, 30.0);

    char subject_id[32];
    std::snprintf(subject_id, sizeof subject_id, "S%03zu", s + 1);
    for (int picture = 1; picture <= 3; ++picture) {
      FeatureRecord rec;
      rec.subject_id = subject_id;
      rec.sample_id = rec.subject_id + "_p" + std::to_string(picture);
      rec.language = subj.language;
      rec.picture_id = picture;
      rec.label = subj.label;
      rec.mmse = mmse;
      rec.subject_seq.resize(dims.seq_len * dims.width);
      const double text_shift = sign * spec.text_separation / 2.0;
      for (std::size_t i = 0; i < dims.seq_len; ++i) {
        for (std::size_t j = 0; j < dims.width; ++j) {
          rec.subject_seq[i * dims.width + j] = rng.normal() + text_shift * text_dir[j];
        }
      }
      rec.reference_seq = references[static_cast<std::size_t>(subj.language)][static_cast<std::size_t>(picture - 1)];
      rec.audio_feat.resize(dims.audio_width);
      const double audio_shift = sign * spec.audio_separation / 2.0;
      for (std::size_t j = 0; j < dims.audio_width; ++j) rec.audio_feat[j] = rng.normal() + audio_shift * audio_dir[j];
      corpus.records.push_back(std::move(rec));
    }
  }
  validate_corpus(corpus);
  return corpus;
}

}  // namespace cogfuse
