#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stformer/rng.hpp"

namespace stf {

/// Row-major real matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  bool operator==(const Matrix&) const = default;
};

/// One subject's scan: rows are time points, columns are ROIs.
struct RoiTimeSeries {
  std::string subject_id;
  Matrix values;
  std::string template_name;

  std::size_t length() const { return values.rows; }
  std::size_t rois() const { return values.cols; }
};

inline constexpr double kIqErrorSentinel = -999.0;

/// A row of the phenotypic table. Absent cells are nullopt; an IQ of -999
/// is kept as read and reported through `iq_error()`.
struct PhenotypicRecord {
  std::string subject_id;
  std::string site;
  int dx = 0;
  std::optional<int> gender;
  std::optional<double> age;
  std::optional<int> handedness;  // 0 left, 1 right, 2 ambidextrous, 3 unknown
  std::optional<double> full4_iq;

  bool iq_error() const { return full4_iq && *full4_iq == kIqErrorSentinel; }
  bool iq_usable() const { return full4_iq && !iq_error(); }
  bool operator==(const PhenotypicRecord&) const = default;
};

/// Training-split moments for the z-scored phenotype fields. A field with
/// no usable values, or zero spread, gets mean 0 and std 1.
struct PhenoStats {
  double age_mean = 0.0;
  double age_std = 1.0;
  double iq_mean = 0.0;
  double iq_std = 1.0;

  static PhenoStats compute(const std::vector<PhenotypicRecord>& train);
  bool operator==(const PhenoStats&) const = default;
};

nlohmann::json pheno_stats_to_json(const PhenoStats& s);
PhenoStats pheno_stats_from_json(const nlohmann::json& j);

inline constexpr std::size_t kPhenoDim = 5;

/// [gender, age z, handedness, iq z, iq_missing]. Missing gender and
/// ambiguous handedness map to 0.5, missing or erroneous age/IQ to 0.
std::vector<double> encode_phenotype(const PhenotypicRecord& r,
                                     const PhenoStats& stats);

/// 0 (control) -> 0, 1..3 (ADHD subtypes) -> 1.
int binarize_label(int dx);

/// Reads a tab-, comma- or whitespace-delimited numeric file with an
/// optional non-numeric header line. Rejects files with fewer than
/// `min_rows` rows. The subject id is the file stem.
RoiTimeSeries load_subject_series(const std::filesystem::path& path,
                                  std::size_t min_rows = 1);

/// Reads the phenotypic table. Required columns: subject_id, site, dx,
/// gender, age, handedness, full4_iq; extra columns are ignored.
std::vector<PhenotypicRecord> load_phenotypic_table(
    const std::filesystem::path& path);

void write_subject_series(const std::filesystem::path& path,
                          const RoiTimeSeries& series);
void write_phenotypic_table(const std::filesystem::path& path,
                            const std::vector<PhenotypicRecord>& records);

struct Subject {
  RoiTimeSeries series;
  PhenotypicRecord record;
  int label = 0;
};

/// Model-ready example: a fixed-length segment, the encoded phenotype and
/// the binary label.
struct SubjectSample {
  std::string subject_id;
  Matrix segment;
  std::vector<double> pheno;
  int label = 0;
};

/// Subjects listed in a phenotypic table, paired with their series files.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<Subject> subjects);

  const std::vector<Subject>& subjects() const { return subjects_; }
  std::size_t size() const { return subjects_.size(); }
  std::size_t rois() const;
  std::vector<std::string> ids() const;
  /// Throws DataError for an unknown id.
  const Subject& at(const std::string& id) const;

 private:
  std::vector<Subject> subjects_;
};

/// `<dir>/<subject_id>` with the first existing extension of .tsv, .csv,
/// .txt; throws DataError if none exists.
std::filesystem::path find_series_file(const std::filesystem::path& dir,
                                       const std::string& subject_id);

/// Finds `<series_dir>/<subject_id>.{tsv,csv,txt}` for every row of the
/// table; every series must have the same ROI count and at least
/// `min_rows` time points.
Dataset load_dataset(const std::filesystem::path& series_dir,
                     const std::filesystem::path& phenotypic_table,
                     std::size_t min_rows);

/// Rows [offset, offset + length) of `m`.
Matrix crop_rows(const Matrix& m, std::size_t offset, std::size_t length);
/// Offset drawn uniformly from [0, T_full - L].
std::size_t random_segment_offset(std::size_t t_full, std::size_t length,
                                  RngStream& rng);
std::size_t center_segment_offset(std::size_t t_full, std::size_t length);
Matrix random_segment(const Matrix& series, std::size_t length, RngStream& rng);
Matrix center_segment(const Matrix& series, std::size_t length);

/// Random split by subject with round(frac * n) validation subjects; both
/// sides keep the input order.
std::pair<std::vector<std::string>, std::vector<std::string>> split_train_val(
    const std::vector<std::string>& subject_ids, double frac,
    std::uint64_t seed);

struct SyntheticSpec {
  std::size_t n_subjects = 200;
  std::size_t T_full = 90;
  std::size_t S = 20;
  double balance = 0.5;
  std::vector<std::size_t> signal_rois{0, 1, 2};
  double effect_size = 2.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  bool operator==(const SyntheticSpec&) const = default;
  std::vector<std::string> validate() const;
};

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j,
                                       std::vector<std::string>& errors,
                                       const std::string& prefix = "synth");

struct SyntheticDataset {
  std::vector<RoiTimeSeries> series;
  std::vector<PhenotypicRecord> phenotypes;

  /// In-memory view with labels from the dx codes.
  Dataset to_dataset() const;
};

/// Class-1 subjects carry effect_size * sin(2 pi f t + phase) on every
/// signal ROI, with one (f, phase) per subject shared across those ROIs.
/// Phenotypes are independent of the label apart from dx.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Writes series/<id>.tsv, phenotypic.tsv and manifest.json under `dir`.
void write_synthetic(const std::filesystem::path& dir,
                     const SyntheticDataset& data, const SyntheticSpec& spec);

}  // namespace stf
