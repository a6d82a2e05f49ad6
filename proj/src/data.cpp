#include "stformer/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "stformer/errors.hpp"
#include "stformer/json_fields.hpp"

namespace stf {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

/// Splits on tabs if present, else commas, else runs of spaces.
std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  char delim = 0;
  if (line.find('\t') != std::string_view::npos) delim = '\t';
  else if (line.find(',') != std::string_view::npos) delim = ',';
  if (delim) {
    std::size_t start = 0;
    while (true) {
      const auto pos = line.find(delim, start);
      out.push_back(trim(line.substr(start, pos - start)));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
  } else {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\r')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\r') ++j;
      if (j > i) out.push_back(line.substr(i, j - i));
      i = j;
    }
  }
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    return std::nullopt;
  }
  return v;
}

std::optional<long long> parse_int(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    return std::nullopt;
  }
  return v;
}

std::string location(const fs::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool is_missing(std::string_view s) {
  return s.empty() || s == "NA" || s == "n/a" || s == "N/A" || s == "None";
}

std::ofstream open_for_write(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

PhenoStats PhenoStats::compute(const std::vector<PhenotypicRecord>& train) {
  auto moments = [](const std::vector<double>& xs, double& mean, double& sd) {
    mean = 0.0;
    sd = 1.0;
    if (xs.empty()) return;
    double s = 0.0;
    for (double x : xs) s += x;
    mean = s / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double v = std::sqrt(ss / static_cast<double>(xs.size()));
    if (v > 0.0) sd = v;
  };
  std::vector<double> ages, iqs;
  for (const auto& r : train) {
    if (r.age) ages.push_back(*r.age);
    if (r.iq_usable()) iqs.push_back(*r.full4_iq);
  }
  PhenoStats s;
  moments(ages, s.age_mean, s.age_std);
  moments(iqs, s.iq_mean, s.iq_std);
  return s;
}

nlohmann::json pheno_stats_to_json(const PhenoStats& s) {
  return {{"age_mean", s.age_mean},
          {"age_std", s.age_std},
          {"iq_mean", s.iq_mean},
          {"iq_std", s.iq_std}};
}

PhenoStats pheno_stats_from_json(const nlohmann::json& j) {
  PhenoStats s;
  s.age_mean = j.at("age_mean").get<double>();
  s.age_std = j.at("age_std").get<double>();
  s.iq_mean = j.at("iq_mean").get<double>();
  s.iq_std = j.at("iq_std").get<double>();
  return s;
}

std::vector<double> encode_phenotype(const PhenotypicRecord& r,
                                     const PhenoStats& stats) {
  std::vector<double> v(kPhenoDim, 0.0);
  v[0] = (r.gender && (*r.gender == 0 || *r.gender == 1)) ? *r.gender : 0.5;
  v[1] = r.age ? (*r.age - stats.age_mean) / stats.age_std : 0.0;
  if (r.handedness && *r.handedness == 0) v[2] = 0.0;
  else if (r.handedness && *r.handedness == 1) v[2] = 1.0;
  else v[2] = 0.5;
  v[3] = r.iq_usable() ? (*r.full4_iq - stats.iq_mean) / stats.iq_std : 0.0;
  v[4] = r.iq_usable() ? 0.0 : 1.0;
  return v;
}

int binarize_label(int dx) {
  if (dx < 0 || dx > 3) {
    throw DataError("dx code " + std::to_string(dx) + " is outside {0,1,2,3}");
  }
  return dx == 0 ? 0 : 1;
}

RoiTimeSeries load_subject_series(const fs::path& path, std::size_t min_rows) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  RoiTimeSeries ts;
  ts.subject_id = path.stem().string();
  Matrix& m = ts.values;
  std::string line;
  std::size_t line_no = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    std::vector<double> row;
    row.reserve(fields.size());
    std::optional<std::string_view> bad;
    for (auto f : fields) {
      auto v = parse_double(f);
      if (!v) {
        bad = f;
        break;
      }
      row.push_back(*v);
    }
    if (bad) {
      if (first_content) {
        first_content = false;  // header line
        continue;
      }
      throw DataError(location(path, line_no) + ": cannot parse '" +
                      std::string(*bad) + "' as a number");
    }
    first_content = false;
    for (double v : row) {
      if (!std::isfinite(v)) {
        throw DataError(location(path, line_no) + ": non-finite value " +
                        format_double(v));
      }
    }
    if (m.rows == 0) {
      m.cols = row.size();
    } else if (row.size() != m.cols) {
      throw DataError(location(path, line_no) + ": expected " +
                      std::to_string(m.cols) + " columns, found " +
                      std::to_string(row.size()));
    }
    m.values.insert(m.values.end(), row.begin(), row.end());
    ++m.rows;
  }
  if (m.rows == 0) throw DataError(path.string() + ": no data rows");
  if (m.rows < min_rows) {
    throw DataError(path.string() + ": " + std::to_string(m.rows) +
                    " time points, fewer than the segment length " +
                    std::to_string(min_rows));
  }
  return ts;
}

std::vector<PhenotypicRecord> load_phenotypic_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> col;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    for (std::size_t i = 0; i < fields.size(); ++i) {
      col.emplace(std::string(fields[i]), i);
    }
    break;
  }
  for (const char* name : {"subject_id", "site", "dx", "gender", "age",
                           "handedness", "full4_iq"}) {
    if (!col.count(name)) {
      throw DataError(path.string() + ": missing required column '" + name +
                      "'");
    }
  }

  std::vector<PhenotypicRecord> records;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    auto cell = [&](const char* name) -> std::string_view {
      const std::size_t i = col.at(name);
      return i < fields.size() ? fields[i] : std::string_view{};
    };
    auto fail = [&](const std::string& msg) {
      throw DataError(location(path, line_no) + ": " + msg);
    };
    auto opt_int = [&](const char* name) -> std::optional<int> {
      const auto s = cell(name);
      if (is_missing(s)) return std::nullopt;
      auto v = parse_int(s);
      if (!v) fail(std::string(name) + " '" + std::string(s) +
                   "' is not an integer");
      return static_cast<int>(*v);
    };
    auto opt_real = [&](const char* name) -> std::optional<double> {
      const auto s = cell(name);
      if (is_missing(s)) return std::nullopt;
      auto v = parse_double(s);
      if (!v || !std::isfinite(*v)) {
        fail(std::string(name) + " '" + std::string(s) + "' is not a number");
      }
      return *v;
    };

    PhenotypicRecord r;
    r.subject_id = std::string(cell("subject_id"));
    if (r.subject_id.empty()) fail("empty subject_id");
    if (!seen.insert(r.subject_id).second) {
      fail("duplicate subject_id '" + r.subject_id + "'");
    }
    r.site = std::string(cell("site"));
    const auto dx = parse_int(cell("dx"));
    if (!dx) fail("dx '" + std::string(cell("dx")) + "' is not an integer");
    if (*dx < 0 || *dx > 3) fail("dx " + std::to_string(*dx) + " not in {0,1,2,3}");
    r.dx = static_cast<int>(*dx);
    r.gender = opt_int("gender");
    r.age = opt_real("age");
    r.handedness = opt_int("handedness");
    r.full4_iq = opt_real("full4_iq");
    records.push_back(std::move(r));
  }
  return records;
}

void write_subject_series(const fs::path& path, const RoiTimeSeries& series) {
  std::ofstream out = open_for_write(path);
  const Matrix& m = series.values;
  for (std::size_t j = 0; j < m.cols; ++j) {
    out << (j ? "\t" : "") << "roi_" << j;
  }
  out << '\n';
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      out << (j ? "\t" : "") << format_double(m.at(i, j));
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

void write_phenotypic_table(const fs::path& path,
                            const std::vector<PhenotypicRecord>& records) {
  std::ofstream out = open_for_write(path);
  out << "subject_id\tsite\tdx\tgender\tage\thandedness\tfull4_iq\n";
  auto opt = [](const auto& v) -> std::string {
    if (!v) return "";
    if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, double>) {
      return format_double(*v);
    } else {
      return std::to_string(*v);
    }
  };
  for (const auto& r : records) {
    out << r.subject_id << '\t' << r.site << '\t' << r.dx << '\t'
        << opt(r.gender) << '\t' << opt(r.age) << '\t' << opt(r.handedness)
        << '\t' << opt(r.full4_iq) << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

Dataset::Dataset(std::vector<Subject> subjects) : subjects_(std::move(subjects)) {
  if (subjects_.empty()) return;
  const std::size_t s = subjects_.front().series.rois();
  for (const auto& sub : subjects_) {
    if (sub.series.rois() != s) {
      throw DataError("subject " + sub.series.subject_id + " has " +
                      std::to_string(sub.series.rois()) + " ROIs, expected " +
                      std::to_string(s));
    }
  }
}

std::size_t Dataset::rois() const {
  return subjects_.empty() ? 0 : subjects_.front().series.rois();
}

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  for (const auto& s : subjects_) out.push_back(s.record.subject_id);
  return out;
}

const Subject& Dataset::at(const std::string& id) const {
  for (const auto& s : subjects_) {
    if (s.record.subject_id == id) return s;
  }
  throw DataError("unknown subject '" + id + "'");
}

fs::path find_series_file(const fs::path& dir, const std::string& subject_id) {
  for (const char* ext : {".tsv", ".csv", ".txt"}) {
    fs::path candidate = dir / (subject_id + ext);
    if (fs::exists(candidate)) return candidate;
  }
  throw DataError("no series file for subject '" + subject_id + "' in " +
                  dir.string());
}

Dataset load_dataset(const fs::path& series_dir, const fs::path& phenotypic_table,
                     std::size_t min_rows) {
  auto records = load_phenotypic_table(phenotypic_table);
  if (records.empty()) {
    throw DataError(phenotypic_table.string() + ": no subjects");
  }
  std::vector<Subject> subjects;
  for (auto& r : records) {
    const fs::path file = find_series_file(series_dir, r.subject_id);
    Subject s;
    s.series = load_subject_series(file, min_rows);
    s.series.subject_id = r.subject_id;
    s.label = binarize_label(r.dx);
    s.record = std::move(r);
    if (!subjects.empty() && s.series.rois() != subjects.front().series.rois()) {
      throw DataError(file.string() + ": " + std::to_string(s.series.rois()) +
                      " ROI columns, but " +
                      subjects.front().series.subject_id + " has " +
                      std::to_string(subjects.front().series.rois()));
    }
    subjects.push_back(std::move(s));
  }
  return Dataset(std::move(subjects));
}

Matrix crop_rows(const Matrix& m, std::size_t offset, std::size_t length) {
  if (offset + length > m.rows) {
    throw DimensionError("crop_rows: rows [" + std::to_string(offset) + ", " +
                         std::to_string(offset + length) + ") exceed " +
                         std::to_string(m.rows));
  }
  Matrix out(length, m.cols);
  std::copy(m.values.begin() + static_cast<std::ptrdiff_t>(offset * m.cols),
            m.values.begin() +
                static_cast<std::ptrdiff_t>((offset + length) * m.cols),
            out.values.begin());
  return out;
}

namespace {

void require_length(std::size_t t_full, std::size_t length) {
  if (length == 0 || t_full < length) {
    throw DataError("segment length " + std::to_string(length) +
                    " does not fit a series of " + std::to_string(t_full) +
                    " time points");
  }
}

}  // namespace

std::size_t random_segment_offset(std::size_t t_full, std::size_t length,
                                  RngStream& rng) {
  require_length(t_full, length);
  return rng.uniform_index(t_full - length + 1);
}

std::size_t center_segment_offset(std::size_t t_full, std::size_t length) {
  require_length(t_full, length);
  return (t_full - length) / 2;
}

Matrix random_segment(const Matrix& series, std::size_t length, RngStream& rng) {
  return crop_rows(series, random_segment_offset(series.rows, length, rng),
                   length);
}

Matrix center_segment(const Matrix& series, std::size_t length) {
  return crop_rows(series, center_segment_offset(series.rows, length), length);
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_train_val(
    const std::vector<std::string>& subject_ids, double frac,
    std::uint64_t seed) {
  if (!(frac > 0.0 && frac < 1.0)) {
    throw ConfigError("validation fraction must be in (0, 1)");
  }
  const std::size_t n = subject_ids.size();
  if (std::set<std::string>(subject_ids.begin(), subject_ids.end()).size() != n) {
    throw DataError("split_train_val: duplicate subject ids");
  }
  const auto n_val =
      static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) {
    throw DataError("split of " + std::to_string(n) + " subjects at fraction " +
                    format_double(frac) + " leaves one side empty");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  RngStream rng = RngStream::named(seed, "split");
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_index(i)]);
  }
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  std::pair<std::vector<std::string>, std::vector<std::string>> out;
  for (std::size_t i = 0; i < n; ++i) {
    (is_val[i] ? out.second : out.first).push_back(subject_ids[i]);
  }
  return out;
}

std::vector<std::string> SyntheticSpec::validate() const {
  std::vector<std::string> e;
  if (n_subjects == 0) e.push_back("synth.n_subjects must be >= 1");
  if (T_full == 0) e.push_back("synth.T_full must be >= 1");
  if (S == 0) e.push_back("synth.S must be >= 1");
  if (!(balance >= 0.0 && balance <= 1.0)) {
    e.push_back("synth.balance must be in [0, 1]");
  }
  for (std::size_t r : signal_rois) {
    if (r >= S) {
      e.push_back("synth.signal_rois: ROI " + std::to_string(r) +
                  " is outside [0, S = " + std::to_string(S) + ")");
    }
  }
  if (std::set<std::size_t>(signal_rois.begin(), signal_rois.end()).size() !=
      signal_rois.size()) {
    e.push_back("synth.signal_rois has duplicates");
  }
  if (!(effect_size >= 0.0) || !std::isfinite(effect_size)) {
    e.push_back("synth.effect_size must be a finite value >= 0");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    e.push_back("synth.noise_std must be a finite value >= 0");
  }
  return e;
}

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s) {
  return {{"n_subjects", s.n_subjects}, {"T_full", s.T_full},
          {"S", s.S},                   {"balance", s.balance},
          {"signal_rois", s.signal_rois}, {"effect_size", s.effect_size},
          {"noise_std", s.noise_std},   {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j,
                                       std::vector<std::string>& errors,
                                       const std::string& prefix) {
  SyntheticSpec s;
  JsonFields f(j, prefix, errors);
  if (!f.ok()) return s;
  f.read("n_subjects", s.n_subjects);
  f.read("T_full", s.T_full);
  f.read("S", s.S);
  f.read("balance", s.balance);
  f.read("signal_rois", s.signal_rois);
  f.read("effect_size", s.effect_size);
  f.read("noise_std", s.noise_std);
  std::size_t seed = s.seed;
  f.read("seed", seed);
  s.seed = seed;
  f.finish();
  return s;
}

Dataset SyntheticDataset::to_dataset() const {
  std::vector<Subject> subjects;
  for (std::size_t i = 0; i < series.size(); ++i) {
    subjects.push_back(
        Subject{series[i], phenotypes[i], binarize_label(phenotypes[i].dx)});
  }
  return Dataset(std::move(subjects));
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  if (auto e = spec.validate(); !e.empty()) {
    std::string msg = "invalid synthetic spec:";
    for (const auto& m : e) msg += "\n  " + m;
    throw ConfigError(msg);
  }
  const std::size_t width =
      std::max<std::size_t>(4, std::to_string(spec.n_subjects).size());
  SyntheticDataset out;
  for (std::size_t i = 0; i < spec.n_subjects; ++i) {
    RngStream rng = RngStream::named(spec.seed, "synthetic", i);
    std::string num = std::to_string(i + 1);
    const std::string id = "sub-" + std::string(width - num.size(), '0') + num;

    const int label = rng.bernoulli(spec.balance) ? 1 : 0;
    RoiTimeSeries ts;
    ts.subject_id = id;
    ts.template_name = "synthetic";
    ts.values = Matrix(spec.T_full, spec.S);
    for (double& v : ts.values.values) v = spec.noise_std * rng.normal();
    const double freq = rng.uniform(0.05, 0.1);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    if (label == 1) {
      for (std::size_t t = 0; t < spec.T_full; ++t) {
        const double wave =
            spec.effect_size *
            std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(t) +
                     phase);
        for (std::size_t r : spec.signal_rois) ts.values.at(t, r) += wave;
      }
    }

    PhenotypicRecord p;
    p.subject_id = id;
    p.site = "SYN";
    p.dx = label == 0 ? 0 : 1 + static_cast<int>(rng.uniform_index(3));
    if (rng.uniform() >= 0.05) p.gender = rng.bernoulli(0.5) ? 1 : 0;
    p.age = std::round(rng.uniform(7.0, 21.0) * 100.0) / 100.0;
    const double h = rng.uniform();
    if (h < 0.85) p.handedness = 1;
    else if (h < 0.95) p.handedness = 0;
    else if (h < 0.98) p.handedness = 2;
    const double q = rng.uniform();
    const double iq = std::round(rng.normal(105.0, 13.0));
    if (q < 0.05) p.full4_iq = kIqErrorSentinel;
    else if (q >= 0.10) p.full4_iq = iq;

    out.series.push_back(std::move(ts));
    out.phenotypes.push_back(std::move(p));
  }
  return out;
}

void write_synthetic(const fs::path& dir, const SyntheticDataset& data,
                     const SyntheticSpec& spec) {
  fs::create_directories(dir / "series");
  for (const auto& ts : data.series) {
    write_subject_series(dir / "series" / (ts.subject_id + ".tsv"), ts);
  }
  write_phenotypic_table(dir / "phenotypic.tsv", data.phenotypes);
  nlohmann::json manifest{{"spec", synthetic_spec_to_json(spec)},
                          {"seed", spec.seed},
                          {"series_dir", "series"},
                          {"phenotypic_table", "phenotypic.tsv"},
                          {"n_subjects", data.series.size()}};
  std::ofstream out = open_for_write(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + (dir / "manifest.json").string());
}

}  // namespace stf
