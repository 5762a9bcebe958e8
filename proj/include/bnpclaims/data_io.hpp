#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "random.hpp"
#include "sampler.hpp"
#include "serialization.hpp"

namespace bnpc {

// ---------------------------------------------------------------------------
// CSV

/// Splits one CSV record. Double quotes group fields and "" is a literal quote.
inline std::vector<std::string> split_csv(std::string_view line, std::size_t lineno = 0) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted)
    throw ParseError("unterminated quote", lineno);
  out.push_back(std::move(cur));
  return out;
}

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines; // 1-based file line of each row

  [[nodiscard]] std::size_t column(const std::string &name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw MissingColumn(path + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
  [[nodiscard]] bool has(const std::string &name) const {
    return std::find(header.begin(), header.end(), name) != header.end();
  }
};

inline CsvTable read_csv(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw IoError("cannot open " + path);
  CsvTable t;
  t.path = path;
  std::string text;
  std::size_t line = 0;
  while (std::getline(is, text)) {
    ++line;
    if (text.empty() || text == "\r")
      continue;
    auto fields = split_csv(text, line);
    if (t.header.empty()) {
      for (auto &f : fields) {
        const auto b = f.find_first_not_of(' ');
        const auto e = f.find_last_not_of(' ');
        f = b == std::string::npos ? "" : f.substr(b, e - b + 1);
      }
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw ParseError(path + ": expected " + std::to_string(t.header.size()) +
                           " fields, found " + std::to_string(fields.size()),
                       line);
    t.rows.push_back(std::move(fields));
    t.lines.push_back(line);
  }
  if (t.header.empty())
    throw ParseError(path + ": missing header row", 1);
  return t;
}

inline double csv_real(const CsvTable &t, std::size_t row, std::size_t col) {
  std::string_view s = t.rows[row][col];
  while (!s.empty() && s.front() == ' ')
    s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ')
    s.remove_suffix(1);
  try {
    const double v = parse_real(s, t.lines[row]);
    if (!std::isfinite(v))
      throw ParseError("", t.lines[row]);
    return v;
  } catch (const ParseError &) {
    throw ParseError(t.path + ": column " + t.header[col] + " is not numeric ('" +
                         std::string(s) + "')",
                     t.lines[row]);
  }
}

// ---------------------------------------------------------------------------
// French motor schema

inline const std::vector<std::string> kDefaultCovariates{"DriverAge", "CarAge"};

struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t rows_kept = 0;
  std::size_t dropped_nonpositive_amount = 0;
  std::size_t unmatched_claims = 0;
  [[nodiscard]] std::string to_string() const {
    return "rows_read=" + std::to_string(rows_read) + " rows_kept=" + std::to_string(rows_kept) +
           " dropped_nonpositive_amount=" + std::to_string(dropped_nonpositive_amount) +
           " unmatched_claims=" + std::to_string(unmatched_claims);
  }
};

/// Policy table: response ClaimNb, exposure Exposure, intercept plus the
/// selected covariates.
inline Dataset load_frequency(const std::string &path,
                              const std::vector<std::string> &covariates = kDefaultCovariates) {
  const CsvTable t = read_csv(path);
  const std::size_t c_id = t.column("PolicyID");
  const std::size_t c_y = t.column("ClaimNb");
  const std::size_t c_t = t.column("Exposure");
  std::vector<std::size_t> c_x;
  for (const auto &name : covariates)
    c_x.push_back(t.column(name));
  Dataset d;
  d.colnames = covariates;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    Observation o;
    o.y = csv_real(t, r, c_y);
    if (o.y < 0.0 || o.y != std::floor(o.y))
      throw ParseError(path + ": ClaimNb is not a nonnegative count", t.lines[r]);
    o.t = csv_real(t, r, c_t);
    if (!(o.t > 0.0))
      throw ParseError(path + ": nonpositive Exposure", t.lines[r]);
    o.x.resize(static_cast<Eigen::Index>(c_x.size() + 1));
    o.x[0] = 1.0;
    for (std::size_t j = 0; j < c_x.size(); ++j)
      o.x[static_cast<Eigen::Index>(j + 1)] = csv_real(t, r, c_x[j]);
    d.rows.push_back(std::move(o));
    d.ids.push_back(t.rows[r][c_id]);
  }
  return d;
}

/// Claims joined to policies on PolicyID; response ln(ClaimAmount), one row
/// per claim. Unmatched claims and nonpositive amounts are counted in `report`.
inline Dataset load_severity(const std::string &freq_path, const std::string &sev_path,
                             const std::vector<std::string> &covariates = kDefaultCovariates,
                             LoadReport *report = nullptr) {
  const Dataset policies = load_frequency(freq_path, covariates);
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < policies.ids.size(); ++i)
    by_id.emplace(policies.ids[i], i);
  const CsvTable t = read_csv(sev_path);
  const std::size_t c_id = t.column("PolicyID");
  const std::size_t c_amt = t.column("ClaimAmount");
  LoadReport rep;
  rep.rows_read = t.rows.size();
  Dataset d;
  d.colnames = covariates;
  std::map<std::string, int> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double amount = csv_real(t, r, c_amt);
    const auto it = by_id.find(t.rows[r][c_id]);
    if (it == by_id.end()) {
      ++rep.unmatched_claims;
      continue;
    }
    if (!(amount > 0.0)) {
      ++rep.dropped_nonpositive_amount;
      continue;
    }
    Observation o;
    o.x = policies.rows[it->second].x;
    o.t = 1.0;
    o.y = std::log(amount);
    d.rows.push_back(std::move(o));
    const int k = ++seen[it->first];
    d.ids.push_back(k == 1 ? it->first : it->first + "." + std::to_string(k));
  }
  rep.rows_kept = d.rows.size();
  if (report)
    *report = rep;
  if (d.rows.empty())
    throw NoMatchingPolicies("no claim in " + sev_path + " matches a policy in " + freq_path);
  return d;
}

// ---------------------------------------------------------------------------
// flat dataset files: id,y,t,<covariates>[,truth]

inline void write_dataset_csv(const std::string &path, const Dataset &d,
                              const std::vector<int> *truth = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw IoError("cannot write " + path);
  os << "id,y,t";
  for (const auto &c : d.colnames)
    os << ',' << c;
  if (truth)
    os << ",truth";
  os << '\n';
  for (std::size_t i = 0; i < d.rows.size(); ++i) {
    const auto &r = d.rows[i];
    os << d.ids[i] << ',' << fmt_real(r.y) << ',' << fmt_real(r.t);
    for (Eigen::Index j = 1; j < r.x.size(); ++j)
      os << ',' << fmt_real(r.x[j]);
    if (truth)
      os << ',' << (*truth)[i];
    os << '\n';
  }
  if (!os)
    throw IoError("write failed for " + path);
}

/// Reads a flat dataset. Without `covariates`, every column other than id, y,
/// t and truth is a covariate.
inline Dataset read_dataset_csv(const std::string &path,
                                std::vector<std::string> covariates = {},
                                std::vector<int> *truth = nullptr) {
  const CsvTable t = read_csv(path);
  const std::size_t c_id = t.column("id");
  const std::size_t c_y = t.column("y");
  const std::size_t c_t = t.column("t");
  if (covariates.empty())
    for (const auto &h : t.header)
      if (h != "id" && h != "y" && h != "t" && h != "truth")
        covariates.push_back(h);
  std::vector<std::size_t> c_x;
  for (const auto &name : covariates)
    c_x.push_back(t.column(name));
  const bool has_truth = t.has("truth");
  Dataset d;
  d.colnames = covariates;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    Observation o;
    o.y = csv_real(t, r, c_y);
    o.t = csv_real(t, r, c_t);
    o.x.resize(static_cast<Eigen::Index>(c_x.size() + 1));
    o.x[0] = 1.0;
    for (std::size_t j = 0; j < c_x.size(); ++j)
      o.x[static_cast<Eigen::Index>(j + 1)] = csv_real(t, r, c_x[j]);
    d.rows.push_back(std::move(o));
    d.ids.push_back(t.rows[r][c_id]);
    if (truth && has_truth)
      truth->push_back(static_cast<int>(csv_real(t, r, t.column("truth"))));
  }
  return d;
}

// ---------------------------------------------------------------------------
// split and standardize

struct SplitConfig {
  std::optional<std::size_t> train_size;
  std::optional<double> train_fraction;
  std::uint64_t seed = 1;
};

/// Seeded uniform train/test split. Covariates are centred and scaled by the
/// training mean and sample sd; the same scales are applied to the test rows.
inline std::pair<Dataset, Dataset> standardize_split(const Dataset &data, const SplitConfig &cfg) {
  const std::size_t n = data.n();
  std::size_t ntrain = 0;
  if (cfg.train_size)
    ntrain = *cfg.train_size;
  else if (cfg.train_fraction) {
    if (!(*cfg.train_fraction > 0.0 && *cfg.train_fraction < 1.0))
      throw InvalidParameter("train fraction must lie in (0, 1)");
    ntrain = static_cast<std::size_t>(std::llround(*cfg.train_fraction * static_cast<double>(n)));
  } else {
    throw InvalidParameter("standardize_split: give a train size or fraction");
  }
  if (ntrain < 10)
    throw InvalidParameter("train size must be at least 10, got " + std::to_string(ntrain));
  if (ntrain >= n)
    throw InvalidParameter("train size " + std::to_string(ntrain) +
                           " must be below the row count " + std::to_string(n));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  CounterRng rng(cfg.seed, 0x5b117);
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  std::vector<std::size_t> tr(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(ntrain));
  std::vector<std::size_t> te(perm.begin() + static_cast<std::ptrdiff_t>(ntrain), perm.end());
  std::sort(tr.begin(), tr.end());
  std::sort(te.begin(), te.end());

  const Eigen::Index dim = data.dim();
  std::vector<ColumnScale> scales;
  for (Eigen::Index j = 1; j < dim; ++j) {
    double s1 = 0.0;
    for (std::size_t i : tr)
      s1 += data.rows[i].x[j];
    const double mean = s1 / static_cast<double>(ntrain);
    double ss = 0.0;
    for (std::size_t i : tr)
      ss += (data.rows[i].x[j] - mean) * (data.rows[i].x[j] - mean);
    const double sd = std::sqrt(ss / static_cast<double>(ntrain - 1));
    const std::string name = static_cast<std::size_t>(j - 1) < data.colnames.size()
                                 ? data.colnames[static_cast<std::size_t>(j - 1)]
                                 : "x" + std::to_string(j);
    if (!(sd > 0.0))
      throw InvalidParameter("zero variance column " + name + " in training data");
    scales.push_back({name, mean, sd});
  }
  auto build = [&](const std::vector<std::size_t> &idx) {
    Dataset out;
    out.colnames = data.colnames;
    out.standardization = scales;
    for (std::size_t i : idx) {
      Observation o = data.rows[i];
      for (Eigen::Index j = 1; j < dim; ++j)
        o.x[j] = (o.x[j] - scales[static_cast<std::size_t>(j - 1)].mean) /
                 scales[static_cast<std::size_t>(j - 1)].sd;
      out.rows.push_back(std::move(o));
      out.ids.push_back(i < data.ids.size() ? data.ids[i] : std::to_string(i));
    }
    return out;
  };
  return {build(tr), build(te)};
}

// ---------------------------------------------------------------------------
// synthetic mixtures

enum class SimKind { FreqMixture, SevMixture };

struct SimComponent {
  double weight = 1.0;
  Vector beta;
  double sigma2 = 1.0; // severity only
};

struct SimulatedData {
  Dataset data;
  std::vector<int> truth;
};

/// Rows from a finite mixture of regressions. Covariates are standard normal;
/// frequency exposures are Uniform(0.5, 1.5).
inline SimulatedData simulate(SimKind kind, const std::vector<SimComponent> &components,
                              std::size_t n, std::uint64_t seed) {
  if (components.empty())
    throw InvalidParameter("simulate: no components");
  const Eigen::Index dim = components.front().beta.size();
  if (dim < 1)
    throw InvalidParameter("simulate: empty coefficient vector");
  double wsum = 0.0;
  std::vector<double> logw;
  for (const auto &c : components) {
    if (c.beta.size() != dim)
      throw InvalidParameter("simulate: components differ in dimension");
    if (!(c.weight > 0.0))
      throw InvalidParameter("simulate: weights must be positive");
    if (kind == SimKind::SevMixture && !(c.sigma2 > 0.0))
      throw InvalidParameter("simulate: sigma2 must be positive");
    wsum += c.weight;
    logw.push_back(std::log(c.weight));
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw InvalidParameter("simulate: weights must sum to 1");
  CounterRng rng(seed, 0x51);
  SimulatedData out;
  for (Eigen::Index j = 1; j < dim; ++j)
    out.data.colnames.push_back("x" + std::to_string(j));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = draw(rng, Categorical{logw});
    const auto &c = components[k];
    Observation o;
    o.x.resize(dim);
    o.x[0] = 1.0;
    for (Eigen::Index j = 1; j < dim; ++j)
      o.x[j] = draw_std_normal(rng);
    const double eta = o.x.dot(c.beta);
    if (kind == SimKind::FreqMixture) {
      o.t = draw(rng, Uniform{0.5, 1.5});
      o.y = static_cast<double>(draw(rng, Poisson{o.t * std::exp(eta)}));
    } else {
      o.t = 1.0;
      o.y = draw(rng, Normal{eta, c.sigma2});
    }
    out.data.rows.push_back(std::move(o));
    out.data.ids.push_back(std::to_string(i + 1));
    out.truth.push_back(static_cast<int>(k));
  }
  return out;
}

/// Parses "w:b0,b1,...[:sigma2];w:..." into components.
inline std::vector<SimComponent> parse_components(const std::string &text) {
  std::vector<SimComponent> out;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ';')) {
    if (item.empty())
      continue;
    std::vector<std::string> parts;
    std::stringstream ps(item);
    std::string p;
    while (std::getline(ps, p, ':'))
      parts.push_back(p);
    if (parts.size() < 2 || parts.size() > 3)
      throw InvalidParameter("component '" + item + "' is not w:b0,b1,...[:sigma2]");
    SimComponent c;
    c.weight = parse_real(parts[0]);
    std::vector<double> b;
    std::stringstream bs(parts[1]);
    while (std::getline(bs, p, ','))
      b.push_back(parse_real(p));
    c.beta = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    if (parts.size() == 3)
      c.sigma2 = parse_real(parts[2]);
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// run configuration

struct RunConfig {
  ModelSpec spec;
  SamplerConfig sampler;
  std::string data_path;  // flat dataset
  std::string freq_path;  // policy table
  std::string sev_path;   // claims table
  std::vector<std::string> covariates;
  std::optional<std::size_t> train_size;
  std::optional<double> train_fraction;
  std::uint64_t split_seed = 1;
  std::string out_dir = ".";

  void check() const {
    const auto r = validate(spec);
    if (!r.ok())
      throw InvalidParameter(r.to_string());
    sampler.check();
    if (data_path.empty() && freq_path.empty())
      throw InvalidParameter("no input data given");
    if (spec.family == Family::NormalSeverity && data_path.empty() && sev_path.empty())
      throw InvalidParameter("severity fit needs a claims table");
    if (train_size && *train_size < 10)
      throw InvalidParameter("train size must be at least 10");
  }
};

} // namespace bnpc
