#pragma once

// Draws file layout (text, one record per line, fields separated by a single
// space; reals use shortest round-trip formatting):
//
//   bnpclaims-draws 1
//   meta <key>=<value> ...
//   covariate <name> <mean> <sd>                     (one per covariate)
//   draw <iteration> <alpha> <d> <K> <loglik> <c_1> ... <c_n>
//   cluster <label> <size> <beta_0> ... <beta_k> [<sigma2>]   (K lines)
//   ...
//   end <T>
//
// Each `draw` line is followed by exactly K `cluster` lines in ascending
// label order. `sigma2` is present for the normal family only.

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "sampler.hpp"

namespace bnpc {

inline constexpr std::string_view kDrawsMagic = "bnpclaims-draws 1";

/// Shortest representation that parses back to the same double.
inline std::string fmt_real(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

inline double parse_real(std::string_view s, std::size_t line = 0) {
  double v = 0.0;
  const auto *first = s.data();
  if (!s.empty() && s.front() == '+')
    ++first;
  const auto r = std::from_chars(first, s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    if (s == "inf")
      return std::numeric_limits<double>::infinity();
    if (s == "-inf")
      return -std::numeric_limits<double>::infinity();
    throw ParseError("expected a real number, got '" + std::string(s) + "'", line);
  }
  return v;
}

template <class Int> Int parse_int(std::string_view s, std::size_t line = 0) {
  Int v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ParseError("expected an integer, got '" + std::string(s) + "'", line);
  return v;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r'))
      ++i;
    const std::size_t j = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r')
      ++i;
    if (i > j)
      out.push_back(s.substr(j, i - j));
  }
  return out;
}

template <class Params> constexpr Family family_of() {
  if constexpr (std::is_same_v<Params, FreqParams>)
    return Family::PoissonFrequency;
  else
    return Family::NormalSeverity;
}

template <class Params>
void write_draws(std::ostream &os, const PosteriorDraws<Params> &pd) {
  const auto &m = pd.meta;
  os << kDrawsMagic << '\n';
  os << "meta family=" << to_string(m.spec.family)
     << " process=" << to_string(m.spec.process) << " n=" << m.n
     << " dim=" << m.dim << " iterations=" << m.iterations
     << " burn_in=" << m.burn_in << " thinning=" << m.thinning
     << " seed=" << m.seed << " m=" << m.m << " n0=" << fmt_real(m.spec.n0)
     << " a=" << fmt_real(m.spec.a) << " b=" << fmt_real(m.spec.b)
     << " alpha_shape=" << fmt_real(m.spec.hyper.alpha_shape)
     << " alpha_rate=" << fmt_real(m.spec.hyper.alpha_rate)
     << " sum_log_mean=" << fmt_real(m.spec.hyper.sum_log_mean)
     << " sum_log_sd=" << fmt_real(m.spec.hyper.sum_log_sd)
     << " accept_phi=" << fmt_real(m.accept_phi)
     << " accept_logit_d=" << fmt_real(m.accept_logit_d)
     << " accept_log_sum=" << fmt_real(m.accept_log_sum)
     << " y_min=" << fmt_real(m.y_min) << " y_max=" << fmt_real(m.y_max)
     << " y_sd=" << fmt_real(m.y_sd) << '\n';
  for (const auto &c : m.standardization)
    os << "covariate " << c.name << ' ' << fmt_real(c.mean) << ' '
       << fmt_real(c.sd) << '\n';
  for (const auto &d : pd.draws) {
    const auto &s = d.state;
    os << "draw " << d.iteration << ' ' << fmt_real(s.alpha) << ' '
       << fmt_real(s.discount) << ' ' << s.K() << ' ' << fmt_real(d.loglik);
    for (int c : s.assignments)
      os << ' ' << c;
    os << '\n';
    for (const auto &[label, c] : s.clusters) {
      os << "cluster " << label << ' ' << c.size;
      for (Eigen::Index j = 0; j < c.params.beta.size(); ++j)
        os << ' ' << fmt_real(c.params.beta[j]);
      if constexpr (std::is_same_v<Params, SevParams>)
        os << ' ' << fmt_real(c.params.sigma2);
      os << '\n';
    }
  }
  os << "end " << pd.draws.size() << '\n';
}

namespace detail {

inline void read_meta(DrawsMeta &m, const std::vector<std::string_view> &f,
                      std::size_t line) {
  std::map<std::string, std::string_view> kv;
  for (std::size_t i = 1; i < f.size(); ++i) {
    const auto eq = f[i].find('=');
    if (eq == std::string_view::npos)
      throw ParseError("malformed meta field '" + std::string(f[i]) + "'", line);
    kv[std::string(f[i].substr(0, eq))] = f[i].substr(eq + 1);
  }
  auto get = [&](const char *key) -> std::string_view {
    const auto it = kv.find(key);
    if (it == kv.end())
      throw ParseError(std::string("meta lacks '") + key + "'", line);
    return it->second;
  };
  m.spec.family = parse_family(std::string(get("family")));
  m.spec.process = parse_process(std::string(get("process")));
  m.n = parse_int<std::size_t>(get("n"), line);
  m.dim = parse_int<Eigen::Index>(get("dim"), line);
  m.iterations = parse_int<long>(get("iterations"), line);
  m.burn_in = parse_int<long>(get("burn_in"), line);
  m.thinning = parse_int<long>(get("thinning"), line);
  m.seed = parse_int<std::uint64_t>(get("seed"), line);
  m.m = parse_int<int>(get("m"), line);
  m.spec.n0 = parse_real(get("n0"), line);
  m.spec.a = parse_real(get("a"), line);
  m.spec.b = parse_real(get("b"), line);
  m.spec.hyper.alpha_shape = parse_real(get("alpha_shape"), line);
  m.spec.hyper.alpha_rate = parse_real(get("alpha_rate"), line);
  m.spec.hyper.sum_log_mean = parse_real(get("sum_log_mean"), line);
  m.spec.hyper.sum_log_sd = parse_real(get("sum_log_sd"), line);
  m.accept_phi = parse_real(get("accept_phi"), line);
  m.accept_logit_d = parse_real(get("accept_logit_d"), line);
  m.accept_log_sum = parse_real(get("accept_log_sum"), line);
  m.y_min = parse_real(get("y_min"), line);
  m.y_max = parse_real(get("y_max"), line);
  m.y_sd = parse_real(get("y_sd"), line);
}

} // namespace detail

/// Reads only the header to learn the family before choosing a parameter type.
inline DrawsMeta read_draws_meta(std::istream &is) {
  std::string text;
  if (!std::getline(is, text) || text != kDrawsMagic)
    throw ParseError("not a draws file", 1);
  if (!std::getline(is, text))
    throw ParseError("missing meta record", 2);
  const auto f = split_ws(text);
  if (f.empty() || f[0] != "meta")
    throw ParseError("missing meta record", 2);
  DrawsMeta m;
  detail::read_meta(m, f, 2);
  return m;
}

template <class Params> PosteriorDraws<Params> read_draws(std::istream &is) {
  PosteriorDraws<Params> pd;
  pd.meta = read_draws_meta(is);
  if (pd.meta.spec.family != family_of<Params>())
    throw ParseError("draws file holds a different family", 2);
  const Eigen::Index dim = pd.meta.dim;
  constexpr bool sev = std::is_same_v<Params, SevParams>;
  std::string text;
  std::size_t line = 2;
  bool ended = false;
  while (std::getline(is, text)) {
    ++line;
    const auto f = split_ws(text);
    if (f.empty())
      continue;
    if (f[0] == "covariate") {
      if (f.size() != 4)
        throw ParseError("malformed covariate record", line);
      pd.meta.standardization.push_back(
          {std::string(f[1]), parse_real(f[2], line), parse_real(f[3], line)});
    } else if (f[0] == "draw") {
      if (f.size() != 6 + pd.meta.n)
        throw ParseError("draw record has wrong length", line);
      SavedDraw<Params> d;
      d.iteration = parse_int<long>(f[1], line);
      d.state.alpha = parse_real(f[2], line);
      d.state.discount = parse_real(f[3], line);
      const auto K = parse_int<std::size_t>(f[4], line);
      d.loglik = parse_real(f[5], line);
      d.state.assignments.reserve(pd.meta.n);
      for (std::size_t i = 0; i < pd.meta.n; ++i)
        d.state.assignments.push_back(parse_int<int>(f[6 + i], line));
      for (std::size_t k = 0; k < K; ++k) {
        if (!std::getline(is, text))
          throw ParseError("truncated cluster records", line);
        ++line;
        const auto g = split_ws(text);
        const std::size_t want = 3 + static_cast<std::size_t>(dim) + (sev ? 1 : 0);
        if (g.size() != want || g[0] != "cluster")
          throw ParseError("malformed cluster record", line);
        Cluster<Params> c;
        const int label = parse_int<int>(g[1], line);
        c.size = parse_int<std::size_t>(g[2], line);
        c.params.beta.resize(dim);
        for (Eigen::Index j = 0; j < dim; ++j)
          c.params.beta[j] = parse_real(g[3 + static_cast<std::size_t>(j)], line);
        if constexpr (sev)
          c.params.sigma2 = parse_real(g.back(), line);
        d.state.clusters.emplace(label, std::move(c));
      }
      const auto v = d.state.violations();
      if (!v.empty())
        throw ParseError("saved state violates invariants: " + v.front(), line);
      pd.draws.push_back(std::move(d));
    } else if (f[0] == "end") {
      if (f.size() != 2 || parse_int<std::size_t>(f[1], line) != pd.draws.size())
        throw ParseError("end record does not match draw count", line);
      ended = true;
      break;
    } else {
      throw ParseError("unknown record '" + std::string(f[0]) + "'", line);
    }
  }
  if (!ended)
    throw ParseError("missing end record", line);
  return pd;
}

template <class Params>
void save_draws(const std::string &path, const PosteriorDraws<Params> &pd) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw IoError("cannot write " + path);
  write_draws(os, pd);
  if (!os)
    throw IoError("write failed for " + path);
}

inline DrawsMeta load_draws_meta(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw IoError("cannot open " + path);
  return read_draws_meta(is);
}

template <class Params>
PosteriorDraws<Params> load_draws(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw IoError("cannot open " + path);
  return read_draws<Params>(is);
}

} // namespace bnpc
