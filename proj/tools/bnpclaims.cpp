// bnpclaims command-line driver.
//
//   bnpclaims <subcommand> [--config FILE] [options]
//
// The config file holds flat `key = value` lines ('#' starts a comment);
// keys are long option names without the leading dashes. Options given on
// the command line override the file.

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>

#include <bnpclaims.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#ifndef BNPCLAIMS_VERSION
#define BNPCLAIMS_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace bnpc;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

const std::vector<std::string> kSubcommands{"fit-freq", "fit-sev",  "predict", "evaluate",
                                            "cluster",  "diagnose", "simulate"};

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Reads `key = value` lines into `--key=value` arguments.
std::vector<std::string> config_args(const std::string &path) {
  std::ifstream is(path);
  if (!is)
    throw IoError("cannot open config " + path);
  std::vector<std::string> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(is, line)) {
    ++no;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ": expected key = value", no);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

/// Splices config-file options in right after the subcommand so that later
/// command-line occurrences win.
std::vector<std::string> expand_args(int argc, char **argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (config.empty())
    return args;
  auto sub = std::find_if(args.begin(), args.end(), [](const std::string &a) {
    return std::find(kSubcommands.begin(), kSubcommands.end(), a) != kSubcommands.end();
  });
  const auto extra = config_args(config);
  const auto at = sub == args.end() ? args.end() : sub + 1;
  args.insert(at, extra.begin(), extra.end());
  return args;
}

std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty())
      out.push_back(trim(item));
  return out;
}

std::ofstream open_out(const fs::path &p) {
  std::ofstream os(p, std::ios::binary);
  if (!os)
    throw IoError("cannot write " + p.string());
  return os;
}

void ensure_dir(const std::string &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create directory " + dir + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// fit

struct FitOptions {
  RunConfig run;
  std::string process = "dp";
  std::string hyper_target = "kn";
  std::string covariates;
  long burn_in = -1;
};

void add_fit_options(CLI::App *sub, FitOptions &o) {
  auto &r = o.run;
  auto &s = r.sampler;
  sub->add_option("--data", r.data_path, "flat dataset CSV (id,y,t,covariates)");
  sub->add_option("--freq", r.freq_path, "policy table CSV");
  sub->add_option("--sev", r.sev_path, "claims table CSV (severity)");
  sub->add_option("--covariates", o.covariates, "comma-separated covariate columns");
  sub->add_option("--train-size", r.train_size, "number of training rows");
  sub->add_option("--train-fraction", r.train_fraction, "fraction of rows used for training");
  sub->add_option("--split-seed", r.split_seed, "seed of the train/test split");
  sub->add_option("--out", r.out_dir, "output directory");
  sub->add_option("--process", o.process, "dp or py")->check(CLI::IsMember({"dp", "py"}));
  sub->add_option("--iterations", s.iterations, "MCMC iterations");
  sub->add_option("--burn-in", o.burn_in, "burn-in iterations (default iterations/2)");
  sub->add_option("--thin", s.thinning, "keep every n-th post burn-in state");
  sub->add_option("--m", s.m, "auxiliary components per update");
  sub->add_option("--seed", s.seed, "MCMC seed");
  sub->add_option("--adapt-batch", s.adapt_batch, "adaptation batch length");
  sub->add_option("--target-accept", s.target_accept, "adaptation target acceptance");
  sub->add_option("--init-alpha", s.init_alpha, "initial concentration");
  sub->add_option("--init-discount", s.init_discount, "initial discount (py)");
  sub->add_flag("--fix-alpha", s.fix_alpha, "hold alpha at its initial value");
  sub->add_flag("--fix-discount", s.fix_discount, "hold d at its initial value");
  sub->add_option("--hyper-target", o.hyper_target, "py hyperparameter target: kn, eppf or prior")
      ->check(CLI::IsMember({"kn", "eppf", "prior"}));
  sub->add_option("--progress-every", s.progress_every, "progress line interval");
  sub->add_option("--n0", r.spec.n0, "severity prior scale n0");
  sub->add_option("--a", r.spec.a, "inverse-gamma shape");
  sub->add_option("--b", r.spec.b, "inverse-gamma scale");
  sub->add_option("--alpha-shape", r.spec.hyper.alpha_shape, "gamma prior shape on alpha");
  sub->add_option("--alpha-rate", r.spec.hyper.alpha_rate, "gamma prior rate on alpha");
  sub->add_option("--sum-log-mean", r.spec.hyper.sum_log_mean, "prior mean of ln(alpha+d)");
  sub->add_option("--sum-log-sd", r.spec.hyper.sum_log_sd, "prior sd of ln(alpha+d)");
}

void write_manifest(const fs::path &path, const FitOptions &o, const Dataset &all,
                    const Dataset &train, const Dataset &test, const RunStats &stats,
                    const std::string &load_note) {
  auto os = open_out(path);
  const auto &r = o.run;
  const auto &s = r.sampler;
  os << "bnpclaims_version = " << BNPCLAIMS_VERSION << '\n'
     << "eigen_version = " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.'
     << EIGEN_MINOR_VERSION << '\n'
     << "boost_version = " << BOOST_LIB_VERSION << '\n'
     << "compiler = " << __VERSION__ << '\n'
     << "family = " << to_string(r.spec.family) << '\n'
     << "process = " << o.process << '\n'
     << "data = " << r.data_path << '\n'
     << "freq = " << r.freq_path << '\n'
     << "sev = " << r.sev_path << '\n'
     << "covariates = " << o.covariates << '\n'
     << "train-size = " << train.n() << '\n'
     << "test-size = " << test.n() << '\n'
     << "rows-loaded = " << all.n() << '\n'
     << "split-seed = " << r.split_seed << '\n'
     << "iterations = " << s.iterations << '\n'
     << "burn-in = " << s.effective_burn_in() << '\n'
     << "thin = " << s.thinning << '\n'
     << "m = " << s.m << '\n'
     << "seed = " << s.seed << '\n'
     << "adapt-batch = " << s.adapt_batch << '\n'
     << "target-accept = " << fmt_real(s.target_accept) << '\n'
     << "init-alpha = " << fmt_real(s.init_alpha) << '\n'
     << "init-discount = " << fmt_real(s.init_discount) << '\n'
     << "fix-alpha = " << (s.fix_alpha ? "true" : "false") << '\n'
     << "fix-discount = " << (s.fix_discount ? "true" : "false") << '\n'
     << "hyper-target = " << o.hyper_target << '\n'
     << "n0 = " << fmt_real(r.spec.n0) << '\n'
     << "a = " << fmt_real(r.spec.a) << '\n'
     << "b = " << fmt_real(r.spec.b) << '\n'
     << "alpha-shape = " << fmt_real(r.spec.hyper.alpha_shape) << '\n'
     << "alpha-rate = " << fmt_real(r.spec.hyper.alpha_rate) << '\n'
     << "sum-log-mean = " << fmt_real(r.spec.hyper.sum_log_mean) << '\n'
     << "sum-log-sd = " << fmt_real(r.spec.hyper.sum_log_sd) << '\n'
     << "# run\n"
     << "wall-seconds = " << stats.wall_seconds << '\n'
     << "phi-fallbacks = " << stats.phi_fallbacks << '\n';
  if (!load_note.empty())
    os << "load-report = " << load_note << '\n';
  os << "# outputs\noutputs = draws.txt train.csv test.csv manifest.txt progress.log\n";
}

template <class Params> int run_fit(FitOptions &o) {
  auto &r = o.run;
  r.spec.family = family_of<Params>();
  r.spec.process = parse_process(o.process);
  r.sampler.hyper_target = parse_hyper_target(o.hyper_target);
  if (o.burn_in >= 0)
    r.sampler.burn_in = o.burn_in;
  r.covariates = split_list(o.covariates);
  r.check();

  std::string load_note;
  Dataset all;
  if (!r.data_path.empty()) {
    all = read_dataset_csv(r.data_path, r.covariates);
  } else if constexpr (std::is_same_v<Params, FreqParams>) {
    all = load_frequency(r.freq_path, r.covariates.empty() ? kDefaultCovariates : r.covariates);
  } else {
    LoadReport rep;
    all = load_severity(r.freq_path, r.sev_path,
                        r.covariates.empty() ? kDefaultCovariates : r.covariates, &rep);
    load_note = rep.to_string();
    std::cerr << "load: " << load_note << '\n';
  }
  if (const auto rep = validate(all, r.spec); !rep.ok())
    throw InvalidParameter("input data failed validation:\n" + rep.to_string());

  SplitConfig split;
  split.seed = r.split_seed;
  split.train_size = r.train_size;
  split.train_fraction = r.train_fraction;
  if (!split.train_size && !split.train_fraction) {
    if constexpr (std::is_same_v<Params, FreqParams>)
      split.train_size = 2000;
    else
      split.train_fraction = 0.1;
  }
  auto [train, test] = standardize_split(all, split);

  ensure_dir(r.out_dir);
  const fs::path dir(r.out_dir);
  write_dataset_csv((dir / "train.csv").string(), train);
  write_dataset_csv((dir / "test.csv").string(), test);

  auto progress = open_out(dir / "progress.log");
  const auto fam = make_family(r.spec, train.dim(), std::type_identity<Params>{});
  RunStats stats;
  const auto draws = run_chain(train, r.spec, fam, r.sampler, &progress, &stats);
  save_draws((dir / "draws.txt").string(), draws);
  write_manifest(dir / "manifest.txt", o, all, train, test, stats, load_note);
  std::cout << "saved " << draws.T() << " draws to " << (dir / "draws.txt").string() << " ("
            << stats.wall_seconds << " s, accept_phi=" << draws.meta.accept_phi << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictOptions {
  std::string draws;
  std::string rows;
  std::string out = ".";
  std::string process;
  int y_max = 50;
  int y_cap = 3200;
  std::size_t grid_points = 513;
  unsigned threads = 0;
};

Dataset rows_for(const DrawsMeta &meta, const std::string &path) {
  std::vector<std::string> cols;
  for (const auto &c : meta.standardization)
    cols.push_back(c.name);
  Dataset d = read_dataset_csv(path, cols);
  if (d.dim() != meta.dim)
    throw InvalidParameter(path + ": covariate count does not match the draws file");
  return d;
}

Process process_for(const DrawsMeta &meta, const std::string &override_) {
  return override_.empty() ? meta.spec.process : parse_process(override_);
}

struct PointPrediction {
  double mean;
  std::string method;
};

std::vector<PointPrediction> point_predictions(const std::vector<PredictiveDistribution> &preds,
                                               const std::function<double(std::size_t)> &exact) {
  std::vector<PointPrediction> out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    try {
      out.push_back({predictive_mean(preds[i]), "grid"});
    } catch (const TailMassTooLarge &) {
      out.push_back({exact(i), "closed_form"});
    }
  }
  return out;
}

struct Predictions {
  Dataset rows;
  std::vector<PredictiveDistribution> dists;
  std::vector<PointPrediction> points;
  DrawsMeta meta;
};

Predictions compute_predictions(const PredictOptions &o) {
  Predictions p;
  p.meta = load_draws_meta(o.draws);
  p.rows = rows_for(p.meta, o.rows);
  const Process proc = process_for(p.meta, o.process);
  if (p.meta.spec.family == Family::PoissonFrequency) {
    const auto pd = load_draws<FreqParams>(o.draws);
    p.dists = predict_freq_rows(pd, p.rows.rows, o.y_max, o.y_cap, proc, o.threads);
    p.points = point_predictions(p.dists, [&](std::size_t i) {
      return predictive_freq_mean_exact(pd, p.rows.rows[i].x, p.rows.rows[i].t, proc);
    });
  } else {
    const auto pd = load_draws<SevParams>(o.draws);
    const auto grid = default_severity_grid(pd.meta, o.grid_points);
    p.dists = predict_sev_rows(pd, p.rows.rows, grid, proc, o.threads);
    p.points = point_predictions(p.dists, [&](std::size_t i) {
      return predictive_sev_mean_exact(pd, p.rows.rows[i].x, proc);
    });
  }
  return p;
}

int run_predict(const PredictOptions &o) {
  const Predictions p = compute_predictions(o);
  ensure_dir(o.out);
  const fs::path dir(o.out);
  {
    auto os = open_out(dir / "predictive.csv");
    os << "id," << (p.meta.spec.family == Family::PoissonFrequency ? "y,mass" : "y,density")
       << '\n';
    for (std::size_t i = 0; i < p.dists.size(); ++i)
      for (std::size_t g = 0; g < p.dists[i].grid.size(); ++g)
        os << p.rows.ids[i] << ',' << fmt_real(p.dists[i].grid[g]) << ','
           << fmt_real(p.dists[i].mass[g]) << '\n';
  }
  {
    auto os = open_out(dir / "predictive_means.csv");
    os << "id,observed,mean,tail_mass,base_weight,method\n";
    for (std::size_t i = 0; i < p.dists.size(); ++i)
      os << p.rows.ids[i] << ',' << fmt_real(p.rows.rows[i].y) << ','
         << fmt_real(p.points[i].mean) << ',' << fmt_real(p.dists[i].tail_mass) << ','
         << fmt_real(p.dists[i].base_weight) << ',' << p.points[i].method << '\n';
  }
  std::cout << "predicted " << p.dists.size() << " rows into " << dir.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  PredictOptions predict;
  std::string train;
};

int run_evaluate(EvaluateOptions &o) {
  const Predictions p = compute_predictions(o.predict);
  const Dataset train = rows_for(p.meta, o.train);
  const bool freq = p.meta.spec.family == Family::PoissonFrequency;
  const BaselineFit base =
      fit_baseline(train.rows, freq ? BaselineFamily::PoissonGLM : BaselineFamily::OLS);
  std::vector<double> obs, bnp, par;
  std::size_t closed_form = 0;
  for (std::size_t i = 0; i < p.rows.n(); ++i) {
    obs.push_back(p.rows.rows[i].y);
    bnp.push_back(p.points[i].mean);
    par.push_back(base.predict(p.rows.rows[i]));
    closed_form += p.points[i].method == "closed_form";
  }
  const std::string model = std::string("bnp-") +
                            to_string(process_for(p.meta, o.predict.process));
  const std::string baseline = freq ? "poisson-glm" : "ols";
  ensure_dir(o.predict.out);
  const fs::path dir(o.predict.out);
  auto os = open_out(dir / "evaluation.csv");
  os << "metric,model,value\n";
  os << "mse," << model << ',' << fmt_real(mse(bnp, obs)) << '\n';
  os << "mse," << baseline << ',' << fmt_real(mse(par, obs)) << '\n';
  os << "closed_form_means," << model << ',' << closed_form << '\n';
  std::cout << "mse " << model << " = " << mse(bnp, obs) << "\nmse " << baseline << " = "
            << mse(par, obs) << '\n';
  if (freq) {
    std::size_t top = 1;
    for (double y : obs)
      top = std::max(top, static_cast<std::size_t>(y));
    const std::size_t bins = top + 1;
    std::vector<double> counts(bins, 0.0);
    for (double y : obs)
      counts[static_cast<std::size_t>(y)] += 1.0;
    const auto e_bnp = summed_expected_counts(p.dists, bins);
    std::vector<double> e_par(bins, 0.0);
    for (std::size_t i = 0; i < p.rows.n(); ++i) {
      const double mu = par[i];
      double cum = 0.0;
      for (std::size_t y = 0; y + 1 < bins; ++y) {
        const double pm = std::exp(poisson_log_pmf(static_cast<double>(y), std::log(mu)));
        e_par[y] += pm;
        cum += pm;
      }
      e_par[bins - 1] += std::max(0.0, 1.0 - cum);
    }
    auto bins_out = open_out(dir / "chi_square_bins.csv");
    bins_out << "model,bin,observed,expected\n";
    for (const auto &[name, expected] :
         {std::pair{model, e_bnp}, std::pair{baseline, e_par}}) {
      try {
        const auto r = chi_square_gof(expected, counts);
        os << "chi2_stat," << name << ',' << fmt_real(r.stat) << '\n'
           << "chi2_df," << name << ',' << r.df << '\n'
           << "chi2_p," << name << ',' << fmt_real(r.p) << '\n';
        for (std::size_t b = 0; b < r.expected.size(); ++b)
          bins_out << name << ',' << b << ',' << fmt_real(r.observed[b]) << ','
                   << fmt_real(r.expected[b]) << '\n';
        std::cout << "chi2 " << name << ": stat=" << r.stat << " df=" << r.df << " p=" << r.p
                  << '\n';
      } catch (const TooFewBins &e) {
        os << "chi2_stat," << name << ",nan\n";
        std::cout << "chi2 " << name << ": " << e.what() << '\n';
      }
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// cluster

struct ClusterOptions {
  std::string draws;
  std::string rows;
  std::string out = ".";
  double cut = 0.5;
  unsigned threads = 0;
};

template <class Params> int cluster_impl(const ClusterOptions &o) {
  const auto pd = load_draws<Params>(o.draws);
  Dataset rows;
  if (!o.rows.empty()) {
    rows = rows_for(pd.meta, o.rows);
    if (rows.n() != pd.meta.n)
      throw LengthMismatch(o.rows + ": row count differs from the fitted data");
  }
  const auto dm = dissimilarity_matrix(pd, rows.ids, o.threads);
  const auto part = point_partition(dm.D, o.cut);
  ensure_dir(o.out);
  const fs::path dir(o.out);
  write_dissimilarity_csv((dir / "dissimilarity.csv").string(), dm, part.order);
  write_dissimilarity_pgm((dir / "dissimilarity.pgm").string(), dm.D, part.order);
  auto os = open_out(dir / "labels.csv");
  os << "id,label";
  if (!rows.rows.empty()) {
    os << ",y";
    for (const auto &c : rows.colnames)
      os << ',' << c;
  }
  os << '\n';
  for (std::size_t i = 0; i < dm.n(); ++i) {
    os << dm.ids[i] << ',' << part.labels[i];
    if (!rows.rows.empty()) {
      os << ',' << fmt_real(rows.rows[i].y);
      for (Eigen::Index j = 1; j < rows.rows[i].x.size(); ++j)
        os << ',' << fmt_real(rows.rows[i].x[j]);
    }
    os << '\n';
  }
  std::cout << part.clusters() << " clusters at cut " << o.cut << '\n';
  return 0;
}

int run_cluster(const ClusterOptions &o) {
  return load_draws_meta(o.draws).spec.family == Family::PoissonFrequency
             ? cluster_impl<FreqParams>(o)
             : cluster_impl<SevParams>(o);
}

// ---------------------------------------------------------------------------
// diagnose

struct DiagnoseOptions {
  std::string draws;
  std::string out = ".";
  std::size_t max_lag = 50;
};

template <class Params> int diagnose_impl(const DiagnoseOptions &o) {
  const auto pd = load_draws<Params>(o.draws);
  const Traces tr = traces_of(pd);
  ensure_dir(o.out);
  const fs::path dir(o.out);
  {
    auto os = open_out(dir / "traces.csv");
    os << "iteration,alpha,d,K,loglik\n";
    for (std::size_t i = 0; i < pd.T(); ++i)
      os << pd.draws[i].iteration << ',' << fmt_real(tr.alpha[i]) << ','
         << fmt_real(tr.discount[i]) << ',' << tr.K[i] << ',' << fmt_real(tr.loglik[i]) << '\n';
  }
  auto ds = open_out(dir / "diagnostics.csv");
  auto as = open_out(dir / "acf.csv");
  ds << "trace,n,mean,sd,ess,geweke_z,status\n";
  as << "trace,lag,acf\n";
  for (const auto &[name, series] : {std::pair<std::string, const std::vector<double> *>{"alpha", &tr.alpha},
                                     {"d", &tr.discount},
                                     {"K", &tr.K},
                                     {"loglik", &tr.loglik}}) {
    try {
      const auto d = chain_diagnostics(*series, o.max_lag);
      ds << name << ',' << d.n << ',' << fmt_real(d.mean) << ',' << fmt_real(std::sqrt(d.variance))
         << ',' << fmt_real(d.ess) << ',' << fmt_real(d.geweke_z) << ",ok\n";
      for (std::size_t k = 0; k < d.acf.size(); ++k)
        as << name << ',' << k + 1 << ',' << fmt_real(d.acf[k]) << '\n';
      std::cout << name << ": ess=" << d.ess << " geweke_z=" << d.geweke_z << '\n';
    } catch (const SeriesTooShort &) {
      ds << name << ',' << series->size() << ",,,,,too_short\n";
    } catch (const DegenerateSeries &) {
      ds << name << ',' << series->size() << ',' << fmt_real(series->front()) << ",0,,,constant\n";
    }
  }
  return 0;
}

int run_diagnose(const DiagnoseOptions &o) {
  return load_draws_meta(o.draws).spec.family == Family::PoissonFrequency
             ? diagnose_impl<FreqParams>(o)
             : diagnose_impl<SevParams>(o);
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  std::string kind = "freq";
  std::size_t n = 500;
  std::uint64_t seed = 1;
  std::string components;
  std::string out = "simulated.csv";
};

int run_simulate(const SimulateOptions &o) {
  const bool freq = o.kind == "freq";
  std::string comps = o.components;
  if (comps.empty())
    comps = freq ? "0.5:-1,1;0.5:1,-1" : "0.5:0,3,3:0.25;0.5:6,-3,-3:0.25";
  const auto sim = simulate(freq ? SimKind::FreqMixture : SimKind::SevMixture,
                            parse_components(comps), o.n, o.seed);
  if (const auto parent = fs::path(o.out).parent_path(); !parent.empty())
    ensure_dir(parent.string());
  write_dataset_csv(o.out, sim.data, &sim.truth);
  std::cout << "wrote " << sim.data.n() << " rows to " << o.out << '\n';
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Dirichlet and Pitman-Yor process mixtures of regressions for insurance claims"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", BNPCLAIMS_VERSION);
  app.footer("Every subcommand also accepts --config FILE with flat key = value lines.");

  FitOptions fit_freq, fit_sev;
  auto *ff = app.add_subcommand("fit-freq", "fit the Poisson frequency mixture");
  add_fit_options(ff, fit_freq);
  auto *fs_ = app.add_subcommand("fit-sev", "fit the normal log-severity mixture");
  add_fit_options(fs_, fit_sev);

  PredictOptions pred;
  auto *pr = app.add_subcommand("predict", "posterior predictive tables and means");
  pr->add_option("--draws", pred.draws, "draws file")->required();
  pr->add_option("--rows", pred.rows, "rows to predict (flat CSV)")->required();
  pr->add_option("--out", pred.out, "output directory");
  pr->add_option("--process", pred.process, "override the weighting: dp or py");
  pr->add_option("--y-max", pred.y_max, "initial count grid upper end");
  pr->add_option("--y-cap", pred.y_cap, "largest count grid upper end");
  pr->add_option("--grid-points", pred.grid_points, "severity grid points");
  pr->add_option("--threads", pred.threads, "worker threads (0 = all cores)");

  EvaluateOptions eval;
  auto *ev = app.add_subcommand("evaluate", "MSE and chi-square against the parametric baseline");
  ev->add_option("--draws", eval.predict.draws, "draws file")->required();
  ev->add_option("--test", eval.predict.rows, "test rows (flat CSV)")->required();
  ev->add_option("--train", eval.train, "training rows for the baseline (flat CSV)")->required();
  ev->add_option("--out", eval.predict.out, "output directory");
  ev->add_option("--process", eval.predict.process, "override the weighting: dp or py");
  ev->add_option("--y-max", eval.predict.y_max, "initial count grid upper end");
  ev->add_option("--y-cap", eval.predict.y_cap, "largest count grid upper end");
  ev->add_option("--grid-points", eval.predict.grid_points, "severity grid points");
  ev->add_option("--threads", eval.predict.threads, "worker threads (0 = all cores)");

  ClusterOptions clu;
  auto *cl = app.add_subcommand("cluster", "dissimilarity matrix, heatmap and point partition");
  cl->add_option("--draws", clu.draws, "draws file")->required();
  cl->add_option("--rows", clu.rows, "fitted rows (train.csv) for ids and scatter columns");
  cl->add_option("--out", clu.out, "output directory");
  cl->add_option("--cut", clu.cut, "dendrogram cut height");
  cl->add_option("--threads", clu.threads, "worker threads (0 = all cores)");

  DiagnoseOptions dia;
  auto *dg = app.add_subcommand("diagnose", "ESS, Geweke and autocorrelation of scalar traces");
  dg->add_option("--draws", dia.draws, "draws file")->required();
  dg->add_option("--out", dia.out, "output directory");
  dg->add_option("--max-lag", dia.max_lag, "largest autocorrelation lag");

  SimulateOptions sim;
  auto *si = app.add_subcommand("simulate", "synthetic mixture data");
  si->add_option("--kind", sim.kind, "freq or sev")->check(CLI::IsMember({"freq", "sev"}));
  si->add_option("--n", sim.n, "rows");
  si->add_option("--seed", sim.seed, "seed");
  si->add_option("--components", sim.components, "w:b0,b1,...[:sigma2];...");
  si->add_option("--out", sim.out, "output CSV");

  try {
    auto args = expand_args(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kExitValidation;
  } catch (const IoError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ValidationError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (*ff)
      return run_fit<FreqParams>(fit_freq);
    if (*fs_)
      return run_fit<SevParams>(fit_sev);
    if (*pr)
      return run_predict(pred);
    if (*ev)
      return run_evaluate(eval);
    if (*cl)
      return run_cluster(clu);
    if (*dg)
      return run_diagnose(dia);
    if (*si)
      return run_simulate(sim);
  } catch (const ValidationError &e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NumericError &e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError &e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }
  return 1;
}
