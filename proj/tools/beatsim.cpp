// beatsim command-line front end.
//
// Exit codes: 0 success, 1 runtime or convergence failure, 2 usage or
// configuration error.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "beatsim/beatsim.hpp"

namespace fs = std::filesystem;
using namespace beatsim;

namespace {

constexpr const char* kToolVersion = "0.1.0";

// Raised for command-line misuse detected after parsing.
struct UsageError : Error {
  using Error::Error;
};

struct RunFailure : Error {
  using Error::Error;
};

enum class Format { csv, svg, both };

bool want_csv(Format f) { return f != Format::svg; }
bool want_svg(Format f) { return f != Format::csv; }

struct CommonOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> pulses;
  unsigned jobs = 0;
  Format format = Format::both;
};

// Tracks the files a command writes and emits manifest.json last.
class Manifest {
 public:
  Manifest(std::string command, fs::path out_dir)
      : command_(std::move(command)), out_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {
    fs::create_directories(out_);
  }

  fs::path file(const std::string& name) {
    outputs_.push_back(name);
    return out_ / name;
  }
  const fs::path& dir() const { return out_; }

  void set_config(const std::string& path) { config_path_ = path; }
  void add_input(const std::string& path) { inputs_.push_back(path); }
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  nlohmann::ordered_json& summary() { return summary_; }

  void write() const {
    nlohmann::ordered_json m;
    m["command"] = command_;
    m["config_path"] = config_path_;
    m["inputs"] = inputs_;
    auto outs = outputs_;
    std::sort(outs.begin(), outs.end());
    m["outputs"] = outs;
    if (seed_) m["master_seed"] = *seed_;
    else m["master_seed"] = nullptr;
    m["tool_version"] = kToolVersion;
    m["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    if (!summary_.empty()) m["summary"] = summary_;
    std::ofstream out(out_ / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write manifest in '" + out_.string() + "'");
    out << m.dump(2) << '\n';
  }

 private:
  std::string command_;
  fs::path out_;
  std::chrono::steady_clock::time_point start_;
  std::string config_path_;
  std::vector<std::string> inputs_, outputs_;
  std::optional<std::uint64_t> seed_;
  nlohmann::ordered_json summary_ = nlohmann::ordered_json::object();
};

ExperimentConfig load_with_overrides(const std::string& path, const CommonOptions& common) {
  ExperimentConfig cfg = load_config(path);
  if (common.seed) cfg.master_seed = *common.seed;
  if (common.pulses) cfg.n_pulses = *common.pulses;
  cfg.validate();
  return cfg;
}

// "start:stop:count" (inclusive linspace) or "a,b,c".
std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> out;
  if (spec.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    std::string p;
    while (std::getline(ss, p, ':')) parts.push_back(p);
    if (parts.size() != 3) throw UsageError("grid '" + spec + "': expected start:stop:count");
    auto a = parse_double(parts[0]), b = parse_double(parts[1]);
    auto n = parse_integer<int>(parts[2]);
    if (!a || !b || !n || *n < 1) throw UsageError("grid '" + spec + "': malformed");
    for (int i = 0; i < *n; ++i) out.push_back(*n == 1 ? *a : *a + (*b - *a) * i / (*n - 1));
  } else {
    std::stringstream ss(spec);
    std::string p;
    while (std::getline(ss, p, ',')) {
      auto v = parse_double(p);
      if (!v) throw UsageError("grid '" + spec + "': '" + p + "' is not a number");
      out.push_back(*v);
    }
  }
  if (out.size() < 2) throw UsageError("grid '" + spec + "' must have at least 2 points");
  return out;
}

void plot_g2(const fs::path& path, const G2Estimate& est, const std::optional<G2Fit>& fit) {
  svg::Plot plot("Normalized intensity correlation", "delay tau [us]", "g2(tau)");
  plot.add_line(est.taus, est.g2, "#1f4e9c", "data");
  if (fit) {
    std::vector<double> model(est.taus.size());
    for (std::size_t k = 0; k < est.taus.size(); ++k) model[k] = fit->baseline * g2_model(est.taus[k], fit->params);
    plot.add_line(est.taus, model, "#c0392b", "fit");
  }
  plot.save(path);
}

std::optional<G2Fit> find_fit(const std::vector<fs::path>& dirs) {
  for (const auto& d : dirs)
    if (fs::exists(d / "fit.csv")) return read_fit_csv(d / "fit.csv");
  return std::nullopt;
}

struct AnalyzeFlags {
  bool mean = false, phases = false, g2 = false;
  int bins = 20;
  double tau_max = std::numeric_limits<double>::infinity();
  double gamma_guess = 0.0;
  std::string period_source = "average";
};

void analyze_ensemble(const Ensemble& ens, const AnalyzeFlags& flags, const CommonOptions& common, Manifest& man,
                      const std::vector<fs::path>& fit_dirs) {
  const MeanTrace mean = ensemble_mean(ens);
  if (flags.mean) {
    std::vector<double> t(mean.samples.size());
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = mean.time(k);
    if (want_csv(common.format)) write_columns(man.file("mean.csv"), {"t_us", "mean_intensity"}, {t, mean.samples});
    if (want_svg(common.format)) {
      svg::Plot single("Single-pulse beat signal (pulse 0)", "time [us]", "intensity");
      single.add_line(t, ens.traces.front().samples, "#1f4e9c");
      single.save(man.file("single_trace.svg"));
      svg::Plot avg("Average over " + std::to_string(mean.n_pulses) + " pulses", "time [us]", "mean intensity");
      avg.add_line(t, mean.samples, "#1f4e9c");
      avg.save(man.file("mean.svg"));
    }
    man.summary()["n_pulses"] = mean.n_pulses;
  }
  if (flags.phases) {
    PeriodSource src = PeriodSource::average;
    if (flags.period_source == "per_trace") src = PeriodSource::per_trace;
    else if (flags.period_source == "configured") src = PeriodSource::configured;
    const double configured = 1.0 / observable_beat(ens.config.pair);
    const auto ex = extract_phases(ens.traces, mean, src, configured, common.jobs);
    if (ex.phases.empty()) throw RunFailure("phase extraction failed for every pulse");
    const auto hist = phase_histogram(ex.phases, flags.bins);
    if (want_csv(common.format)) {
      write_phases_csv(man.file("phases.csv"), ex.phases);
      std::vector<double> lo(hist.counts.size()), hi(hist.counts.size()), cnt(hist.counts.size());
      for (std::size_t b = 0; b < hist.counts.size(); ++b) {
        lo[b] = hist.edges[b];
        hi[b] = hist.edges[b + 1];
        cnt[b] = static_cast<double>(hist.counts[b]);
      }
      write_columns(man.file("phase_histogram.csv"), {"bin_lo_rad", "bin_hi_rad", "count"}, {lo, hi, cnt});
    }
    if (want_svg(common.format)) {
      std::vector<double> idx, ph;
      for (const auto& p : ex.phases) idx.push_back(static_cast<double>(p.index)), ph.push_back(p.phase);
      svg::Plot scatter("Extracted phases", "pulse index", "phase [rad]");
      scatter.add_markers(idx, ph, "#1f4e9c").y_range(0.0, kTwoPi);
      scatter.save(man.file("phases.svg"));
      std::vector<double> centers, density;
      const double width = kTwoPi / flags.bins;
      for (std::size_t b = 0; b < hist.counts.size(); ++b) {
        centers.push_back(0.5 * (hist.edges[b] + hist.edges[b + 1]));
        density.push_back(static_cast<double>(hist.counts[b]) / (static_cast<double>(ex.phases.size()) * width));
      }
      svg::Plot hplot("Phase probability distribution", "phase [rad]", "probability density");
      hplot.add_bars(centers, density, "#1f4e9c");
      hplot.add_line(std::vector<double>{0.0, kTwoPi}, std::vector<double>{1.0 / kTwoPi, 1.0 / kTwoPi}, "#c0392b",
                     "uniform");
      hplot.save(man.file("phase_histogram.svg"));
    }
    auto& s = man.summary()["phases"];
    s["extracted"] = ex.phases.size();
    s["failed"] = ex.failed.size();
    s["period_us"] = ex.phases.front().period;
    s["chi_square"] = hist.chi_square;
    s["dof"] = hist.dof;
    s["p_value"] = hist.p_value;
  }
  if (flags.g2) {
    const double t_p = find_peak(mean);
    const auto taus = default_tau_grid(mean, t_p, flags.gamma_guess, flags.tau_max);
    const G2Estimate est = estimate_g2(ens, t_p, taus);
    if (want_csv(common.format)) write_g2_csv(man.file("g2.csv"), est);
    if (want_svg(common.format)) plot_g2(man.file("g2.svg"), est, find_fit(fit_dirs));
    man.summary()["t_p_us"] = est.t_p;
    man.summary()["g2_points"] = est.taus.size();
  }
}

int cmd_simulate(const std::string& config_path, const fs::path& out, const CommonOptions& common) {
  const ExperimentConfig cfg = load_with_overrides(config_path, common);
  Manifest man("simulate", out);
  man.set_config(config_path);
  man.set_seed(cfg.master_seed);
  const Ensemble ens = simulate_ensemble(cfg, common.jobs);
  write_ensemble(out, ens);
  man.file("ensemble.csv");
  man.file("ensemble.meta.json");
  man.summary()["n_pulses"] = ens.traces.size();
  man.summary()["samples_per_pulse"] = cfg.sample_count();
  man.write();
  return 0;
}

int cmd_analyze(const fs::path& ens_dir, const fs::path& out, AnalyzeFlags flags, const CommonOptions& common) {
  const Ensemble ens = read_ensemble(ens_dir);
  if (!flags.mean && !flags.phases && !flags.g2) flags.mean = flags.phases = flags.g2 = true;
  Manifest man("analyze", out);
  man.add_input(ens_dir.string());
  man.set_seed(ens.config.master_seed);
  analyze_ensemble(ens, flags, common, man, {out, ens_dir});
  man.write();
  return 0;
}

G2Fit run_fit(const G2Estimate& est, bool free_baseline, const CommonOptions& common, Manifest& man) {
  G2FitOptions opts;
  opts.free_baseline = free_baseline;
  const G2Fit fit = fit_g2(est, initial_guess(est), opts);
  {
    std::ofstream rep(man.file("fit_report.txt"), std::ios::binary | std::ios::trunc);
    rep << format_fit_report(fit, free_baseline);
  }
  write_fit_csv(man.file("fit.csv"), fit);
  if (want_svg(common.format)) plot_g2(man.file("g2_fit.svg"), est, fit);
  auto& s = man.summary();
  s["v"] = fit.params.v;
  s["gamma_per_us"] = fit.params.gamma;
  s["delta_nu_mhz"] = fit.params.delta_nu;
  s["converged"] = fit.converged;
  s["delta_nu_identifiable"] = fit.delta_nu_identifiable;
  return fit;
}

int cmd_fit(const fs::path& g2_csv, const fs::path& out, bool free_baseline, const CommonOptions& common) {
  const G2Estimate est = read_g2_csv(g2_csv);
  Manifest man("fit", out);
  man.add_input(g2_csv.string());
  const G2Fit fit = run_fit(est, free_baseline, common, man);
  man.write();
  if (!fit.converged) {
    std::cerr << "beatsim fit: no convergence after " << fit.iterations << " iterations (rss "
              << format_double(fit.rss) << ", gradient " << format_double(fit.gradient_norm) << ")\n";
    return 1;
  }
  if (!fit.delta_nu_identifiable)
    std::cerr << "beatsim fit: warning: visibility is indistinguishable from zero; delta_nu is unidentifiable\n";
  return 0;
}

int run_power_sweep(const ExperimentConfig& cfg, const std::vector<double>& grid, const CommonOptions& common,
                    Manifest& man) {
  SweepOptions opts;
  opts.jobs = common.jobs;
  const PowerSweepResult res = sweep_power(cfg, grid, opts);
  std::vector<double> ok(grid.size());
  std::size_t good = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ok[i] = res.errors[i].empty() ? 1.0 : 0.0;
    good += res.errors[i].empty();
    if (!res.errors[i].empty()) man.summary()["errors"][format_double(grid[i])] = res.errors[i];
  }
  if (want_csv(common.format)) {
    write_columns(man.file("power_sweep.csv"), {"p_w1_mw", "beat_mhz", "ok"}, {res.powers, res.beats, ok});
    if (res.fit)
      write_columns(man.file("power_fit.csv"), {"slope_mhz_per_mw", "intercept_mhz", "r2"},
                    {{res.fit->slope}, {res.fit->intercept}, {res.fit->r2}});
  }
  if (want_svg(common.format)) {
    svg::Plot plot("Beat frequency vs write power W1", "P_W1 [mW]", "beat frequency [MHz]");
    plot.add_markers(res.powers, res.beats, "#1f4e9c", "measured");
    if (res.fit) {
      const double lo = *std::min_element(grid.begin(), grid.end());
      const double hi = *std::max_element(grid.begin(), grid.end());
      plot.add_line(std::vector<double>{lo, hi},
                    std::vector<double>{res.fit->intercept + res.fit->slope * lo, res.fit->intercept + res.fit->slope * hi},
                    "#c0392b", "linear fit");
    }
    plot.save(man.file("power_sweep.svg"));
  }
  if (res.fit) {
    man.summary()["slope_mhz_per_mw"] = res.fit->slope;
    man.summary()["intercept_mhz"] = res.fit->intercept;
    man.summary()["r2"] = res.fit->r2;
  }
  man.summary()["points_ok"] = good;
  return good == 0 ? 1 : 0;
}

int run_temperature_sweep(const ExperimentConfig& cfg, const std::vector<double>& grid, double tau_max,
                          const CommonOptions& common, Manifest& man) {
  SweepOptions opts;
  opts.jobs = common.jobs;
  opts.tau_max = tau_max;
  const TempSweepResult res = sweep_temperature(cfg, grid, opts);
  std::vector<double> ok(grid.size());
  std::size_t good = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ok[i] = res.errors[i].empty() ? 1.0 : 0.0;
    good += res.errors[i].empty();
    if (!res.errors[i].empty()) man.summary()["errors"][format_double(grid[i])] = res.errors[i];
  }
  if (want_csv(common.format))
    write_columns(man.file("temperature_sweep.csv"),
                  {"temperature_k", "gamma_injected_per_us", "gamma_fit_per_us", "gamma_stderr_per_us", "ok"},
                  {res.temperatures, res.injected, res.gammas, res.gamma_stderrs, ok});
  if (want_svg(common.format)) {
    svg::Plot plot("Decay constant vs cell temperature", "temperature [K]", "gamma [1/us]");
    plot.add_markers(res.temperatures, res.gammas, "#1f4e9c", "fitted");
    std::vector<double> tt, gg;
    const double lo = res.temperatures.front(), hi = res.temperatures.back();
    for (int i = 0; i <= 50; ++i) {
      tt.push_back(lo + (hi - lo) * i / 50.0);
      gg.push_back(gamma_temperature_model(tt.back(), cfg.gamma, cfg.reference_temperature));
    }
    plot.add_line(tt, gg, "#c0392b", "sqrt(T) guide");
    plot.save(man.file("temperature_sweep.svg"));
  }
  man.summary()["points_ok"] = good;
  return good == 0 ? 1 : 0;
}

int cmd_sweep(const std::string& config_path, bool power, bool temperature, const std::string& grid_spec,
              const fs::path& out, double tau_max, const CommonOptions& common) {
  if (power == temperature) throw UsageError("choose exactly one of --power or --temperature");
  const std::vector<double> grid = parse_grid(grid_spec);
  const ExperimentConfig cfg = load_with_overrides(config_path, common);
  Manifest man(power ? "sweep --power" : "sweep --temperature", out);
  man.set_config(config_path);
  man.set_seed(cfg.master_seed);
  const int rc = power ? run_power_sweep(cfg, grid, common, man) : run_temperature_sweep(cfg, grid, tau_max, common, man);
  man.write();
  if (rc != 0) std::cerr << "beatsim sweep: every grid point failed\n";
  return rc;
}

int cmd_report(const std::string& config_path, const fs::path& out, const std::string& power_grid,
               const std::string& temperature_grid, const CommonOptions& common) {
  const ExperimentConfig cfg = load_with_overrides(config_path, common);
  const auto pgrid = parse_grid(power_grid);
  const auto tgrid = parse_grid(temperature_grid);
  Manifest top("report", out);
  top.set_config(config_path);
  top.set_seed(cfg.master_seed);

  const Ensemble ens = simulate_ensemble(cfg, common.jobs);

  Manifest ana("report/analysis", out / "analysis");
  ana.set_config(config_path);
  ana.set_seed(cfg.master_seed);
  AnalyzeFlags flags;
  flags.mean = flags.phases = flags.g2 = true;
  flags.tau_max = 6.0;
  analyze_ensemble(ens, flags, common, ana, {});

  // g2 fit and overlay plot.
  const MeanTrace mean = ensemble_mean(ens);
  const double t_p = find_peak(mean);
  const G2Estimate est = estimate_g2(ens, t_p, default_tau_grid(mean, t_p, 0.0, 6.0));
  Manifest fitm("report/fit", out / "fit");
  fitm.set_config(config_path);
  const G2Fit fit = run_fit(est, false, common, fitm);
  fitm.write();
  if (want_svg(common.format)) plot_g2(ana.file("g2.svg"), est, fit);
  ana.write();

  Manifest pm("report/power_sweep", out / "power_sweep");
  pm.set_config(config_path);
  pm.set_seed(cfg.master_seed);
  ExperimentConfig pcfg = cfg;
  pcfg.n_pulses = std::min<std::uint64_t>(cfg.n_pulses, 200);
  run_power_sweep(pcfg, pgrid, common, pm);
  pm.write();

  Manifest tm("report/temperature_sweep", out / "temperature_sweep");
  tm.set_config(config_path);
  tm.set_seed(cfg.master_seed);
  run_temperature_sweep(cfg, tgrid, 6.0, common, tm);
  tm.write();

  std::ostringstream md;
  md << "# beatsim report\n\n";
  md << "Configuration: `" << config_path << "` (" << cfg.n_pulses << " pulses, seed " << cfg.master_seed << ")\n\n";
  md << "| item | value |\n|---|---|\n";
  md << "| configured beat frequency [MHz] | " << format_double(observable_beat(cfg.pair)) << " |\n";
  md << "| injected gamma [1/us] | " << format_double(cfg.effective_gamma()) << " |\n";
  md << "| reference time t_p [us] | " << format_double(est.t_p) << " |\n";
  md << "| fitted V | " << format_double(fit.params.v) << " |\n";
  md << "| fitted gamma [1/us] | " << format_double(fit.params.gamma) << " |\n";
  md << "| fitted delta_nu [MHz] | " << format_double(fit.params.delta_nu) << " |\n\n";
  md << "Subdirectories: `analysis/` (single trace, mean, phases, g2), `fit/`, `power_sweep/`, "
        "`temperature_sweep/`.\n";
  {
    std::ofstream rep(top.file("report.md"), std::ios::binary | std::ios::trunc);
    rep << md.str();
  }
  top.write();
  return fit.converged ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"beatsim: Monte-Carlo beating of two independent pulsed sources"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  CommonOptions common;
  std::string format = "both";
  auto add_common = [&](CLI::App* sub, bool sim) {
    sub->add_option("--jobs", common.jobs, "Parallelism cap (0 = all cores)");
    sub->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "svg", "both"}));
    if (sim) {
      sub->add_option("--seed", common.seed, "Override master_seed");
      sub->add_option("--pulses", common.pulses, "Override n_pulses");
    }
  };

  std::string config_path;
  fs::path out_dir;

  auto* sim = app.add_subcommand("simulate", "Simulate an ensemble of pulse traces");
  sim->add_option("--config", config_path, "Config file")->required();
  sim->add_option("--out", out_dir, "Output directory")->required();
  add_common(sim, true);

  fs::path ens_dir;
  AnalyzeFlags flags;
  auto* ana = app.add_subcommand("analyze", "Mean trace, phases and g2 of a simulated ensemble");
  ana->add_option("ensemble", ens_dir, "Ensemble directory")->required();
  ana->add_option("--out", out_dir, "Output directory")->required();
  ana->add_flag("--mean", flags.mean, "Ensemble mean and single-trace plots");
  ana->add_flag("--phases", flags.phases, "Per-pulse phase extraction and histogram");
  ana->add_flag("--g2", flags.g2, "Two-time intensity correlation");
  ana->add_option("--bins", flags.bins, "Histogram bins")->check(CLI::Range(4, 100000));
  ana->add_option("--tau-max", flags.tau_max, "Largest delay [us]");
  ana->add_option("--gamma-guess", flags.gamma_guess, "Limits the delay range to 5/gamma [1/us]");
  ana->add_option("--period-source", flags.period_source, "Beat period for phase extraction")
      ->check(CLI::IsMember({"average", "per_trace", "configured"}));
  add_common(ana, false);

  fs::path g2_csv;
  bool free_baseline = false;
  auto* fit = app.add_subcommand("fit", "Fit the dephased beat model to a g2 table");
  fit->add_option("g2_csv", g2_csv, "CSV with columns tau_us,g2")->required();
  fit->add_option("--out", out_dir, "Output directory")->required();
  fit->add_flag("--free-baseline", free_baseline, "Fit the correlation baseline too");
  add_common(fit, false);

  bool power = false, temperature = false;
  std::string grid;
  double tau_max = 6.0;
  auto* sweep = app.add_subcommand("sweep", "Power or temperature sweep");
  sweep->add_option("--config", config_path, "Config file")->required();
  sweep->add_option("--out", out_dir, "Output directory")->required();
  sweep->add_flag("--power", power, "Sweep write power P_W1 [mW]");
  sweep->add_flag("--temperature", temperature, "Sweep cell temperature [K]");
  sweep->add_option("--grid", grid, "start:stop:count or a,b,c")->required();
  sweep->add_option("--tau-max", tau_max, "Largest fitted delay [us] (temperature sweep)");
  add_common(sweep, true);

  std::string power_grid = "0.2:1.0:8", temperature_grid = "330:370:5";
  auto* report = app.add_subcommand("report", "Full reproduction run: traces, phases, g2 fit, sweeps");
  report->add_option("--config", config_path, "Config file")->required();
  report->add_option("--out", out_dir, "Output directory")->required();
  report->add_option("--power-grid", power_grid, "Power sweep grid [mW]");
  report->add_option("--temperature-grid", temperature_grid, "Temperature sweep grid [K]");
  add_common(report, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  common.format = format == "csv" ? Format::csv : format == "svg" ? Format::svg : Format::both;

  try {
    if (*sim) return cmd_simulate(config_path, out_dir, common);
    if (*ana) return cmd_analyze(ens_dir, out_dir, flags, common);
    if (*fit) return cmd_fit(g2_csv, out_dir, free_baseline, common);
    if (*sweep) return cmd_sweep(config_path, power, temperature, grid, out_dir, tau_max, common);
    if (*report) return cmd_report(config_path, out_dir, power_grid, temperature_grid, common);
  } catch (const ConfigError& e) {
    std::cerr << "beatsim: config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "beatsim: parse error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "beatsim: usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "beatsim: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
