// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "beatsim/beatsim.hpp"

namespace fs = std::filesystem;
using namespace beatsim;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

ExperimentConfig dephased_config() {
  ExperimentConfig c;
  c.pair.i1 = c.pair.i2 = 1.0;
  c.pair.p_w1 = 0.46;  // 2 * 0.46 - 0.24 = 0.68 MHz
  c.gamma = 0.63;
  c.n_pulses = 2000;
  return c;
}

Outcome g2_round_trip() {
  const auto start = std::chrono::steady_clock::now();
  G2PipelineOptions opts;
  opts.tau_max = 6.0;
  const auto run = run_g2_pipeline(dephased_config(), 0, opts);
  const auto fit = fit_g2(run.g2, initial_guess(run.g2));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto& p = fit.params;
  const bool ok = fit.converged && p.v >= 0.42 && p.v <= 0.52 && std::abs(p.gamma / 0.63 - 1) <= 0.15 &&
                  std::abs(p.delta_nu / 0.68 - 1) <= 0.03 && secs < 60.0;
  return {ok, "V=" + fmt("%.4f", p.v) + " gamma=" + fmt("%.4f", p.gamma) + "/us dnu=" + fmt("%.4f", p.delta_nu) +
                  " MHz, " + fmt("%.2f", secs) + " s"};
}

Outcome beat_period_check() {
  ExperimentConfig c;
  c.pair.p_w1 = 0.505;  // 0.77 MHz
  c.gamma = 0.0;
  c.n_pulses = 1;
  const auto tr = synthesize_trace(c, 0);
  const double T = beat_period(tr, model_mean_trace(c));
  return {std::abs(T - 1.30) <= 0.03, "T=" + fmt("%.5f", T) + " us"};
}

Outcome washout() {
  ExperimentConfig c;
  c.pair.p_w1 = 0.46;
  c.gamma = 0.0;
  const double f = 0.68;
  const double single = modulation_depth(synthesize_trace(c, 0).samples, c.dt, f);

  c.n_pulses = 2000;
  const double d2000 = modulation_depth(ensemble_mean(simulate_ensemble(c, 0)).samples, c.dt, f);
  const double ratio = d2000 / single;

  // RMS residual depth over independent replicate ensembles at each N.
  const int reps = 16;
  std::vector<double> xs, ys;
  for (std::uint64_t n : {100u, 400u, 1600u, 6400u}) {
    double ms = 0.0;
    for (int r = 0; r < reps; ++r) {
      c.n_pulses = n;
      c.master_seed = 1000 + static_cast<std::uint64_t>(r);
      MeanAccumulator acc(c.grid());
      for_each_block(c, 0, 512, [&](std::span<const PulseTrace> b) {
        for (const auto& t : b) acc.add(t);
      });
      const double d = modulation_depth(acc.result().samples, c.dt, f);
      ms += d * d;
    }
    xs.push_back(std::log(static_cast<double>(n)));
    ys.push_back(std::log(std::sqrt(ms / reps)));
  }
  const auto line = fit_power_law(xs, ys);
  const bool ok = ratio < 0.05 && std::abs(line.slope + 0.5) <= 0.1;
  return {ok, "residual/single=" + fmt("%.4f", ratio) + " (single depth " + fmt("%.3f", single) + "), slope=" +
                  fmt("%.3f", line.slope)};
}

Outcome phase_uniformity() {
  const double crit = chi_square_critical(19, 0.01);
  int pass = 0;
  double worst_rho = 1.0, worst_chi = 0.0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    ExperimentConfig c;
    c.pair.p_w1 = 0.46;
    c.gamma = 0.0;
    c.n_pulses = 5000;
    c.master_seed = seed;
    const auto ens = simulate_ensemble(c, 0);
    const auto ex = extract_phases(ens.traces, ensemble_mean(ens), PeriodSource::average, 0.0, 0);
    const auto h = phase_histogram(ex.phases, 20);
    pass += h.chi_square < crit && ex.phases.size() == 5000;
    worst_chi = std::max(worst_chi, h.chi_square);
    std::vector<double> got, truth;
    for (const auto& p : ex.phases) {
      got.push_back(p.phase);
      truth.push_back(first_maximum_phase(ens.traces[p.index].truth->initial_phase));
    }
    worst_rho = std::min(worst_rho, circular_correlation(truth, got));
  }
  const bool ok = pass >= 48 && worst_rho > 0.98;
  return {ok, std::to_string(pass) + "/50 seeds uniform (chi2 max " + fmt("%.2f", worst_chi) + " vs " +
                  fmt("%.2f", crit) + "), min circular corr " + fmt("%.4f", worst_rho)};
}

Outcome thermal_vs_coherent() {
  double v[2];
  double b[2];
  for (int m = 0; m < 2; ++m) {
    ExperimentConfig c;
    c.pair.p_w1 = 0.46;
    c.gamma = 0.0;
    c.n_pulses = 100000;
    c.amplitude_mode = m == 0 ? AmplitudeMode::coherent : AmplitudeMode::thermal;
    G2PipelineOptions opts;
    opts.tau_max = 6.0;
    const auto run = run_g2_pipeline(c, 0, opts);
    G2FitOptions fo;
    fo.free_baseline = true;
    const auto fit = fit_g2(run.g2, initial_guess(run.g2), fo);
    v[m] = fit.params.v;
    b[m] = fit.baseline;
  }
  const bool ok = std::abs(v[0] - 0.5) <= 0.015 && std::abs(v[1] - 1.0 / 3.0) <= 0.015;
  return {ok, "coherent V=" + fmt("%.4f", v[0]) + " (B=" + fmt("%.3f", b[0]) + "), thermal V=" + fmt("%.4f", v[1]) +
                  " (B=" + fmt("%.3f", b[1]) + ")"};
}

Outcome dephasing_calibration() {
  const double gamma = 0.63;
  const std::vector<double> targets = {0.1, 1.0, 3.0};
  std::vector<std::complex<double>> acc(targets.size());
  const int paths = 1000000;
  for (int i = 0; i < paths; ++i) {
    auto s = RngStream::derive(2718, static_cast<std::uint64_t>(i), StreamPurpose::diffusion);
    for (std::size_t j = 0; j < targets.size(); ++j) {
      const double tau = targets[j] / gamma;
      const auto path = sample_phase_path(s, gamma, 0.0, TimeGrid{0.0, tau / 50.0, 51});
      acc[j] += std::polar(1.0, path.back() - path.front());
    }
  }
  bool ok = true;
  std::string detail;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    const auto m = acc[j] / static_cast<double>(paths);
    const double err = std::abs(m - std::exp(-targets[j]));
    ok = ok && err <= 0.01;
    detail += "gt=" + fmt("%g", targets[j]) + ": |err|=" + fmt("%.5f", err) + " ";
  }
  return {ok, detail};
}

Outcome power_law() {
  ExperimentConfig c;
  c.gamma = 0.0;
  c.n_pulses = 100;
  std::vector<double> grid;
  for (int i = 0; i < 8; ++i) grid.push_back(0.2 + 0.8 * i / 7.0);
  SweepOptions opts;
  opts.jobs = 0;
  const auto res = sweep_power(c, grid, opts);
  if (!res.fit) return {false, "sweep produced no fit"};
  const bool ok = res.fit->r2 > 0.999 && std::abs(res.fit->slope / c.pair.kappa1 - 1) <= 0.02;
  return {ok, "slope=" + fmt("%.5f", res.fit->slope) + " (kappa1 " + fmt("%g", c.pair.kappa1) + "), r2=" +
                  fmt("%.7f", res.fit->r2)};
}

Outcome temperature_trend() {
  ExperimentConfig c = dephased_config();
  const std::vector<double> temps = {330, 340, 350, 360, 370};
  SweepOptions opts;
  opts.jobs = 0;
  const auto res = sweep_temperature(c, temps, opts);
  bool ok = true;
  std::string detail = "gamma:";
  for (std::size_t i = 0; i < temps.size(); ++i) {
    ok = ok && res.errors[i].empty() && std::abs(res.gammas[i] / res.injected[i] - 1) <= 0.15;
    if (i > 0) ok = ok && res.gammas[i] > res.gammas[i - 1];
    detail += " " + fmt("%.4f", res.gammas[i]) + "(" + fmt("%.4f", res.injected[i]) + ")";
  }
  return {ok, detail};
}

Outcome exact_data() {
  const G2Params truth{0.47, 0.63, 0.68};
  std::vector<double> taus, g2;
  for (int k = 0; k < 64; ++k) {
    taus.push_back(6.0 * k / 63.0);
    g2.push_back(g2_model(taus.back(), truth));
  }
  auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
  double worst_fit = 0.0;
  auto check = [&](const G2Params& guess) {
    const auto f = fit_g2(taus, g2, guess);
    worst_fit = std::max({worst_fit, rel(f.params.v, truth.v), rel(f.params.gamma, truth.gamma),
                          rel(f.params.delta_nu, truth.delta_nu)});
  };
  check(initial_guess(taus, g2));
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.7, 1.3);
  for (int i = 0; i < 50; ++i) check(G2Params{truth.v * u(rng), truth.gamma * u(rng), truth.delta_nu * u(rng)});

  double worst_jac = 0.0;
  std::uniform_real_distribution<double> w(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const G2Params p{0.05 + 0.9 * w(rng), 0.05 + 2.0 * w(rng), 0.1 + 2.0 * w(rng)};
    const double tau = 0.1 + 6.0 * w(rng);
    const auto g = g2_model_gradient(tau, p);
    const double scale = std::max({std::abs(g[0]), std::abs(g[1]), std::abs(g[2])});
    for (int j = 0; j < 3; ++j) {
      G2Params hi = p, lo = p;
      double& a = j == 0 ? hi.v : j == 1 ? hi.gamma : hi.delta_nu;
      double& b = j == 0 ? lo.v : j == 1 ? lo.gamma : lo.delta_nu;
      const double h = 1e-5 * std::max(1.0, std::abs(a));
      a += h;
      b -= h;
      const double fd = (g2_model(tau, hi) - g2_model(tau, lo)) / (2 * h);
      worst_jac = std::max(worst_jac, std::abs(fd - g[j]) / scale);
    }
  }
  const bool ok = worst_fit < 1e-6 && worst_jac < 1e-6;
  return {ok, "max rel param error " + fmt("%.2e", worst_fit) + ", max rel Jacobian error " + fmt("%.2e", worst_jac)};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + BEATSIM_CLI + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome reproducibility() {
  const fs::path root = fs::temp_directory_path() / "beatsim_acceptance_repro";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream cfg(root / "run.cfg");
    cfg << "p_w1 = 0.46\ngamma = 0.63\nn_pulses = 300\nmaster_seed = 17\n";
  }
  const std::string cfg = "\"" + (root / "run.cfg").string() + "\"";
  for (const char* jobs : {"1", "4"}) {
    const fs::path out = root / (std::string("jobs") + jobs);
    const std::string o = "\"" + out.string();
    const std::string j = std::string(" --jobs ") + jobs;
    int rc = 0;
    rc |= run_cli("simulate --config " + cfg + " --out " + o + "/sim\"" + j);
    rc |= run_cli("analyze " + o + "/sim\" --out " + o + "/analysis\" --tau-max 6" + j);
    rc |= run_cli("fit " + o + "/analysis/g2.csv\" --out " + o + "/fit\"" + j);
    rc |= run_cli("sweep --config " + cfg + " --power --grid 0.2:1.0:8 --pulses 60 --out " + o + "/power\"" + j);
    rc |= run_cli("sweep --config " + cfg + " --temperature --grid 330:370:5 --out " + o + "/temp\"" + j);
    rc |= run_cli("report --config " + cfg + " --pulses 200 --out " + o + "/report\"" + j);
    if (rc != 0) return {false, std::string("CLI run failed with --jobs ") + jobs};
  }
  std::size_t compared = 0, differing = 0, missing = 0;
  const fs::path a = root / "jobs1", b = root / "jobs4";
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
    const auto rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel)) {
      ++missing;
      continue;
    }
    ++compared;
    differing += slurp(e.path()) != slurp(b / rel);
  }
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file() && !fs::exists(a / fs::relative(e.path(), b))) ++missing;
  fs::remove_all(root);
  const bool ok = compared > 0 && differing == 0 && missing == 0;
  return {ok, std::to_string(compared) + " files compared, " + std::to_string(differing) + " differ, " +
                  std::to_string(missing) + " unmatched"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 g2 round trip (V, gamma, dnu)", g2_round_trip},
      {"2 single-trace beat period", beat_period_check},
      {"3 ensemble washout", washout},
      {"4 phase uniformity", phase_uniformity},
      {"5 thermal vs coherent visibility", thermal_vs_coherent},
      {"6 dephasing calibration", dephasing_calibration},
      {"7 power-law linearity", power_law},
      {"8 temperature trend", temperature_trend},
      {"9 exact-data fitting", exact_data},
      {"10 reproducibility serial vs parallel", reproducibility},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
