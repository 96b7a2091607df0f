#pragma once

// CSV tables and on-disk ensembles.
//
// Ensemble directory layout:
//   ensemble.csv        index,t_us,intensity   (one row per sample)
//   ensemble.meta.json  config snapshot (key-value text) and per-pulse truth
//
// Numbers are written as shortest round-trip decimals, so reading a table
// back reproduces every double exactly.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "beatsim/analyze.hpp"
#include "beatsim/config_io.hpp"
#include "beatsim/error.hpp"
#include "beatsim/fit.hpp"
#include "beatsim/numeric.hpp"
#include "beatsim/simulate.hpp"

namespace beatsim {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ParseError("missing CSV column '" + std::string(name) + "'");
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double csv_number(const std::string& s, std::size_t line) {
  auto v = parse_double(s);
  if (!v) throw ParseError("line " + std::to_string(line) + ": not a number: '" + s + "'");
  return *v;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace detail

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.header = detail::split_csv_line(line);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != t.header.size())
      throw ParseError("'" + path.string() + "' line " + std::to_string(line_no) + ": expected " +
                       std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
  }
  return t;
}

// Writes numeric columns of equal length under `header`.
inline void write_columns(const std::filesystem::path& path, const std::vector<std::string>& header,
                          const std::vector<std::vector<double>>& columns) {
  if (header.size() != columns.size()) throw Error("write_columns: header/column count mismatch");
  const std::size_t n = columns.empty() ? 0 : columns.front().size();
  for (const auto& c : columns)
    if (c.size() != n) throw Error("write_columns: ragged columns");
  auto out = detail::open_output(path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << format_double(columns[i][r]);
    out << '\n';
  }
}

inline std::vector<std::vector<double>> read_columns(const std::filesystem::path& path,
                                                     const std::vector<std::string>& names) {
  const CsvTable t = read_csv(path);
  std::vector<std::vector<double>> cols(names.size());
  std::vector<std::size_t> idx;
  for (const auto& n : names) idx.push_back(t.column(n));
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t i = 0; i < names.size(); ++i) cols[i].push_back(detail::csv_number(t.rows[r][idx[i]], r + 2));
  return cols;
}

inline void write_ensemble(const std::filesystem::path& dir, const Ensemble& ens) {
  std::filesystem::create_directories(dir);
  {
    auto out = detail::open_output(dir / "ensemble.csv");
    out << "index,t_us,intensity\n";
    std::string row;
    for (const auto& tr : ens.traces) {
      const std::string idx = std::to_string(tr.index) + ",";
      for (std::size_t k = 0; k < tr.samples.size(); ++k) {
        row = idx;
        row += format_double(tr.time(k));
        row += ',';
        row += format_double(tr.samples[k]);
        row += '\n';
        out << row;
      }
    }
  }
  nlohmann::ordered_json meta;
  meta["format"] = "beatsim-ensemble";
  meta["version"] = 1;
  meta["config"] = serialize_config(ens.config);
  meta["n_pulses"] = ens.traces.size();
  auto truth = nlohmann::ordered_json::array();
  for (const auto& tr : ens.traces) {
    if (!tr.truth) continue;
    truth.push_back({{"index", tr.index},
                     {"initial_phase", tr.truth->initial_phase},
                     {"i1", tr.truth->i1},
                     {"i2", tr.truth->i2}});
  }
  meta["truth"] = std::move(truth);
  auto out = detail::open_output(dir / "ensemble.meta.json");
  out << meta.dump(1) << '\n';
}

inline Ensemble read_ensemble(const std::filesystem::path& dir) {
  const auto meta_path = dir / "ensemble.meta.json";
  std::ifstream meta_in(meta_path, std::ios::binary);
  if (!meta_in) throw ParseError("missing ensemble metadata '" + meta_path.string() + "'");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed ensemble metadata: " + std::string(e.what()));
  }
  if (meta.value("format", "") != "beatsim-ensemble") throw ParseError("not a beatsim ensemble directory");

  Ensemble ens;
  ens.config = parse_config(meta.at("config").get<std::string>());
  const TimeGrid grid = ens.config.grid();

  std::ifstream in(dir / "ensemble.csv", std::ios::binary);
  if (!in) throw ParseError("missing '" + (dir / "ensemble.csv").string() + "'");
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "index,t_us,intensity") throw ParseError("ensemble.csv: unexpected header '" + line + "'");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 3) throw ParseError("ensemble.csv line " + std::to_string(line_no) + ": expected 3 fields");
    const auto index = parse_integer<std::uint64_t>(f[0]);
    if (!index) throw ParseError("ensemble.csv line " + std::to_string(line_no) + ": bad index");
    const double t = detail::csv_number(f[1], line_no);
    const double v = detail::csv_number(f[2], line_no);
    if (ens.traces.empty() || ens.traces.back().index != *index) {
      if (*index != ens.traces.size())
        throw ParseError("ensemble.csv line " + std::to_string(line_no) + ": trace indices must be 0..n-1 in order");
      PulseTrace tr;
      tr.index = *index;
      tr.t0 = grid.t0;
      tr.dt = grid.dt;
      tr.samples.reserve(grid.size);
      ens.traces.push_back(std::move(tr));
    }
    auto& tr = ens.traces.back();
    if (tr.samples.size() >= grid.size || std::abs(t - grid.time(tr.samples.size())) > 1e-9 * std::max(1.0, t))
      throw ParseError("ensemble.csv line " + std::to_string(line_no) + ": time does not match the config grid");
    tr.samples.push_back(v);
  }
  for (const auto& tr : ens.traces)
    if (tr.samples.size() != grid.size)
      throw ParseError("ensemble.csv: trace " + std::to_string(tr.index) + " is truncated");
  if (ens.traces.size() != ens.config.n_pulses) throw ParseError("ensemble.csv: pulse count differs from config");

  for (const auto& row : meta.value("truth", nlohmann::json::array())) {
    const auto idx = row.at("index").get<std::uint64_t>();
    if (idx >= ens.traces.size()) throw ParseError("truth entry for unknown pulse");
    ens.traces[idx].truth =
        PhaseTruth{row.at("initial_phase").get<double>(), row.at("i1").get<double>(), row.at("i2").get<double>()};
  }
  return ens;
}

inline void write_g2_csv(const std::filesystem::path& path, const G2Estimate& est) {
  write_columns(path, {"tau_us", "g2"}, {est.taus, est.g2});
}

// Reads a `tau_us,g2` table; only taus and g2 are populated.
inline G2Estimate read_g2_csv(const std::filesystem::path& path) {
  const auto cols = read_columns(path, {"tau_us", "g2"});
  G2Estimate est;
  est.taus = cols[0];
  est.g2 = cols[1];
  if (est.taus.empty()) throw ParseError("'" + path.string() + "' has no data rows");
  return est;
}

inline void write_phases_csv(const std::filesystem::path& path, std::span<const PhaseSample> phases) {
  auto out = detail::open_output(path);
  out << "index,delta_t_us,period_us,phase_rad\n";
  for (const auto& p : phases)
    out << p.index << ',' << format_double(p.delta_t) << ',' << format_double(p.period) << ','
        << format_double(p.phase) << '\n';
}

inline std::vector<PhaseSample> read_phases_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const auto ci = t.column("index"), cd = t.column("delta_t_us"), cp = t.column("period_us"), cf = t.column("phase_rad");
  std::vector<PhaseSample> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto idx = parse_integer<std::uint64_t>(t.rows[r][ci]);
    if (!idx) throw ParseError("line " + std::to_string(r + 2) + ": bad index");
    out.push_back(PhaseSample{*idx, detail::csv_number(t.rows[r][cd], r + 2), detail::csv_number(t.rows[r][cp], r + 2),
                              detail::csv_number(t.rows[r][cf], r + 2)});
  }
  return out;
}

inline const std::vector<std::string>& fit_csv_header() {
  static const std::vector<std::string> h = {"v",        "v_stderr",        "gamma_per_us", "gamma_stderr",
                                             "delta_nu_mhz", "delta_nu_stderr", "baseline",     "baseline_stderr",
                                             "rss",      "iterations",      "converged",    "delta_nu_identifiable"};
  return h;
}

inline void write_fit_csv(const std::filesystem::path& path, const G2Fit& f) {
  write_columns(path, fit_csv_header(),
                {{f.params.v}, {f.stderrs.v}, {f.params.gamma}, {f.stderrs.gamma}, {f.params.delta_nu},
                 {f.stderrs.delta_nu}, {f.baseline}, {f.baseline_stderr}, {f.rss},
                 {static_cast<double>(f.iterations)}, {f.converged ? 1.0 : 0.0}, {f.delta_nu_identifiable ? 1.0 : 0.0}});
}

inline G2Fit read_fit_csv(const std::filesystem::path& path) {
  const auto c = read_columns(path, fit_csv_header());
  if (c.front().size() != 1) throw ParseError("'" + path.string() + "' must hold exactly one fit row");
  G2Fit f;
  f.params = G2Params{c[0][0], c[2][0], c[4][0]};
  f.stderrs = G2Params{c[1][0], c[3][0], c[5][0]};
  f.baseline = c[6][0];
  f.baseline_stderr = c[7][0];
  f.rss = c[8][0];
  f.iterations = static_cast<int>(c[9][0]);
  f.converged = c[10][0] != 0.0;
  f.delta_nu_identifiable = c[11][0] != 0.0;
  return f;
}

// Human-readable fit report.
inline std::string format_fit_report(const G2Fit& f, bool free_baseline) {
  std::ostringstream out;
  out << "# g2 fit: " << (free_baseline ? "B * " : "") << "(1 + V exp(-gamma tau) cos(2 pi delta_nu tau))\n";
  auto row = [&](const char* name, double est, double se) {
    out << name << std::string(24 - std::string(name).size(), ' ') << format_double(est) << "  +/- "
        << format_double(se) << '\n';
  };
  row("V", f.params.v, f.stderrs.v);
  row("gamma [1/us]", f.params.gamma, f.stderrs.gamma);
  row("delta_nu [MHz]", f.params.delta_nu, f.stderrs.delta_nu);
  if (free_baseline) row("baseline", f.baseline, f.baseline_stderr);
  out << "rss                     " << format_double(f.rss) << '\n';
  out << "iterations              " << f.iterations << '\n';
  out << "converged               " << (f.converged ? "yes" : "no") << '\n';
  out << "delta_nu identifiable   " << (f.delta_nu_identifiable ? "yes" : "no (visibility indistinguishable from 0)")
      << '\n';
  return out.str();
}

}  // namespace beatsim
