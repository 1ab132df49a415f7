// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. run_cli() parses arguments, validates them,
// dispatches to a subcommand and maps errors to exit codes:
//   0 success, 1 usage or configuration, 2 numeric failure, 3 I/O.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "jtfs/adjoint.hpp"
#include "jtfs/error.hpp"
#include "jtfs/filterbank.hpp"
#include "jtfs/gradcheck.hpp"
#include "jtfs/io/features.hpp"
#include "jtfs/io/wav.hpp"
#include "jtfs/metamer.hpp"
#include "jtfs/scattering.hpp"

namespace jtfs::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kNumeric = 2, kIo = 3 };

struct RunConfig {
  std::string command;
  JtfsParams params;
  ReconstructionConfig recon;
  std::string input;
  std::string output;
  std::string loss_csv;
  std::string features_dir;
  std::optional<std::size_t> length;  // plan size; defaults to the input length
  int count = 1;  // synthesize: number of seeds; gradcheck: number of instances
  int directions = 100;
  int jobs = 1;
};

/// Checks every option before any computation, naming the offending flag.
inline void validate(const RunConfig& c) {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  const auto& p = c.params;
  need(p.J >= 1 && p.J <= 24, "-J must lie in [1, 24]");
  need(p.Q1 >= 1, "--q1 must be >= 1");
  need(p.Q2 >= 1, "--q2 must be >= 1");
  need(p.J_fr >= 1 && p.J_fr <= 16, "--j-fr must lie in [1, 16]");
  need(p.Q_fr >= 1, "--q-fr must be >= 1");
  need(p.log2_T >= 0 && p.log2_T <= p.J, "--log2-T must lie in [0, J]");
  need(p.log2_F >= 0 && p.log2_F <= p.J_fr, "--log2-F must lie in [0, j-fr]");
  need(!c.length || *c.length >= 2, "--length must be >= 2");
  need(c.recon.iterations > 0, "--iterations must be positive");
  need(c.recon.mu0 > 0.0, "--lr must be positive");
  need(c.recon.momentum >= 0.0 && c.recon.momentum < 1.0, "--momentum must lie in [0, 1)");
  need(c.count >= 1, "--count must be >= 1");
  need(c.directions >= 1, "--directions must be >= 1");
  need(c.jobs >= 1, "--jobs must be >= 1");
  if (c.command == "analyze") {
    need(!c.input.empty(), "--input is required");
    need(!c.features_dir.empty(), "--features-dir is required");
  } else if (c.command == "synthesize") {
    need(!c.input.empty(), "--input is required");
    need(!c.output.empty(), "--output is required");
  }
}

/// Read the input WAV and fit it to the plan size: longer signals are
/// truncated and shorter ones zero-extended, each with a warning.
inline io::AudioBuffer load_input(const RunConfig& c, std::ostream& err) {
  io::AudioBuffer audio = io::read_wav(c.input, err);
  if (audio.samples.empty()) throw FormatError(c.input + ": data chunk holds no samples");
  if (c.length && *c.length != audio.samples.size()) {
    err << "warning: input has " << audio.samples.size() << " samples; "
        << (*c.length < audio.samples.size() ? "truncated" : "zero-extended") << " to " << *c.length
        << '\n';
    audio.samples.resize(*c.length, 0.0);
  }
  return audio;
}

inline std::shared_ptr<const FilterbankPlan> plan_for(const RunConfig& c, std::size_t n) {
  JtfsParams p = c.params;
  p.N_input = n;
  return build_plan(p);
}

inline int cmd_analyze(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto audio = load_input(c, err);
  const auto plan = plan_for(c, audio.samples.size());
  const CoefficientSet s = jtfs_forward(audio.samples, *plan);
  io::write_features(c.features_dir, s, *plan);
  out << "paths " << s.entries.size() << "\ncoefficients " << s.coefficient_count() << '\n';
  return kOk;
}

inline std::string output_name(const std::string& base, std::uint64_t seed, int count) {
  if (count == 1) return base;
  const std::filesystem::path p(base);
  return (p.parent_path() / (p.stem().string() + "_seed" + std::to_string(seed) + p.extension().string()))
      .string();
}

inline int cmd_synthesize(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto audio = load_input(c, err);
  const auto plan = plan_for(c, audio.samples.size());
  const CoefficientSet sx = jtfs_forward(audio.samples, *plan);

  std::vector<ReconstructionResult> results(static_cast<std::size_t>(c.count));
  std::vector<std::exception_ptr> failures(results.size());
  auto job = [&](std::size_t i) {
    try {
      ReconstructionConfig rc = c.recon;
      rc.seed = c.recon.seed + i;
      results[i] = reconstruct(sx, init_colored_noise(sx, *plan, rc.seed), *plan, rc);
    } catch (...) {
      failures[i] = std::current_exception();
    }
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(c.jobs), results.size());
  for (std::size_t start = 0; start < results.size(); start += workers) {
    std::vector<std::thread> pool;
    for (std::size_t i = start; i < std::min(results.size(), start + workers); ++i) pool.emplace_back(job, i);
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto seed = c.recon.seed + i;
    const auto& r = results[i];
    io::write_wav(output_name(c.output, seed, c.count), {r.y, audio.sample_rate}, err);
    if (!c.loss_csv.empty()) {
      const auto path = output_name(c.loss_csv, seed, c.count);
      std::ofstream csv(path);
      if (!csv) throw IoError("cannot write " + path);
      write_loss_csv(csv, r.state);
      if (!csv) throw IoError("write failed: " + path);
    }
    const double initial = r.state.records.front().loss;
    out << "seed " << seed << ": loss " << initial << " -> " << r.state.loss << " ("
        << (initial > 0.0 ? r.state.loss / initial : 0.0) << " of initial) after " << r.state.iteration
        << " iterations\n";
  }
  return kOk;
}

/// Filterbank dump: one CSV row per filter with its level-0 magnitude
/// response. Frequential filters are shorter than temporal ones; their
/// trailing fields are left empty.
inline void write_filters_csv(std::ostream& os, const FilterbankPlan& plan) {
  std::size_t width = 0;
  auto each = [&](auto&& fn) {
    auto layer = [&](const char* name, const std::vector<SampledFilter>& fs) {
      for (std::size_t i = 0; i < fs.size(); ++i) fn(name, i, fs[i]);
    };
    layer("psi1", plan.psi1);
    layer("psi2", plan.psi2);
    layer("psi_fr", plan.psi_fr);
    fn("phi_T", 0, plan.phi_T);
    fn("phi_F", 0, plan.phi_F);
  };
  each([&](const char*, std::size_t, const SampledFilter& f) { width = std::max(width, f.level(0).size()); });

  os << "layer,n,xi,sigma,j,spin";
  for (std::size_t k = 0; k < width; ++k) os << ",m" << k;
  os << '\n';
  os << std::setprecision(17);
  each([&](const char* name, std::size_t i, const SampledFilter& f) {
    os << name << ',' << i << ',' << f.spec.xi << ',' << f.spec.sigma << ',' << f.spec.j << ','
       << f.spec.spin;
    const auto h = f.level(0);
    for (std::size_t k = 0; k < width; ++k) {
      os << ',';
      if (k < h.size()) os << std::abs(h[k]);
    }
    os << '\n';
  });
}

inline int cmd_filters(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto plan = plan_for(c, c.length.value_or(c.params.N_input));
  const auto lp = littlewood_paley(*plan);
  err << "Littlewood-Paley bounds on [" << lp.band_lo << ", " << lp.band_hi << "]: A=" << lp.A
      << " B=" << lp.B << " (global max " << lp.B_global << ")\n";
  if (c.output.empty()) {
    write_filters_csv(out, *plan);
    return kOk;
  }
  std::ofstream csv(c.output);
  if (!csv) throw IoError("cannot write " + c.output);
  write_filters_csv(csv, *plan);
  if (!csv) throw IoError("write failed: " + c.output);
  return kOk;
}

inline int cmd_gradcheck(const RunConfig& c, std::ostream& out, std::ostream&) {
  JtfsParams p = c.params;
  p.N_input = c.length.value_or(p.N_input);
  const auto plan = build_plan(p);
  GradcheckOptions opt;
  opt.directions = c.directions;
  bool all = true;
  for (int i = 0; i < c.count; ++i) {
    const auto seed = c.recon.seed + static_cast<std::uint64_t>(i);
    const auto r = gradient_check(*plan, seed, opt);
    out << "seed " << seed << ": max relative error " << r.max_error << ", median " << r.median_error
        << ", within tolerance " << r.pass_fraction * 100.0 << "% -> " << (r.passed ? "PASS" : "FAIL")
        << '\n';
    all = all && r.passed;
  }
  return all ? kOk : kNumeric;
}

inline int dispatch(const RunConfig& c, std::ostream& out, std::ostream& err) {
  validate(c);
  if (c.command == "analyze") return cmd_analyze(c, out, err);
  if (c.command == "synthesize") return cmd_synthesize(c, out, err);
  if (c.command == "filters") return cmd_filters(c, out, err);
  if (c.command == "gradcheck") return cmd_gradcheck(c, out, err);
  throw ConfigError("unknown command " + c.command);
}

/// Parse, run and map exceptions to exit codes.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Joint time-frequency scattering: analysis and metamer synthesis", "jtfs"};
  app.require_subcommand(1);
  RunConfig c;
  std::size_t length = 0;

  auto add_plan = [&](CLI::App* sub) {
    sub->add_option("-J", c.params.J, "temporal octaves");
    sub->add_option("--q1", c.params.Q1, "first-order wavelets per octave");
    sub->add_option("--q2", c.params.Q2, "second-order wavelets per octave");
    sub->add_option("--j-fr", c.params.J_fr, "frequential octaves");
    sub->add_option("--q-fr", c.params.Q_fr, "frequential wavelets per octave");
    sub->add_option("--log2-T", c.params.log2_T, "log2 of the temporal averaging scale");
    sub->add_option("--log2-F", c.params.log2_F, "log2 of the frequential averaging scale");
    sub->add_option("--length", length, "plan size in samples");
  };

  auto* analyze = app.add_subcommand("analyze", "write scattering features of a WAV file");
  add_plan(analyze);
  analyze->add_option("--input", c.input, "input WAV");
  analyze->add_option("--features-dir", c.features_dir, "output directory");

  auto* synth = app.add_subcommand("synthesize", "synthesize a metamer of a WAV file");
  add_plan(synth);
  synth->add_option("--input", c.input, "reference WAV");
  synth->add_option("--output", c.output, "metamer WAV");
  synth->add_option("--iterations", c.recon.iterations, "gradient iterations");
  synth->add_option("--lr", c.recon.mu0, "initial learning rate");
  synth->add_option("--momentum", c.recon.momentum, "momentum constant");
  synth->add_option("--seed", c.recon.seed, "noise seed");
  synth->add_option("--loss-csv", c.loss_csv, "loss curve CSV");
  synth->add_option("--count", c.count, "number of metamers, seeds seed..seed+count-1");
  synth->add_option("--jobs", c.jobs, "parallel reconstructions");

  auto* filters = app.add_subcommand("filters", "dump the filterbank as CSV");
  add_plan(filters);
  filters->add_option("--output", c.output, "CSV path (default: standard output)");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the gradient");
  add_plan(grad);
  grad->add_option("--seed", c.recon.seed, "instance seed");
  grad->add_option("--count", c.count, "number of seeded instances");
  grad->add_option("--directions", c.directions, "random directions per instance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  c.command = chosen->get_name();
  if (chosen->count("--length") > 0) c.length = length;
  if (c.command == "gradcheck") {
    // The small standard instance, unless overridden flag by flag.
    const JtfsParams g = gradcheck_params();
    if (chosen->count("-J") == 0) c.params.J = g.J;
    if (chosen->count("--q1") == 0) c.params.Q1 = g.Q1;
    if (chosen->count("--q2") == 0) c.params.Q2 = g.Q2;
    if (chosen->count("--j-fr") == 0) c.params.J_fr = g.J_fr;
    if (chosen->count("--q-fr") == 0) c.params.Q_fr = g.Q_fr;
    if (chosen->count("--log2-T") == 0) c.params.log2_T = g.log2_T;
    if (chosen->count("--log2-F") == 0) c.params.log2_F = g.log2_F;
    if (!c.length) c.length = g.N_input;
  }

  try {
    return dispatch(c, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const SizeError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kNumeric;
  }
}

}  // namespace jtfs::cli
