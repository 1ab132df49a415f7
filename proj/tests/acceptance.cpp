// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS or FAIL line per criterion, exit status 1 if any
// criterion fails. Criteria with a time budget fail when they exceed it.
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>

#include "jtfs/adjoint.hpp"
#include "jtfs/gradcheck.hpp"
#include "jtfs/io/wav.hpp"
#include "jtfs/metamer.hpp"
#include "oracles.hpp"

#ifndef JTFS_CLI_PATH
#error "JTFS_CLI_PATH must name the jtfs executable"
#endif

using namespace jtfs;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double l2(const RealVec& v) { return std::sqrt(oracle::inner(v, v)); }

RealVec flatten(const CoefficientSet& s) {
  RealVec out;
  for (const auto& e : s.entries) out.insert(out.end(), e.values.data().begin(), e.values.data().end());
  return out;
}

// Criterion 1 ------------------------------------------------------------

void gradient_check_criterion(Outcome& o) {
  const auto plan = build_plan(gradcheck_params());
  double worst_fraction = 1.0, worst_error = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = gradient_check(*plan, seed);
    worst_fraction = std::min(worst_fraction, r.pass_fraction);
    worst_error = std::max(worst_error, r.max_error);
    o.require(r.passed, "seed " + std::to_string(seed) + " below 99% of directions");
  }
  o.detail << "5 seeds x 100 directions, lowest pass fraction " << worst_fraction * 100.0
           << "%, largest relative error " << worst_error;
}

// Criterion 2 ------------------------------------------------------------

template <typename T>
const std::vector<T>& flat(const std::vector<T>& v) { return v; }
template <typename T>
const std::vector<T>& flat(const Array2D<T>& a) { return a.data(); }

template <typename Forward, typename Adjoint, typename MakeU, typename MakeV>
double adjoint_gap(Forward fwd, Adjoint adj, MakeU make_u, MakeV make_v) {
  double worst = 0.0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    const auto u = make_u(t);
    const auto v = make_v(t);
    const double lhs = oracle::inner(flat(fwd(u, t)), flat(v));
    const double rhs = oracle::inner(flat(u), flat(adj(v, t)));
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
  }
  return worst;
}

RealArray random_array(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  RealArray a(rows, cols);
  a.data() = oracle::random_real(rows * cols, seed);
  return a;
}

void adjoint_criterion(Outcome& o) {
  const auto plan = build_plan(gradcheck_params());
  const std::size_t n = plan->N_padded;
  std::vector<std::pair<std::string, double>> gaps;

  gaps.emplace_back("fft", adjoint_gap(
      [](const CplxVec& u, auto) { return dsp::fft(u); },
      [&](const CplxVec& v, auto) {
        CplxVec r = dsp::ifft(v);
        for (auto& x : r) x *= static_cast<double>(v.size());
        return r;
      },
      [&](auto t) { return oracle::random_complex(n, t); },
      [&](auto t) { return oracle::random_complex(n, 100 + t); }));

  gaps.emplace_back("subsample_fourier", adjoint_gap(
      [](const CplxVec& u, auto t) { return dsp::subsample_fourier(u, std::size_t{1} << (t % 4)); },
      [](const CplxVec& v, auto t) {
        const std::size_t k = std::size_t{1} << (t % 4);
        CplxVec r = dsp::upsample_fourier(v, k);
        for (auto& x : r) x /= static_cast<double>(k);
        return r;
      },
      [&](auto t) { return oracle::random_complex(n, t); },
      [&](auto t) { return oracle::random_complex(n >> (t % 4), 200 + t); }));

  gaps.emplace_back("filter_subsample", adjoint_gap(
      [&](const CplxVec& u, auto t) {
        return dsp::filter_subsample(dsp::fft(u), plan->psi1[t % plan->psi1.size()].level(0), 1.0,
                                     std::size_t{1} << (t % 4));
      },
      [&](const CplxVec& v, auto t) {
        return dsp::filter_subsample_adjoint(v, plan->psi1[t % plan->psi1.size()].level(0), 1.0,
                                             std::size_t{1} << (t % 4));
      },
      [&](auto t) { return oracle::random_complex(n, t); },
      [&](auto t) { return oracle::random_complex(n >> (t % 4), 300 + t); }));

  const auto spec = plan->time_pad;
  gaps.emplace_back("reflection padding", adjoint_gap(
      [&](const RealVec& u, auto) { return dsp::pad_time(u, n); },
      [&](const RealVec& v, auto) { return dsp::pad_time_adjoint(v, spec); },
      [&](auto t) { return oracle::random_real(plan->params.N_input, t); },
      [&](auto t) { return oracle::random_real(n, 400 + t); }));

  gaps.emplace_back("temporal averaging and unpadding", adjoint_gap(
      [&](const RealArray& u, auto t) { return detail::time_average(u, static_cast<int>(t % 4), *plan).data(); },
      [&](const RealVec& v, auto t) {
        RealArray g(3, detail::unpadded_frames(*plan));
        g.data() = v;
        return detail::time_average_adjoint(g, static_cast<int>(t % 4), *plan);
      },
      [&](auto t) { return random_array(3, n >> (t % 4), t); },
      [&](auto t) { return oracle::random_real(3 * detail::unpadded_frames(*plan), 500 + t); }));

  gaps.emplace_back("frequential averaging and formatting", adjoint_gap(
      [&](const RealArray& u, auto t) {
        ModulusBlock mb;
        mb.n1_max = 3 + static_cast<int>(t % 5);
        mb.log2_stride_time = static_cast<int>(t % 4);
        mb.log2_stride_freq = static_cast<int>(t % 2);
        mb.values = u;
        return average_and_format(mb, *plan).values.data();
      },
      [&](const RealVec& v, auto t) {
        ModulusBlock mb;
        mb.n1_max = 3 + static_cast<int>(t % 5);
        mb.log2_stride_time = static_cast<int>(t % 4);
        mb.log2_stride_freq = static_cast<int>(t % 2);
        mb.values = RealArray(plan->N_fr_padded >> mb.log2_stride_freq, n >> mb.log2_stride_time);
        const CoefficientEntry e = average_and_format(mb, *plan);
        RealArray g(e.values.rows(), e.values.cols());
        g.data() = v;
        return average_and_format_adjoint(e, g, *plan);
      },
      [&](auto t) { return random_array(plan->N_fr_padded >> (t % 2), n >> (t % 4), t); },
      [&](auto t) {
        const std::size_t rows = detail::ceil_div_pow2(3 + t % 5, plan->params.log2_F);
        return oracle::random_real(rows * detail::unpadded_frames(*plan), 600 + t);
      }));

  // Frequential scattering maps one block to several outputs; the pair is
  // the block and the concatenation of all filtered outputs.
  double fr_worst = 0.0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    const std::size_t rows = 2 + t % 9, cols = 16;
    CplxArray u(rows, cols);
    u.data() = oracle::random_complex(rows * cols, t);
    const auto blocks = frequency_scattering(u, *plan, t % 2 == 1);
    FrequentialAdjoint adj(cols, *plan);
    double lhs = 0.0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      CplxArray v(blocks[b].coef.rows(), blocks[b].coef.cols());
      v.data() = oracle::random_complex(v.size(), 700 + 50 * t + b);
      lhs += oracle::inner(blocks[b].coef.data(), v.data());
      adj.add(blocks[b], v);
    }
    const double rhs = oracle::inner(u.data(), adj.finish(rows).data());
    fr_worst = std::max(fr_worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
  }
  gaps.emplace_back("frequential scattering", fr_worst);

  double worst = 0.0;
  for (const auto& [name, gap] : gaps) {
    worst = std::max(worst, gap);
    o.require(gap <= 1e-10, name);
  }
  o.detail << gaps.size() << " linear stages x 20 random pairs, largest relative gap " << worst;
}

// Criterion 3 ------------------------------------------------------------

CplxVec absolute(const CplxVec& x) {
  CplxVec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::abs(x[i]);
  return out;
}

CplxVec decimated_kernel(const RealVec& h_hat, int k) {
  CplxVec h = oracle::decimate(oracle::impulse_response(h_hat), std::size_t{1} << k);
  for (auto& v : h) v *= static_cast<double>(std::size_t{1} << k);
  return h;
}

void widthfirst_criterion(Outcome& o) {
  const auto plan = build_plan(gradcheck_params());
  const int T = plan->params.log2_T;
  const RealVec padded = dsp::pad_time(oracle::random_real(plan->params.N_input, 11), plan->N_padded);
  const TimeScattering ts = time_scattering_widthfirst(padded, *plan);

  // Depth-first reference: each path from the waveform by direct circular
  // convolution, one path at a time.
  double worst = 0.0;
  std::vector<CplxVec> u1(plan->psi1.size());
  std::vector<int> k1(plan->psi1.size());
  for (std::size_t n1 = 0; n1 < plan->psi1.size(); ++n1) {
    k1[n1] = std::min(plan->psi1[n1].spec.j, T);
    u1[n1] = absolute(oracle::decimate(
        oracle::circular_convolve(oracle::to_complex(padded), oracle::impulse_response(plan->psi1[n1].level(0))),
        std::size_t{1} << k1[n1]));
  }
  std::size_t b = 0, paths = 0;
  bool path_set_ok = true;
  for (std::size_t n2 = 0; n2 < plan->psi2.size(); ++n2) {
    std::vector<std::size_t> admissible;
    for (std::size_t n1 = 0; n1 < plan->psi1.size(); ++n1) {
      if (plan->psi2[n2].spec.j > plan->psi1[n1].spec.j) admissible.push_back(n1);
    }
    if (admissible.empty()) continue;
    if (b >= ts.y2.size() || ts.y2[b].n2 != static_cast<int>(n2) ||
        ts.y2[b].coef.rows() != admissible.size()) {
      path_set_ok = false;
      break;
    }
    const auto& block = ts.y2[b++];
    for (std::size_t r = 0; r < admissible.size(); ++r) {
      const std::size_t n1 = admissible[r];
      const int k2 = std::min(plan->psi2[n2].spec.j, T) - k1[n1];
      const CplxVec y2 = oracle::decimate(
          oracle::circular_convolve(u1[n1], decimated_kernel(plan->psi2[n2].level(0), k1[n1])),
          std::size_t{1} << k2);
      const auto row = block.coef.row(r);
      double diff = 0.0;
      for (std::size_t i = 0; i < y2.size(); ++i) diff = std::max(diff, std::abs(row[i] - y2[i]));
      worst = std::max(worst, diff / (1.0 + oracle::max_abs(y2)));
      ++paths;
    }
  }
  path_set_ok = path_set_ok && b == ts.y2.size();
  o.require(path_set_ok, "second-order path set differs from j2 > j1");
  o.require(worst <= 1e-10, "width-first differs from depth-first");
  o.detail << paths << " second-order paths (j2 > j1 exactly), largest difference " << worst;
}

// Criterion 4 ------------------------------------------------------------

void subsample_criterion(Outcome& o) {
  double worst = 0.0;
  for (std::size_t k : {1U, 2U, 4U, 8U}) {
    for (std::uint64_t t = 0; t < 5; ++t) {
      const CplxVec x = oracle::random_complex(512, 10 * k + t);
      const CplxVec via_fourier = dsp::ifft(dsp::subsample_fourier(dsp::fft(x), k));
      worst = std::max(worst, oracle::max_abs_diff(via_fourier, oracle::decimate(x, k)));
    }
  }
  o.require(worst <= 1e-12, "Fourier subsampling differs from decimation");
  o.detail << "k in {1,2,4,8}, largest difference " << worst;
}

// Criterion 5 ------------------------------------------------------------

void filterbank_criterion(Outcome& o) {
  const auto f = constant_q_generator(8, 8);
  const double quality = f.front().xi / f.front().sigma;
  const double tail_sigma = 0.1 * std::pow(2.0, -8);
  std::size_t geometric = 0;
  while (geometric < f.size() && f[geometric].sigma != tail_sigma) ++geometric;
  double q_dev = 0.0, ratio_dev = 0.0;
  for (std::size_t i = 0; i < geometric; ++i) {
    q_dev = std::max(q_dev, std::abs(f[i].xi / f[i].sigma - quality) / quality);
    if (i > 0) ratio_dev = std::max(ratio_dev, std::abs(f[i].xi / f[i - 1].xi - std::pow(2.0, -1.0 / 8.0)));
  }
  bool tail_exact = geometric < f.size();
  for (std::size_t i = geometric; i < f.size(); ++i) tail_exact = tail_exact && f[i].sigma == tail_sigma;
  o.require(geometric > 1 && q_dev <= 1e-10, "constant xi/sigma");
  o.require(ratio_dev <= 1e-10, "ratio 2^(-1/8)");
  o.require(tail_exact, "tail sigma 0.1 * 2^-8");
  o.require(constant_q_generator(8, 1).front().xi == 0.35, "Q=1 first xi");

  const auto plan = build_plan({8, 8, 1, 3, 1, 6, 1, 4096});
  double dc = 0.0;
  for (const auto* bank : {&plan->psi1, &plan->psi2, &plan->psi_fr}) {
    for (const auto& filt : *bank) {
      const auto h = filt.level(0);
      double peak = 0.0;
      for (double v : h) peak = std::max(peak, std::abs(v));
      dc = std::max(dc, std::abs(h[0]) / peak);
    }
  }
  o.require(dc <= 1e-7, "DC bin of a Morlet wavelet");
  o.detail << geometric << " geometric + " << f.size() - geometric << " tail filters, xi/sigma spread " << q_dev
           << ", ratio error " << ratio_dev << ", DC/peak " << dc;
}

// Criterion 6 ------------------------------------------------------------

void shift_criterion(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const JtfsParams p;  // N = 2^15, log2_T = 10
  const auto plan = build_plan(p);
  const double sr = static_cast<double>(p.N_input) / 2.0;  // two seconds
  RealVec x(p.N_input, 0.0);
  for (int h = 1; h <= 8; ++h) {
    for (std::size_t t = 0; t < x.size(); ++t) {
      x[t] += std::sin(2.0 * std::numbers::pi * 220.0 * h * static_cast<double>(t) / sr) / h;
    }
  }
  RealVec shifted = x;
  const std::size_t shift = (std::size_t{1} << p.log2_T) / 8;
  std::rotate(shifted.begin(), shifted.end() - static_cast<std::ptrdiff_t>(shift), shifted.end());
  const RealVec a = flatten(jtfs_forward(x, *plan));
  const RealVec b = flatten(jtfs_forward(shifted, *plan));
  RealVec d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double rel = l2(d) / l2(a);
  const double elapsed = seconds_since(t0);
  o.require(rel <= 0.1, "relative change above 10%");
  o.require(elapsed <= 60.0, "over 1 minute");
  o.detail << "shift " << shift << " samples, relative change " << rel << ", " << elapsed << " s";
}

// Criterion 7 ------------------------------------------------------------

RealVec chirp(std::size_t n) {
  const double sr = static_cast<double>(n) / 3.0, f0 = 110.0, f1 = 3520.0;
  const double rate = std::log(f1 / f0) / 3.0;
  RealVec x(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    x[i] = 0.5 * std::sin(2.0 * std::numbers::pi * f0 * (std::exp(rate * t) - 1.0) / rate);
  }
  return x;
}

void metamer_criterion(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const JtfsParams p;  // N = 2^15, J = 10, Q1 = 8, log2_T = 10
  const auto plan = build_plan(p);
  const CoefficientSet sx = jtfs_forward(chirp(p.N_input), *plan);
  std::vector<ReconstructionResult> runs;
  for (std::uint64_t seed : {1U, 2U}) {
    ReconstructionConfig cfg;  // 100 iterations, m = 0.9, mu0 = 0.1
    cfg.seed = seed;
    runs.push_back(reconstruct(sx, init_colored_noise(sx, *plan, seed), *plan, cfg));
    const auto& r = runs.back();
    const double ratio = r.state.loss / r.state.records.front().loss;
    bool monotone = true;
    double last = r.state.records.front().loss;
    for (const auto& rec : r.state.records) {
      if (!rec.accepted) continue;
      monotone = monotone && rec.loss <= last;
      last = rec.loss;
    }
    o.require(ratio <= 0.05, "seed " + std::to_string(seed) + " final loss above 5% of initial");
    o.require(monotone, "seed " + std::to_string(seed) + " accepted losses increase");
    o.detail << "seed " << seed << ": " << r.state.records.front().loss << " -> " << r.state.loss << " ("
             << ratio * 100.0 << "%) in " << r.state.iteration << " iterations; ";
  }
  RealVec d(runs[0].y.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = runs[0].y[i] - runs[1].y[i];
  const double distance = l2(d) / std::max(l2(runs[0].y), l2(runs[1].y));
  const double l0 = runs[0].state.loss, l1 = runs[1].state.loss;
  const double spread = std::max(l0, l1) / std::min(l0, l1);
  const double elapsed = seconds_since(t0);
  o.require(distance >= 0.1, "seeds give waveforms closer than 0.1");
  o.require(spread <= 2.0, "final losses differ by more than 2x");
  o.require(elapsed <= 900.0, "over 15 minutes");
  o.detail << "relative distance " << distance << ", loss ratio " << spread << ", " << elapsed << " s";
}

// Criterion 8 ------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(JTFS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

void determinism_criterion(Outcome& o) {
  const fs::path dir = fs::temp_directory_path() / "jtfs_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::size_t n = std::size_t{1} << 15;
  io::write_wav((dir / "chirp.wav").string(), {chirp(n), static_cast<std::uint32_t>(n / 3)});
  const std::string input = (dir / "chirp.wav").string();

  std::vector<std::string> analyze, synth;
  for (int run = 0; run < 2; ++run) {
    const fs::path feat = dir / ("features" + std::to_string(run));
    const fs::path wav = dir / ("metamer" + std::to_string(run) + ".wav");
    const fs::path csv = dir / ("loss" + std::to_string(run) + ".csv");
    o.require(run_cli("analyze --input " + input + " --features-dir " + feat.string()) == 0, "analyze exit");
    o.require(run_cli("synthesize --input " + input + " --output " + wav.string() + " --loss-csv " +
                      csv.string() + " --iterations 3 --seed 5") == 0,
              "synthesize exit");
    analyze.push_back(slurp(feat / "manifest.json") + slurp(feat / "coefficients.f64"));
    synth.push_back(slurp(wav) + slurp(csv));
  }
  o.require(!analyze[0].empty() && analyze[0] == analyze[1], "analyze output differs");
  o.require(!synth[0].empty() && synth[0] == synth[1], "synthesize output differs");
  o.detail << "analyze " << analyze[0].size() << " bytes, synthesize " << synth[0].size()
           << " bytes, identical across two runs";
  fs::remove_all(dir);
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"gradient agrees with finite differences", gradient_check_criterion},
      {"adjoint identities of the linear stages", adjoint_criterion},
      {"width-first equals depth-first on j2 > j1", widthfirst_criterion},
      {"Fourier subsampling equals decimation", subsample_criterion},
      {"filterbank generator contract", filterbank_criterion},
      {"stability to a time shift of T/8", shift_criterion},
      {"chirp metamers converge and differ by seed", metamer_criterion},
      {"analyze and synthesize are deterministic", determinism_criterion},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].first << " -- "
              << o.detail.str() << " (" << seconds_since(t0) << " s)" << std::endl;
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
