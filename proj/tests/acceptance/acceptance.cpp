// Copyright 2026 The lpkit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "lpkit/lpkit.hpp"
#include "oracles.hpp"

namespace {

using namespace lpkit;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

/// Exhaustive nearest-code search over a precomputed decode table.
class CodeTable {
 public:
  explicit CodeTable(const FloatFormat& f) {
    for (std::uint32_t c = 0; c < f.code_count(); ++c) {
      const double v = decode_float(c, f);
      if (std::isfinite(v)) entries_.push_back({c, v});
    }
  }
  [[nodiscard]] std::uint32_t nearest(double x) const {
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [c, v] : entries_) {
      if (v == 0.0 && std::signbit(v) != std::signbit(x)) continue;
      const double d = std::fabs(x - v);
      if (d < best_d || (d == best_d && (best & 1U) != 0U && (c & 1U) == 0U)) {
        best = c;
        best_d = d;
      }
    }
    return best;
  }

 private:
  std::vector<std::pair<std::uint32_t, double>> entries_;
};

Outcome criterion_codec() {
  std::ostringstream msg;
  std::size_t mismatches = 0;
  constexpr int kSamples = 100000;
  for (const FloatFormat* f : formats::all()) {
    for (std::uint32_t c = 0; c < f->code_count(); ++c) {
      const float v = decode_float(c, *f);
      const std::uint32_t back = encode_float(v, *f).bits;
      // NaN payloads collapse to the canonical NaN of the same sign.
      const bool ok = f->is_nan_code(c) ? (f->is_nan_code(back) && std::signbit(decode_float(back, *f)) == std::signbit(v))
                                        : back == c;
      mismatches += !ok;
    }
    const CodeTable table(*f);
    SplitMix64 rng(0xACCE55 + f->code_count() + static_cast<std::uint64_t>(f->bias));
    for (int i = 0; i < kSamples; ++i) {
      const float x = oracle::stress_value(*f, rng);
      mismatches += encode_float(x, *f).bits != table.nearest(x);
    }
  }
  for (std::uint32_t c = 0; c < 16; ++c) mismatches += nf4_encode(nf4_decode(c)) != c;
  SplitMix64 rng(0x4F4);
  for (int i = 0; i < kSamples; ++i) {
    const auto x = static_cast<float>(rng.uniform(-1.0, 1.0));
    mismatches += nf4_encode(x) != oracle::nearest_nf4(x);
  }
  msg << "7 formats, full code space + " << kSamples << " random reals each, mismatches=" << mismatches;
  return {mismatches == 0, msg.str()};
}

Outcome criterion_affine() {
  SplitMix64 rng(0xAFF1);
  std::size_t far_codes = 0;
  std::size_t bound_violations = 0;
  std::size_t checked = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t rows = 1 + rng.below(8);
    const std::size_t cols = 8 * (1 + rng.below(4));
    DenseTensor x = random_normal({rows, cols}, rng, std::exp(rng.uniform(-6.0, 6.0)));
    if (rng.below(4) == 0) {
      for (float& v : x.data()) v = std::fabs(v);  // one-sided ranges
    }
    const Granularity grans[] = {Granularity::per_tensor(), Granularity::per_axis(0), Granularity::per_axis(1),
                                 Granularity::per_group(8), Granularity::per_token()};
    for (const Granularity g : grans) {
      for (int bits : {4, 8}) {
        for (bool sym : {true, false}) {
          const AffineQParams qp = choose_qparams(x, g, bits, sym);
          const auto codes = quantize_affine(x, qp);
          const DenseTensor dq = dequantize_affine(codes, x.shape(), qp);
          const UnitLayout layout(x.shape(), g);
          for (std::size_t i = 0; i < x.numel(); ++i) {
            const std::size_t u = layout.unit_of(i);
            const std::int32_t bf =
                oracle::nearest_affine_code(x[i], qp.scales[u], qp.zero_points[u], qp.qmin, qp.qmax);
            far_codes += std::abs(codes[i] - bf) > 1;
            const double ulp = std::ldexp(1.0, std::max(std::ilogb(std::max(std::fabs(x[i]), std::fabs(dq[i]))), -149) - 23);
            bound_violations += std::fabs(double(x[i]) - double(dq[i])) > double(qp.scales[u]) / 2.0 + ulp;
            ++checked;
          }
        }
      }
    }
  }
  std::ostringstream msg;
  msg << "1000 tensors x 5 granularities x {4,8} bits x {sym,asym}, " << checked
      << " elements, codes >1 step from brute force=" << far_codes << ", |x-dq|>scale/2+ulp=" << bound_violations;
  return {far_codes == 0 && bound_violations == 0, msg.str()};
}

Outcome criterion_qat_ptq() {
  std::size_t mismatches = 0;
  for (int m = 0; m < 100; ++m) {
    SplitMix64 rng(0x9A7 + m);
    const std::size_t n = 32 * (1 + rng.below(3));
    const std::size_t k = 32 * (1 + rng.below(4));
    const ModuleGraph model = make_fixture(n, k, 1 + rng.below(3), 1000 + m);
    const DenseTensor x = random_normal({1 + rng.below(8), k}, rng);
    for (const QuantScheme& s : {QuantScheme::int8_dynamic_int4_weight(32), QuantScheme::int4_weight_only(32)}) {
      const DenseTensor ptq = quantize_graph(model, s).forward(x);
      const DenseTensor qat = convert_qat(prepare_qat(model, s), s).forward(x);
      mismatches += !qat.bit_equal(ptq);
    }
  }
  return {mismatches == 0, "100 fixture models x {8da4w-32, int4wo-32}, non-identical outputs=" +
                               std::to_string(mismatches)};
}

Outcome criterion_fp8() {
  std::size_t outlier_fail = 0;
  std::size_t gw_fail = 0;
  for (int t = 0; t < 100; ++t) {
    SplitMix64 rng(0xF8 + t);
    const std::size_t rows = 8 + rng.below(24);
    const std::size_t cols = 16 + rng.below(48);
    DenseTensor x = random_normal({rows, cols}, rng);
    const std::size_t outlier = rng.below(rows);
    const auto factor = static_cast<float>(std::exp(rng.uniform(std::log(1e4), std::log(1e6))));
    for (std::size_t c = 0; c < cols; ++c) x.at(outlier, c) *= factor;
    const DenseTensor tw = fp8_dequantize(cast_fp8_tensorwise(x, formats::e4m3()));
    const DenseTensor rw = fp8_dequantize(cast_fp8_rowwise(x, 0, formats::e4m3()));
    double e_tw = 0.0;
    double e_rw = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (r == outlier) continue;
      for (std::size_t c = 0; c < cols; ++c) {
        e_tw += std::pow(double(x.at(r, c)) - tw.at(r, c), 2);
        e_rw += std::pow(double(x.at(r, c)) - rw.at(r, c), 2);
      }
    }
    outlier_fail += !(e_rw < e_tw);

    const DenseTensor w = random_normal({4 + rng.below(12), cols}, rng);
    const DenseTensor go = random_normal({rows, w.dim(0)}, rng);
    const LinearGrads g = fp8_linear_backward(x, w, go, ScalingRecipe::kRowwiseGwHp);
    gw_fail += !g.grad_weight.bit_equal(gemm_ref(transpose(go), x));
  }
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    SplitMix64 rng(0x6C + t);
    DenseTensor relu_in = random_normal({5, 7}, rng);
    for (float& v : relu_in.data()) v = v >= 0.0F ? v + 0.1F : v - 0.1F;
    const double eps = 1e-2;
    worst = std::max(worst, grad_check(OpKind::kMatmul, {random_normal({4, 6}, rng), random_normal({6, 3}, rng)}, eps).max_rel_deviation);
    worst = std::max(worst, grad_check(OpKind::kAddBias, {random_normal({4, 6}, rng), random_normal({6}, rng)}, eps).max_rel_deviation);
    worst = std::max(worst, grad_check(OpKind::kRelu, {relu_in}, eps).max_rel_deviation);
    worst = std::max(worst, grad_check(OpKind::kMseLoss, {random_normal({4, 3}, rng), random_normal({4, 3}, rng)}, eps).max_rel_deviation);
    worst = std::max(worst, grad_check(OpKind::kFp8Linear, {random_normal({6, 8}, rng), random_normal({4, 8}, rng)}, eps).max_rel_deviation);
  }
  std::ostringstream msg;
  msg << "(a) outlier instances where rowwise MSE >= tensorwise: " << outlier_fail << "/100; (b) gw_hp grad_weight mismatches: "
      << gw_fail << "/100; (c) max relative grad-check deviation " << worst << " (limit 1e-4)";
  return {outlier_fail == 0 && gw_fail == 0 && worst <= 1e-4, msg.str()};
}

Outcome criterion_sparsity() {
  SplitMix64 rng(0x24);
  const DenseTensor w = random_normal({1000, 400}, rng);  // 10^5 groups
  const DenseTensor p = prune_2of4(w);
  std::size_t structural = 0;
  std::size_t suboptimal = 0;
  for (std::size_t g = 0; g < w.numel() / 4; ++g) {
    std::array<float, 4> grp{};
    double kept = 0.0;
    int nz = 0;
    for (int i = 0; i < 4; ++i) {
      grp[i] = w[g * 4 + i];
      const float v = p[g * 4 + i];
      nz += v != 0.0F;
      structural += v != 0.0F && v != grp[i];
      kept += double(v) * v;
    }
    structural += nz > 2;
    suboptimal += kept != oracle::best_2of4_kept_energy(grp);
  }
  const Sparse24Tensor s = compress_2of4(p);
  const bool lossless = decompress_2of4(s).bit_equal(p);
  std::size_t spmm_fail = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 4 + rng.below(60);
    const std::size_t k = 4 * (1 + rng.below(32));
    const Sparse24Tensor st = compress_2of4(prune_2of4(random_normal({n, k}, rng)));
    const DenseTensor x = random_normal({1 + rng.below(16), k}, rng);
    spmm_fail += !spmm_2of4(st, x).bit_equal(gemm_ref(x, transpose(decompress_2of4(st))));
  }
  std::ostringstream msg;
  msg << "100000 groups: structure violations=" << structural << ", non-optimal vs 6-pattern brute force="
      << suboptimal << ", compress/decompress lossless=" << (lossless ? "yes" : "no")
      << ", spmm mismatches=" << spmm_fail << "/20";
  return {structural == 0 && suboptimal == 0 && lossless && spmm_fail == 0, msg.str()};
}

Outcome criterion_qat_recovery() {
  std::vector<double> rec;
  int wins = 0;
  std::ostringstream per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const QatDemoResult r = run_qat_demo(seed, 2000, QuantScheme::int4_weight_only(32));
    rec.push_back(r.recovery());
    wins += r.qat_loss < r.ptq_loss;
    per_seed << " " << r.recovery();
  }
  std::vector<double> sorted = rec;
  std::sort(sorted.begin(), sorted.end());
  std::ostringstream msg;
  msg << "int4 group-32, 2000 steps, 5 seeds: recovery" << per_seed.str() << "; median " << sorted[2]
      << " (need >= 0.3), QAT < PTQ in " << wins << "/5 (need >= 4)";
  return {sorted[2] >= 0.3 && wins >= 4, msg.str()};
}

Outcome criterion_fp8_proximity() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Fp8DemoResult r = run_fp8_demo(seed, 2000);
    for (std::size_t i = 1; i < 4; ++i) {
      worst = std::max(worst, std::fabs(r.final_loss(i) - r.final_loss(0)) / r.final_loss(0));
    }
  }
  std::ostringstream msg;
  msg << "3 recipes x 5 seeds x 2000 steps, worst relative final-loss gap " << worst << " (limit 0.05)";
  return {worst <= 0.05, msg.str()};
}

struct Shell {
  int status = 0;
  std::string out;
};

Shell run_cli(const std::string& args) {
  const std::string cmd = std::string(LPKIT_CLI_PATH) + " " + args + " 2>&1";
  Shell r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (p == nullptr) return {-1, "popen failed"};
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof(buf), p)) > 0) r.out.append(buf, n);
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {(std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()};
}

Outcome criterion_compression(const fs::path& dir) {
  const std::size_t n = 64;
  const std::size_t k = 256;
  const std::string fixture = (dir / "fixture.aotn").string();
  const std::string q4 = (dir / "int4wo64.aotn").string();
  const std::string q8 = (dir / "int8wo.aotn").string();
  bool ok = run_cli("fixture --n 64 --k 256 --layers 1 --seed 8 --out " + fixture).status == 0;
  ok = ok && run_cli("quantize --in " + fixture + " --out " + q4 + " --scheme int4wo --group-size 64").status == 0;
  ok = ok && run_cli("quantize --in " + fixture + " --out " + q8 + " --scheme int8wo").status == 0;
  if (!ok) return {false, "CLI fixture/quantize failed"};
  const auto b4 = read_bytes(q4);
  const auto b8 = read_bytes(q8);
  const std::size_t want4 = n * k / 2 + 4 * n * k / 64;
  const std::size_t got4 = payload_bytes(b4);
  const auto& w8 = std::get<QuantizedTensor>(flatten_model(decode_container(b8)).at("fc0.weight"));
  const double ratio = double(4 * n * k) / double(w8.codes.size());
  const bool sizes = fs::file_size(q4) == container_size(header_bytes(b4), segment_lengths(b4)) &&
                     fs::file_size(q8) == container_size(header_bytes(b8), segment_lengths(b8)) &&
                     payload_bytes(b8) == n * k + 4 * n;
  std::ostringstream msg;
  msg << "int4wo-64 [" << n << "," << k << "] payload " << got4 << " bytes (formula " << want4
      << "); int8wo code ratio vs f32 " << ratio << "x (codes " << w8.codes.size() << " + scales " << 4 * n
      << " bytes); file sizes match layout formula: " << (sizes ? "yes" : "no");
  return {got4 == want4 && ratio == 4.0 && sizes, msg.str()};
}

Outcome criterion_determinism(const fs::path& dir) {
  auto csv = [&](const std::string& args, const std::string& name) {
    const fs::path p = dir / name;
    if (run_cli(args + " --out " + p.string()).status != 0) return std::string("<failed>");
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  const std::string q1 = csv("qat_demo --seed 3 --steps 2000", "q1.csv");
  const std::string q2 = csv("qat_demo --seed 3 --steps 2000", "q2.csv");
  const std::string q4 = csv("--threads 4 qat_demo --seed 3 --steps 2000", "q4.csv");
  const std::string f1 = csv("fp8_demo --seed 3 --steps 2000", "f1.csv");
  const std::string f2 = csv("fp8_demo --seed 3 --steps 2000", "f2.csv");
  const std::string f4 = csv("--threads 4 fp8_demo --seed 3 --steps 2000", "f4.csv");
  const bool ok = q1 != "<failed>" && f1 != "<failed>" && q1 == q2 && q1 == q4 && f1 == f2 && f1 == f4;
  std::ostringstream msg;
  msg << "qat_demo and fp8_demo, 2000 steps, repeated and --threads 1 vs 4: "
      << (ok ? "byte-identical" : "DIFFERENT") << " (" << q1.size() << " and " << f1.size() << " bytes)";
  return {ok, msg.str()};
}

}  // namespace

int main() {
  const fs::path dir = fs::temp_directory_path() / ("lpkit_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  struct Criterion {
    int id;
    std::string name;
    double limit_s;  // 0 = no runtime limit
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "codec exhaustiveness", 10, criterion_codec},
      {2, "affine quantization oracle", 60, criterion_affine},
      {3, "QAT/PTQ consistency", 0, criterion_qat_ptq},
      {4, "FP8 recipe properties", 60, criterion_fp8},
      {5, "2:4 sparsity suite", 30, criterion_sparsity},
      {6, "toy QAT recovery", 300, criterion_qat_recovery},
      {7, "toy FP8 loss proximity", 300, criterion_fp8_proximity},
      {8, "compression-ratio formula", 0, [&] { return criterion_compression(dir); }},
      {9, "determinism", 0, [&] { return criterion_determinism(dir); }},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs > c.limit_s) {
      o.pass = false;
      o.detail += "; runtime over limit";
    }
    failed += !o.pass;
    char timing[64];
    std::snprintf(timing, sizeof(timing), "%.1fs", secs);
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.name << " [" << timing
              << (c.limit_s > 0 ? " / limit " + std::to_string(static_cast<int>(c.limit_s)) + "s" : std::string())
              << "]: " << o.detail << std::endl;
  }
  fs::remove_all(dir);
  std::cout << (failed == 0 ? "ALL CRITERIA PASSED" : std::to_string(failed) + " CRITERIA FAILED") << std::endl;
  return failed == 0 ? 0 : 1;
}
