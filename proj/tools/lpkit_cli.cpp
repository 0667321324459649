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

// lpkit_cli: quantize, sparsify and compare model files; run the toy demos.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lpkit/lpkit.hpp"

namespace {

using namespace lpkit;

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// Shortest decimal that round-trips the double.
std::string exact(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw IoError("write to '" + path + "' failed");
}

std::size_t artifact_bytes(const Artifact& a) {
  return std::visit(
      [](const auto& t) -> std::size_t {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, DenseTensor>) return 4 * t.numel();
        else if constexpr (std::is_same_v<T, QuantizedTensor>) {
          return t.codes.size() + 4 * t.qparams.scales.size() + (t.qparams.symmetric ? 0 : 4 * t.qparams.zero_points.size());
        } else if constexpr (std::is_same_v<T, Sparse24Tensor>) return 4 * t.values.size() + t.meta.size();
        else if constexpr (std::is_same_v<T, MxBlockTensor>) return t.scale_codes.size() + t.elem_codes.size();
        else return t.mask.size() + 4 * t.payload.size();
      },
      a);
}

/// Per-tensor report lines: name,sqnr_db,bytes_before,bytes_after.
void report_conversion(const ArtifactMap& before, const ArtifactMap& after) {
  std::cout << "tensor,sqnr_db,bytes_before,bytes_after\n";
  std::size_t total_before = 0;
  std::size_t total_after = 0;
  for (const auto& [name, a] : after) {
    const Artifact& b = before.at(name);
    const std::size_t nb = artifact_bytes(b);
    const std::size_t na = artifact_bytes(a);
    total_before += nb;
    total_after += na;
    std::cout << name << ',' << num(error_stats(materialize(b), materialize(a)).sqnr_db()) << ',' << nb << ','
              << na << '\n';
  }
  const double ratio = total_after == 0 ? 0.0 : double(total_before) / double(total_after);
  std::cout << "# size " << total_before << " -> " << total_after << " bytes (" << num(ratio) << "x)\n";
}

void cmd_quantize(const std::string& in, const std::string& out, const std::string& scheme_name,
                  std::optional<std::size_t> group) {
  const QuantScheme scheme = QuantScheme::parse(scheme_name, group);
  const ModelFile model = load_model(in);
  ModelFile result;
  for (const auto& [name, a] : model.tensors) {
    const auto* d = std::get_if<DenseTensor>(&a);
    if (d != nullptr && d->rank() == 2) {
      result.tensors.emplace(name, quantize_weight(*d, scheme, name));
    } else {
      result.tensors.emplace(name, a);
    }
  }
  if (model.graph) result.graph = quantize_graph(*model.graph, scheme);
  save_model(result, out);
  report_conversion(flatten_model(model), flatten_model(result));
}

void cmd_sparsify(const std::string& in, const std::string& out, const std::string& pattern,
                  std::size_t block_size, double keep) {
  if (pattern != "2of4" && pattern != "block") {
    throw ConfigError("unknown sparsity pattern '" + pattern + "' (expected 2of4 or block)");
  }
  const ArtifactMap before = flatten_model(load_model(in));
  ArtifactMap after;
  for (const auto& [name, a] : before) {
    const auto* d = std::get_if<DenseTensor>(&a);
    if (d == nullptr || d->rank() != 2) {
      after.emplace(name, a);
      continue;
    }
    try {
      if (pattern == "2of4") {
        after.emplace(name, compress_2of4(prune_2of4(*d)));
      } else {
        after.emplace(name, block_sparsify(*d, block_size, keep));
      }
    } catch (const Error& e) {
      throw ConfigError("tensor '" + name + "': " + e.what());
    }
  }
  save_model(ModelFile{after, std::nullopt}, out);
  report_conversion(before, after);
}

void cmd_eval(const std::string& ref_path, const std::string& test_path) {
  const ArtifactMap ref = flatten_model(load_model(ref_path));
  const ArtifactMap test = flatten_model(load_model(test_path));
  std::cout << "name,mse,max_abs,sqnr_db\n";
  ErrorStats total;
  for (const auto& [name, a] : ref) {
    const auto it = test.find(name);
    if (it == test.end()) throw ConfigError("tensor '" + name + "' is missing from " + test_path);
    const DenseTensor r = materialize(a);
    const DenseTensor t = materialize(it->second);
    if (r.shape() != t.shape()) {
      throw ShapeError("tensor '" + name + "' has shape " + shape_str(r.shape()) + " in the reference but " +
                       shape_str(t.shape()) + " in the test file");
    }
    const ErrorStats s = error_stats(r, t);
    total.add(s);
    std::cout << name << ',' << num(s.mse()) << ',' << num(s.max_abs) << ',' << num(s.sqnr_db()) << '\n';
  }
  for (const auto& [name, a] : test) {
    if (!ref.contains(name)) throw ConfigError("tensor '" + name + "' is missing from " + ref_path);
  }
  std::cout << "ALL," << num(total.mse()) << ',' << num(total.max_abs) << ',' << num(total.sqnr_db()) << '\n';
}

void cmd_golden(const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const FloatFormat* f : formats::all()) {
    std::string text = "code,decoded_value\n";
    for (std::uint32_t c = 0; c < f->code_count(); ++c) {
      const float v = decode_float(c, *f);
      text += std::to_string(c) + "," + (std::isnan(v) ? (std::signbit(v) ? "-nan" : "nan") : exact(v)) + "\n";
    }
    write_text(dir + "/" + f->name + ".csv", text);
  }
  std::string text = "code,decoded_value\n";
  for (std::uint32_t c = 0; c < 16; ++c) text += std::to_string(c) + "," + exact(nf4_decode(c)) + "\n";
  write_text(dir + "/NF4.csv", text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lpkit: low-precision quantization, sparsity and FP8 toolkit"};
  app.require_subcommand(1);
  unsigned threads = 1;
  app.add_option("--threads", threads, "Worker threads for GEMMs (results do not depend on it)")
      ->check(CLI::Range(1U, 256U));

  std::string in;
  std::string out;
  std::string scheme = "Int4WeightOnly";
  std::optional<std::size_t> group;
  auto* quantize = app.add_subcommand("quantize", "Quantize every 2-D weight of a model file");
  quantize->add_option("--in", in, "Input model file")->required();
  quantize->add_option("--out", out, "Output model file")->required();
  quantize->add_option("--scheme", scheme, "Scheme name, e.g. int4wo, Int8WeightOnly, 8da4w");
  quantize->add_option("--group-size", group, "Group (or NF4 block) size");

  std::string pattern = "2of4";
  std::size_t block_size = 4;
  double keep = 0.5;
  auto* sparsify = app.add_subcommand("sparsify", "Sparsify every 2-D weight of a model file");
  sparsify->add_option("--in", in, "Input model file")->required();
  sparsify->add_option("--out", out, "Output model file")->required();
  sparsify->add_option("--pattern", pattern, "2of4 or block");
  sparsify->add_option("--block-size", block_size, "Block edge for --pattern block");
  sparsify->add_option("--keep", keep, "Fraction of blocks kept for --pattern block");

  std::string ref;
  std::string test;
  auto* eval = app.add_subcommand("eval", "Per-tensor MSE, max-abs error and SQNR as CSV");
  eval->add_option("--ref", ref, "Reference model file")->required();
  eval->add_option("--test", test, "Model file to compare")->required();

  std::uint64_t seed = 0;
  std::size_t steps = 2000;
  std::string qat_scheme = "Int4WeightOnly(32)";
  auto* qat = app.add_subcommand("qat_demo", "Toy QAT vs PTQ run; per-step CSV");
  qat->add_option("--seed", seed);
  qat->add_option("--steps", steps);
  qat->add_option("--scheme", qat_scheme, "Int4WeightOnly(32), 8da4w, ...");
  qat->add_option("--group-size", group);
  qat->add_option("--out", out, "CSV path (stdout when omitted)");

  std::string recipe = "all";
  auto* fp8 = app.add_subcommand("fp8_demo", "Toy FP8 training under each scaling recipe; per-step CSV");
  fp8->add_option("--recipe", recipe, "all, none, tensorwise, rowwise or rowwise_gw_hp");
  fp8->add_option("--seed", seed);
  fp8->add_option("--steps", steps);
  fp8->add_option("--out", out, "CSV path (stdout when omitted)");

  std::size_t n = 64;
  std::size_t k = 256;
  std::size_t layers = 1;
  auto* fixture = app.add_subcommand("fixture", "Write a random bias-free MLP model file");
  fixture->add_option("--n", n);
  fixture->add_option("--k", k);
  fixture->add_option("--layers", layers);
  fixture->add_option("--seed", seed);
  fixture->add_option("--out", out)->required();

  std::string golden_dir;
  auto* golden = app.add_subcommand("golden", "Write code,decoded_value tables for every format");
  golden->add_option("--out", golden_dir, "Directory")->required();

  CLI11_PARSE(app, argc, argv);
  set_num_threads(threads);
  try {
    if (*quantize) {
      cmd_quantize(in, out, scheme, group);
    } else if (*sparsify) {
      cmd_sparsify(in, out, pattern, block_size, keep);
    } else if (*eval) {
      cmd_eval(ref, test);
    } else if (*qat) {
      write_text(out, run_qat_demo(seed, steps, QuantScheme::parse(qat_scheme, group)).csv);
    } else if (*fp8) {
      if (recipe != "all" && recipe != "none") parse_recipe(recipe);
      write_text(out, run_fp8_demo(seed, steps, recipe).csv);
    } else if (*fixture) {
      save_model(ModelFile{{}, make_fixture(n, k, layers, seed)}, out);
    } else if (*golden) {
      cmd_golden(golden_dir);
    }
  } catch (const lpkit::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
