// tsw: command-line front end for task-vector extraction, discarding,
// binarization, merging, KNN routing and the synthetic benchmark.
//
// Exit codes: 0 success, 1 user error, 2 data error, 3 internal error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsw/bench.hpp"
#include "tsw/binarize.hpp"
#include "tsw/merge.hpp"
#include "tsw/ntc.hpp"
#include "tsw/pulse.hpp"
#include "tsw/router.hpp"
#include "tsw/taskvec.hpp"
#include "tsw/toymodel.hpp"
#include "tsw/tsw_format.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Globals {
  bool json_out = false;
  bool quiet = false;
  bool per_tensor = false;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

class Output {
 public:
  explicit Output(const Globals& g) : g_(g) {}

  json& data() { return data_; }

  void line(const std::string& text) {
    if (!g_.json_out && !g_.quiet) std::cout << text << '\n';
  }

  void flush() {
    if (g_.json_out) std::cout << data_.dump(2) << '\n';
  }

 private:
  const Globals& g_;
  json data_ = json::object();
};

tsw::Scope scope_of(const Globals& g) { return g.per_tensor ? tsw::Scope::kPerTensor : tsw::Scope::kGlobal; }

std::string fmt(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::vector<fs::path> expand_dir(const std::vector<std::string>& args, const std::string& ext) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    if (fs::is_directory(a)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(a)) {
        if (e.is_regular_file() && e.path().extension() == ext) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.emplace_back(a);
    }
  }
  return out;
}

std::vector<std::vector<float>> rows_of(const tsw::Tensor& x, const std::string& what) {
  tsw::require(x.shape.size() == 2, tsw::ErrorCode::kShapeMismatch, what + ": tensor 'x' must be [rows, d_in]");
  std::vector<std::vector<float>> rows(x.shape[0]);
  const auto d = x.shape[1];
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].assign(x.data.begin() + i * d, x.data.begin() + (i + 1) * d);
  return rows;
}

void report_set(Output& out, const tsw::NamedTensorSet& set, const fs::path& path) {
  out.data()["output"] = path.string();
  out.data()["tensors"] = set.size();
  out.data()["parameters"] = set.total_numel();
  out.data()["fingerprint"] = set.fingerprint().hex();
  out.line("wrote " + path.string() + " (" + std::to_string(set.size()) + " tensors, " +
           std::to_string(set.total_numel()) + " parameters)");
}

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  CLI::App app{"Binarized task-vector toolkit"};
  app.require_subcommand(1);
  app.add_flag("--json", g.json_out, "Emit one JSON object on stdout");
  app.add_flag("--quiet", g.quiet, "Suppress human-readable output");
  app.add_flag("--per-tensor", g.per_tensor, "Per-tensor discard scope and switch knobs");
  app.add_option("--seed", g.seed, "Root seed")->each([&](const std::string&) { g.seed_given = true; });

  Output out(g);
  std::function<void()> action;

  // extract
  std::string base_path, finetuned_path, out_path;
  auto* extract = app.add_subcommand("extract", "Task vector = finetuned - base");
  extract->add_option("--base", base_path)->required();
  extract->add_option("--finetuned", finetuned_path)->required();
  extract->add_option("-o,--output", out_path)->required();
  extract->callback([&] {
    action = [&] {
      auto tau = tsw::compute_task_vector(tsw::load_ntc(base_path), tsw::load_ntc(finetuned_path));
      tsw::save_ntc(tau, out_path);
      report_set(out, tau, out_path);
    };
  });

  // lowrank
  std::string down_path, up_path;
  float lowrank_scale = 1.0f;
  auto* lowrank = app.add_subcommand("lowrank", "Materialize scale * down . up per tensor name");
  lowrank->add_option("--down", down_path)->required();
  lowrank->add_option("--up", up_path)->required();
  lowrank->add_option("--scale", lowrank_scale)->required();
  lowrank->add_option("-o,--output", out_path)->required();
  lowrank->callback([&] {
    action = [&] {
      const auto down = tsw::load_ntc(down_path);
      const auto up = tsw::load_ntc(up_path);
      tsw::require(down.size() == up.size(), tsw::ErrorCode::kDimensionMismatch, "factor files list different tensors");
      tsw::NamedTensorSet tau;
      for (const auto& e : down.entries()) {
        const auto* u = up.find(e.name);
        tsw::require(u != nullptr, tsw::ErrorCode::kDimensionMismatch, "no up factor for '" + e.name + "'");
        tau.add(e.name, tsw::materialize_lowrank(e.tensor, *u, lowrank_scale));
      }
      tau.set_meta("kind", "task_vector");
      tsw::save_ntc(tau, out_path);
      report_set(out, tau, out_path);
    };
  });

  // discard
  std::string mode, in_path;
  double alpha = 0.0;
  auto* discard = app.add_subcommand("discard", "P-Discard, discard-high or DARE random discard");
  discard->add_option("--mode", mode)->required()->check(CLI::IsMember({"pulse", "high", "random"}));
  discard->add_option("--alpha", alpha)->required();
  discard->add_option("-i,--input", in_path)->required();
  discard->add_option("-o,--output", out_path)->required();
  discard->callback([&] {
    action = [&] {
      const auto tau = tsw::load_ntc(in_path);
      tsw::NamedTensorSet result;
      if (mode == "pulse") {
        result = tsw::p_discard(tau, alpha, scope_of(g));
      } else if (mode == "high") {
        result = tsw::discard_high(tau, alpha, scope_of(g));
      } else {
        result = tsw::dare_discard(tau, alpha, g.seed);
      }
      std::size_t zeros = 0;
      tsw::for_each_flat(result, [&](std::size_t, float v) { zeros += v == 0.0f; });
      tsw::save_ntc(result, out_path);
      report_set(out, result, out_path);
      out.data()["zeroed"] = zeros;
      out.data()["mode"] = mode;
      out.data()["alpha"] = alpha;
      out.line("zero entries: " + std::to_string(zeros));
    };
  });

  // binarize
  auto* binarize = app.add_subcommand("binarize", "Bin-Discard a task vector into a switch pack");
  binarize->add_option("--alpha", alpha)->required();
  binarize->add_option("-i,--input", in_path)->required();
  binarize->add_option("-o,--output", out_path)->required();
  binarize->callback([&] {
    action = [&] {
      const auto tau = tsw::load_ntc(in_path);
      auto result = tsw::bin_discard(tau, alpha, scope_of(g));
      tsw::encode_tsw(result.pack, out_path);
      const auto rep = tsw::storage_report(result.pack);
      out.data()["output"] = out_path;
      out.data()["active"] = result.pack.total_active();
      out.data()["parameters"] = rep.params;
      out.data()["bytes"] = rep.bytes_serialized;
      out.data()["bits_per_parameter"] = rep.bits_per_parameter;
      out.data()["knobs"] = result.pack.knobs;
      out.line("wrote " + out_path + ": " + std::to_string(result.pack.total_active()) + "/" +
               std::to_string(rep.params) + " active, " + fmt(rep.bits_per_parameter, 4) + " bits/param");
    };
  });

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Storage report and per-tensor sparsity of a switch pack");
  inspect->add_option("file", in_path)->required();
  inspect->callback([&] {
    action = [&] {
      const auto pack = tsw::decode_tsw(fs::path(in_path));
      const auto rep = tsw::storage_report(pack);
      auto& d = out.data();
      d["file"] = in_path;
      d["scope"] = std::string(tsw::to_string(pack.scope));
      d["alpha"] = pack.alpha;
      d["base_fingerprint"] = pack.base_fingerprint.hex();
      d["bytes_serialized"] = rep.bytes_serialized;
      d["parameters"] = rep.params;
      d["bits_per_parameter"] = rep.bits_per_parameter;
      d["ratio_vs_fp32"] = rep.ratio_vs_fp32;
      d["knobs"] = pack.knobs;
      d["tensors"] = json::array();
      out.line("scope " + std::string(tsw::to_string(pack.scope)) + ", alpha " + fmt(pack.alpha, 4) + ", base " +
               pack.base_fingerprint.hex());
      out.line("bytes " + std::to_string(rep.bytes_serialized) + ", parameters " + std::to_string(rep.params) +
               ", bits/param " + fmt(rep.bits_per_parameter, 4) + ", ratio vs fp32 " + fmt(rep.ratio_vs_fp32, 4));
      for (std::size_t t = 0; t < pack.tensors.size(); ++t) {
        const auto& st = pack.tensors[t];
        const double n = static_cast<double>(st.activation.size());
        const double active = n > 0 ? static_cast<double>(st.polarity.size()) / n : 0.0;
        d["tensors"].push_back({{"name", st.name},
                                {"parameters", st.activation.size()},
                                {"active", st.polarity.size()},
                                {"active_fraction", active},
                                {"knob", pack.knob_for(t)}});
        out.line("  " + st.name + ": " + std::to_string(st.polarity.size()) + "/" + std::to_string(st.activation.size()) +
                 " active (" + fmt(100.0 * active, 2) + "%), knob " + fmt(pack.knob_for(t), 6));
      }
    };
  });

  // merge
  std::string method;
  double coef = 0.3;
  std::vector<std::string> tau_paths;
  auto* merge = app.add_subcommand("merge", "Static merge of task vectors into the base");
  merge->add_option("--method", method)->required()->check(CLI::IsMember({"average", "arith", "direct"}));
  merge->add_option("--coef", coef, "Task arithmetic scaling coefficient");
  merge->add_option("--base", base_path)->required();
  merge->add_option("tau", tau_paths)->required();
  merge->add_option("-o,--output", out_path)->required();
  merge->callback([&] {
    action = [&] {
      const auto base = tsw::load_ntc(base_path);
      std::vector<tsw::NamedTensorSet> taus;
      for (const auto& p : tau_paths) taus.push_back(tsw::load_ntc(p));
      tsw::NamedTensorSet merged;
      if (method == "average") {
        merged = tsw::weight_average(base, taus);
      } else if (method == "arith") {
        merged = tsw::task_arithmetic(base, taus, coef);
      } else {
        merged = tsw::direct_merge(base, taus);
        out.data()["scale"] = tsw::direct_merge_scale(base, taus);
      }
      tsw::save_ntc(merged, out_path);
      report_set(out, merged, out_path);
    };
  });

  // apply
  std::vector<std::string> switch_paths;
  std::vector<double> weights;
  auto* apply = app.add_subcommand("apply", "Apply one switch, or several with routing weights");
  apply->add_option("--base", base_path)->required();
  apply->add_option("--switch", switch_paths)->required()->take_all();
  apply->add_option("-w,--weights", weights)->delimiter(',');
  apply->add_option("-o,--output", out_path)->required();
  apply->callback([&] {
    action = [&] {
      const auto base = tsw::load_ntc(base_path);
      std::vector<tsw::TaskSwitchPack> packs;
      for (const auto& p : switch_paths) packs.push_back(tsw::decode_tsw(fs::path(p)));
      tsw::NamedTensorSet merged;
      if (weights.empty()) {
        tsw::require(packs.size() == 1, tsw::ErrorCode::kInvalidArgument, "several switches need -w weights");
        merged = tsw::apply_switch(base, packs[0]);
      } else {
        std::vector<float> w(weights.begin(), weights.end());
        merged = tsw::apply_auto(base, packs, tsw::RouteWeights::from_floats(std::move(w)));
        out.data()["weights"] = weights;
      }
      tsw::save_ntc(merged, out_path);
      report_set(out, merged, out_path);
    };
  });

  // route
  auto* route = app.add_subcommand("route", "Query-set construction and KNN routing");
  route->require_subcommand(1);
  std::string backbone_path, examples_dir, index_path, inputs_path, metric_name = "euclidean";
  std::size_t per_task = 100, neighbors = 5;
  auto metric_of = [&] { return metric_name == "cosine" ? tsw::Metric::kCosine : tsw::Metric::kSquaredEuclidean; };

  auto* route_build = route->add_subcommand("build", "Build a query index from per-task example files");
  route_build->add_option("--backbone", backbone_path)->required();
  route_build->add_option("--examples", examples_dir, "Directory of per-task NTC files holding tensor x [m, d_in]")
      ->required();
  route_build->add_option("-n", per_task, "Examples kept per task");
  route_build->add_option("-o,--output", out_path)->required();
  route_build->callback([&] {
    action = [&] {
      const auto backbone = tsw::load_ntc(backbone_path);
      const tsw::toy::Network net(backbone);
      const auto files = expand_dir({examples_dir}, ".ntc");
      tsw::require(!files.empty(), tsw::ErrorCode::kInvalidArgument, "no .ntc example files in " + examples_dir);
      std::vector<std::vector<std::vector<float>>> examples;
      for (const auto& f : files) examples.push_back(rows_of(tsw::load_ntc(f).at("x"), f.string()));
      const auto index =
          tsw::build_query_index([&](std::span<const float> x) { return net.feature(x); }, examples, per_task);
      tsw::save_tqi(index, out_path);
      out.data()["output"] = out_path;
      out.data()["tasks"] = index.num_tasks;
      out.data()["dim"] = index.dim;
      out.data()["rows"] = index.rows.size();
      json task_files = json::array();
      for (const auto& f : files) task_files.push_back(f.filename().string());
      out.data()["task_files"] = task_files;
      out.line("wrote " + out_path + ": " + std::to_string(index.rows.size()) + " rows, " +
               std::to_string(index.num_tasks) + " tasks, dim " + std::to_string(index.dim));
    };
  });

  auto* route_apply = route->add_subcommand("apply", "Route inputs and write per-input merged outputs");
  route_apply->add_option("--base", base_path)->required();
  route_apply->add_option("--switches", switch_paths)->required()->take_all();
  route_apply->add_option("--index", index_path)->required();
  route_apply->add_option("-C,--neighbors", neighbors, "Neighbor count C");
  route_apply->add_option("--inputs", inputs_path)->required();
  route_apply->add_option("--backbone", backbone_path, "Feature backbone (default: direct merge of the switches)");
  route_apply->add_option("--metric", metric_name)->check(CLI::IsMember({"euclidean", "cosine"}));
  route_apply->add_option("-o,--output", out_path)->required();
  route_apply->callback([&] {
    action = [&] {
      const auto base = tsw::load_ntc(base_path);
      std::vector<tsw::TaskSwitchPack> packs;
      for (const auto& p : expand_dir(switch_paths, ".tsw")) packs.push_back(tsw::decode_tsw(p));
      const auto index = tsw::load_tqi(index_path);
      tsw::NamedTensorSet backbone;
      if (!backbone_path.empty()) {
        backbone = tsw::load_ntc(backbone_path);
      } else {
        std::vector<tsw::NamedTensorSet> deltas;
        for (const auto& p : packs) deltas.push_back(tsw::reconstruct(p));
        backbone = tsw::direct_merge(base, deltas);
      }
      const tsw::toy::Network backbone_net(backbone);
      const auto inputs = rows_of(tsw::load_ntc(inputs_path).at("x"), inputs_path);
      std::vector<std::vector<float>> features(inputs.size());
      tsw::parallel_for(inputs.size(), [&](std::size_t i) { features[i] = backbone_net.feature(inputs[i]); });

      tsw::MergeCache cache;
      const auto routes = tsw::route_and_apply(base, packs, index, features, neighbors, cache, metric_of());

      fs::create_directories(out_path);
      const auto keys = cache.keys();
      auto merge_id = [&](const std::vector<std::uint32_t>& k) {
        return static_cast<std::size_t>(std::lower_bound(keys.begin(), keys.end(), k) - keys.begin());
      };
      const auto spec = tsw::toy::spec_from_params(base);
      const std::size_t classes = spec.dims.back();
      std::vector<float> logits(inputs.size() * classes);
      tsw::parallel_for(inputs.size(), [&](std::size_t i) {
        const auto l = tsw::toy::Network(*routes.models[i], spec).logits(inputs[i]);
        std::copy(l.begin(), l.end(), logits.begin() + static_cast<std::ptrdiff_t>(i * classes));
      });

      std::ostringstream csv;
      csv << "input,merge_id";
      for (std::size_t t = 0; t < packs.size(); ++t) csv << ",count_" << t;
      for (std::size_t t = 0; t < packs.size(); ++t) csv << ",w_" << t;
      csv << ",prediction\n";
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        csv << i << ',' << merge_id(routes.weights[i].counts);
        for (auto c : routes.weights[i].counts) csv << ',' << c;
        for (auto w : routes.weights[i].w) csv << ',' << fmt(w);
        csv << ',' << tsw::toy::Network::argmax(std::span<const float>(logits.data() + i * classes, classes)) << '\n';
      }
      tsw::write_file_atomic(fs::path(out_path) / "routes.csv", csv.str());

      tsw::NamedTensorSet logit_set;
      logit_set.add("logits", {inputs.size(), classes}, std::move(logits));
      tsw::save_ntc(logit_set, fs::path(out_path) / "logits.ntc");
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto id = merge_id(routes.weights[i].counts);
        const auto path = fs::path(out_path) / ("merged_" + std::to_string(id) + ".ntc");
        if (!fs::exists(path)) tsw::save_ntc(*routes.models[i], path);
      }
      out.data()["output"] = out_path;
      out.data()["inputs"] = inputs.size();
      out.data()["distinct_merges"] = keys.size();
      out.line("routed " + std::to_string(inputs.size()) + " inputs through " + std::to_string(keys.size()) +
               " distinct merges into " + out_path);
    };
  });

  // bench
  std::string config_path;
  auto* bench = app.add_subcommand("bench", "Synthetic multi-task benchmark");
  bench->require_subcommand(1);
  auto load_config = [&] {
    auto cfg = config_path.empty() ? tsw::toy::BenchConfig{}
                                   : tsw::toy::parse_bench_config([&] {
                                       const auto bytes = tsw::read_file(config_path);
                                       return std::string(bytes.begin(), bytes.end());
                                     }());
    if (g.seed_given) cfg.seeds = {g.seed};
    if (g.per_tensor) cfg.scope = tsw::Scope::kPerTensor;
    return cfg;
  };
  auto bench_summary = [&](const tsw::toy::BenchReport& report, const std::string& experiment,
                           const std::vector<std::pair<std::string, double>>& cells) {
    json summary = json::object();
    for (const auto& [m, a] : cells) {
      const double v = report.mean(experiment, m, a);
      summary[m + "@" + fmt(a, 2)] = v;
      out.line("  " + m + " alpha=" + fmt(a, 2) + ": " + fmt(100.0 * v, 2) + "%");
    }
    out.data()["summary"] = summary;
    out.data()["rows"] = report.rows.size();
    out.data()["output"] = out_path;
  };
  for (const std::string which : {"controlled", "merge"}) {
    auto* sub = bench->add_subcommand(which, which == "controlled" ? "Discard/binarization study"
                                                                   : "Merging and routing study");
    sub->add_option("--config", config_path, "Key/value config file (defaults when omitted)");
    sub->add_option("-o,--output", out_path)->required();
    sub->callback([&, which] {
      action = [&, which] {
        const auto cfg = load_config();
        if (which == "controlled") {
          const auto report = tsw::toy::run_controlled(cfg);
          tsw::write_file_atomic(out_path, report.to_csv());
          out.line("wrote " + out_path);
          std::vector<std::pair<std::string, double>> cells;
          for (const char* m : {"finetuned", "p_discard", "discard_high", "dare", "bin_discard"}) {
            cells.emplace_back(m, cfg.alpha);
          }
          bench_summary(report, "controlled", cells);
        } else {
          const auto report = tsw::toy::run_merging_bench(cfg);
          tsw::write_file_atomic(out_path, report.to_csv());
          out.line("wrote " + out_path);
          std::vector<std::pair<std::string, double>> cells;
          for (const char* m : {"individual", "weight_average", "task_arithmetic", "direct", "t_switch", "auto_switch"}) {
            cells.emplace_back(m, cfg.alpha);
          }
          bench_summary(report, "merge", cells);
          const double routing = report.mean("merge", "auto_switch", cfg.alpha, "routing_accuracy");
          out.data()["routing_accuracy"] = routing;
          out.line("  routing accuracy: " + fmt(100.0 * routing, 2) + "%");
        }
      };
    });
    sub->fallthrough();
  }

  for (auto* sub : {extract, lowrank, discard, binarize, inspect, merge, apply, route, route_build, route_apply, bench}) {
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (action) action();
    out.flush();
    return 0;
  } catch (const tsw::Error& e) {
    std::cerr << "tsw: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "tsw: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "tsw: internal error: " << e.what() << '\n';
    return 3;
  }
}
