// Command-line front end: gen, pretrain, adapt, eval, report.
#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "stal3d/checkpoint.hpp"
#include "stal3d/config.hpp"
#include "stal3d/errors.hpp"
#include "stal3d/io.hpp"
#include "stal3d/pipeline.hpp"

namespace fs = std::filesystem;
using namespace stal3d;

namespace {

struct GenArgs {
  std::string spec, preset, out;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> target_seed;
  PairSizes sizes;
  unsigned threads = 0;
};

struct RunArgs {
  std::string config, source, target, out, init;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, rounds;
  std::string variant;  // empty: the config as written
};

struct EvalArgs {
  std::string checkpoint, data, config, out, split = "val";
};

struct ReportArgs {
  std::vector<std::string> evals;
  std::string source_only, oracle, table2, out;
};

RunConfig load_run_config(const RunArgs& a) {
  RunConfig c = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (!a.source.empty()) c.source_dir = a.source;
  if (!a.target.empty()) c.target_dir = a.target;
  if (!a.out.empty()) c.out_dir = a.out;
  if (a.seed) c.seed = *a.seed;
  c.validate();
  if (c.out_dir.empty()) throw ConfigError("no output directory (--out or out_dir)");
  return c;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

std::string signed_pct(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream os;
  os << std::showpos << std::fixed << std::setprecision(2) << *v << '%';
  return os.str();
}

void print_report(const std::string& title, const EvalReport& r) {
  std::cout << title << ": mAP_BEV " << fmt(r.map_bev) << "  mAP_3D " << fmt(r.map_3d) << '\n';
  for (const auto& c : r.classes) {
    std::cout << "  " << std::left << std::setw(12) << c.name << " AP_BEV " << fmt(c.ap_bev)
              << "  AP_3D " << fmt(c.ap_3d) << "  (gt " << c.num_gt << ", det " << c.num_det << ")\n";
  }
}

int cmd_gen(const GenArgs& a) {
  DomainSpec src, tgt;
  PairSizes sizes = a.sizes;
  if (!a.preset.empty()) {
    std::tie(src, tgt) = preset_pair(a.preset);
  } else {
    const auto j = read_json_file(a.spec);
    try {
      if (j.contains("preset")) {
        std::tie(src, tgt) = preset_pair(j.at("preset").get<std::string>());
      } else {
        src = j.at("source").get<DomainSpec>();
        tgt = j.at("target").get<DomainSpec>();
      }
      if (j.contains("sizes")) {
        const auto& s = j.at("sizes");
        sizes.source_train = s.value("source_train", sizes.source_train);
        sizes.source_val = s.value("source_val", sizes.source_val);
        sizes.target_train = s.value("target_train", sizes.target_train);
        sizes.target_val = s.value("target_val", sizes.target_val);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(a.spec + ": " + e.what());
    }
  }
  src.validate();
  tgt.validate();
  const std::uint64_t tseed = a.target_seed.value_or(a.seed);
  const DomainPair pair = make_domain_pair(src, tgt, sizes, a.seed, tseed, a.threads);
  pair.source.save(fs::path(a.out) / "source");
  pair.target.save(fs::path(a.out) / "target");
  std::cout << "wrote " << pair.source.size() << " source and " << pair.target.size()
            << " target scenes to " << a.out << '\n';
  return 0;
}

int cmd_pretrain(const RunArgs& a) {
  RunConfig c = load_run_config(a);
  if (a.epochs) c.pretrain_epochs = *a.epochs;
  if (c.source_dir.empty()) throw ConfigError("no source dataset (--source or source_dir)");
  const Dataset source = Dataset::load(c.source_dir);
  fs::create_directories(c.out_dir);
  write_json_file(c.out_dir / "config.json", c.to_json());
  std::ofstream log(c.out_dir / "pretrain_log.csv");
  const PretrainResult r = pretrain(source, c, &log);
  save_checkpoint(c.out_dir / "checkpoint.bin", r.params, nullptr, {{"detector", c.detector}});
  const auto val = source.indices("val");
  if (!val.empty()) {
    const EvalReport rep = evaluate(Detector(c.detector), r.params, source, val, c.eval, c.predict, c.threads);
    write_json_file(c.out_dir / "eval_source.json", rep.to_json(true));
    print_report("source val", rep);
  }
  std::cout << "checkpoint: " << (c.out_dir / "checkpoint.bin").string() << '\n';
  return 0;
}

int cmd_adapt(const RunArgs& a) {
  RunConfig c = load_run_config(a);
  if (!a.variant.empty()) c = apply_variant(c, parse_variant(a.variant));
  if (a.rounds) c.rounds = *a.rounds;
  if (a.epochs) c.adapt_epochs = *a.epochs;
  c.validate();
  if (a.init.empty()) throw ConfigError("adapt needs --init <pretrained checkpoint>");
  if (c.source_dir.empty() || c.target_dir.empty()) throw ConfigError("adapt needs source and target datasets");
  const Dataset source = Dataset::load(c.source_dir);
  Dataset target = Dataset::load(c.target_dir);
  target.hide_labels();

  const Checkpoint init = load_checkpoint(a.init);
  ParameterSet theta = Detector(c.detector).zero_params();
  assign_params(theta, init.params);

  fs::create_directories(c.out_dir);
  write_json_file(c.out_dir / "config.json", c.to_json());
  std::ofstream log(c.out_dir / "adapt_log.csv");
  const AdaptResult r = adapt(source, target, theta, c, &log);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';

  save_checkpoint(c.out_dir / "checkpoint.bin", r.params, nullptr, {{"detector", c.detector}});
  if (!r.disc_params.empty()) save_checkpoint(c.out_dir / "discriminator.bin", r.disc_params);
  r.bank.save(c.out_dir / "bank.json");
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& s : r.rounds) {
    nlohmann::json e = {{"round", s.round},
                        {"churn", s.stats.churn()},
                        {"bank_size", s.stats.bank_size},
                        {"replaced", s.stats.replaced},
                        {"added", s.stats.added},
                        {"buffered", s.stats.buffered},
                        {"evicted", s.stats.evicted},
                        {"empty_fraction", s.empty_fraction},
                        {"mean_loss", s.mean_loss}};
    if (s.eval) {
      e["eval"] = s.eval->to_json();
      print_report("round " + std::to_string(s.round) + " target val", *s.eval);
    }
    rounds.push_back(std::move(e));
  }
  write_json_file(c.out_dir / "rounds.json", rounds);
  if (!r.rounds.empty() && r.rounds.back().eval) {
    write_json_file(c.out_dir / "eval.json", r.rounds.back().eval->to_json(true));
  }
  std::cout << "checkpoint: " << (c.out_dir / "checkpoint.bin").string() << '\n';
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  RunConfig c = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  if (ck.meta.contains("detector")) c.detector = ck.meta.at("detector").get<DetectorConfig>();
  c.validate();
  ParameterSet params = Detector(c.detector).zero_params();
  assign_params(params, ck.params);
  const Dataset data = Dataset::load(a.data);
  const auto idx = data.indices(a.split);
  if (idx.empty()) throw ConfigError("split '" + a.split + "' is empty in " + a.data);
  const EvalReport rep = evaluate(Detector(c.detector), params, data, idx, c.eval, c.predict, c.threads);
  print_report(a.data + " [" + a.split + "]", rep);
  if (!a.out.empty()) write_json_file(a.out, rep.to_json(true));
  return 0;
}

void write_table2_report(const fs::path& csv, const fs::path& out) {
  std::ifstream in(csv);
  if (!in) throw ConfigError("cannot open " + csv.string());
  std::string line;
  std::getline(in, line);
  std::ofstream md(out / "closed_gap.md"), cs(out / "closed_gap.csv");
  md << "| task | method | class | metric | AP | source only | oracle | closed gap |\n"
     << "|---|---|---|---|---|---|---|---|\n";
  cs << "task,method,class,metric,model_ap,source_only_ap,oracle_ap,closed_gap\n";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    if (f.size() < 7) throw ConfigError(csv.string() + ": short row '" + line + "'");
    const double m = std::stod(f[4]), s = std::stod(f[5]), o = std::stod(f[6]);
    const auto gap = closed_gap(m, s, o);
    md << "| " << f[0] << " | " << f[1] << " | " << f[2] << " | " << f[3] << " | " << fmt(m) << " | "
       << fmt(s) << " | " << fmt(o) << " | " << signed_pct(gap) << " |\n";
    cs << f[0] << ',' << f[1] << ',' << f[2] << ',' << f[3] << ',' << f[4] << ',' << f[5] << ',' << f[6]
       << ',' << (gap ? fmt(*gap) : "") << '\n';
  }
}

int cmd_report(const ReportArgs& a) {
  const fs::path out = a.out;
  fs::create_directories(out);
  if (!a.table2.empty()) write_table2_report(a.table2, out);
  if (a.evals.empty()) return 0;

  std::vector<std::pair<std::string, EvalReport>> reports;
  for (const auto& e : a.evals) {
    const auto eq = e.find('=');
    if (eq == std::string::npos) throw ConfigError("--eval expects NAME=PATH, got '" + e + "'");
    reports.emplace_back(e.substr(0, eq), EvalReport::from_json(read_json_file(e.substr(eq + 1))));
  }
  auto find = [&](const std::string& name) -> const EvalReport* {
    for (const auto& [n, r] : reports) {
      if (n == name) return &r;
    }
    if (!name.empty()) throw ConfigError("report: no --eval named '" + name + "'");
    return nullptr;
  };
  const EvalReport* so = find(a.source_only);
  const EvalReport* oracle = find(a.oracle);

  std::ofstream md(out / "report.md"), cs(out / "report.csv");
  md << "| model | mAP_BEV | mAP_3D";
  cs << "model,class,ap_bev,ap_3d\n";
  const auto& classes = reports.front().second.classes;
  for (const auto& c : classes) md << " | " << c.name << " BEV | " << c.name << " 3D";
  if (so && oracle) md << " | closed gap BEV | closed gap 3D";
  md << " |\n|---|---|---";
  for (std::size_t i = 0; i < classes.size(); ++i) md << "|---|---";
  if (so && oracle) md << "|---|---";
  md << "|\n";
  for (const auto& [name, r] : reports) {
    md << "| " << name << " | " << fmt(r.map_bev) << " | " << fmt(r.map_3d);
    for (const auto& c : r.classes) {
      md << " | " << fmt(c.ap_bev) << " | " << fmt(c.ap_3d);
      cs << name << ',' << c.name << ',' << fmt(c.ap_bev) << ',' << fmt(c.ap_3d) << '\n';
    }
    cs << name << ",mean," << fmt(r.map_bev) << ',' << fmt(r.map_3d) << '\n';
    if (so && oracle) {
      md << " | " << signed_pct(closed_gap(r.map_bev, so->map_bev, oracle->map_bev)) << " | "
         << signed_pct(closed_gap(r.map_3d, so->map_3d, oracle->map_3d));
    }
    md << " |\n";
    for (const auto& c : r.classes) {
      for (const auto& [kind, curve] : {std::pair{"bev", &c.pr_bev}, std::pair{"3d", &c.pr_3d}}) {
        if (curve->recall.empty()) continue;
        fs::create_directories(out / "pr");
        std::ofstream pr(out / "pr" / (name + "_" + c.name + "_" + kind + ".csv"));
        pr << "rank,score,recall,precision\n";
        for (std::size_t i = 0; i < curve->recall.size(); ++i) {
          pr << i + 1 << ',' << format_double(curve->score[i]) << ',' << format_double(curve->recall[i])
             << ',' << format_double(curve->precision[i]) << '\n';
        }
      }
    }
  }
  std::cout << "report written to " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-domain 3D detection with self-training and adversarial learning"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a source/target dataset pair");
  auto* spec_opt = g->add_option("--spec", gen.spec, "Domain-pair JSON file");
  g->add_option("--preset", gen.preset, "control, size_shift, density_shift, rain, size_density")
      ->excludes(spec_opt);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Source seed (and target seed unless given)");
  g->add_option("--target-seed", gen.target_seed, "Target seed");
  g->add_option("--source-train", gen.sizes.source_train);
  g->add_option("--source-val", gen.sizes.source_val);
  g->add_option("--target-train", gen.sizes.target_train);
  g->add_option("--target-val", gen.sizes.target_val);
  g->add_option("--threads", gen.threads);

  RunArgs pre;
  auto* p = app.add_subcommand("pretrain", "Supervised source training with object scaling");
  p->add_option("--config", pre.config, "Run config JSON");
  p->add_option("--source", pre.source, "Source dataset directory");
  p->add_option("--out", pre.out, "Output directory");
  p->add_option("--seed", pre.seed);
  p->add_option("--epochs", pre.epochs);

  RunArgs ad;
  auto* d = app.add_subcommand("adapt", "Self-training with adversarial alignment");
  d->add_option("--config", ad.config, "Run config JSON");
  d->add_option("--init", ad.init, "Pretrained checkpoint")->required();
  d->add_option("--source", ad.source);
  d->add_option("--target", ad.target);
  d->add_option("--out", ad.out);
  d->add_option("--seed", ad.seed);
  d->add_option("--rounds", ad.rounds);
  d->add_option("--epochs", ad.epochs, "Epochs per round");
  d->add_option("--variant", ad.variant, "source_only, st, st_bsal or full; overrides routing and adversarial settings");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "AP_BEV / AP_3D at 40 recall positions");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--split", ev.split);
  e->add_option("--config", ev.config);
  e->add_option("--out", ev.out, "Report JSON");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Markdown/CSV tables, closed gap, PR curves");
  r->add_option("--eval", rep.evals, "NAME=eval.json (repeatable)");
  r->add_option("--source-only", rep.source_only, "Name of the source-only report");
  r->add_option("--oracle", rep.oracle, "Name of the oracle report");
  r->add_option("--table2", rep.table2, "CSV of AP triples to render closed gaps for");
  r->add_option("--out", rep.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*g) {
      if (gen.spec.empty() && gen.preset.empty()) throw ConfigError("gen needs --spec or --preset");
      return cmd_gen(gen);
    }
    if (*p) return cmd_pretrain(pre);
    if (*d) return cmd_adapt(ad);
    if (*e) return cmd_eval(ev);
    if (*r) return cmd_report(rep);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return 2;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << '\n';
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
