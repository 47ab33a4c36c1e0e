#pragma once

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlnood/mlnood.hpp"

namespace mlnood::cli {

namespace fs = std::filesystem;

// Exit-code contract.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataError = 2;
inline constexpr int kNumericalError = 3;

struct RunConfig {
  std::string schema, constraints, weights, data, train, val, out, config, scores, dist, seeds;
  std::string constraints_out, weights_out, dist_out, diagnostics, decisions;
  std::string family = "gev";
  double delta_min = 0.01;
  std::size_t epochs = 10;
  double lr = 0.01;
  double init_weight = -1.0;
  std::uint64_t seed = 0;
  std::uint64_t space_cap = kDefaultSpaceCap;
  bool explain = false;
  bool fused = false;
  std::optional<double> threshold;
  std::optional<double> baseline;
  std::size_t depth = 2;
  std::vector<std::string> connectives{"->"};
  std::vector<std::string> concepts;
  bool value_atoms = false;

  FitConfig fit_config() const {
    FitConfig f;
    f.max_epochs = epochs;
    f.learning_rate = lr;
    f.init_weight = init_weight;
    f.space_cap = space_cap;
    return f;
  }
};

namespace detail {

inline std::shared_ptr<const Schema> schema_from(const RunConfig& rc) {
  return std::make_shared<const Schema>(load_schema(rc.schema));
}

inline std::string scores_csv(const Dataset& data, std::span<const double> scores) {
  std::string out = "__id,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i)
    out += io::csv_escape(data.id(i)) + ',' + io::format_double(scores[i]) + '\n';
  return out;
}

// Loads a model from --weights, checking it against --constraints when given.
inline MlnModel model_from(const RunConfig& rc, const std::shared_ptr<const Schema>& schema) {
  auto model = load_weights(rc.weights, schema);
  if (!rc.constraints.empty()) {
    const auto kb = load_knowledge_base(rc.constraints, schema);
    if (kb.size() != model.size()) throw DataError("weights file and constraint file list different constraints");
    for (std::size_t i = 0; i < kb.size(); ++i)
      if (!(kb[i].ast() == model.constraints()[i].ast()))
        throw DataError("constraint " + std::to_string(i) + " differs between weights and constraint file");
  }
  return model;
}

inline fs::path sibling(const fs::path& out, const std::string& suffix) {
  auto p = out;
  p.replace_extension(suffix);
  return p;
}

inline std::vector<double> read_scores(const fs::path& path, const Dataset& data) {
  const auto table = io::parse_csv(io::read_file(path));
  if (table.empty() || table[0].size() != 2 || table[0][0] != "__id" || table[0][1] != "score")
    throw DataError("scores file must have header __id,score");
  std::unordered_map<std::string, double> by_id;
  for (std::size_t r = 1; r < table.size(); ++r) {
    if (table[r].size() == 1 && table[r][0].empty()) continue;
    if (table[r].size() != 2) throw DataError("scores line " + std::to_string(r + 1) + ": expected 2 fields");
    char* end = nullptr;
    const auto& cell = table[r][1];
    const double v = std::strtod(cell.c_str(), &end);
    if (cell.empty() || end != cell.c_str() + cell.size())
      throw DataError("scores line " + std::to_string(r + 1) + ": bad score '" + cell + "'");
    if (!by_id.emplace(table[r][0], v).second) throw DataError("scores: duplicate id '" + table[r][0] + "'");
  }
  if (by_id.size() != data.rows())
    throw DataError("scores file has " + std::to_string(by_id.size()) + " rows, dataset has " +
                    std::to_string(data.rows()));
  std::vector<double> out(data.rows());
  for (std::size_t i = 0; i < data.rows(); ++i) {
    auto it = by_id.find(data.id(i));
    if (it == by_id.end()) throw DataError("scores: no score for id '" + data.id(i) + "'");
    out[i] = it->second;
  }
  return out;
}

inline NodeKind connective_from(const std::string& s) {
  if (s == "->" || s == "implies") return NodeKind::Implies;
  if (s == "and") return NodeKind::And;
  if (s == "or") return NodeKind::Or;
  if (s == "xor") return NodeKind::Xor;
  throw DataError("unknown connective '" + s + "'");
}

}  // namespace detail

inline int cmd_compile(const RunConfig& rc, std::ostream& out, std::ostream& log) {
  auto schema = detail::schema_from(rc);
  const auto lines = split_constraint_lines(io::read_file(rc.constraints));
  if (lines.empty()) {
    log << "warning: empty knowledge base\n";
    return kOk;
  }
  std::optional<std::string> first_error;
  std::size_t ok = 0;
  for (const auto& line : lines) {
    try {
      const auto c = compile_line(line, schema, ok);
      out << "ok    line " << line.line << ": " << c.text() << '\n';
      ++ok;
    } catch (const ConstraintFileError& e) {
      out << "error " << e.what() << '\n';
      if (!first_error) first_error = e.what();
    }
  }
  if (first_error) {
    log << "error: " << *first_error << '\n';
    return kUsage;
  }
  log << "compiled " << ok << " constraints\n";
  return kOk;
}

inline int cmd_fit(const RunConfig& rc, std::ostream&, std::ostream& log) {
  auto schema = detail::schema_from(rc);
  auto kb = load_knowledge_base(rc.constraints, schema);
  auto train = load_dataset(rc.train, schema);
  if (train.has_ood_flags()) {
    train = train.select_class(false);
    log << "fitting on " << train.rows() << " ID rows\n";
  }
  const auto cfg = rc.fit_config();
  FitResult fit = [&] {
    try {
      return fit_weights(MlnModel::uniform(schema, std::move(kb), cfg.init_weight), train, cfg);
    } catch (const CapacityError& e) {
      throw CapacityError(std::string("semantic space too large for exact NLL: ") + e.what());
    }
  }();
  for (const auto& e : fit.trace) {
    log << "epoch " << e.epoch << " iterations " << e.iterations << " nll " << io::format_double(e.nll)
        << " weights [";
    for (std::size_t i = 0; i < e.weights.size(); ++i) log << (i ? ", " : "") << io::format_double(e.weights[i]);
    log << "]\n";
  }
  log << "initial nll " << io::format_double(fit.initial_nll()) << ", final nll " << io::format_double(fit.final_nll())
      << ", epochs used " << fit.epochs_used << (fit.converged ? " (converged)" : "") << '\n';
  io::write_file_atomic(rc.out, weights_to_json(fit.model));
  return kOk;
}

inline int cmd_score(const RunConfig& rc, std::ostream&, std::ostream& log) {
  auto schema = detail::schema_from(rc);
  const auto model = detail::model_from(rc, schema);
  const auto data = load_dataset(rc.data, schema);
  const auto scores = score_batch(model, data);
  io::write_file_atomic(rc.out, detail::scores_csv(data, scores));
  if (rc.explain) {
    auto arr = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < data.rows(); ++i) arr.push_back(explanation_to_json(explain(model, data.row(i)), data.id(i)));
    io::write_file_atomic(detail::sibling(rc.out, ".explain.json"), arr.dump(2) + "\n");
  }
  log << "scored " << data.rows() << " rows against " << model.size() << " constraints\n";
  return kOk;
}

inline int cmd_fuse(const RunConfig& rc, std::ostream&, std::ostream& log) {
  auto schema = detail::schema_from(rc);
  const auto model = detail::model_from(rc, schema);
  const auto data = load_dataset(rc.data, schema);

  std::optional<ScoreDistribution> dist;
  std::vector<double> id_scores;
  if (!rc.dist.empty()) {
    dist = ScoreDistribution::parse(io::read_file(rc.dist));
  } else {
    const Family family = parse_family(rc.family);
    if (family == Family::None) {
      dist = ScoreDistribution::none();
    } else {
      if (rc.train.empty()) throw DataError("fuse: --train (ID rows with detector scores) or --dist is required");
      auto train = load_dataset(rc.train, schema);
      if (train.has_ood_flags()) train = train.select_class(false);
      const auto s = train.detector_scores();
      id_scores.assign(s.begin(), s.end());
      dist = fit_distribution(id_scores, family);
    }
  }
  log << "normalization: " << dist->to_json().dump() << '\n';
  if (!rc.dist_out.empty()) io::write_file_atomic(rc.dist_out, dist->to_json().dump(2) + "\n");
  if (!rc.diagnostics.empty()) {
    if (id_scores.empty()) throw DataError("fuse: --diagnostics needs --train detector scores");
    const auto diag = fit_diagnostics(*dist, id_scores);
    io::write_file_atomic(rc.diagnostics + ".json", diag.summary_json().dump(2) + "\n");
    io::write_file_atomic(rc.diagnostics + ".csv", diag.histogram_csv());
  }

  const FusedScorer scorer(model, *dist, rc.threshold);
  const auto fused = fuse_batch(scorer, data);
  io::write_file_atomic(rc.out, detail::scores_csv(data, fused));
  if (rc.explain) {
    auto arr = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < data.rows(); ++i) {
      auto j = explanation_to_json(explain(model, data.row(i)), data.id(i));
      j["normalized_detector_score"] = normalized_detector_score(*dist, data.detector_score(i));
      j["fused_score"] = fused[i];
      arr.push_back(std::move(j));
    }
    io::write_file_atomic(detail::sibling(rc.out, ".explain.json"), arr.dump(2) + "\n");
  }
  if (rc.threshold) {
    const auto flags = threshold(fused, *rc.threshold);
    std::string csv = "__id,outlier\n";
    for (std::size_t i = 0; i < flags.size(); ++i) csv += io::csv_escape(data.id(i)) + (flags[i] ? ",1\n" : ",0\n");
    const fs::path path = rc.decisions.empty() ? detail::sibling(rc.out, ".decisions.csv") : fs::path(rc.decisions);
    io::write_file_atomic(path, csv);
  }
  log << "fused " << data.rows() << " rows\n";
  return kOk;
}

inline int cmd_eval(const RunConfig& rc, std::ostream& out, std::ostream&) {
  auto schema = detail::schema_from(rc);
  const auto data = load_dataset(rc.data, schema);
  const auto scores = detail::read_scores(rc.scores, data);
  const auto result = evaluate(data, scores);
  const auto text = result.to_json().dump(2) + "\n";
  if (rc.out.empty()) out << text;
  else io::write_file_atomic(rc.out, text);
  return kOk;
}

inline int cmd_search(const RunConfig& rc, std::ostream&, std::ostream& log) {
  auto schema = detail::schema_from(rc);
  const auto train = load_dataset(rc.train, schema);
  const auto val = load_dataset(rc.val, schema);

  GeneratorConfig gen;
  gen.max_depth = rc.depth;
  gen.connectives.clear();
  for (const auto& c : rc.connectives) gen.connectives.push_back(detail::connective_from(c));
  gen.concepts = rc.concepts;
  gen.value_atoms = rc.value_atoms;
  const auto pool = generate_candidates(schema, gen);

  SearchConfig cfg;
  cfg.delta_min = rc.delta_min;
  cfg.baseline = rc.baseline;
  cfg.fit = rc.fit_config();
  if (!rc.seeds.empty())
    for (const auto& c : load_knowledge_base(rc.seeds, schema)) cfg.seeds.push_back(c.ast());
  if (rc.fused) {
    auto id_rows = train.has_ood_flags() ? train.select_class(false) : train;
    const auto s = id_rows.detector_scores();
    cfg.evaluate_fused = true;
    cfg.distribution = fit_distribution(std::vector<double>(s.begin(), s.end()), parse_family(rc.family));
  }
  log << "searching " << pool.size() << " candidates, delta_min " << io::format_double(rc.delta_min) << '\n';
  const auto res = greedy_search(train, val, pool, cfg);
  for (const auto& a : res.audit)
    if (a.accepted) log << "accepted [" << a.index << "] " << a.candidate << " auroc " << io::format_double(*a.auroc) << '\n';
  log << "baseline J " << io::format_double(res.baseline_j) << ", final J " << io::format_double(res.final_j) << ", "
      << res.constraints.size() << " constraints\n";

  io::write_file_atomic(rc.out, res.to_json().dump(2) + "\n");
  const fs::path kb_path = rc.constraints_out.empty() ? detail::sibling(rc.out, ".constraints.txt") : fs::path(rc.constraints_out);
  io::write_file_atomic(kb_path, res.constraint_file());
  if (!rc.weights_out.empty()) {
    std::vector<CompiledConstraint> kb;
    for (std::size_t i = 0; i < res.constraints.size(); ++i) kb.push_back(compile(res.constraints[i], schema, i));
    io::write_file_atomic(rc.weights_out, weights_to_json(MlnModel(schema, std::move(kb), res.weights)));
  }
  return kOk;
}

inline int cmd_synth(const RunConfig& rc, const CLI::App& app, std::ostream&, std::ostream& log) {
  auto spec = parse_synth_spec(io::read_file(rc.config));
  if (app.count("--seed")) spec.seed = rc.seed;
  const fs::path dir = rc.out;
  fs::create_directories(dir);
  io::write_file_atomic(dir / "schema.json", spec.schema->to_json().dump(2) + "\n");
  io::write_file_atomic(dir / "constraints.txt", knowledge_base_text(spec.ground_truth.constraints()));
  io::write_file_atomic(dir / "weights.json", weights_to_json(spec.ground_truth));
  io::write_file_atomic(dir / "train.csv", generate_split(spec, 0, false).to_csv());
  io::write_file_atomic(dir / "val.csv", generate_split(spec, 1, true).to_csv());
  io::write_file_atomic(dir / "test.csv", generate_split(spec, 2, true).to_csv());
  log << "wrote synthetic benchmark to " << dir.string() << " (seed " << spec.seed << ")\n";
  return kOk;
}

// Parses argv and dispatches. Never throws; returns the exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& log = std::cerr) {
  CLI::App app{"Semantic out-of-distribution scoring with weighted logical constraints"};
  app.require_subcommand(1);
  RunConfig rc;

  auto add_fit = [&rc](CLI::App* sub) {
    sub->add_option("--epochs", rc.epochs, "Optimizer epochs")->check(CLI::PositiveNumber);
    sub->add_option("--lr", rc.lr, "Learning rate (length of the first optimizer step)")->check(CLI::PositiveNumber);
    sub->add_option("--init-weight", rc.init_weight, "Initial constraint weight");
    sub->add_option("--space-cap", rc.space_cap, "Maximum semantic space size for exact computation")
        ->check(CLI::PositiveNumber);
  };

  auto* compile_cmd = app.add_subcommand("compile", "Parse and compile a constraint file");
  compile_cmd->add_option("--schema", rc.schema)->required()->check(CLI::ExistingFile);
  compile_cmd->add_option("--constraints", rc.constraints)->required()->check(CLI::ExistingFile);

  auto* fit_cmd = app.add_subcommand("fit", "Fit constraint weights by maximum likelihood");
  fit_cmd->add_option("--schema", rc.schema)->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--constraints", rc.constraints)->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--train", rc.train)->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--out", rc.out, "Weights JSON")->required();
  add_fit(fit_cmd);

  auto* score_cmd = app.add_subcommand("score", "Standalone MLN outlier scores");
  score_cmd->add_option("--schema", rc.schema)->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--weights", rc.weights)->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--constraints", rc.constraints)->check(CLI::ExistingFile);
  score_cmd->add_option("--data", rc.data)->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--out", rc.out, "Scores CSV")->required();
  score_cmd->add_flag("--explain", rc.explain, "Also write <out>.explain.json");

  auto* fuse_cmd = app.add_subcommand("fuse", "MLN score multiplied by the normalized detector score");
  fuse_cmd->add_option("--schema", rc.schema)->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--weights", rc.weights)->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--constraints", rc.constraints)->check(CLI::ExistingFile);
  fuse_cmd->add_option("--data", rc.data)->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--train", rc.train, "ID rows whose detector scores fit the normalization")
      ->check(CLI::ExistingFile);
  fuse_cmd->add_option("--dist", rc.dist, "Pre-fitted distribution JSON")->check(CLI::ExistingFile);
  fuse_cmd->add_option("--family", rc.family)
      ->check(CLI::IsMember({"gev", "uniform", "normal", "gennorm", "generalized_normal", "lognormal", "none"}));
  fuse_cmd->add_option("--out", rc.out, "Fused scores CSV")->required();
  fuse_cmd->add_option("--dist-out", rc.dist_out, "Write the fitted distribution JSON");
  fuse_cmd->add_option("--diagnostics", rc.diagnostics, "Write <prefix>.json and <prefix>.csv fit diagnostics");
  fuse_cmd->add_option("--threshold", rc.threshold, "Outlier threshold tau (score >= tau)");
  fuse_cmd->add_option("--decisions", rc.decisions, "Threshold decisions CSV");
  fuse_cmd->add_flag("--explain", rc.explain, "Also write <out>.explain.json");

  auto* eval_cmd = app.add_subcommand("eval", "AUROC, AUPR-ID, AUPR-OOD and FPR95");
  eval_cmd->add_option("--schema", rc.schema)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", rc.data, "Dataset with __is_ood")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--scores", rc.scores, "Scores CSV (__id,score)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", rc.out, "Result JSON (default: standard output)");

  auto* search_cmd = app.add_subcommand("search", "Greedy constraint set search");
  search_cmd->add_option("--schema", rc.schema)->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--train", rc.train)->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--val", rc.val)->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--out", rc.out, "Search report JSON")->required();
  search_cmd->add_option("--constraints-out", rc.constraints_out, "Accepted constraint file");
  search_cmd->add_option("--weights-out", rc.weights_out, "Weights of the accepted set");
  search_cmd->add_option("--seeds", rc.seeds, "Initial constraint file")->check(CLI::ExistingFile);
  search_cmd->add_option("--delta-min", rc.delta_min, "Acceptance margin")->check(CLI::NonNegativeNumber);
  search_cmd->add_option("--baseline", rc.baseline, "Baseline J0 (default: AUROC of the seed set)");
  search_cmd->add_option("--depth", rc.depth, "Maximum tree depth (1-3)")->check(CLI::Range(1, 3));
  search_cmd->add_option("--connectives", rc.connectives, "Connectives: -> and or xor");
  search_cmd->add_option("--concepts", rc.concepts, "Concept subset");
  search_cmd->add_flag("--value-atoms", rc.value_atoms, "Use concept=value atoms for non-binary concepts");
  search_cmd->add_flag("--fused", rc.fused, "Evaluate the fused detector instead of the standalone score");
  search_cmd->add_option("--family", rc.family)
      ->check(CLI::IsMember({"gev", "uniform", "normal", "gennorm", "generalized_normal", "lognormal", "none"}));
  add_fit(search_cmd);

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic benchmark");
  synth_cmd->add_option("--config", rc.config, "Synthetic spec JSON")->required()->check(CLI::ExistingFile);
  synth_cmd->add_option("--out", rc.out, "Output directory")->required();
  synth_cmd->add_option("--seed", rc.seed, "Overrides the config seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, log);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*compile_cmd) return cmd_compile(rc, out, log);
    if (*fit_cmd) return cmd_fit(rc, out, log);
    if (*score_cmd) return cmd_score(rc, out, log);
    if (*fuse_cmd) return cmd_fuse(rc, out, log);
    if (*eval_cmd) return cmd_eval(rc, out, log);
    if (*search_cmd) return cmd_search(rc, out, log);
    if (*synth_cmd) return cmd_synth(rc, *synth_cmd, out, log);
  } catch (const NumericalError& e) {
    log << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    log << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace mlnood::cli
