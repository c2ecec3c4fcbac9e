#include "logo/harness.hpp"

#include "logo/csv.hpp"
#include "logo/oracle.hpp"
#include "logo/stats.hpp"
#include "logo/verify.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace logo {

namespace fs = std::filesystem;
using ad::Matrix;

fs::path run_directory(const ExperimentConfig& config, std::uint64_t seed) {
  return config.output_root() / config.experiment / std::to_string(seed);
}

// ---------------------------------------------------------------- metrics

void write_metrics_csv(const fs::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << csv::row({"seed", "arm", "metric", "value"});
  for (const auto& r : rows) out << csv::row({std::to_string(r.seed), r.arm, r.metric, csv::num(r.value)});
}

std::vector<MetricRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto table = csv::parse(ss.str());
  if (table.empty() || table[0] != std::vector<std::string>{"seed", "arm", "metric", "value"})
    throw std::runtime_error("'" + path.string() + "' is not a metrics table");
  std::vector<MetricRow> rows;
  for (std::size_t k = 1; k < table.size(); ++k) {
    const auto& f = table[k];
    if (f.size() != 4) throw std::runtime_error("'" + path.string() + "' row " + std::to_string(k) + " is malformed");
    MetricRow r;
    r.seed = std::stoull(f[0]);
    r.arm = f[1];
    r.metric = f[2];
    r.value = std::stod(f[3]);
    rows.push_back(std::move(r));
  }
  return rows;
}

double metric_value(const std::vector<MetricRow>& rows, const std::string& arm, const std::string& metric) {
  for (const auto& r : rows)
    if (r.arm == arm && r.metric == metric) return r.value;
  throw std::out_of_range("no metric " + arm + "/" + metric);
}

// ---------------------------------------------------------------- pipeline pieces

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

void require_file(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifactError(path);
}

void say(std::ostream* progress, const std::string& line) {
  if (progress) *progress << line << std::endl;
}

Dataset collect_for(const ExperimentConfig& config, Provenance tier, std::uint64_t seed) {
  return collect(config.env, BehaviorSpec{tier}, config.episodes, derive_seed(seed, "dataset", static_cast<std::uint64_t>(tier)));
}

std::pair<Dataset, Dataset> split_for(const ExperimentConfig& config, const Dataset& data, std::uint64_t seed) {
  return split(data, config.val_fraction, derive_seed(seed, "split"));
}

WorldModelConfig wm_config(const ExperimentConfig& config, std::uint64_t seed) {
  WorldModelConfig c = config.wm;
  c.seed = seed;
  return c;
}

struct HeldOut {
  double mse = 0.0;
  double spearman = 0.0;
};

/// One-step MSE and rank correlation of u with the true next-state error.
HeldOut heldout_metrics(const WorldModel& model, const Dataset& val) {
  const TransitionBatch b = make_batch(val);
  const Prediction p = predict_next(model, model_input(b));
  const Matrix<float> diff = p.next_state - b.next_state;
  std::vector<double> u, err;
  for (Eigen::Index r = 0; r < diff.rows(); ++r) {
    u.push_back(p.uncertainty(r));
    err.push_back(diff.row(r).norm());
  }
  HeldOut h;
  h.mse = static_cast<double>(diff.squaredNorm()) / static_cast<double>(diff.size());
  h.spearman = stats::spearman(u, err);
  return h;
}

BatchActor actor_of(const PolicyBundle& bundle) {
  return [&bundle](const std::vector<Matrix<float>>& obs) { return bundle.act(obs); };
}

BatchActor zero_actor(const EnvSpec& spec) {
  return [spec](const std::vector<Matrix<float>>& obs) {
    std::vector<Matrix<float>> out;
    for (const auto& o : obs) out.push_back(Matrix<float>::Zero(o.rows(), spec.action_dim()));
    return out;
  };
}

EvalResult random_reference(const ExperimentConfig& config, std::uint64_t seed) {
  Rng rng(seed, "random-reference");
  return evaluate_actor(
      config.env,
      [&rng](const ParticleEnv& env, const EnvState&, const JointObservation& obs) {
        JointAction a;
        for (std::size_t i = 0; i < obs.size(); ++i) {
          Eigen::VectorXf v(env.spec().action_dim());
          for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = static_cast<float>(rng.uniform(-1.0, 1.0));
          a.push_back(v);
        }
        return a;
      },
      config.eval_episodes, derive_seed(seed, "eval"));
}

EvalResult expert_reference(const ExperimentConfig& config, std::uint64_t seed) {
  return evaluate_actor(
      config.env,
      [](const ParticleEnv& env, const EnvState& state, const JointObservation&) { return expert_action(env, state.s); },
      config.eval_episodes, derive_seed(seed, "eval"));
}

double normalized_score(double r, double random, double expert) {
  const double span = expert - random;
  return std::abs(span) < 1e-12 ? 0.0 : (r - random) / span;
}

}  // namespace

// ---------------------------------------------------------------- ablation

std::vector<MetricRow> run_ablation_seed(const ExperimentConfig& config, std::uint64_t seed, const fs::path& dir,
                                         std::ostream* progress) {
  config.validate();
  fs::create_directories(dir);
  write_text(dir / files::kResolvedConfig, config.to_text());
  std::vector<MetricRow> rows;
  auto record = [&](const std::string& arm, const std::string& metric, double v) {
    rows.push_back({seed, arm, metric, v});
  };
  const std::string tag = "[seed " + std::to_string(seed) + "] ";
  std::vector<MetricRow> timings;
  auto clock_start = std::chrono::steady_clock::now();
  auto lap = [&](const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    timings.push_back({seed, stage, "seconds", std::chrono::duration<double>(now - clock_start).count()});
    clock_start = now;
  };

  const Dataset data = collect_for(config, config.tier, seed);
  save_dataset(data, dir / files::kDataset);
  const auto [train, val] = split_for(config, data, seed);
  say(progress, tag + "collected " + std::to_string(data.size()) + " transitions");
  lap("collect");

  const WorldModelTrainResult wm = train_world_model(train, val, wm_config(config, seed));
  wm.model.save(dir / files::kWorldModel);
  write_world_log_csv(dir / files::kWorldLog, wm.log);
  const HeldOut held = heldout_metrics(wm.model, val);
  record("world_model", "heldout_mse", held.mse);
  record("world_model", "spearman_u_error", held.spearman);
  record("world_model", "clip_constant", wm.clip_constant);
  record("world_model", "inference_params", static_cast<double>(wm.model.layout().inference_parameter_count()));
  say(progress, tag + "world model heldout_mse=" + csv::num(held.mse) + " spearman=" + csv::num(held.spearman));
  lap("world_model");

  const int width = direct_width_for_budget(config.env, wm.model.layout().inference_parameter_count());
  std::optional<DirectBaselineResult> direct;
  if (config.ablation.direct_state) {
    direct.emplace(direct_state_baseline(train, val, wm_config(config, seed), width, derive_seed(seed, "direct")));
    record("direct", "heldout_mse", direct->heldout_mse);
    record("direct", "width", width);
    record("direct", "inference_params", static_cast<double>(direct->model.layout().inference_parameter_count()));
    say(progress, tag + "direct baseline heldout_mse=" + csv::num(direct->heldout_mse));
    lap("direct");
  }

  if (config.ablation.ensemble_k > 0) {
    WorldModelConfig ec = wm_config(config, seed);
    ec.steps = config.ablation.ensemble_steps;
    const Ensemble ensemble =
        ensemble_baseline(train, val, ec, width, config.ablation.ensemble_k, derive_seed(seed, "ensemble"));
    const TimingWorkload w = make_timing_workload(val, config.ablation.timing_trajectories, config.ablation.timing_steps,
                                                  derive_seed(seed, "timing"));
    const TimingResult tl = time_median([&] { run_logo_workload(wm.model, w); }, config.ablation.timing_repetitions);
    const TimingResult te = time_median([&] { run_ensemble_workload(ensemble, w); }, config.ablation.timing_repetitions);
    record("timing", "logo_seconds", tl.median);
    record("timing", "ensemble_seconds", te.median);
    record("timing", "ratio", te.median > 0.0 ? tl.median / te.median : 0.0);
    say(progress, tag + "timing logo=" + csv::num(tl.median) + "s ensemble=" + csv::num(te.median) + "s");
    lap("timing");
  }

  if (direct) {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < std::min<std::size_t>(val.size(), static_cast<std::size_t>(config.ablation.pca_points)); ++k)
      idx.push_back(k);
    const TransitionBatch b = make_batch(val, idx);
    const Prediction p = predict_next(wm.model, model_input(b));
    const Matrix<float> d = direct->model.predict(b.state, b.actions);
    const Eigen::Index n = b.rows();
    Matrix<double> points(3 * n, b.next_state.cols());
    points << b.next_state.cast<double>(), p.next_state.cast<double>(), d.cast<double>();
    std::vector<std::string> labels;
    for (const char* l : {"true", "logo", "direct"}) labels.insert(labels.end(), static_cast<std::size_t>(n), l);
    write_pca_csv(dir / files::kPca, pca_project(points, 2), labels);
  }

  const EvalResult random = random_reference(config, seed);
  const EvalResult expert = expert_reference(config, seed);
  record("random", "return_mean", random.mean_return);
  record("expert", "return_mean", expert.mean_return);
  lap("references");

  auto run_arm = [&](const std::string& arm, const Dataset& arm_data, const WorldModel* model, double clip,
                     SynthMode synth, int horizon, bool mpc) {
    PolicyConfig pc = config.resolved_policy(seed, clip);
    pc.synth = synth;
    pc.mpc = mpc;
    pc.rollout.horizon = horizon;
    const PolicyTrainResult r = train_policy(arm_data, model, pc);
    r.bundle.save(dir / ("policy_" + arm + ".logo"));
    write_policy_log_csv(dir / ("policy_log_" + arm + ".csv"), r.log);
    const EvalResult e = evaluate(r.bundle, config.eval_episodes, derive_seed(seed, "eval"));
    write_eval_csv(dir / ("eval_" + arm + ".csv"), seed, e);
    record(arm, "return_mean", e.mean_return);
    record(arm, "normalized_score", normalized_score(e.mean_return, random.mean_return, expert.mean_return));
    say(progress, tag + arm + " return=" + csv::num(e.mean_return));
    lap(arm);
    return e.mean_return;
  };

  const int base_h = config.rollout.horizon;
  run_arm("macql", data, nullptr, wm.clip_constant, SynthMode::Off, base_h, false);
  run_arm("logo", data, &wm.model, wm.clip_constant, SynthMode::Weighted, base_h, false);
  run_arm("logo_rp", data, &wm.model, wm.clip_constant, SynthMode::RewardPenalty, base_h, false);
  for (int h : config.ablation.horizons) {
    const std::string arm = "logo_h" + std::to_string(h);
    if (h == base_h) {
      record(arm, "return_mean", metric_value(rows, "logo", "return_mean"));
      record(arm, "normalized_score", metric_value(rows, "logo", "normalized_score"));
    } else {
      run_arm(arm, data, &wm.model, wm.clip_constant, SynthMode::Weighted, h, false);
    }
  }

  for (Provenance tier : config.ablation.mpc_tiers) {
    if (tier == config.tier) {
      run_arm("macql_mpc", data, &wm.model, wm.clip_constant, SynthMode::Off, base_h, true);
      continue;
    }
    const std::string suffix = "_" + to_string(tier);
    const Dataset tdata = collect_for(config, tier, seed);
    const auto [ttrain, tval] = split_for(config, tdata, seed);
    const WorldModelTrainResult twm = train_world_model(ttrain, tval, wm_config(config, seed));
    lap("world_model" + suffix);
    run_arm("macql" + suffix, tdata, nullptr, twm.clip_constant, SynthMode::Off, base_h, false);
    run_arm("macql_mpc" + suffix, tdata, &twm.model, twm.clip_constant, SynthMode::Off, base_h, true);
  }

  write_metrics_csv(dir / "metrics_ablation.csv", rows);
  write_metrics_csv(dir / files::kTimings, timings);
  return rows;
}

// ---------------------------------------------------------------- report

namespace {

const char* const kMetricFiles[] = {"metrics_wm.csv", "metrics_eval.csv", "metrics_ablation.csv"};

bool parse_seed(const std::string& name, std::uint64_t& seed) {
  auto [p, ec] = std::from_chars(name.data(), name.data() + name.size(), seed);
  return ec == std::errc() && p == name.data() + name.size() && !name.empty();
}

std::string seed_list(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t k = 0; k < seeds.size(); ++k) out += (k ? ";" : "") + std::to_string(seeds[k]);
  return out;
}

}  // namespace

std::vector<ReportEntry> build_report(const fs::path& experiment_dir) {
  if (!fs::is_directory(experiment_dir)) throw MissingArtifactError(experiment_dir);
  std::set<std::uint64_t> seeds;
  for (const auto& entry : fs::directory_iterator(experiment_dir)) {
    std::uint64_t s = 0;
    if (entry.is_directory() && parse_seed(entry.path().filename().string(), s)) seeds.insert(s);
  }
  // (arm, metric) -> seed -> value; later files win within a seed.
  std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, double>> values;
  for (std::uint64_t s : seeds) {
    const fs::path dir = experiment_dir / std::to_string(s);
    for (const char* name : kMetricFiles) {
      if (!fs::exists(dir / name)) continue;
      for (const auto& r : read_metrics_csv(dir / name)) values[{r.arm, r.metric}][s] = r.value;
    }
  }
  std::vector<ReportEntry> out;
  for (const auto& [key, by_seed] : values) {
    ReportEntry e;
    e.arm = key.first;
    e.metric = key.second;
    std::vector<double> xs;
    for (std::uint64_t s : seeds) {
      auto it = by_seed.find(s);
      if (it == by_seed.end()) {
        e.missing.push_back(s);
      } else {
        e.seeds.push_back(s);
        xs.push_back(it->second);
      }
    }
    e.mean = stats::mean(xs);
    e.ci95 = stats::ci95(xs);
    out.push_back(std::move(e));
  }
  return out;
}

std::string report_csv(const std::vector<ReportEntry>& entries) {
  std::string out = csv::row({"arm", "metric", "n", "mean", "ci95", "seeds", "missing"});
  for (const auto& e : entries)
    out += csv::row({e.arm, e.metric, std::to_string(e.seeds.size()), csv::num(e.mean), csv::num(e.ci95),
                     seed_list(e.seeds), seed_list(e.missing)});
  return out;
}

std::string report_text(const std::vector<ReportEntry>& entries) {
  std::ostringstream out;
  auto line = [&](const ReportEntry& e) {
    out << "  " << e.arm << " " << e.metric << ": " << csv::num(e.mean) << " +- " << csv::num(e.ci95) << " (n="
        << e.seeds.size();
    if (!e.missing.empty()) out << ", missing seeds " << seed_list(e.missing);
    out << ")\n";
  };
  auto section = [&](const std::string& title, const std::function<bool(const ReportEntry&)>& keep) {
    bool any = false;
    for (const auto& e : entries) {
      if (!keep(e)) continue;
      if (!any) out << title << "\n";
      any = true;
      line(e);
    }
    if (any) out << "\n";
  };
  section("Returns (mean +- 95% CI over seeds)",
          [](const ReportEntry& e) { return e.metric == "return_mean" && e.arm.rfind("logo_h", 0) != 0; });
  section("Normalized scores",
          [](const ReportEntry& e) { return e.metric == "normalized_score" && e.arm.rfind("logo_h", 0) != 0; });
  section("Horizon sweep", [](const ReportEntry& e) { return e.arm.rfind("logo_h", 0) == 0; });
  section("World model", [](const ReportEntry& e) { return e.arm == "world_model" || e.arm == "direct"; });
  section("Timing", [](const ReportEntry& e) { return e.arm == "timing"; });
  return out.str();
}

// ---------------------------------------------------------------- commands

namespace {

struct CommandError : std::runtime_error {
  CommandError(int c, std::string f, const std::string& m) : std::runtime_error(m), code(c), field(std::move(f)) {}
  int code;
  std::string field;
};

std::uint64_t single_seed(const ExperimentConfig& c) { return c.seeds.front(); }

void write_resolved(const ExperimentConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / files::kResolvedConfig, config.to_text());
}

int cmd_collect(const ExperimentConfig& config, std::ostream& out) {
  for (std::uint64_t seed : config.seeds) {
    const fs::path dir = run_directory(config, seed);
    write_resolved(config, dir);
    const Dataset d = collect_for(config, config.tier, seed);
    save_dataset(d, dir / files::kDataset);
    out << "collected " << d.size() << " transitions -> " << (dir / files::kDataset).string() << "\n";
  }
  return 0;
}

Dataset load_run_dataset(const ExperimentConfig& config, const fs::path& dir) {
  require_file(dir / files::kDataset);
  return load_dataset_for_training(dir / files::kDataset, config.env);
}

int cmd_train_wm(const ExperimentConfig& config, std::ostream& out) {
  for (std::uint64_t seed : config.seeds) {
    const fs::path dir = run_directory(config, seed);
    const Dataset data = load_run_dataset(config, dir);
    write_resolved(config, dir);
    const auto [train, val] = split_for(config, data, seed);
    const WorldModelTrainResult r = train_world_model(train, val, wm_config(config, seed));
    r.model.save(dir / files::kWorldModel);
    write_world_log_csv(dir / files::kWorldLog, r.log);
    const HeldOut h = heldout_metrics(r.model, val);
    write_metrics_csv(dir / "metrics_wm.csv", {{seed, "world_model", "heldout_mse", h.mse},
                                               {seed, "world_model", "spearman_u_error", h.spearman},
                                               {seed, "world_model", "clip_constant", r.clip_constant}});
    out << "seed " << seed << " heldout_mse=" << csv::num(h.mse) << " C=" << csv::num(r.clip_constant) << "\n";
  }
  return 0;
}

int cmd_rollout(const ExperimentConfig& config, std::ostream& out) {
  for (std::uint64_t seed : config.seeds) {
    const fs::path dir = run_directory(config, seed);
    const Dataset data = load_run_dataset(config, dir);
    require_file(dir / files::kWorldModel);
    write_resolved(config, dir);
    const WorldModel model = WorldModel::load(dir / files::kWorldModel);
    RolloutConfig rc = config.rollout;
    if (rc.clip_constant <= 0.0) rc.clip_constant = calibrate_C(model, split_for(config, data, seed).second).clip_constant;
    std::optional<PolicyBundle> bundle;
    if (fs::exists(dir / files::kPolicy)) bundle.emplace(PolicyBundle::load(dir / files::kPolicy));
    const SyntheticBuffer buffer = generate_rollouts(model, bundle ? actor_of(*bundle) : zero_actor(config.env), data, rc,
                                                     derive_seed(seed, "rollout-command"));
    save_dataset(buffer_to_dataset(buffer), dir / files::kSynthetic);
    out << "seed " << seed << " generated " << buffer.size() << " synthetic transitions\n";
  }
  return 0;
}

int cmd_train_policy(const ExperimentConfig& config, std::ostream& out) {
  const bool needs_model = !config.ablation.disable_buffer || config.ablation.mpc;
  for (std::uint64_t seed : config.seeds) {
    const fs::path dir = run_directory(config, seed);
    const Dataset data = load_run_dataset(config, dir);
    std::optional<WorldModel> model;
    double c = config.rollout.clip_constant;
    if (needs_model) {
      require_file(dir / files::kWorldModel);
      model.emplace(WorldModel::load(dir / files::kWorldModel));
      if (c <= 0.0) c = calibrate_C(*model, split_for(config, data, seed).second).clip_constant;
    }
    write_resolved(config, dir);
    const PolicyTrainResult r = train_policy(data, model ? &*model : nullptr, config.resolved_policy(seed, c));
    r.bundle.save(dir / files::kPolicy);
    write_policy_log_csv(dir / files::kPolicyLog, r.log);
    out << "seed " << seed << " trained policy -> " << (dir / files::kPolicy).string() << "\n";
  }
  return 0;
}

int cmd_evaluate(const ExperimentConfig& config, std::ostream& out) {
  for (std::uint64_t seed : config.seeds) {
    const fs::path dir = run_directory(config, seed);
    require_file(dir / files::kPolicy);
    write_resolved(config, dir);
    const PolicyBundle bundle = PolicyBundle::load(dir / files::kPolicy);
    const EvalResult e = evaluate(bundle, config.eval_episodes, derive_seed(seed, "eval"));
    write_eval_csv(dir / files::kEval, seed, e);
    write_metrics_csv(dir / "metrics_eval.csv", {{seed, "policy", "return_mean", e.mean_return}});
    out << "seed " << seed << " mean return " << csv::num(e.mean_return) << "\n";
  }
  return 0;
}

int cmd_ablate(const ExperimentConfig& config, std::ostream& out) {
  for (std::uint64_t seed : config.seeds) run_ablation_seed(config, seed, run_directory(config, seed), &out);
  return 0;
}

int cmd_verify(const ExperimentConfig& config, std::ostream& out) {
  bool ok = true;
  for (const auto& line : run_verify(single_seed(config))) {
    out << format_check(line) << "\n";
    ok = ok && line.pass;
  }
  return ok ? 0 : 1;
}

int cmd_report(const ExperimentConfig& config, std::ostream& out) {
  const fs::path dir = config.output_root() / config.experiment;
  const auto entries = build_report(dir);
  const std::string text = report_text(entries);
  write_text(dir / files::kReportCsv, report_csv(entries));
  write_text(dir / files::kReportText, text);
  out << text;
  return 0;
}

const std::map<std::string, int (*)(const ExperimentConfig&, std::ostream&)>& commands() {
  static const std::map<std::string, int (*)(const ExperimentConfig&, std::ostream&)> table = {
      {"collect", cmd_collect},   {"train-wm", cmd_train_wm}, {"rollout", cmd_rollout}, {"train-policy", cmd_train_policy},
      {"evaluate", cmd_evaluate}, {"ablate", cmd_ablate},     {"verify", cmd_verify},   {"report", cmd_report}};
  return table;
}

const std::map<std::string, std::string>& aliases() {
  static const std::map<std::string, std::string> table = {{"tier", "data.tier"},
                                                           {"episodes", "data.episodes"},
                                                           {"seed", "run.seeds"},
                                                           {"seeds", "run.seeds"},
                                                           {"out", "run.out"},
                                                           {"experiment", "run.experiment"}};
  return table;
}

ExperimentConfig parse_arguments(const std::vector<std::string>& args, std::string& command, std::ostream& out,
                                 bool& help_only) {
  CLI::App app{"LOGO: local-to-global world models for offline multi-agent RL", "logo"};
  app.allow_extras();
  std::string config_path;
  app.add_option("command", command, "collect | train-wm | rollout | train-policy | evaluate | ablate | verify | report");
  app.add_option("--config", config_path, "key = value configuration file");
  std::map<std::string, std::string> given;
  for (const auto& k : config_schema()) app.add_option("--" + k.key, given[k.key], k.doc);
  std::map<std::string, std::string> via_alias;
  for (const auto& [flag, key] : aliases()) app.add_option("--" + flag, via_alias[flag], "shorthand for --" + key);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    help_only = true;
    return {};
  } catch (const CLI::ParseError& e) {
    throw CommandError(2, "argv", e.what());
  }
  for (const auto& extra : app.remaining())
    throw CommandError(2, extra, (extra.rfind("-", 0) == 0 ? "unknown flag " : "unexpected argument ") + extra);
  if (command.empty()) throw CommandError(2, "command", "a subcommand is required");
  if (!commands().count(command)) throw CommandError(2, "command", "unknown subcommand " + command);

  ExperimentConfig config;
  if (!config_path.empty()) config = load_config(config_path);
  for (const auto& k : config_schema())
    if (app.count("--" + k.key)) config.set(k.key, given[k.key]);
  for (const auto& [flag, key] : aliases())
    if (app.count("--" + flag)) config.set(key, via_alias[flag]);
  config.validate();
  return config;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto fail = [&](int code, const std::string& field, const std::string& message) {
    err << "error code=" << code << " field=" << field << " message=\"" << message << "\"\n";
    return code;
  };
  try {
    std::string command;
    bool help_only = false;
    const ExperimentConfig config = parse_arguments(args, command, out, help_only);
    if (help_only) return 0;
    return commands().at(command)(config, out);
  } catch (const CommandError& e) {
    return fail(e.code, e.field, e.what());
  } catch (const ConfigError& e) {
    return fail(2, e.field(), e.what());
  } catch (const MissingArtifactError& e) {
    return fail(3, e.path().filename().string(), e.what());
  } catch (const EnvMismatchError& e) {
    return fail(2, "env", e.what());
  } catch (const std::exception& e) {
    return fail(1, "runtime", e.what());
  }
}

}  // namespace logo
