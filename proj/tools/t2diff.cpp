// Command-line front end: data preparation, training, evaluation, ablation
// grids, gradient checking, and schedule inspection. Exit codes are a stable
// contract: 0 success, 2 input error, 3 numerical failure, 4 format error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "t2diff/ablate.hpp"
#include "t2diff/checkpoint.hpp"
#include "t2diff/config.hpp"
#include "t2diff/data.hpp"
#include "t2diff/dataset_io.hpp"
#include "t2diff/evaluate.hpp"
#include "t2diff/grad_check.hpp"
#include "t2diff/report.hpp"
#include "t2diff/train.hpp"

namespace {

namespace fs = std::filesystem;
using namespace t2diff;

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitFormat = 4;

std::vector<int> parse_k_list(const std::string& arg) {
  std::vector<int> ks;
  std::size_t pos = 0;
  while (pos <= arg.size()) {
    const std::size_t comma = std::min(arg.find(',', pos), arg.size());
    const std::string tok = arg.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      const int k = std::stoi(tok, &used);
      if (used != tok.size() || k < 1) throw std::invalid_argument(tok);
      ks.push_back(k);
    } catch (const std::exception&) {
      throw config_error("--k: '" + tok + "' is not a positive integer");
    }
    pos = comma + 1;
  }
  return ks;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open config '" + path + "'");
  TrainConfig cfg = parse_config(in);
  apply_env_overrides(cfg);
  return cfg;
}

void print_report(const EvalReport& rep) {
  std::cout.precision(6);
  for (int k : rep.ks) std::cout << "recall@" << k << " = " << rep.recall.at(k) << "\n";
  for (int k : rep.ks) std::cout << "mrr@" << k << " = " << rep.mrr.at(k) << "\n";
  std::cout << "test users = " << rep.test_users << "\n"
            << "parameters = " << rep.param_count << "\n";
  if (rep.median_ms > 0) std::cout << "median inference ms = " << rep.median_ms << "\n";
}

int cmd_prepare(const std::string& dataset, const std::string& input, const std::string& out,
                std::int64_t gap_seconds, int k_max, int max_len, int min_count) {
  RawDataset raw;
  if (dataset == "ml1m") raw = parse_ml1m_file(input);
  else if (dataset == "kuairand") raw = parse_kuairand_file(input);
  else throw config_error("--dataset must be ml1m or kuairand, got '" + dataset + "'");

  auto seqs = build_sequences(raw, max_len, min_count);
  DatasetSplit split = leave_one_out(seqs, raw.user_count, raw.item_count, gap_seconds, k_max);
  write_dataset(out, split);

  std::cout << raw.user_count << " users / " << raw.item_count << " items\n"
            << raw.interactions.size() << " interactions, " << seqs.size()
            << " sequences kept\n"
            << "train/val/test = " << split.train.size() << "/" << split.val.size() << "/"
            << split.test.size() << " (" << split.excluded << " too short)\n"
            << "wrote " << out << " digest " << file_digest(out) << "\n";
  return kExitOk;
}

int cmd_train(const std::string& data_path, const std::string& config_path,
              const std::string& out_dir, std::int64_t seed_flag) {
  TrainConfig cfg = load_config_file(config_path);
  if (seed_flag >= 0) cfg.seed = (std::uint64_t)seed_flag;
  DatasetSplit split = read_dataset(data_path);
  if (split.item_count < 1) throw config_error("dataset has no items");

  Model<float> m = make_model<float>(Rng(cfg.seed), model_config_of(cfg, split.item_count));
  std::cout << "training " << ablation_name(cfg.ablation) << " model, "
            << param_count(m) << " parameters, " << split.train.size() << " examples\n";

  TrainResult res = train_model(m, split, cfg, [](const StepTrace& t) {
    if (t.step % 50 == 0)
      std::cout << "step " << t.step << " loss " << t.l_total << " tower " << t.l_tower << " kl "
                << t.l_kl << " cos " << t.cosine << "\n";
  });

  fs::create_directories(out_dir);
  const std::string ckpt = (fs::path(out_dir) / "model.t2pw").string();
  const std::string cfg_out = (fs::path(out_dir) / "config.txt").string();
  const std::string trace = (fs::path(out_dir) / "trace.csv").string();
  const std::string manifest = (fs::path(out_dir) / "manifest.json").string();
  auto params = named_params(m);
  save_checkpoint(ckpt, params);
  write_text_file(cfg_out, config_echo(cfg));
  write_text_file(trace, trace_csv(res.trace));
  write_text_file(manifest, run_manifest(cfg, file_digest(data_path),
                                         {"model.t2pw", "config.txt", "trace.csv"})
                                .dump(2) +
                                "\n");

  std::cout << "epochs " << res.epochs_run << " steps " << res.steps;
  if (!res.val_recall.empty())
    std::cout << " best val recall@" << cfg.early_k << " " << res.best_val_recall << " (epoch "
              << res.best_epoch << (res.early_stopped ? ", early stop)" : ")");
  std::cout << "\ncheckpoint " << ckpt << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, std::string config_path,
             const std::string& k_arg, std::int64_t seed_flag, bool filter_seen,
             int timing_samples, const std::string& out_json) {
  if (config_path.empty())
    config_path = (fs::path(ckpt_path).parent_path() / "config.txt").string();
  TrainConfig cfg = load_config_file(config_path);
  if (seed_flag >= 0) cfg.seed = (std::uint64_t)seed_flag;
  if (filter_seen) cfg.filter_seen = true;
  DatasetSplit split = read_dataset(data_path);

  Model<float> m = make_model<float>(Rng(cfg.seed), model_config_of(cfg, split.item_count));
  auto params = named_params(m);
  load_checkpoint(ckpt_path, params);

  EvalReport rep = evaluate(m, split, parse_k_list(k_arg), Rng(cfg.seed).fork("eval"),
                            cfg.filter_seen);
  rep.config_hash = config_hash(cfg);
  if (timing_samples > 0)
    rep.median_ms = time_inference(m, split, timing_samples, Rng(cfg.seed).fork("timing"));
  print_report(rep);
  if (!out_json.empty()) write_text_file(out_json, report_json(rep).dump(2) + "\n");
  return kExitOk;
}

int cmd_ablate(const std::string& data_path, const std::string& config_path,
               const std::string& axis_arg, const std::string& out_dir,
               const std::string& k_arg, std::int64_t seed_flag, int timing_samples) {
  TrainConfig cfg = load_config_file(config_path);
  if (seed_flag >= 0) cfg.seed = (std::uint64_t)seed_flag;
  DatasetSplit split = read_dataset(data_path);
  const AblationAxis axis = ablation_axis_from(axis_arg);

  auto rows = run_ablation<float>(axis, cfg, split, parse_k_list(k_arg), timing_samples,
                                  [](const std::string& line) { std::cout << line << "\n"; });
  const std::string table = ablation_table_csv(rows);
  std::cout << table;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const std::string csv =
        (fs::path(out_dir) / ("ablation_" + std::string(ablation_axis_name(axis)) + ".csv"))
            .string();
    write_text_file(csv, table);
    std::cout << "wrote " << csv << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(int d, std::uint64_t seed, int coords) {
  ModelConfig mc;
  mc.d = d;
  mc.max_len = 6;
  mc.k_max = 2;
  mc.enc_heads = 2;
  mc.act_hidden = 2 * d;
  mc.out_hidden = 2 * d;
  mc.item_count = 12;
  mc.sched_a = 1e-2;
  mc.sched_b = 0.2;
  mc.sched_steps = 6;
  Model<double> m = make_model<double>(Rng(seed), mc);

  Example ex;
  ex.user = 1;
  Rng ex_rng(seed + 1);
  for (int i = 0; i < 4; ++i) {
    ex.prefix.push_back(1 + (std::int32_t)ex_rng.uniform_int(0, mc.item_count - 1));
    ex.stamps.push_back(1000 + 700 * i);
  }
  ex.target = 1 + (std::int32_t)ex_rng.uniform_int(0, mc.item_count - 1);
  ex.session_len = 2;

  // each wall side is checked alone: the architecture stops gradients from
  // crossing, so a finite-difference probe must hold the other side fixed
  std::vector<Tensor<double>> diff_leaves, tower_leaves;
  for (auto& p : named_params(m)) {
    if (p.domain == NamedParam<double>::Domain::diffusion) diff_leaves.push_back(p.tensor);
    else tower_leaves.push_back(p.tensor);
  }
  auto build_kl = [&](Graph<double>& g) {
    Rng pass_rng(seed + 2);
    auto out = train_forward(g, m, ex, pass_rng);
    return out.l_kl;
  };
  Rng next_rng(seed + 4);
  Tensor<double> next_est = gaussian<double>(next_rng, {1, d});
  auto build_tower = [&](Graph<double>& g) {
    Tensor<double> user = towers_forward(&g, m, ex, next_est);
    return tower_loss_full(&g, m.items, user, ex.target);
  };
  GradCheckResult kl = grad_check(build_kl, diff_leaves, 1e-5, coords, seed + 3);
  GradCheckResult tower = grad_check(build_tower, tower_leaves, 1e-5, coords, seed + 3);
  const double worst = std::max(kl.max_rel_err, tower.max_rel_err);
  const bool ok = worst < 1e-4;
  std::cout << (ok ? "PASS" : "FAIL") << " max_rel_err=" << worst << " (diffusion "
            << kl.max_rel_err << " over " << kl.coords_checked << " coords, towers "
            << tower.max_rel_err << " over " << tower.coords_checked << " coords)\n";
  return ok ? kExitOk : kExitNumeric;
}

int cmd_dump_schedule(double a, double b, int steps, const std::string& kind,
                      const std::string& out) {
  NoiseSchedule sch = NoiseSchedule::build(a, b, steps, beta_kind_from(kind));
  if (out.empty()) {
    sch.write_csv(std::cout);
  } else {
    std::ofstream os(out, std::ios::trunc);
    if (!os) throw parse_error("cannot open '" + out + "' for writing");
    sch.write_csv(os);
    std::cout << "wrote " << steps << " rows to " << out << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"drift-diffusion two-tower retrieval pipeline"};
  app.require_subcommand(1);

  // prepare-data
  std::string p_dataset, p_input, p_out;
  std::int64_t p_gap = 1800;
  int p_kmax = 10, p_maxlen = 50, p_mincount = 5;
  auto* prep = app.add_subcommand("prepare-data", "parse a raw log and write a split");
  prep->add_option("--dataset", p_dataset, "ml1m or kuairand")->required();
  prep->add_option("--input", p_input, "raw log file")->required();
  prep->add_option("--out", p_out, "output split file")->required();
  prep->add_option("--gap-seconds", p_gap, "session boundary gap");
  prep->add_option("--k-max", p_kmax, "session length cap");
  prep->add_option("--max-len", p_maxlen, "sequence length cap");
  prep->add_option("--min-count", p_mincount, "minimum interactions per user");

  // train
  std::string t_data, t_config, t_out;
  std::int64_t t_seed = -1;
  auto* train = app.add_subcommand("train", "train a model on a prepared split");
  train->add_option("--data", t_data, "prepared split file")->required();
  train->add_option("--config", t_config, "key = value config file")->required();
  train->add_option("--out", t_out, "output directory")->required();
  train->add_option("--seed", t_seed, "override the config seed");

  // eval
  std::string e_ckpt, e_data, e_config, e_k = "2,20", e_json;
  std::int64_t e_seed = -1;
  bool e_filter = false;
  int e_timing = 0;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
  eval->add_option("--checkpoint", e_ckpt, "model checkpoint")->required();
  eval->add_option("--data", e_data, "prepared split file")->required();
  eval->add_option("--config", e_config, "config file (default: next to the checkpoint)");
  eval->add_option("--k", e_k, "comma-separated cutoffs");
  eval->add_option("--seed", e_seed, "override the config seed");
  eval->add_flag("--filter-seen", e_filter, "drop already-seen items from candidates");
  eval->add_option("--timing-samples", e_timing, "measure median per-user inference ms");
  eval->add_option("--out-json", e_json, "write the report as JSON");

  // ablate
  std::string a_data, a_config, a_axis, a_out, a_k = "2,20";
  std::int64_t a_seed = -1;
  int a_timing = 0;
  auto* ablate = app.add_subcommand("ablate", "train and compare a config grid");
  ablate->add_option("--data", a_data, "prepared split file")->required();
  ablate->add_option("--config", a_config, "base config file")->required();
  ablate->add_option("--axis", a_axis, "modules, schedule or steps")->required();
  ablate->add_option("--out", a_out, "output directory");
  ablate->add_option("--k", a_k, "comma-separated cutoffs");
  ablate->add_option("--seed", a_seed, "override the config seed");
  ablate->add_option("--timing-samples", a_timing, "per-variant timing sample count");

  // gradcheck
  int g_d = 4, g_coords = 6;
  std::uint64_t g_seed = 7;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check on a tiny model");
  grad->add_option("--d", g_d, "embedding width");
  grad->add_option("--seed", g_seed, "rng seed");
  grad->add_option("--coords", g_coords, "coordinates probed per tensor");

  // dump-schedule
  double s_a = 1e-4, s_b = default_schedule_b();
  int s_steps = 50;
  std::string s_kind = "exp", s_out;
  auto* sched = app.add_subcommand("dump-schedule", "write the noise schedule as CSV");
  sched->add_option("--a", s_a, "beta scale");
  sched->add_option("--b", s_b, "beta growth rate");
  sched->add_option("--steps", s_steps, "diffusion steps");
  sched->add_option("--kind", s_kind, "exp, linear or log");
  sched->add_option("--out", s_out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
    if (prep->parsed())
      return cmd_prepare(p_dataset, p_input, p_out, p_gap, p_kmax, p_maxlen, p_mincount);
    if (train->parsed()) return cmd_train(t_data, t_config, t_out, t_seed);
    if (eval->parsed())
      return cmd_eval(e_ckpt, e_data, e_config, e_k, e_seed, e_filter, e_timing, e_json);
    if (ablate->parsed())
      return cmd_ablate(a_data, a_config, a_axis, a_out, a_k, a_seed, a_timing);
    if (grad->parsed()) return cmd_gradcheck(g_d, g_seed, g_coords);
    if (sched->parsed()) return cmd_dump_schedule(s_a, s_b, s_steps, s_kind, s_out);
    return kExitInput;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  } catch (const format_error& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const numeric_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const error& e) {  // config, parse, shape, graph, schedule
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
}
