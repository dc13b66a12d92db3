#pragma once

// Ablation grids along three axes: which modules run, which β-schedule
// shape is used (endpoints matched so only the curve differs), and how many
// diffusion steps the reverse loop takes (β_T re-derived per T so every run
// ends at the same noise level).

#include <string>
#include <vector>

#include "t2diff/evaluate.hpp"
#include "t2diff/report.hpp"
#include "t2diff/train.hpp"

namespace t2diff {

enum class AblationAxis { modules, schedule, steps };

inline const char* ablation_axis_name(AblationAxis a) {
  switch (a) {
    case AblationAxis::modules: return "modules";
    case AblationAxis::schedule: return "schedule";
    case AblationAxis::steps: return "steps";
  }
  return "?";
}

inline AblationAxis ablation_axis_from(const std::string& s) {
  if (s == "modules") return AblationAxis::modules;
  if (s == "schedule") return AblationAxis::schedule;
  if (s == "steps") return AblationAxis::steps;
  throw config_error("unknown ablation axis '" + s + "' (want modules, schedule or steps)");
}

struct AblationRow {
  std::string label;
  TrainConfig config;
  EvalReport report;
  double median_ms = 0.0;
};

// the grid's config variants, in reporting order
inline std::vector<std::pair<std::string, TrainConfig>> ablation_grid(AblationAxis axis,
                                                                      const TrainConfig& base) {
  std::vector<std::pair<std::string, TrainConfig>> out;
  switch (axis) {
    case AblationAxis::modules: {
      for (Ablation a : {Ablation::full, Ablation::no_drift_prep, Ablation::attention_only}) {
        TrainConfig c = base;
        c.ablation = a;
        out.emplace_back(ablation_name(a), c);
      }
      break;
    }
    case AblationAxis::schedule: {
      for (BetaKind k : {BetaKind::linear, BetaKind::logarithmic, BetaKind::exponential}) {
        TrainConfig c = base;
        c.sched_kind = k;  // same a and b, so both endpoints match across kinds
        out.emplace_back(beta_kind_name(k), c);
      }
      break;
    }
    case AblationAxis::steps: {
      const double beta_end = base.sched_a * std::exp(base.sched_b * base.sched_steps);
      for (int steps : {10, 50, 200}) {
        TrainConfig c = base;
        c.sched_steps = steps;
        c.sched_b = std::log(beta_end / c.sched_a) / steps;  // land on the same final β
        out.emplace_back("T=" + std::to_string(steps), c);
      }
      break;
    }
  }
  return out;
}

template <typename S>
std::vector<AblationRow> run_ablation(AblationAxis axis, const TrainConfig& base,
                                      const DatasetSplit& split, const std::vector<int>& ks,
                                      int timing_samples = 0,
                                      const std::function<void(const std::string&)>& log = {}) {
  std::vector<AblationRow> rows;
  for (auto& [label, cfg] : ablation_grid(axis, base)) {
    if (log) log("ablation " + std::string(ablation_axis_name(axis)) + ": " + label);
    Model<S> m = make_model<S>(Rng(cfg.seed), model_config_of(cfg, split.item_count));
    train_model(m, split, cfg);
    AblationRow row;
    row.label = label;
    row.config = cfg;
    row.report = evaluate(m, split, ks, Rng(cfg.seed).fork("eval"), cfg.filter_seen);
    row.report.config_hash = config_hash(cfg);
    if (timing_samples > 0) {
      row.median_ms = time_inference(m, split, timing_samples, Rng(cfg.seed).fork("timing"));
      row.report.median_ms = row.median_ms;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_table_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "label,metric,k,value\n";
  for (const AblationRow& r : rows) {
    for (int k : r.report.ks) os << r.label << ",recall," << k << "," << r.report.recall.at(k) << "\n";
    for (int k : r.report.ks) os << r.label << ",mrr," << k << "," << r.report.mrr.at(k) << "\n";
    os << r.label << ",median_ms,," << r.median_ms << "\n";
    os << r.label << ",param_count,," << r.report.param_count << "\n";
  }
  return os.str();
}

}  // namespace t2diff
