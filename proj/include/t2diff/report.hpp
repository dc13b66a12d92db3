#pragma once

// Run artifacts: metric reports as JSON and CSV, trace files, and the run
// manifest tying outputs to the exact config and input digest.

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2diff/evaluate.hpp"
#include "t2diff/train.hpp"

namespace t2diff {

inline nlohmann::ordered_json report_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["test_users"] = rep.test_users;
  j["param_count"] = rep.param_count;
  j["config_hash"] = rep.config_hash;
  for (int k : rep.ks) {
    j["recall"][std::to_string(k)] = rep.recall.at(k);
    j["mrr"][std::to_string(k)] = rep.mrr.at(k);
  }
  j["median_inference_ms"] = rep.median_ms;
  return j;
}

inline std::string report_csv(const EvalReport& rep) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,k,value\n";
  for (int k : rep.ks) os << "recall," << k << "," << rep.recall.at(k) << "\n";
  for (int k : rep.ks) os << "mrr," << k << "," << rep.mrr.at(k) << "\n";
  return os.str();
}

inline std::string trace_csv(const std::vector<StepTrace>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "step,l_total,l_tower,l_kl,cosine\n";
  for (const StepTrace& t : trace)
    os << t.step << "," << t.l_total << "," << t.l_tower << "," << t.l_kl << "," << t.cosine
       << "\n";
  return os.str();
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw parse_error("cannot open '" + path + "' for writing");
  os << body;
  if (!os) throw parse_error("write to '" + path + "' failed");
}

inline std::string file_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw parse_error("cannot open '" + path + "' for digest");
  std::ostringstream buf;
  buf << is.rdbuf();
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", (unsigned long long)detail::fnv1a64(buf.str()));
  return out;
}

inline nlohmann::ordered_json run_manifest(const TrainConfig& cfg, const std::string& data_digest,
                                           const std::vector<std::string>& outputs) {
  nlohmann::ordered_json j;
  j["config_hash"] = config_hash(cfg);
  j["config"] = config_echo(cfg);
  j["data_digest"] = data_digest;
  j["outputs"] = outputs;
  return j;
}

}  // namespace t2diff
