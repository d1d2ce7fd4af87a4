#pragma once

// 2x2 grid over the two architectural toggles (deformable support window,
// pixel-movement heads). Each row trains from scratch and is evaluated on a
// held-out set. Rows are independent; PMPD_THREADS > 1 runs them in parallel
// with results still identical to a sequential run.

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "pmpd/metrics.hpp"
#include "pmpd/trainer.hpp"

namespace pmpd {

struct AblationRow {
  std::string label;
  bool use_deformable = false;
  bool use_pmp = false;
  MetricReport report;
  std::vector<EpochLog> log;
  bool aborted = false;
  std::string fault;
};

inline std::vector<AblationRow> ablation_grid() {
  auto row = [](const char* label, bool deform, bool pmp) {
    AblationRow r;
    r.label = label;
    r.use_deformable = deform;
    r.use_pmp = pmp;
    return r;
  };
  return {row("baseline", false, false), row("deformable", true, false), row("pmp", false, true),
          row("deformable+pmp", true, true)};
}

inline std::size_t worker_count() {
  const char* env = std::getenv("PMPD_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("PMPD_THREADS must be a positive integer");
  return static_cast<std::size_t>(n);
}

inline std::vector<AblationRow> run_ablation(const std::vector<Sample>& train_set,
                                             const std::vector<Sample>& heldout,
                                             const NetworkConfig& net, const TrainConfig& tc,
                                             const EvalConfig& eval = {},
                                             std::size_t workers = 1) {
  if (heldout.empty()) throw DegenerateInputError("ablation: empty held-out set");
  std::vector<AblationRow> rows = ablation_grid();
  std::vector<std::exception_ptr> errors(rows.size());

  auto run_row = [&](std::size_t i) {
    try {
      TrainConfig row_tc = tc;
      row_tc.use_deformable = rows[i].use_deformable;
      row_tc.use_pmp = rows[i].use_pmp;
      const TrainResult r = train(train_set, net, row_tc);
      rows[i].aborted = r.aborted;
      rows[i].fault = r.fault;
      rows[i].log = r.log;
      rows[i].report = evaluate_model(r.params, r.network, heldout, eval);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  workers = std::clamp<std::size_t>(workers, 1, rows.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < rows.size(); ++i) run_row(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < rows.size(); i += workers) run_row(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = std::string("row,use_deformable,use_pmp,") + kMetricCsvHeader + "\n";
  for (const auto& r : rows) {
    out += r.label + "," + (r.use_deformable ? "1" : "0") + "," + (r.use_pmp ? "1" : "0") + "," +
           metric_csv_row(r.report) + "\n";
  }
  return out;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::vector<std::pair<std::string, MetricReport>> t;
  for (const auto& r : rows) t.emplace_back(r.label + (r.aborted ? " (aborted)" : ""), r.report);
  return metric_table(t);
}

}  // namespace pmpd
