#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "psvma/model.hpp"

namespace psvma {

struct SampleRecord {
    std::size_t sample_id = 0;
    std::size_t label = 0;
    Split split = Split::SeenTest;
    std::size_t predicted = 0;
    double max_seen_score = 0;
    double max_unseen_score = 0;
};

struct EvalReport {
    double U = 0, S = 0, H = 0;   // fractions in [0,1]
    double gamma = 0;
    std::vector<double> per_class_acc;      // indexed by class id
    std::vector<std::size_t> per_class_n;
    std::vector<SampleRecord> records;
};

// Raw per-sample scores for every test sample; gamma-independent, so a
// sweep reuses one scoring pass.
struct ScoreTable {
    std::vector<std::size_t> sample_ids;
    std::vector<ScoreVector> scores;
    std::vector<std::size_t> labels;
    std::vector<Split> splits;
    std::vector<bool> seen_mask;   // per class
};

ScoreTable compute_scores(const PsvmaModel& model, const GzslDataset& dataset);

// Calibrated stacking: argmax of score - gamma * [class is seen]; ties -> lowest id.
std::size_t calibrated_predict(const std::vector<double>& scores,
                               const std::vector<bool>& seen_mask, double gamma);

// Per-class (macro) accuracies within the seen-test and unseen-test splits.
EvalReport evaluate_scores(const ScoreTable& table, double gamma,
                           bool per_sample_average = false);
EvalReport evaluate(const PsvmaModel& model, const GzslDataset& dataset, double gamma);

std::vector<EvalReport> gamma_sweep(const ScoreTable& table,
                                    const std::vector<double>& gammas);
std::size_t best_h_index(const std::vector<EvalReport>& reports);

double harmonic_mean(double s, double u);

// Seen/unseen score statistics over one sample's ScoreVector.
struct ScoreStats {
    double mean_seen = 0, var_seen = 0, mean_unseen = 0, var_unseen = 0;
};
ScoreStats score_stats(const ScoreVector& sv);

void write_report_json(const std::filesystem::path& path, const EvalReport& report);
void write_sweep_csv(const std::filesystem::path& path,
                     const std::vector<EvalReport>& reports);

// distributions.csv: per-sample max seen/unseen scores plus the aggregated
// mean/variance gap used by the debiasing analysis.
struct DistributionSummary {
    double alpha_s = 0, beta_s = 0, alpha_u = 0, beta_u = 0;
    double mean_gap() const { return alpha_s > alpha_u ? alpha_s - alpha_u
                                                       : alpha_u - alpha_s; }
};
DistributionSummary export_distributions(const PsvmaModel& model,
                                         const GzslDataset& dataset,
                                         const std::filesystem::path& path);

// Affinity matrices of one sample as CSV, one file per (module, loop).
void export_affinities(const PsvmaModel& model, const GzslDataset& dataset,
                       std::size_t sample_id, const std::filesystem::path& dir);

}  // namespace psvma
