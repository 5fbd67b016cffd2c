#include "psvma/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace psvma {

using nlohmann::json;

double harmonic_mean(double s, double u) {
    if (s + u == 0.0) return 0.0;
    return 2.0 * s * u / (s + u);
}

ScoreTable compute_scores(const PsvmaModel& model, const GzslDataset& dataset) {
    ScoreTable table;
    table.seen_mask = dataset.seen_mask();
    for (Split sp : {Split::SeenTest, Split::UnseenTest}) {
        for (std::size_t id : dataset.sample_ids(sp)) {
            table.sample_ids.push_back(id);
            table.scores.push_back(model.score_sample(dataset, id));
            table.labels.push_back(dataset.labels[id]);
            table.splits.push_back(sp);
        }
    }
    if (table.sample_ids.empty())
        throw ContractError("evaluate: dataset has no test samples");
    return table;
}

std::size_t calibrated_predict(const std::vector<double>& scores,
                               const std::vector<bool>& seen_mask, double gamma) {
    if (scores.size() != seen_mask.size())
        throw ShapeError("calibrated_predict: scores vs mask length mismatch");
    std::size_t best = 0;
    double best_v = scores[0] - (seen_mask[0] ? gamma : 0.0);
    for (std::size_t c = 1; c < scores.size(); ++c) {
        double v = scores[c] - (seen_mask[c] ? gamma : 0.0);
        if (v > best_v) {
            best = c;
            best_v = v;
        }
    }
    return best;
}

ScoreStats score_stats(const ScoreVector& sv) {
    ScoreStats st;
    std::size_t ns = 0, nu = 0;
    for (std::size_t c = 0; c < sv.size(); ++c) {
        if (sv.seen_mask[c]) {
            st.mean_seen += sv.scores[c];
            ++ns;
        } else {
            st.mean_unseen += sv.scores[c];
            ++nu;
        }
    }
    if (ns == 0 || nu == 0)
        throw ContractError("score_stats: need both seen and unseen classes");
    st.mean_seen /= static_cast<double>(ns);
    st.mean_unseen /= static_cast<double>(nu);
    for (std::size_t c = 0; c < sv.size(); ++c) {
        double d = sv.scores[c] - (sv.seen_mask[c] ? st.mean_seen : st.mean_unseen);
        (sv.seen_mask[c] ? st.var_seen : st.var_unseen) += d * d;
    }
    st.var_seen /= static_cast<double>(ns);
    st.var_unseen /= static_cast<double>(nu);
    return st;
}

EvalReport evaluate_scores(const ScoreTable& table, double gamma,
                           bool per_sample_average) {
    const std::size_t C = table.seen_mask.size();
    EvalReport rep;
    rep.gamma = gamma;
    rep.per_class_acc.assign(C, 0.0);
    rep.per_class_n.assign(C, 0);
    std::vector<std::size_t> correct(C, 0);
    bool any_seen = false, any_unseen = false;
    for (std::size_t i = 0; i < table.sample_ids.size(); ++i) {
        (table.splits[i] == Split::UnseenTest ? any_unseen : any_seen) = true;
        std::size_t pred =
            calibrated_predict(table.scores[i].scores, table.seen_mask, gamma);
        std::size_t y = table.labels[i];
        ++rep.per_class_n[y];
        if (pred == y) ++correct[y];
        SampleRecord rec;
        rec.sample_id = table.sample_ids[i];
        rec.label = y;
        rec.split = table.splits[i];
        rec.predicted = pred;
        double ms = -1e300, mu = -1e300;
        for (std::size_t c = 0; c < C; ++c)
            (table.seen_mask[c] ? ms : mu) =
                std::max(table.seen_mask[c] ? ms : mu, table.scores[i].scores[c]);
        rec.max_seen_score = ms;
        rec.max_unseen_score = mu;
        rep.records.push_back(rec);
    }
    if (!any_seen || !any_unseen)
        throw ContractError("evaluate: both seen-test and unseen-test splits required");

    double s_acc = 0, u_acc = 0;
    std::size_t s_cls = 0, u_cls = 0, s_correct = 0, u_correct = 0, s_n = 0, u_n = 0;
    for (std::size_t c = 0; c < C; ++c) {
        if (rep.per_class_n[c] == 0) continue;
        rep.per_class_acc[c] = static_cast<double>(correct[c]) /
                               static_cast<double>(rep.per_class_n[c]);
        if (table.seen_mask[c]) {
            s_acc += rep.per_class_acc[c];
            ++s_cls;
            s_correct += correct[c];
            s_n += rep.per_class_n[c];
        } else {
            u_acc += rep.per_class_acc[c];
            ++u_cls;
            u_correct += correct[c];
            u_n += rep.per_class_n[c];
        }
    }
    if (per_sample_average) {
        rep.S = s_n ? static_cast<double>(s_correct) / static_cast<double>(s_n) : 0.0;
        rep.U = u_n ? static_cast<double>(u_correct) / static_cast<double>(u_n) : 0.0;
    } else {
        rep.S = s_cls ? s_acc / static_cast<double>(s_cls) : 0.0;
        rep.U = u_cls ? u_acc / static_cast<double>(u_cls) : 0.0;
    }
    rep.H = harmonic_mean(rep.S, rep.U);
    return rep;
}

EvalReport evaluate(const PsvmaModel& model, const GzslDataset& dataset, double gamma) {
    return evaluate_scores(compute_scores(model, dataset), gamma);
}

std::vector<EvalReport> gamma_sweep(const ScoreTable& table,
                                    const std::vector<double>& gammas) {
    if (!std::is_sorted(gammas.begin(), gammas.end()))
        throw ContractError("gamma_sweep: gammas must be ascending");
    std::vector<EvalReport> reports;
    reports.reserve(gammas.size());
    for (double g : gammas) reports.push_back(evaluate_scores(table, g));
    return reports;
}

std::size_t best_h_index(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw ContractError("best_h_index: no reports");
    std::size_t best = 0;
    for (std::size_t i = 1; i < reports.size(); ++i)
        if (reports[i].H > reports[best].H) best = i;
    return best;
}

void write_report_json(const std::filesystem::path& path, const EvalReport& rep) {
    json j;
    j["U_percent"] = 100.0 * rep.U;
    j["S_percent"] = 100.0 * rep.S;
    j["H_percent"] = 100.0 * rep.H;
    j["gamma"] = rep.gamma;
    json per_class = json::array();
    for (std::size_t c = 0; c < rep.per_class_acc.size(); ++c)
        per_class.push_back({{"class", c},
                             {"accuracy", rep.per_class_acc[c]},
                             {"n", rep.per_class_n[c]}});
    j["per_class"] = per_class;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

void write_sweep_csv(const std::filesystem::path& path,
                     const std::vector<EvalReport>& reports) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.precision(17);
    f << "gamma,U,S,H\n";
    for (const EvalReport& r : reports)
        f << r.gamma << "," << 100.0 * r.U << "," << 100.0 * r.S << ","
          << 100.0 * r.H << "\n";
}

DistributionSummary export_distributions(const PsvmaModel& model,
                                         const GzslDataset& dataset,
                                         const std::filesystem::path& path) {
    ScoreTable table = compute_scores(model, dataset);
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.precision(17);
    f << "sample_id,label,split,max_seen,max_unseen,mean_seen,var_seen,mean_unseen,var_unseen\n";
    DistributionSummary sum;
    for (std::size_t i = 0; i < table.sample_ids.size(); ++i) {
        const ScoreVector& sv = table.scores[i];
        ScoreStats st = score_stats(sv);
        double ms = -1e300, mu = -1e300;
        for (std::size_t c = 0; c < sv.size(); ++c)
            (sv.seen_mask[c] ? ms : mu) =
                std::max(sv.seen_mask[c] ? ms : mu, sv.scores[c]);
        f << table.sample_ids[i] << "," << table.labels[i] << ","
          << split_name(table.splits[i]) << "," << ms << "," << mu << ","
          << st.mean_seen << "," << st.var_seen << "," << st.mean_unseen << ","
          << st.var_unseen << "\n";
        sum.alpha_s += st.mean_seen;
        sum.beta_s += st.var_seen;
        sum.alpha_u += st.mean_unseen;
        sum.beta_u += st.var_unseen;
    }
    double n = static_cast<double>(table.sample_ids.size());
    sum.alpha_s /= n;
    sum.beta_s /= n;
    sum.alpha_u /= n;
    sum.beta_u /= n;

    json j{{"alpha_s", sum.alpha_s},
           {"beta_s", sum.beta_s},
           {"alpha_u", sum.alpha_u},
           {"beta_u", sum.beta_u},
           {"n_samples", table.sample_ids.size()}};
    std::ofstream js(path.parent_path() / (path.stem().string() + "_summary.json"));
    js << j.dump(2) << "\n";
    return sum;
}

void export_affinities(const PsvmaModel& model, const GzslDataset& dataset,
                       std::size_t sample_id, const std::filesystem::path& dir) {
    if (sample_id >= dataset.instances.size())
        throw ContractError("export_affinities: sample id out of range");
    std::filesystem::create_directories(dir);
    std::vector<DsvtmState> states = model.run_states(dataset, sample_id);
    for (std::size_t z = 0; z < states.size(); ++z) {
        for (std::size_t r = 0; r < states[z].affinities.size(); ++r) {
            const Tensor& m = states[z].affinities[r];
            std::filesystem::path file =
                dir / ("affinity_z" + std::to_string(z) + "_r" + std::to_string(r) + ".csv");
            std::ofstream f(file);
            if (!f) throw std::runtime_error("cannot write " + file.string());
            f.precision(17);
            for (std::size_t i = 0; i < m.rows; ++i) {
                for (std::size_t j = 0; j < m.cols; ++j)
                    f << m.at(i, j) << (j + 1 < m.cols ? "," : "");
                f << "\n";
            }
        }
    }
}

}  // namespace psvma
