#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "psvma/evaluator.hpp"
#include "psvma/trainer.hpp"

#include <json.hpp>

using namespace psvma;
namespace fs = std::filesystem;

namespace {

// A hand-built score table: 3 seen classes (0-2), 2 unseen (3-4).
ScoreTable fabricated_table() {
    ScoreTable t;
    t.seen_mask = {true, true, true, false, false};
    auto push = [&](std::size_t id, std::size_t label, Split split,
                    std::vector<double> scores) {
        ScoreVector sv;
        sv.scores = std::move(scores);
        sv.seen_mask = t.seen_mask;
        sv.zero_norm_flag.assign(5, false);
        t.sample_ids.push_back(id);
        t.scores.push_back(std::move(sv));
        t.labels.push_back(label);
        t.splits.push_back(split);
    };
    // Seen-test: class 0 correct, class 1 correct, class 2 wrong at gamma 0.
    push(0, 0, Split::SeenTest, {9, 1, 1, 5, 0});
    push(1, 1, Split::SeenTest, {1, 9, 1, 5, 0});
    push(2, 2, Split::SeenTest, {1, 9, 2, 5, 0});
    // Unseen-test: class 3 wins only once gamma pushes seen scores down.
    push(3, 3, Split::UnseenTest, {6, 1, 1, 5, 0});
    push(4, 4, Split::UnseenTest, {1, 1, 1, 0, 7});
    return t;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("psvma_eval_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("harmonic mean fixed points") {
    CHECK(harmonic_mean(0.5, 0.5) == doctest::Approx(0.5));
    CHECK(harmonic_mean(0.0, 0.9) == 0.0);
    CHECK(harmonic_mean(0.0, 0.0) == 0.0);
    // The published arithmetic: S=77.3%, U=73.6% -> H=75.40%.
    double h = harmonic_mean(0.773, 0.736);
    CHECK(100.0 * h == doctest::Approx(75.4046).epsilon(1e-4));
}

TEST_CASE("calibrated_predict: gamma 0 is plain argmax, ties pick lowest id") {
    std::vector<bool> mask{true, true, false};
    CHECK(calibrated_predict({1, 3, 2}, mask, 0.0) == 1);
    CHECK(calibrated_predict({3, 3, 2}, mask, 0.0) == 0);     // tie
    CHECK(calibrated_predict({3, 1, 3}, mask, 0.0) == 0);     // cross-group tie
    // gamma purges the seen classes.
    CHECK(calibrated_predict({3, 3, 2}, mask, 10.0) == 2);
    // gamma only penalizes seen entries.
    CHECK(calibrated_predict({5, 1, 4.5}, mask, 1.0) == 2);
}

TEST_CASE("evaluate_scores macro accuracy on the fabricated table") {
    ScoreTable t = fabricated_table();
    EvalReport r = evaluate_scores(t, 0.0);
    // Seen classes: 0 and 1 correct, 2 wrong -> macro S = 2/3.
    CHECK(r.S == doctest::Approx(2.0 / 3.0));
    // Unseen: sample 3 predicted 0 (score 6 > 5), sample 4 correct -> U = 1/2.
    CHECK(r.U == doctest::Approx(0.5));
    CHECK(r.H == doctest::Approx(harmonic_mean(r.S, r.U)));
    CHECK(r.records.size() == 5);
    CHECK(r.records[3].max_seen_score == 6);
    CHECK(r.records[3].max_unseen_score == 5);

    // gamma 2 rescues sample 3 (6-2 < 5) without costing the seen samples.
    EvalReport r2 = evaluate_scores(t, 2.0);
    CHECK(r2.U == doctest::Approx(1.0));
    CHECK(r2.S == doctest::Approx(2.0 / 3.0));

    // gamma 5 pushes every seen score below an unseen one.
    EvalReport r3 = evaluate_scores(t, 5.0);
    CHECK(r3.U == doctest::Approx(1.0));
    CHECK(r3.S == doctest::Approx(0.0));
}

TEST_CASE("macro vs per-sample averaging differ when class sizes do") {
    ScoreTable t = fabricated_table();
    // Duplicate the correct class-0 sample so per-sample seen accuracy rises.
    ScoreVector extra = t.scores[0];
    t.sample_ids.push_back(9);
    t.scores.push_back(extra);
    t.labels.push_back(0);
    t.splits.push_back(Split::SeenTest);

    EvalReport macro = evaluate_scores(t, 0.0, false);
    EvalReport micro = evaluate_scores(t, 0.0, true);
    CHECK(macro.S == doctest::Approx(2.0 / 3.0));   // class-balanced
    CHECK(micro.S == doctest::Approx(3.0 / 4.0));   // sample-weighted
}

TEST_CASE("sweep: U non-decreasing, S non-increasing, H matches evaluate") {
    ScoreTable t = fabricated_table();
    std::vector<double> gammas;
    for (int i = 0; i <= 40; ++i) gammas.push_back(0.1 * i);
    auto reports = gamma_sweep(t, gammas);
    for (std::size_t i = 1; i < reports.size(); ++i) {
        CHECK(reports[i].U >= reports[i - 1].U);
        CHECK(reports[i].S <= reports[i - 1].S);
    }
    // A sweep of one gamma equals a direct evaluation.
    auto single = gamma_sweep(t, {0.7});
    EvalReport direct = evaluate_scores(t, 0.7);
    CHECK(single[0].U == direct.U);
    CHECK(single[0].S == direct.S);
    CHECK(single[0].H == direct.H);

    std::size_t best = best_h_index(reports);
    for (const EvalReport& r : reports) CHECK(reports[best].H >= r.H);

    CHECK_THROWS_AS(gamma_sweep(t, {1.0, 0.5}), ContractError);
    CHECK_THROWS_AS(best_h_index({}), ContractError);
}

TEST_CASE("evaluation is invariant to sample order") {
    ScoreTable t = fabricated_table();
    ScoreTable shuffled = t;
    std::vector<std::size_t> perm{4, 2, 0, 3, 1};
    for (std::size_t i = 0; i < perm.size(); ++i) {
        shuffled.sample_ids[i] = t.sample_ids[perm[i]];
        shuffled.scores[i] = t.scores[perm[i]];
        shuffled.labels[i] = t.labels[perm[i]];
        shuffled.splits[i] = t.splits[perm[i]];
    }
    EvalReport a = evaluate_scores(t, 0.3);
    EvalReport b = evaluate_scores(shuffled, 0.3);
    CHECK(a.U == b.U);
    CHECK(a.S == b.S);
    CHECK(a.H == b.H);
    CHECK(a.per_class_acc == b.per_class_acc);
}

TEST_CASE("missing test splits are contract errors") {
    ScoreTable t = fabricated_table();
    ScoreTable only_seen = t;
    only_seen.sample_ids.resize(3);
    only_seen.scores.resize(3);
    only_seen.labels.resize(3);
    only_seen.splits.resize(3);
    CHECK_THROWS_AS(evaluate_scores(only_seen, 0.0), ContractError);
}

TEST_CASE("score_stats means and population variances") {
    ScoreVector sv;
    sv.scores = {1, 3, 0, 4};
    sv.seen_mask = {true, true, false, false};
    sv.zero_norm_flag.assign(4, false);
    ScoreStats st = score_stats(sv);
    CHECK(st.mean_seen == doctest::Approx(2.0));
    CHECK(st.var_seen == doctest::Approx(1.0));
    CHECK(st.mean_unseen == doctest::Approx(2.0));
    CHECK(st.var_unseen == doctest::Approx(4.0));

    ScoreVector bad;
    bad.scores = {1, 2};
    bad.seen_mask = {true, true};
    CHECK_THROWS_AS(score_stats(bad), ContractError);
}

TEST_CASE("report and sweep files carry percentages") {
    TempDir tmp("files");
    ScoreTable t = fabricated_table();
    EvalReport r = evaluate_scores(t, 0.0);
    write_report_json(tmp.path / "report.json", r);

    nlohmann::json j;
    {
        std::ifstream f(tmp.path / "report.json");
        f >> j;
    }
    CHECK(j.at("S_percent").get<double>() == doctest::Approx(100.0 * r.S));
    CHECK(j.at("U_percent").get<double>() == doctest::Approx(100.0 * r.U));
    CHECK(j.at("H_percent").get<double>() == doctest::Approx(100.0 * r.H));
    CHECK(j.at("per_class").size() == 5);

    auto reports = gamma_sweep(t, {0.0, 1.0, 2.0});
    write_sweep_csv(tmp.path / "sweep.csv", reports);
    std::ifstream f(tmp.path / "sweep.csv");
    std::string header;
    std::getline(f, header);
    CHECK(header == "gamma,U,S,H");
    std::size_t rows = 0;
    for (std::string line; std::getline(f, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == 3);
}

namespace {

GenConfig eval_data_config() {
    GenConfig cfg;
    cfg.c_seen = 3;
    cfg.c_unseen = 2;
    cfg.n_attrs = 4;
    cfg.n_groups = 2;
    cfg.n_patches = 4;
    cfg.in_dim = 8;
    cfg.d_sem = 8;
    cfg.variants = 2;
    cfg.samples_per_class = 4;
    cfg.active_per_class = 3;
    cfg.seed = 41;
    return cfg;
}

ModelConfig eval_model_config() {
    ModelConfig mc;
    mc.backbone.mode = BackboneConfig::Mode::Identity;
    mc.backbone.layers = 2;
    mc.backbone.n_patches = 4;
    mc.backbone.dim = 8;
    mc.backbone.in_dim = 8;
    mc.dsvtm.n_attrs = 4;
    mc.dsvtm.n_patches = 4;
    mc.dsvtm.dim = 8;
    mc.dsvtm.n_groups = 2;
    mc.dsvtm.r_loops = 2;
    mc.dsvtm.z_modules = 2;
    mc.d_sem = 8;
    mc.seed = 6;
    return mc;
}

}  // namespace

TEST_CASE("end-to-end evaluation over a real model is self-consistent") {
    GzslDataset ds = generate(eval_data_config());
    PsvmaModel model(eval_model_config());

    ScoreTable table = compute_scores(model, ds);
    std::size_t n_test = ds.sample_ids(Split::SeenTest).size() +
                         ds.sample_ids(Split::UnseenTest).size();
    CHECK(table.sample_ids.size() == n_test);

    EvalReport direct = evaluate(model, ds, 0.4);
    EvalReport via_table = evaluate_scores(table, 0.4);
    CHECK(direct.U == via_table.U);
    CHECK(direct.S == via_table.S);
    CHECK(direct.H == via_table.H);
}

TEST_CASE("distribution export rows, aggregates, and summary file") {
    TempDir tmp("dist");
    GzslDataset ds = generate(eval_data_config());
    PsvmaModel model(eval_model_config());

    DistributionSummary sum =
        export_distributions(model, ds, tmp.path / "distributions.csv");

    std::ifstream f(tmp.path / "distributions.csv");
    std::string header;
    std::getline(f, header);
    CHECK(header ==
          "sample_id,label,split,max_seen,max_unseen,mean_seen,var_seen,"
          "mean_unseen,var_unseen");
    std::size_t rows = 0;
    double mean_seen_sum = 0;
    for (std::string line; std::getline(f, line);) {
        if (line.empty()) continue;
        ++rows;
        // mean_seen is column 6.
        std::stringstream ss(line);
        std::string cell;
        for (int c = 0; c < 6; ++c) std::getline(ss, cell, ',');
        mean_seen_sum += std::stod(cell);
    }
    std::size_t n_test = ds.sample_ids(Split::SeenTest).size() +
                         ds.sample_ids(Split::UnseenTest).size();
    CHECK(rows == n_test);
    CHECK(sum.alpha_s ==
          doctest::Approx(mean_seen_sum / static_cast<double>(rows)).epsilon(1e-9));

    nlohmann::json j;
    {
        std::ifstream js(tmp.path / "distributions_summary.json");
        REQUIRE(js.good());
        js >> j;
    }
    CHECK(j.at("alpha_s").get<double>() == doctest::Approx(sum.alpha_s));
    CHECK(j.at("beta_u").get<double>() == doctest::Approx(sum.beta_u));
    CHECK(j.at("n_samples").get<std::size_t>() == n_test);
    CHECK(sum.mean_gap() >= 0.0);
}

TEST_CASE("affinity export writes one file per module and loop") {
    TempDir tmp("attn");
    GzslDataset ds = generate(eval_data_config());
    PsvmaModel model(eval_model_config());
    export_affinities(model, ds, 0, tmp.path);

    for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t r = 0; r < 2; ++r) {
            fs::path file = tmp.path / ("affinity_z" + std::to_string(z) + "_r" +
                                        std::to_string(r) + ".csv");
            REQUIRE(fs::exists(file));
            std::ifstream f(file);
            std::size_t rows = 0, commas = 0;
            for (std::string line; std::getline(f, line);) {
                if (line.empty()) continue;
                ++rows;
                commas = static_cast<std::size_t>(
                    std::count(line.begin(), line.end(), ','));
            }
            CHECK(rows == 4);        // N_s
            CHECK(commas == 3);      // N_v - 1
        }

    CHECK_THROWS_AS(export_affinities(model, ds, 10000, tmp.path), ContractError);
}
