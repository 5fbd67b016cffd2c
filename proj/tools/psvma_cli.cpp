// Command-line front end: dataset generation, training, evaluation, gamma
// sweeps, gradient checks, and attention export. One command per process.
//
// Exit codes: 0 success, 1 usage error, 2 validation/configuration failure,
// 3 numerical failure (non-finite loss or failed gradient check).

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>

#include <CLI11.hpp>
#include <json.hpp>

#include "psvma/evaluator.hpp"
#include "psvma/oracle.hpp"
#include "psvma/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace psvma;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct ValidationExit : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalExit : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json load_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationExit("cannot open " + path.string());
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw ValidationExit("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ValidationExit("cannot write " + path.string());
    out << text;
    if (text.empty() || text.back() != '\n') out << "\n";
}

// Builds outputs in <out>.staging and renames on success, so a failed run
// leaves no partial output directory behind.
struct StagedDir {
    fs::path target, staging;
    bool committed = false;

    explicit StagedDir(const fs::path& out) : target(out), staging(out.string() + ".staging") {
        if (fs::exists(target))
            throw ValidationExit("output directory already exists: " + target.string());
        fs::remove_all(staging);
        fs::create_directories(staging);
    }
    void commit() {
        fs::rename(staging, target);
        committed = true;
    }
    ~StagedDir() {
        if (!committed) fs::remove_all(staging);
    }
};

TrainConfig train_config_from_json(const json& j) {
    TrainConfig tc;
    tc.epochs = j.value("epochs", tc.epochs);
    tc.batch_size = j.value("batch_size", tc.batch_size);
    tc.lr = j.value("lr", tc.lr);
    tc.beta1 = j.value("beta1", tc.beta1);
    tc.beta2 = j.value("beta2", tc.beta2);
    tc.adam_eps = j.value("adam_eps", tc.adam_eps);
    tc.seed = j.value("seed", tc.seed);
    tc.checkpoint_interval = j.value("checkpoint_interval", tc.checkpoint_interval);
    return tc;
}

json train_config_to_json(const TrainConfig& tc) {
    return json{{"epochs", tc.epochs},
                {"batch_size", tc.batch_size},
                {"lr", tc.lr},
                {"beta1", tc.beta1},
                {"beta2", tc.beta2},
                {"adam_eps", tc.adam_eps},
                {"seed", tc.seed},
                {"checkpoint_interval", tc.checkpoint_interval}};
}

// Model sized to a dataset when the config file leaves dimensions at zero.
void fill_model_dims(ModelConfig& mc, const GzslDataset& ds) {
    if (mc.dsvtm.n_attrs == 0) mc.dsvtm.n_attrs = ds.config.n_attrs;
    if (mc.dsvtm.n_patches == 0) mc.dsvtm.n_patches = ds.config.n_patches;
    if (mc.backbone.n_patches == 0) mc.backbone.n_patches = ds.config.n_patches;
    if (mc.backbone.in_dim == 0) mc.backbone.in_dim = ds.config.in_dim;
    if (mc.backbone.dim == 0)
        mc.backbone.dim = (mc.backbone.mode == BackboneConfig::Mode::Identity ||
                           mc.dsvtm.dim == 0)
                              ? ds.config.in_dim
                              : mc.dsvtm.dim;
    if (mc.dsvtm.dim == 0) mc.dsvtm.dim = mc.backbone.dim;
    if (mc.d_sem == 0) mc.d_sem = ds.config.d_sem;
    if (mc.dsvtm.n_groups == 1 && ds.config.n_groups > 1)
        mc.dsvtm.n_groups = ds.config.n_groups;
}

int cmd_gen_data(const std::string& config_path, const std::string& preset,
                 const fs::path& out, std::optional<std::uint64_t> seed) {
    GenConfig cfg = preset.empty() ? GenConfig{} : preset_config(preset);
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ValidationExit("cannot open " + config_path);
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        // File values override the preset; flags override the file.
        GenConfig base = cfg;
        json j = json::parse(text, nullptr, false);
        if (j.is_discarded())
            throw ValidationExit("malformed JSON in " + config_path);
        json merged = json::parse(gen_config_to_json(base));
        merged.merge_patch(j);
        cfg = gen_config_from_json(merged.dump());
    }
    if (seed) cfg.seed = *seed;

    GzslDataset ds = generate(cfg);
    StagedDir staged(out);
    save_dataset(ds, staged.staging);
    staged.commit();
    std::cout << "wrote dataset (" << ds.instances.size() << " samples, "
              << ds.n_classes() << " classes) to " << out.string() << "\n";
    return kExitOk;
}

int cmd_train(const fs::path& data_dir, const std::string& config_path,
              const fs::path& out, std::optional<std::size_t> epochs,
              std::optional<std::uint64_t> seed) {
    GzslDataset ds = load_dataset(data_dir);
    json cfg = load_json_file(config_path);
    if (!cfg.contains("model"))
        throw ValidationExit("training config needs a \"model\" section");
    ModelConfig mc = model_config_from_json(cfg.at("model").dump());
    fill_model_dims(mc, ds);
    TrainConfig tc = train_config_from_json(cfg.value("train", json::object()));
    if (epochs) tc.epochs = *epochs;
    if (seed) {
        tc.seed = *seed;
        mc.seed = *seed;
    }

    PsvmaModel model(mc);
    Trainer trainer(model, ds, tc);

    StagedDir staged(out);
    std::vector<EpochMetrics> log;
    try {
        log = trainer.run(0, staged.staging / "checkpoint");
    } catch (const NumericalFailure& e) {
        throw NumericalExit(e.what());
    }
    write_metrics_csv(staged.staging / "metrics.csv", log);
    json echo{{"model", json::parse(model_config_to_json(mc))},
              {"train", train_config_to_json(tc)},
              {"data", data_dir.string()}};
    write_text(staged.staging / "config.json", echo.dump(2));
    staged.commit();
    std::cout << "trained " << tc.epochs << " epochs; final loss "
              << (log.empty() ? 0.0 : log.back().total) << "; outputs in "
              << out.string() << "\n";
    return kExitOk;
}

int cmd_eval(const fs::path& ckpt_dir, const fs::path& data_dir, double gamma,
             const fs::path& out_dir) {
    GzslDataset ds = load_dataset(data_dir);
    Checkpoint ck = checkpoint_load(ckpt_dir);
    EvalReport rep = evaluate(ck.model, ds, gamma);
    fs::create_directories(out_dir);
    write_report_json(out_dir / "report.json", rep);
    json echo{{"model", json::parse(model_config_to_json(ck.model.config()))},
              {"checkpoint", ckpt_dir.string()},
              {"data", data_dir.string()},
              {"gamma", gamma}};
    write_text(out_dir / "eval_config.json", echo.dump(2));
    std::cout << "U=" << 100 * rep.U << "% S=" << 100 * rep.S
              << "% H=" << 100 * rep.H << "% (gamma " << gamma << ")\n";
    return kExitOk;
}

int cmd_sweep(const fs::path& ckpt_dir, const fs::path& data_dir, double from,
              double to, std::size_t steps, const fs::path& out_dir) {
    if (steps < 1) throw ValidationExit("--steps must be >= 1");
    if (to < from) throw ValidationExit("--to must be >= --from");
    GzslDataset ds = load_dataset(data_dir);
    Checkpoint ck = checkpoint_load(ckpt_dir);

    std::vector<double> gammas;
    for (std::size_t i = 0; i < steps; ++i)
        gammas.push_back(steps == 1 ? from
                                    : from + (to - from) * static_cast<double>(i) /
                                                 static_cast<double>(steps - 1));
    ScoreTable table = compute_scores(ck.model, ds);
    auto reports = gamma_sweep(table, gammas);
    fs::create_directories(out_dir);
    write_sweep_csv(out_dir / "sweep.csv", reports);
    json echo{{"model", json::parse(model_config_to_json(ck.model.config()))},
              {"checkpoint", ckpt_dir.string()},
              {"data", data_dir.string()},
              {"from", from},
              {"to", to},
              {"steps", steps}};
    write_text(out_dir / "sweep_config.json", echo.dump(2));

    std::size_t best = best_h_index(reports);
    std::cout << "best H " << 100 * reports[best].H << "% at gamma "
              << reports[best].gamma << " (" << steps << " points)\n";
    return kExitOk;
}

int cmd_gradcheck(const std::string& config_path, bool full, const fs::path& out_file) {
    json cfg = load_json_file(config_path);
    if (!cfg.contains("model"))
        throw ValidationExit("gradcheck config needs a \"model\" section");
    GenConfig gc = gen_config_from_json(cfg.value("gen", json::object()).dump());
    GzslDataset ds = generate(gc);
    ModelConfig mc = model_config_from_json(cfg.at("model").dump());
    fill_model_dims(mc, ds);
    PsvmaModel model(mc);

    json opts = cfg.value("gradcheck", json::object());
    const double h = opts.value("h", 1e-5);
    const double threshold = opts.value("threshold", 1e-4);
    const double perturb = opts.value("perturb_sigma", 0.3);
    std::size_t batch_n = opts.value("batch", std::size_t{2});

    // Move off the near-symmetric init so no true gradient sits below the
    // finite-difference noise floor.
    if (perturb > 0) {
        std::mt19937_64 rng(mc.seed ^ 0xabcdef12345ull);
        std::normal_distribution<double> gauss(0.0, perturb);
        for (auto& [name, t] : model.params().all_mut())
            for (double& v : t.data) v += gauss(rng);
    }

    std::vector<std::size_t> batch = ds.sample_ids(Split::SeenTrain);
    if (batch.empty()) throw ValidationExit("generated dataset has no train split");
    if (batch.size() > batch_n) batch.resize(batch_n);

    auto loss_fn = [&]() {
        Tape tape;
        Bound p(tape, model.params());
        return model.forward_batch(tape, p, ds, batch).total.scalar();
    };

    Tape tape;
    Bound p(tape, model.params());
    auto loss = model.forward_batch(tape, p, ds, batch);
    tape.backward(loss.total);
    auto analytic = tape.param_grads();

    std::map<std::string, std::vector<double>*> views;
    std::size_t probed = 0;
    for (auto& [name, t] : model.params().all_mut()) {
        views[name] = &t.data;
        probed += t.numel();
        // The quick mode stops after a representative slice of parameters.
        if (!full && views.size() >= 8) break;
    }

    auto report = oracle::finite_diff_grad(loss_fn, views, analytic, h, threshold);
    if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
    write_text(out_file, report.to_json());
    std::cout << (report.pass ? "gradcheck passed" : "gradcheck FAILED")
              << ": max rel err " << report.max_rel_err << " over " << probed
              << " scalars (" << views.size() << " parameters"
              << (full ? "" : ", quick mode") << ") -> " << out_file.string() << "\n";
    if (!report.pass) throw NumericalExit("gradient check failed");
    return kExitOk;
}

int cmd_export_attn(const fs::path& ckpt_dir, const fs::path& data_dir,
                    std::size_t sample, const fs::path& out) {
    GzslDataset ds = load_dataset(data_dir);
    Checkpoint ck = checkpoint_load(ckpt_dir);
    StagedDir staged(out);
    export_affinities(ck.model, ds, sample, staged.staging);
    json echo{{"model", json::parse(model_config_to_json(ck.model.config()))},
              {"checkpoint", ckpt_dir.string()},
              {"data", data_dir.string()},
              {"sample", sample}};
    write_text(staged.staging / "export_config.json", echo.dump(2));
    staged.commit();
    std::cout << "wrote affinity matrices for sample " << sample << " to "
              << out.string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"generalized zero-shot learning with progressively adapted "
                 "semantic prototypes: data, training, and evaluation"};
    app.require_subcommand(1);

    std::string config_path, preset;
    std::string data_dir, ckpt_dir, out_dir = ".";
    double gamma = 0.0, from = 0.0, to = 0.0;
    std::size_t steps = 1, sample = 0;
    bool full = false;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--config", config_path, "generation config (JSON)");
    gen->add_option("--preset", preset, "dataset-shape preset")
        ->check(CLI::IsMember({"toy", "cub-shape", "sun-shape", "awa2-shape"}));
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--seed", seed, "override the config seed");

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--config", config_path, "run config (JSON)")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--epochs", epochs, "override epochs");
    train->add_option("--seed", seed, "override model and shuffle seed");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--gamma", gamma, "calibrated-stacking offset")->required();
    ev->add_option("--out", out_dir, "output directory (default .)");

    auto* sweep = app.add_subcommand("sweep-gamma", "sweep the calibration offset");
    sweep->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    sweep->add_option("--data", data_dir, "dataset directory")->required();
    sweep->add_option("--from", from, "first gamma")->required();
    sweep->add_option("--to", to, "last gamma")->required();
    sweep->add_option("--steps", steps, "number of sweep points")->required();
    sweep->add_option("--out", out_dir, "output directory (default .)");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit");
    gradcheck->add_option("--config", config_path, "run config (JSON)")->required();
    gradcheck->add_flag("--full", full, "check every parameter (slow)");
    gradcheck->add_option("--out", out_dir, "output directory (default .)");

    auto* attn = app.add_subcommand("export-attn", "dump affinity matrices");
    attn->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    attn->add_option("--data", data_dir, "dataset directory")->required();
    attn->add_option("--sample", sample, "sample id")->required();
    attn->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed())
            return cmd_gen_data(config_path, preset, out_dir, seed);
        if (train->parsed())
            return cmd_train(data_dir, config_path, out_dir, epochs, seed);
        if (ev->parsed()) return cmd_eval(ckpt_dir, data_dir, gamma, out_dir);
        if (sweep->parsed())
            return cmd_sweep(ckpt_dir, data_dir, from, to, steps, out_dir);
        if (gradcheck->parsed())
            return cmd_gradcheck(config_path, full,
                                 fs::path(out_dir) / "gradcheck.json");
        if (attn->parsed()) return cmd_export_attn(ckpt_dir, data_dir, sample, out_dir);
    } catch (const NumericalExit& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const NumericalFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitUsage;
}
