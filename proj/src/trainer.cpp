#include "psvma/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "psvma/io.hpp"

namespace psvma {

using nlohmann::json;

Trainer::Trainer(PsvmaModel& model, const GzslDataset& dataset, TrainConfig cfg)
    : model_(model), dataset_(dataset), cfg_(cfg) {
    cfg_.validate();
    train_ids_ = dataset_.sample_ids(Split::SeenTrain);
    if (train_ids_.empty())
        throw ContractError("training requires a seen-train split");
}

void Trainer::apply_adam(const std::map<std::string, std::vector<double>>& grads) {
    ++adam_.step;
    double lr = cfg_.lr;
    if (cfg_.lr_schedule) lr = cfg_.lr_schedule(adam_.step, lr);
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(adam_.step));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(adam_.step));
    for (const auto& [name, g] : grads) {
        Tensor& p = model_.params().get_mut(name);
        auto& m = adam_.m[name];
        auto& v = adam_.v[name];
        if (m.empty()) m.assign(g.size(), 0.0);
        if (v.empty()) v.assign(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            double mhat = m[i] / bias1;
            double vhat = v[i] / bias2;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
        }
    }
}

PsvmaModel::BatchLoss Trainer::step(const std::vector<std::size_t>& sample_ids) {
    Tape tape;
    Bound p(tape, model_.params());
    PsvmaModel::BatchLoss loss = model_.forward_batch(tape, p, dataset_, sample_ids);
    tape.backward(loss.total);
    apply_adam(tape.param_grads());
    return loss;
}

std::vector<EpochMetrics> Trainer::run(std::size_t start_epoch,
                                       const std::filesystem::path& checkpoint_dir) {
    std::vector<EpochMetrics> log;
    for (std::size_t epoch = start_epoch; epoch < cfg_.epochs; ++epoch) {
        std::vector<std::size_t> order = train_ids_;
        std::mt19937_64 shuffle_rng(cfg_.seed + 0x9e3779b97f4a7c15ull * (epoch + 1));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        EpochMetrics em;
        em.epoch = epoch;
        std::size_t correct = 0, batches = 0;
        for (std::size_t off = 0; off < order.size(); off += cfg_.batch_size) {
            std::vector<std::size_t> batch(
                order.begin() + static_cast<std::ptrdiff_t>(off),
                order.begin() + static_cast<std::ptrdiff_t>(
                                    std::min(off + cfg_.batch_size, order.size())));
            PsvmaModel::BatchLoss loss = step(batch);
            double total = loss.total.scalar();
            if (!std::isfinite(total))
                throw NumericalFailure("non-finite loss at epoch " +
                                           std::to_string(epoch) + ", batch " +
                                           std::to_string(batches),
                                       batches);
            em.cls += loss.cls;
            em.sem += loss.sem;
            em.deb += loss.deb;
            em.total += total;
            correct += loss.correct;
            ++batches;
        }
        em.cls /= static_cast<double>(batches);
        em.sem /= static_cast<double>(batches);
        em.deb /= static_cast<double>(batches);
        em.total /= static_cast<double>(batches);
        em.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        log.push_back(em);
        epochs_done_ = epoch + 1;

        if (!checkpoint_dir.empty() && cfg_.checkpoint_interval > 0 &&
            (epoch + 1) % cfg_.checkpoint_interval == 0)
            checkpoint_save(model_, checkpoint_dir, &adam_, epochs_done_);
    }
    if (!checkpoint_dir.empty())
        checkpoint_save(model_, checkpoint_dir, &adam_, epochs_done_);
    return log;
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<EpochMetrics>& metrics) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << "epoch,cls,sem,deb,total,seen_train_acc\n";
    f.precision(17);
    for (const EpochMetrics& m : metrics)
        f << m.epoch << "," << m.cls << "," << m.sem << "," << m.deb << ","
          << m.total << "," << m.train_acc << "\n";
}

namespace {

json backbone_to_json(const BackboneConfig& b) {
    return json{{"mode", b.mode == BackboneConfig::Mode::Identity ? "identity"
                                                                  : "toy-encoder"},
                {"layers", b.layers},
                {"n_patches", b.n_patches},
                {"dim", b.dim},
                {"in_dim", b.in_dim},
                {"mlp_ratio", b.mlp_ratio},
                {"side_branch", b.side_branch}};
}

json dsvtm_to_json(const DsvtmConfig& d) {
    return json{{"n_attrs", d.n_attrs},       {"n_patches", d.n_patches},
                {"dim", d.dim},               {"n_groups", d.n_groups},
                {"r_loops", d.r_loops},       {"z_modules", d.z_modules},
                {"n_hidden", d.n_hidden},     {"mlp_ratio", d.mlp_ratio},
                {"attn_scale", d.attn_scale}, {"anchor_original", d.anchor_original},
                {"restart_semantics", d.restart_semantics},
                {"disable_imse", d.disable_imse}};
}

json model_to_json(const ModelConfig& cfg) {
    return json{{"backbone", backbone_to_json(cfg.backbone)},
                {"dsvtm", dsvtm_to_json(cfg.dsvtm)},
                {"loss",
                 {{"lambda_sem", cfg.loss.lambda_sem},
                  {"lambda_deb", cfg.loss.lambda_deb},
                  {"tau", cfg.loss.tau}}},
                {"d_sem", cfg.d_sem},
                {"seed", cfg.seed}};
}

// Missing keys keep defaults, so hand-written configs can stay short;
// checkpoints always store the complete object.
ModelConfig model_from_json(const json& j) {
    ModelConfig cfg;
    const json b = j.value("backbone", json::object());
    std::string mode = b.value("mode", std::string("toy-encoder"));
    if (mode == "identity")
        cfg.backbone.mode = BackboneConfig::Mode::Identity;
    else if (mode == "toy-encoder")
        cfg.backbone.mode = BackboneConfig::Mode::ToyEncoder;
    else
        throw ContractError("unknown backbone mode: " + mode);
    cfg.backbone.layers = b.value("layers", cfg.backbone.layers);
    cfg.backbone.n_patches = b.value("n_patches", cfg.backbone.n_patches);
    cfg.backbone.dim = b.value("dim", cfg.backbone.dim);
    cfg.backbone.in_dim = b.value("in_dim", cfg.backbone.in_dim);
    cfg.backbone.mlp_ratio = b.value("mlp_ratio", cfg.backbone.mlp_ratio);
    cfg.backbone.side_branch = b.value("side_branch", cfg.backbone.side_branch);
    const json d = j.value("dsvtm", json::object());
    cfg.dsvtm.n_attrs = d.value("n_attrs", cfg.dsvtm.n_attrs);
    cfg.dsvtm.n_patches = d.value("n_patches", cfg.dsvtm.n_patches);
    cfg.dsvtm.dim = d.value("dim", cfg.dsvtm.dim);
    cfg.dsvtm.n_groups = d.value("n_groups", cfg.dsvtm.n_groups);
    cfg.dsvtm.r_loops = d.value("r_loops", cfg.dsvtm.r_loops);
    cfg.dsvtm.z_modules = d.value("z_modules", cfg.dsvtm.z_modules);
    cfg.dsvtm.n_hidden = d.value("n_hidden", cfg.dsvtm.n_hidden);
    cfg.dsvtm.mlp_ratio = d.value("mlp_ratio", cfg.dsvtm.mlp_ratio);
    cfg.dsvtm.attn_scale = d.value("attn_scale", cfg.dsvtm.attn_scale);
    cfg.dsvtm.anchor_original = d.value("anchor_original", cfg.dsvtm.anchor_original);
    cfg.dsvtm.restart_semantics = d.value("restart_semantics", cfg.dsvtm.restart_semantics);
    cfg.dsvtm.disable_imse = d.value("disable_imse", cfg.dsvtm.disable_imse);
    const json l = j.value("loss", json::object());
    cfg.loss.lambda_sem = l.value("lambda_sem", cfg.loss.lambda_sem);
    cfg.loss.lambda_deb = l.value("lambda_deb", cfg.loss.lambda_deb);
    cfg.loss.tau = l.value("tau", cfg.loss.tau);
    cfg.d_sem = j.value("d_sem", cfg.d_sem);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

void compare_configs(const json& stored, const json& expected, const std::string& path,
                     std::string& first_diff) {
    if (stored.is_object() && expected.is_object()) {
        for (const auto& [k, v] : expected.items()) {
            if (!stored.contains(k)) {
                if (first_diff.empty()) first_diff = path + k;
                continue;
            }
            compare_configs(stored.at(k), v, path + k + ".", first_diff);
        }
        return;
    }
    if (stored != expected && first_diff.empty())
        first_diff = path.empty() ? "(root)" : path.substr(0, path.size() - 1);
}

}  // namespace

ModelConfig model_config_from_json(const std::string& text) {
    return model_from_json(json::parse(text));
}

std::string model_config_to_json(const ModelConfig& cfg) {
    return model_to_json(cfg).dump(2);
}

void checkpoint_save(const PsvmaModel& model, const std::filesystem::path& dir,
                     const AdamState* adam, std::size_t epochs_done) {
    std::filesystem::create_directories(dir);

    std::vector<double> flat;
    json shapes = json::object();
    for (const auto& [name, t] : model.params().all()) {
        shapes[name] = {t.rows, t.cols};
        flat.insert(flat.end(), t.data.begin(), t.data.end());
    }
    io::write_f64(dir / "params.f64", flat);

    json manifest;
    manifest["schema_version"] = 1;
    manifest["config"] = json::parse(model_config_to_json(model.config()));
    manifest["param_shapes"] = shapes;
    manifest["epochs_done"] = epochs_done;
    if (adam) {
        std::vector<double> m, v;
        for (const auto& [name, t] : model.params().all()) {
            auto mi = adam->m.find(name);
            auto vi = adam->v.find(name);
            const std::vector<double> zero(t.numel(), 0.0);
            const auto& mvec = mi != adam->m.end() ? mi->second : zero;
            const auto& vvec = vi != adam->v.end() ? vi->second : zero;
            m.insert(m.end(), mvec.begin(), mvec.end());
            v.insert(v.end(), vvec.begin(), vvec.end());
        }
        io::write_f64(dir / "adam_m.f64", m);
        io::write_f64(dir / "adam_v.f64", v);
        manifest["adam_step"] = adam->step;
        manifest["files"]["adam_m.f64"] = io::sha256_file(dir / "adam_m.f64");
        manifest["files"]["adam_v.f64"] = io::sha256_file(dir / "adam_v.f64");
    }
    manifest["files"]["params.f64"] = io::sha256_file(dir / "params.f64");

    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
}

Checkpoint checkpoint_load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in)
        throw DatasetIoError("missing checkpoint manifest: " +
                             (dir / "manifest.json").string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw DatasetIoError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    if (manifest.value("schema_version", -1) != 1)
        throw DatasetIoError("unsupported checkpoint schema version");

    ModelConfig cfg = model_config_from_json(manifest.at("config").dump());
    Checkpoint ck{PsvmaModel(cfg), {}, false, manifest.value("epochs_done", std::size_t{0})};

    // The freshly constructed model defines the expected parameter set; the
    // stored shapes must agree field for field.
    json expected = json::object();
    std::size_t total = 0;
    for (const auto& [name, t] : ck.model.params().all()) {
        expected[name] = {t.rows, t.cols};
        total += t.numel();
    }
    std::string diff;
    compare_configs(manifest.at("param_shapes"), expected, "", diff);
    if (manifest.at("param_shapes") != expected)
        throw DatasetIoError("checkpoint/config mismatch at parameter: " +
                             (diff.empty() ? "(shape set)" : diff));

    for (const auto& [file, hash] : manifest.at("files").items()) {
        if (io::sha256_file(dir / file) != hash.get<std::string>())
            throw DatasetIoError("checksum mismatch for " + (dir / file).string());
    }

    auto flat = io::read_f64(dir / "params.f64", total);
    std::size_t off = 0;
    for (auto& [name, t] : ck.model.params().all_mut()) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + t.numel()),
                  t.data.begin());
        off += t.numel();
    }

    if (manifest.contains("adam_step")) {
        ck.has_adam = true;
        ck.adam.step = manifest.at("adam_step");
        auto m = io::read_f64(dir / "adam_m.f64", total);
        auto v = io::read_f64(dir / "adam_v.f64", total);
        off = 0;
        for (const auto& [name, t] : ck.model.params().all()) {
            ck.adam.m[name].assign(m.begin() + static_cast<std::ptrdiff_t>(off),
                                   m.begin() + static_cast<std::ptrdiff_t>(off + t.numel()));
            ck.adam.v[name].assign(v.begin() + static_cast<std::ptrdiff_t>(off),
                                   v.begin() + static_cast<std::ptrdiff_t>(off + t.numel()));
            off += t.numel();
        }
    }
    return ck;
}

}  // namespace psvma
