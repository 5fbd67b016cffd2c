#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <vector>

#include "psvma/model.hpp"

namespace psvma {

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    std::size_t checkpoint_interval = 0;   // 0: only final
    // Optional per-step learning-rate hook; identity when unset.
    std::function<double(std::size_t step, double lr)> lr_schedule;

    void validate() const {
        if (!(lr >= 0)) throw ContractError("learning rate must be >= 0");
        if (batch_size < 1) throw ContractError("batch size must be >= 1");
    }
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double cls = 0, sem = 0, deb = 0, total = 0;
    double train_acc = 0;
};

struct NumericalFailure : std::runtime_error {
    std::size_t batch_index;
    NumericalFailure(const std::string& msg, std::size_t batch)
        : std::runtime_error(msg), batch_index(batch) {}
};

// Adam slots, keyed by parameter name.
struct AdamState {
    std::map<std::string, std::vector<double>> m, v;
    std::size_t step = 0;
};

class Trainer {
public:
    Trainer(PsvmaModel& model, const GzslDataset& dataset, TrainConfig cfg);

    // One optimizer step over the given samples; returns the batch metrics.
    PsvmaModel::BatchLoss step(const std::vector<std::size_t>& sample_ids);

    // Full run (or resumption from `start_epoch`). Epoch shuffles are
    // reseeded per epoch, so a resumed run replays the same batch order.
    std::vector<EpochMetrics> run(std::size_t start_epoch = 0,
                                  const std::filesystem::path& checkpoint_dir = {});

    AdamState& adam() { return adam_; }
    std::size_t epochs_done() const { return epochs_done_; }
    void set_epochs_done(std::size_t e) { epochs_done_ = e; }

private:
    PsvmaModel& model_;
    const GzslDataset& dataset_;
    TrainConfig cfg_;
    AdamState adam_;
    std::vector<std::size_t> train_ids_;
    std::size_t epochs_done_ = 0;

    void apply_adam(const std::map<std::string, std::vector<double>>& grads);
};

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<EpochMetrics>& metrics);

// Checkpoint: manifest.json (config echo, shapes, hashes, optimizer step)
// plus params.f64 / adam_m.f64 / adam_v.f64 blobs.
void checkpoint_save(const PsvmaModel& model, const std::filesystem::path& dir,
                     const AdamState* adam = nullptr, std::size_t epochs_done = 0);
struct Checkpoint {
    PsvmaModel model;
    AdamState adam;
    bool has_adam = false;
    std::size_t epochs_done = 0;
};
Checkpoint checkpoint_load(const std::filesystem::path& dir);

// JSON <-> configs, shared by checkpoints and the CLI.
ModelConfig model_config_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& cfg);

}  // namespace psvma
