#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "psvma/numcore.hpp"

namespace psvma {

struct ConfigError : ContractError {
    explicit ConfigError(const std::string& msg) : ContractError(msg) {}
};
struct DatasetIoError : std::runtime_error {
    explicit DatasetIoError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Split { SeenTrain, SeenTest, UnseenTest };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct AttributePrototypeSet {
    Tensor S;                             // N_s x D_sem shared word vectors
    Tensor A;                             // C x N_s category prototypes in [0,1]
    std::vector<std::size_t> group_of;    // attribute -> group id
    std::size_t n_groups = 1;
};

struct GenConfig {
    std::size_t c_seen = 8;
    std::size_t c_unseen = 4;
    std::size_t n_attrs = 12;
    std::size_t n_groups = 3;
    std::size_t n_patches = 8;
    std::size_t in_dim = 16;
    std::size_t d_sem = 16;
    std::size_t variants = 3;             // G renderers per attribute
    std::size_t samples_per_class = 40;
    std::size_t active_per_class = 4;
    double noise_sigma = 0.1;
    double train_fraction = 0.75;
    bool continuous_strengths = false;
    std::uint64_t seed = 1;

    void validate() const;
};

struct GzslDataset {
    GenConfig config;                     // generation echo
    std::vector<Tensor> instances;        // each N_v x D_in
    std::vector<std::size_t> labels;      // class ids; [0, c_seen) seen
    std::vector<Split> splits;
    AttributePrototypeSet prototypes;
    std::vector<std::vector<int>> variant_of;  // class x attribute, -1 = inactive

    std::size_t n_classes() const { return config.c_seen + config.c_unseen; }
    bool is_seen_class(std::size_t c) const { return c < config.c_seen; }
    std::vector<bool> seen_mask() const;
    std::vector<std::size_t> seen_class_ids() const;
    std::vector<std::size_t> unseen_class_ids() const;
    std::vector<std::size_t> sample_ids(Split s) const;

    bool operator==(const GzslDataset& other) const;
};

// Synthetic benchmark with planted attribute-appearance ambiguity: each
// attribute has G visual renderers; classes commit to one renderer per
// active attribute; unseen classes only use renderers some seen class uses.
GzslDataset generate(const GenConfig& config);

// Table-shape presets. Sample counts are desk-scale, not the real datasets'.
GenConfig preset_config(const std::string& name);

void save_dataset(const GzslDataset& dataset, const std::filesystem::path& dir);
GzslDataset load_dataset(const std::filesystem::path& dir);

// JSON <-> GenConfig, the same layout the dataset manifest embeds.
std::string gen_config_to_json(const GenConfig& cfg);
GenConfig gen_config_from_json(const std::string& text);

}  // namespace psvma
