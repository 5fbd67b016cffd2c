#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psvma/params.hpp"

namespace psvma {

struct BackboneConfig {
    enum class Mode { ToyEncoder, Identity };
    Mode mode = Mode::ToyEncoder;
    std::size_t layers = 4;      // L
    std::size_t n_patches = 0;   // N_v
    std::size_t dim = 0;         // D
    std::size_t in_dim = 0;      // token width before embedding
    std::size_t mlp_ratio = 4;
    bool side_branch = false;    // DSVTM outputs do not re-enter the stream

    void validate(std::size_t z_modules) const;
};

// Small trainable ViT stand-in: linear patch embedding, learned positional
// vectors, then L pre-norm single-head self-attention blocks.
class Backbone {
public:
    Backbone(BackboneConfig cfg, std::string prefix);

    void init_params(ParamStore& store, std::uint64_t seed) const;

    // Per-layer features F^1..F^L (identity mode: the input, L times).
    std::vector<Tensor> encode(Tape& tape, const Bound& p, const Tensor& tokens) const;

    // One block applied to an already-embedded stream (used when DSVTM
    // outputs are threaded back between layers).
    Tensor embed(Tape& tape, const Bound& p, const Tensor& tokens) const;
    Tensor block(Tape& tape, const Bound& p, std::size_t layer, const Tensor& x) const;

    const BackboneConfig& config() const { return cfg_; }

private:
    BackboneConfig cfg_;
    std::string prefix_;
};

}  // namespace psvma
