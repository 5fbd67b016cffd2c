#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "psvma/params.hpp"

namespace psvma {

struct DsvtmConfig {
    std::size_t n_attrs = 0;     // N_s
    std::size_t n_patches = 0;   // N_v
    std::size_t dim = 0;         // D
    std::size_t n_groups = 1;    // N_g
    std::size_t r_loops = 2;     // R
    std::size_t z_modules = 2;   // Z
    std::size_t n_hidden = 0;    // N_h; 0 -> 2 * n_patches
    std::size_t mlp_ratio = 4;
    bool attn_scale = false;          // multiply affinities by 1/sqrt(D)
    bool anchor_original = false;     // attention residual: original S at every loop
    bool restart_semantics = false;   // each module restarts from the shared S
    bool disable_imse = false;        // ablation: prototypes frozen at S

    std::size_t hidden() const { return n_hidden ? n_hidden : 2 * n_patches; }
    std::size_t group_width() const { return n_attrs / n_groups; }
    void validate() const;
};

struct DsvtmState {
    std::vector<Tensor> adapted_prototypes;  // one per IMSE loop, N_s x D
    std::vector<Tensor> affinities;          // one per IMSE loop, N_s x N_v
    Tensor decoder_output;                   // N_v x D
};

// One dual semantic-visual transformer module: recurrent IMSE followed by
// SMID. Parameters are shared across the R IMSE loops.
class Dsvtm {
public:
    Dsvtm(DsvtmConfig cfg, std::string prefix);

    void init_params(ParamStore& store, std::uint64_t seed) const;

    // IMSE pieces
    std::pair<Tensor, Tensor> imse_attention(Tape& tape, const Bound& p,
                                             const Tensor& s_in, const Tensor& f,
                                             const Tensor& residual_base) const;
    Tensor attribute_group_gate(Tape& tape, const Bound& p, const Tensor& s_attr) const;
    Tensor attribute_activate(Tape& tape, const Bound& p, const Tensor& s_bar,
                              const Tensor& s_attr) const;
    std::pair<Tensor, std::vector<Tensor>> imse_forward(Tape& tape, const Bound& p,
                                                        const Tensor& s0,
                                                        const Tensor& f) const;
    // SMID pieces
    Tensor smid_attention(Tape& tape, const Bound& p, const Tensor& f,
                          const Tensor& s_hat) const;
    Tensor patch_mixing(Tape& tape, const Bound& p, const Tensor& f_tilde) const;
    Tensor patch_activate(Tape& tape, const Bound& p, const Tensor& f_bar) const;

    DsvtmState forward(Tape& tape, const Bound& p, const Tensor& f,
                       const Tensor& s_in) const;

    const DsvtmConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }

private:
    DsvtmConfig cfg_;
    std::string prefix_;

    Tensor mlp(Tape& tape, const Bound& p, const std::string& which,
               const Tensor& x) const;
};

// || gmp_over_patches(m) - a_y ||^2, the semantic alignment penalty.
Tensor semantic_alignment_loss(Tape& tape, const Tensor& m, const Tensor& a_y);

}  // namespace psvma
