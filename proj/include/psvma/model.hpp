#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "psvma/backbone.hpp"
#include "psvma/data.hpp"
#include "psvma/dsvtm.hpp"
#include "psvma/head_loss.hpp"

namespace psvma {

struct ModelConfig {
    BackboneConfig backbone;
    DsvtmConfig dsvtm;
    LossWeights loss;
    std::size_t d_sem = 0;   // width of the incoming S; adapter added if != dim
    std::uint64_t seed = 1;

    void validate() const;
};

// The PSVMA network: Z DSVTMs threaded through the backbone tap points,
// classification head, and the three-term objective.
class PsvmaModel {
public:
    explicit PsvmaModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const Backbone& backbone() const { return backbone_; }
    const std::vector<Dsvtm>& dsvtms() const { return dsvtms_; }

    struct SampleForward {
        Tensor scores;                   // 1 x C, tape-attached
        Tensor pred;                     // 1 x N_s class-embedding prediction
        std::vector<Tensor> sem_terms;   // Z * R alignment losses
        Tensor cls_loss;
        Tensor deb_loss;
        std::vector<DsvtmState> states;  // Z entries
    };

    // Full per-sample pass: backbone with DSVTM insertions, head, scores and
    // all loss terms. `label` must be a seen class when training.
    SampleForward forward_sample(Tape& tape, const Bound& p, const Tensor& tokens,
                                 const AttributePrototypeSet& prototypes,
                                 std::size_t label,
                                 const std::vector<std::size_t>& seen_classes,
                                 const std::vector<std::size_t>& unseen_classes) const;

    struct BatchLoss {
        Tensor total;
        double cls = 0, sem = 0, deb = 0;
        std::size_t correct = 0;   // seen-class argmax hits on the batch
    };
    BatchLoss forward_batch(Tape& tape, const Bound& p, const GzslDataset& ds,
                            const std::vector<std::size_t>& sample_ids) const;

    // Detached inference: per-class cosine scores with zero-norm fallback.
    ScoreVector score_sample(const GzslDataset& ds, std::size_t sample_id) const;

    // Feature path only (no losses); exposes DSVTM states for export.
    std::vector<DsvtmState> run_states(const GzslDataset& ds, std::size_t sample_id) const;

    std::size_t expected_sem_terms() const {
        return cfg_.dsvtm.disable_imse ? 0 : cfg_.dsvtm.z_modules * cfg_.dsvtm.r_loops;
    }

private:
    ModelConfig cfg_;
    Backbone backbone_;
    std::vector<Dsvtm> dsvtms_;
    ParamStore params_;

    // Backbone + DSVTM insertion; returns final features and per-module states.
    std::pair<Tensor, std::vector<DsvtmState>> features(Tape& tape, const Bound& p,
                                                        const Tensor& tokens,
                                                        const Tensor& s_shared) const;
    Tensor adapt_semantics(Tape& tape, const Bound& p, const Tensor& s_raw) const;
};

}  // namespace psvma
