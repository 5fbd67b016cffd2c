#pragma once

#include <cstddef>
#include <vector>

#include "psvma/numcore.hpp"

namespace psvma {

struct LossWeights {
    double lambda_sem = 0.5;
    double lambda_deb = 0.1;
    double tau = 20.0;
    void validate() const {
        if (lambda_sem < 0 || lambda_deb < 0)
            throw ContractError("loss weights must be non-negative");
        if (!(tau > 0)) throw ContractError("tau must be positive");
    }
};

// Per-class scores for one sample, plus which classes are seen.
struct ScoreVector {
    std::vector<double> scores;
    std::vector<bool> seen_mask;
    std::vector<bool> zero_norm_flag;  // scores forced to 0 by a zero-norm fallback

    std::size_t size() const { return scores.size(); }
};

// Pool patches with gmp, then project D -> N_s.
Tensor class_head(Tape& tape, const Tensor& f_hat, const Tensor& w);

// Tau-scaled cosine scores against class prototypes on the tape;
// prototypes are constants with nonzero rows.
Tensor cosine_scores(Tape& tape, const Tensor& pred, const Tensor& prototypes,
                     double tau);

// Detached cosine scores with the zero-norm fallback (score 0, flagged).
ScoreVector cosine_scores_checked(const std::vector<double>& pred,
                                  const Tensor& prototypes, double tau,
                                  const std::vector<bool>& seen_mask);

// Cross-entropy over seen classes only; y indexes into scores (must be seen).
Tensor classification_loss(Tape& tape, const Tensor& scores,
                           const std::vector<std::size_t>& seen_classes,
                           std::size_t y);

// Debiasing term for one sample: squared gaps of mean and population variance
// between seen-class and unseen-class scores.
Tensor debias_loss(Tape& tape, const Tensor& scores,
                   const std::vector<std::size_t>& seen_classes,
                   const std::vector<std::size_t>& unseen_classes);

// Weighted sum: cls + lambda_sem * sum(sem) + lambda_deb * deb.
Tensor total_loss(Tape& tape, const Tensor& cls, const std::vector<Tensor>& sem_terms,
                  std::size_t expected_sem_terms, const Tensor& deb,
                  const LossWeights& w);

}  // namespace psvma
