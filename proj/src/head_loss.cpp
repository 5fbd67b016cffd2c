#include "psvma/head_loss.hpp"

#include <algorithm>
#include <cmath>

namespace psvma {

Tensor class_head(Tape& tape, const Tensor& f_hat, const Tensor& w) {
    if (f_hat.cols != w.rows)
        throw ShapeError("class_head: feature width " + f_hat.shape_str() +
                         " vs projection " + w.shape_str());
    Tensor pooled = tape.gmp(f_hat, 0);  // max over patches -> 1 x D
    return tape.matmul(pooled, w);       // 1 x N_s
}

Tensor cosine_scores(Tape& tape, const Tensor& pred, const Tensor& prototypes,
                     double tau) {
    if (pred.rows != 1 || pred.cols != prototypes.cols)
        throw ShapeError("cosine_scores: pred " + pred.shape_str() +
                         " vs prototypes " + prototypes.shape_str());
    // Prototype norms are constants; only pred's norm is dynamic.
    std::vector<double> inv_norm(prototypes.rows);
    for (std::size_t c = 0; c < prototypes.rows; ++c) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < prototypes.cols; ++j)
            n2 += prototypes.at(c, j) * prototypes.at(c, j);
        if (n2 == 0.0)
            throw ContractError("cosine_scores: prototype row " + std::to_string(c) +
                                " is the zero vector");
        inv_norm[c] = 1.0 / std::sqrt(n2);
    }
    Tensor dots = tape.matmul(pred, tape.transpose(Tape::constant(prototypes)));
    Tensor norm = tape.sqrt(tape.sum_all(tape.mul(pred, pred)));
    Tensor cosines = tape.mul_const(tape.div_scalar(dots, norm), inv_norm);
    return tape.scale(cosines, tau);
}

ScoreVector cosine_scores_checked(const std::vector<double>& pred,
                                  const Tensor& prototypes, double tau,
                                  const std::vector<bool>& seen_mask) {
    if (pred.size() != prototypes.cols)
        throw ShapeError("cosine_scores_checked: pred length vs prototypes " +
                         prototypes.shape_str());
    ScoreVector out;
    out.scores.resize(prototypes.rows, 0.0);
    out.zero_norm_flag.resize(prototypes.rows, false);
    out.seen_mask = seen_mask;
    double pn2 = 0.0;
    for (double v : pred) pn2 += v * v;
    double pn = std::sqrt(pn2);
    for (std::size_t c = 0; c < prototypes.rows; ++c) {
        double an2 = 0.0, dot = 0.0;
        for (std::size_t j = 0; j < prototypes.cols; ++j) {
            an2 += prototypes.at(c, j) * prototypes.at(c, j);
            dot += prototypes.at(c, j) * pred[j];
        }
        if (pn == 0.0 || an2 == 0.0) {
            out.zero_norm_flag[c] = true;
            continue;
        }
        out.scores[c] = tau * dot / (pn * std::sqrt(an2));
    }
    return out;
}

Tensor classification_loss(Tape& tape, const Tensor& scores,
                           const std::vector<std::size_t>& seen_classes,
                           std::size_t y) {
    auto pos = std::find(seen_classes.begin(), seen_classes.end(), y);
    if (pos == seen_classes.end())
        throw ContractError("classification_loss: label " + std::to_string(y) +
                            " is not a seen class");
    Tensor seen = tape.gather_cols(scores, seen_classes);
    Tensor lse = tape.log_sum_exp_row(seen);
    Tensor target = tape.pick(seen, static_cast<std::size_t>(pos - seen_classes.begin()));
    return tape.sub(lse, target);
}

namespace {

// mean and population variance of selected score entries, as tape scalars
std::pair<Tensor, Tensor> mean_var(Tape& tape, const Tensor& scores,
                                   const std::vector<std::size_t>& idx) {
    Tensor sel = tape.gather_cols(scores, idx);
    Tensor mu = tape.mean_all(sel);
    Tensor centered = tape.sub_scalar(sel, mu);
    Tensor var = tape.mean_all(tape.mul(centered, centered));
    return {mu, var};
}

}  // namespace

Tensor debias_loss(Tape& tape, const Tensor& scores,
                   const std::vector<std::size_t>& seen_classes,
                   const std::vector<std::size_t>& unseen_classes) {
    if (seen_classes.empty() || unseen_classes.empty())
        throw ContractError("debias_loss: both seen and unseen class sets must be nonempty");
    auto [mu_s, var_s] = mean_var(tape, scores, seen_classes);
    auto [mu_u, var_u] = mean_var(tape, scores, unseen_classes);
    Tensor dm = tape.sub(mu_s, mu_u);
    Tensor dv = tape.sub(var_s, var_u);
    return tape.add(tape.mul(dm, dm), tape.mul(dv, dv));
}

Tensor total_loss(Tape& tape, const Tensor& cls, const std::vector<Tensor>& sem_terms,
                  std::size_t expected_sem_terms, const Tensor& deb,
                  const LossWeights& w) {
    w.validate();
    if (sem_terms.size() != expected_sem_terms)
        throw ContractError("total_loss: expected " + std::to_string(expected_sem_terms) +
                            " semantic terms, got " + std::to_string(sem_terms.size()));
    Tensor total = cls;
    if (!sem_terms.empty()) {
        Tensor sem = sem_terms[0];
        for (std::size_t i = 1; i < sem_terms.size(); ++i)
            sem = tape.add(sem, sem_terms[i]);
        total = tape.add(total, tape.scale(sem, w.lambda_sem));
    }
    return tape.add(total, tape.scale(deb, w.lambda_deb));
}

}  // namespace psvma
