#pragma once

// Brute-force reference implementations, written with explicit index loops
// and deliberately sharing no code with the main tensor library. This
// target must not link against or include the psvma core.

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace psvma::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;

Mat zeros(std::size_t r, std::size_t c);
Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);
Mat add(const Mat& a, const Mat& b);
Mat layer_norm(const Mat& x, const Vec& gamma, const Vec& beta, double eps = 1e-5);
Mat softmax_rows(const Mat& x);
Vec gmp_rows(const Mat& x);   // per-row max  (axis 1)
Vec gmp_cols(const Mat& x);   // per-column max (axis 0)
double gelu(double x);
double sigmoid(double x);
Mat map_gelu(const Mat& x);
Mat map_sigmoid(const Mat& x);

// Affine pieces used by the transformer stages. Weight is in x out,
// bias may be empty for bare matrices.
Mat linear(const Mat& x, const Mat& w, const Vec& bias);

struct LnParams {
    Vec gamma, beta;
};
struct AttnParams {
    LnParams ln_query_side, ln_key_side;
    Mat wq, wk, wv;
    Vec bq, bk, bv;
    bool scale = false;   // 1/sqrt(D)
};

// Cross-attention: affinity matrix and attended output with residual.
struct AttnResult {
    Mat affinity;
    Mat output;
};
AttnResult cross_attention(const Mat& query_rows, const Mat& key_rows,
                           const Mat& residual, const AttnParams& p);

// ||gmp(m) - a_y||^2
double semantic_alignment_loss(const Mat& affinity, const Vec& a_y);

// Pooled group gate over attribute rows.
Mat attribute_group_gate(const Mat& s_attr, const Mat& w1, const Mat& w2);
// mlp: two affine layers with gelu between
struct MlpParams {
    Mat w1, w2;
    Vec b1, b2;
};
Mat mlp(const Mat& x, const MlpParams& p);
Mat attribute_activate(const Mat& s_bar, const Mat& s_attr, const MlpParams& p);

// Channel-wise patch mixing with a linear bottleneck back to N_v.
Mat patch_mixing(const Mat& f_tilde, const Mat& we, const Mat& ws, const Mat& wn);
// Residual MLP over patch rows.
Mat patch_activate(const Mat& f_bar, const MlpParams& p);

// Pool patches, project to attribute scores.
Vec class_head(const Mat& f_hat, const Mat& w);
// Tau-scaled cosine similarity against each prototype row.
Vec cosine_scores(const Vec& pred, const Mat& prototypes, double tau);
// Cross-entropy over the seen subset; y indexes the full score vector.
double classification_loss(const Vec& scores, const std::vector<std::size_t>& seen,
                           std::size_t y);
// Seen/unseen mean- and variance-gap penalty.
double debias_loss(const Vec& scores, const std::vector<std::size_t>& seen,
                   const std::vector<std::size_t>& unseen);
// cls + lambda_sem * sum(sem) + lambda_deb * deb
double total_loss(double cls, const Vec& sem_terms, double deb, double lambda_sem,
                  double lambda_deb);

// ---- finite differences -------------------------------------------------

struct GradCheckEntry {
    std::string param;
    double max_rel_err = 0;
    std::size_t worst_index = 0;
    double analytic = 0, numeric = 0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0;
    double threshold = 0, h = 0;
    bool pass = true;

    std::string to_json() const;
};

// Central finite differences of `loss_fn` w.r.t. every scalar behind the
//mutable views, compared against `analytic`. Relative error metric:
// |a - n| / max(|a|, |n|, delta), delta = 1e-8.
GradCheckReport finite_diff_grad(
    const std::function<double()>& loss_fn,
    const std::map<std::string, std::vector<double>*>& params,
    const std::map<std::string, std::vector<double>>& analytic, double h,
    double threshold);

}  // namespace psvma::oracle
