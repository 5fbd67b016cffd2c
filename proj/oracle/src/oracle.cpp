#include "psvma/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace psvma::oracle {

Mat zeros(std::size_t r, std::size_t c) { return Mat(r, Vec(c, 0.0)); }

Mat matmul(const Mat& a, const Mat& b) {
    if (a.empty() || b.empty() || a[0].size() != b.size())
        throw std::runtime_error("oracle matmul: shape mismatch");
    Mat out = zeros(a.size(), b[0].size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b[0].size(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
            out[i][j] = s;
        }
    return out;
}

Mat transpose(const Mat& a) {
    Mat out = zeros(a[0].size(), a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
    return out;
}

Mat add(const Mat& a, const Mat& b) {
    Mat out = a;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) out[i][j] += b[i][j];
    return out;
}

Mat layer_norm(const Mat& x, const Vec& gamma, const Vec& beta, double eps) {
    Mat out = x;
    std::size_t d = x[0].size();
    for (std::size_t i = 0; i < x.size(); ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x[i][j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (x[i][j] - mu) * (x[i][j] - mu);
        var /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j)
            out[i][j] = gamma[j] * (x[i][j] - mu) / std::sqrt(var + eps) + beta[j];
    }
    return out;
}

Mat softmax_rows(const Mat& x) {
    Mat out = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double mx = x[i][0];
        for (double v : x[i]) mx = v > mx ? v : mx;
        double sum = 0.0;
        for (std::size_t j = 0; j < x[i].size(); ++j) {
            out[i][j] = std::exp(x[i][j] - mx);
            sum += out[i][j];
        }
        for (std::size_t j = 0; j < x[i].size(); ++j) out[i][j] /= sum;
    }
    return out;
}

Vec gmp_rows(const Mat& x) {
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double mx = x[i][0];
        for (double v : x[i]) mx = v > mx ? v : mx;
        out[i] = mx;
    }
    return out;
}

Vec gmp_cols(const Mat& x) {
    Vec out(x[0].size());
    for (std::size_t j = 0; j < x[0].size(); ++j) {
        double mx = x[0][j];
        for (std::size_t i = 1; i < x.size(); ++i) mx = x[i][j] > mx ? x[i][j] : mx;
        out[j] = mx;
    }
    return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Mat map_gelu(const Mat& x) {
    Mat out = x;
    for (auto& row : out)
        for (double& v : row) v = gelu(v);
    return out;
}

Mat map_sigmoid(const Mat& x) {
    Mat out = x;
    for (auto& row : out)
        for (double& v : row) v = sigmoid(v);
    return out;
}

Mat linear(const Mat& x, const Mat& w, const Vec& bias) {
    Mat out = matmul(x, w);
    if (!bias.empty())
        for (auto& row : out)
            for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
    return out;
}

AttnResult cross_attention(const Mat& query_rows, const Mat& key_rows,
                           const Mat& residual, const AttnParams& p) {
    Mat qi = layer_norm(query_rows, p.ln_query_side.gamma, p.ln_query_side.beta);
    Mat ki = layer_norm(key_rows, p.ln_key_side.gamma, p.ln_key_side.beta);
    Mat q = linear(qi, p.wq, p.bq);
    Mat k = linear(ki, p.wk, p.bk);
    Mat v = linear(ki, p.wv, p.bv);
    AttnResult res;
    res.affinity = matmul(q, transpose(k));
    if (p.scale) {
        double s = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
        for (auto& row : res.affinity)
            for (double& x : row) x *= s;
    }
    res.output = add(matmul(softmax_rows(res.affinity), v), residual);
    return res;
}

double semantic_alignment_loss(const Mat& affinity, const Vec& a_y) {
    Vec pooled = gmp_rows(affinity);
    double loss = 0.0;
    for (std::size_t i = 0; i < pooled.size(); ++i)
        loss += (pooled[i] - a_y[i]) * (pooled[i] - a_y[i]);
    return loss;
}

Mat attribute_group_gate(const Mat& s_attr, const Mat& w1, const Mat& w2) {
    Vec pooled = gmp_rows(s_attr);
    Mat row{pooled};
    Mat gate = map_sigmoid(matmul(map_gelu(matmul(row, w1)), w2));
    Mat out = s_attr;
    for (std::size_t i = 0; i < s_attr.size(); ++i)
        for (std::size_t j = 0; j < s_attr[0].size(); ++j)
            out[i][j] = gate[0][i] * s_attr[i][j] + s_attr[i][j];
    return out;
}

Mat mlp(const Mat& x, const MlpParams& p) {
    return linear(map_gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

Mat attribute_activate(const Mat& s_bar, const Mat& s_attr, const MlpParams& p) {
    return add(add(mlp(s_bar, p), s_bar), s_attr);
}

Mat patch_mixing(const Mat& f_tilde, const Mat& we, const Mat& ws, const Mat& wn) {
    Mat ft = transpose(f_tilde);
    Mat fe = map_gelu(matmul(ft, we));
    Mat fs = map_gelu(matmul(fe, ws));
    Mat fn = matmul(fs, wn);   // linear bottleneck: no activation
    return add(transpose(fn), f_tilde);
}

Mat patch_activate(const Mat& f_bar, const MlpParams& p) {
    return add(mlp(f_bar, p), f_bar);
}

Vec class_head(const Mat& f_hat, const Mat& w) {
    Vec pooled = gmp_cols(f_hat);   // max over patches, one entry per feature
    Mat row{pooled};
    return matmul(row, w)[0];
}

Vec cosine_scores(const Vec& pred, const Mat& prototypes, double tau) {
    double pn = 0.0;
    for (double v : pred) pn += v * v;
    pn = std::sqrt(pn);
    Vec out(prototypes.size(), 0.0);
    for (std::size_t c = 0; c < prototypes.size(); ++c) {
        double an = 0.0, dot = 0.0;
        for (std::size_t j = 0; j < pred.size(); ++j) {
            an += prototypes[c][j] * prototypes[c][j];
            dot += prototypes[c][j] * pred[j];
        }
        an = std::sqrt(an);
        out[c] = (pn == 0.0 || an == 0.0) ? 0.0 : tau * dot / (pn * an);
    }
    return out;
}

double classification_loss(const Vec& scores, const std::vector<std::size_t>& seen,
                           std::size_t y) {
    double mx = scores[seen[0]];
    for (std::size_t c : seen) mx = scores[c] > mx ? scores[c] : mx;
    double sum = 0.0;
    for (std::size_t c : seen) sum += std::exp(scores[c] - mx);
    return std::log(sum) + mx - scores[y];
}

double debias_loss(const Vec& scores, const std::vector<std::size_t>& seen,
                   const std::vector<std::size_t>& unseen) {
    auto stats = [&](const std::vector<std::size_t>& idx) {
        double mu = 0.0;
        for (std::size_t c : idx) mu += scores[c];
        mu /= static_cast<double>(idx.size());
        double var = 0.0;
        for (std::size_t c : idx) var += (scores[c] - mu) * (scores[c] - mu);
        var /= static_cast<double>(idx.size());
        return std::pair<double, double>{mu, var};
    };
    auto [ms, vs] = stats(seen);
    auto [mu, vu] = stats(unseen);
    return (ms - mu) * (ms - mu) + (vs - vu) * (vs - vu);
}

double total_loss(double cls, const Vec& sem_terms, double deb, double lambda_sem,
                  double lambda_deb) {
    double sem = 0.0;
    for (double t : sem_terms) sem += t;
    return cls + lambda_sem * sem + lambda_deb * deb;
}

std::string GradCheckReport::to_json() const {
    std::ostringstream os;
    os.precision(17);
    os << "{\n  \"pass\": " << (pass ? "true" : "false")
       << ",\n  \"max_rel_err\": " << max_rel_err << ",\n  \"threshold\": " << threshold
       << ",\n  \"h\": " << h << ",\n  \"entries\": [\n";
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const GradCheckEntry& e = entries[i];
        os << "    {\"param\": \"" << e.param << "\", \"max_rel_err\": " << e.max_rel_err
           << ", \"worst_index\": " << e.worst_index << ", \"analytic\": " << e.analytic
           << ", \"numeric\": " << e.numeric << ", \"pass\": " << (e.pass ? "true" : "false")
           << "}" << (i + 1 < entries.size() ? "," : "") << "\n";
    }
    os << "  ]\n}\n";
    return os.str();
}

GradCheckReport finite_diff_grad(
    const std::function<double()>& loss_fn,
    const std::map<std::string, std::vector<double>*>& params,
    const std::map<std::string, std::vector<double>>& analytic, double h,
    double threshold) {
    if (h < 1e-7 || h > 1e-3)
        throw std::runtime_error("finite_diff_grad: h must lie in [1e-7, 1e-3]");
    constexpr double delta = 1e-8;
    GradCheckReport report;
    report.h = h;
    report.threshold = threshold;
    for (const auto& [name, values] : params) {
        auto it = analytic.find(name);
        if (it == analytic.end())
            throw std::runtime_error("finite_diff_grad: no analytic gradient for " + name);
        const std::vector<double>& a = it->second;
        GradCheckEntry entry;
        entry.param = name;
        for (std::size_t i = 0; i < values->size(); ++i) {
            double saved = (*values)[i];
            (*values)[i] = saved + h;
            double up = loss_fn();
            (*values)[i] = saved - h;
            double down = loss_fn();
            (*values)[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                entry.pass = false;
                entry.max_rel_err = std::numeric_limits<double>::infinity();
                entry.worst_index = i;
                break;
            }
            double numeric = (up - down) / (2.0 * h);
            double rel = std::abs(a[i] - numeric) /
                         std::max({std::abs(a[i]), std::abs(numeric), delta});
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = i;
                entry.analytic = a[i];
                entry.numeric = numeric;
            }
        }
        entry.pass = entry.pass && entry.max_rel_err <= threshold;
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.pass = report.pass && entry.pass;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace psvma::oracle
