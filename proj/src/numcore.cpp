#include "psvma/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace psvma {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
}

}  // namespace

double gelu_scalar(double x) {
    // Exact Gaussian-CDF form.
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

int Tape::push(std::size_t numel, BackwardFn fn) {
    nodes_.push_back(Node{numel, std::move(fn), {}});
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accum(int node, const std::vector<double>& g) {
    if (node < 0) return;
    Node& n = nodes_[static_cast<std::size_t>(node)];
    if (n.grad.empty()) n.grad.assign(n.numel, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

Tensor Tape::attach(Tensor value, BackwardFn fn) {
    value.node = push(value.numel(), std::move(fn));
    return value;
}

Tensor Tape::leaf(const Tensor& value) {
    Tensor t = value;
    t.node = push(t.numel(), BackwardFn{});
    return t;
}

Tensor Tape::param(const std::string& name, const Tensor& value) {
    if (param_nodes_.count(name))
        throw ContractError("parameter registered twice on one tape: " + name);
    Tensor t = leaf(value);
    param_nodes_[name] = t.node;
    return t;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimensions disagree, " + a.shape_str() +
                         " vs " + b.shape_str());
    Tensor out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            double av = a.at(i, k);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j)
                out.at(i, j) += av * b.at(k, j);
        }
    int an = a.node, bn = b.node;
    Tensor ac = a, bc = b;
    return attach(std::move(out), [an, bn, ac, bc](Tape& t, const std::vector<double>& g) {
        std::size_t m = ac.rows, k = ac.cols, n = bc.cols;
        if (an >= 0) {
            std::vector<double> da(m * k, 0.0);   // G . B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    double gv = g[i * n + j];
                    for (std::size_t p = 0; p < k; ++p)
                        da[i * k + p] += gv * bc.at(p, j);
                }
            t.accum(an, da);
        }
        if (bn >= 0) {
            std::vector<double> db(k * n, 0.0);   // A^T . G
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double av = ac.at(i, p);
                    for (std::size_t j = 0; j < n; ++j)
                        db[p * n + j] += av * g[i * n + j];
                }
            t.accum(bn, db);
        }
    });
}

Tensor Tape::transpose(const Tensor& a) {
    Tensor out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j)
            out.at(j, i) = a.at(i, j);
    int an = a.node;
    std::size_t r = a.rows, c = a.cols;
    return attach(std::move(out), [an, r, c](Tape& t, const std::vector<double>& g) {
        if (an < 0) return;
        std::vector<double> da(r * c);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
                da[i * c + j] = g[j * r + i];
        t.accum(an, da);
    });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.rows, a.cols);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.data[i] + b.data[i];
    int an = a.node, bn = b.node;
    return attach(std::move(out), [an, bn](Tape& t, const std::vector<double>& g) {
        t.accum(an, g);
        t.accum(bn, g);
    });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.rows, a.cols);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.data[i] - b.data[i];
    int an = a.node, bn = b.node;
    return attach(std::move(out), [an, bn](Tape& t, const std::vector<double>& g) {
        t.accum(an, g);
        if (bn >= 0) {
            std::vector<double> nb(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) nb[i] = -g[i];
            t.accum(bn, nb);
        }
    });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.rows, a.cols);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.data[i] * b.data[i];
    int an = a.node, bn = b.node;
    std::vector<double> av = a.data, bv = b.data;
    return attach(std::move(out), [an, bn, av, bv](Tape& t, const std::vector<double>& g) {
        if (an >= 0) {
            std::vector<double> da(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * bv[i];
            t.accum(an, da);
        }
        if (bn >= 0) {
            std::vector<double> db(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) db[i] = g[i] * av[i];
            t.accum(bn, db);
        }
    });
}

Tensor Tape::scale(const Tensor& a, double c) {
    Tensor out(a.rows, a.cols);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.data[i] * c;
    int an = a.node;
    return attach(std::move(out), [an, c](Tape& t, const std::vector<double>& g) {
        if (an < 0) return;
        std::vector<double> da(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * c;
        t.accum(an, da);
    });
}

Tensor Tape::add_row_bias(const Tensor& x, const Tensor& bias) {
    if (bias.rows != 1 || bias.cols != x.cols)
        throw ShapeError("add_row_bias: bias " + bias.shape_str() + " vs x " + x.shape_str());
    Tensor out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j)
            out.at(i, j) = x.at(i, j) + bias.at(0, j);
    int xn = x.node, bn = bias.node;
    std::size_t r = x.rows, c = x.cols;
    return attach(std::move(out), [xn, bn, r, c](Tape& t, const std::vector<double>& g) {
        t.accum(xn, g);
        if (bn >= 0) {
            std::vector<double> db(c, 0.0);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    db[j] += g[i * c + j];
            t.accum(bn, db);
        }
    });
}

Tensor Tape::scale_rows(const Tensor& x, const Tensor& s) {
    if (s.rows != 1 || s.cols != x.rows)
        throw ShapeError("scale_rows: scale " + s.shape_str() + " vs x " + x.shape_str());
    Tensor out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j)
            out.at(i, j) = x.at(i, j) * s.at(0, i);
    int xn = x.node, sn = s.node;
    Tensor xc = x, sc = s;
    return attach(std::move(out), [xn, sn, xc, sc](Tape& t, const std::vector<double>& g) {
        std::size_t r = xc.rows, c = xc.cols;
        if (xn >= 0) {
            std::vector<double> dx(r * c);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    dx[i * c + j] = g[i * c + j] * sc.at(0, i);
            t.accum(xn, dx);
        }
        if (sn >= 0) {
            std::vector<double> ds(r, 0.0);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    ds[i] += g[i * c + j] * xc.at(i, j);
            t.accum(sn, ds);
        }
    });
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        double eps) {
    if (gamma.rows != 1 || gamma.cols != x.cols || beta.rows != 1 || beta.cols != x.cols)
        throw ShapeError("layer_norm: affine params must be 1x" + std::to_string(x.cols));
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    std::size_t r = x.rows, c = x.cols;
    Tensor out(r, c);
    std::vector<double> xhat(r * c), inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += x.at(i, j);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double d = x.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        double istd = 1.0 / std::sqrt(var + eps);
        inv_std[i] = istd;
        for (std::size_t j = 0; j < c; ++j) {
            double h = (x.at(i, j) - mu) * istd;
            xhat[i * c + j] = h;
            out.at(i, j) = gamma.at(0, j) * h + beta.at(0, j);
        }
    }
    int xn = x.node, gn = gamma.node, bn = beta.node;
    std::vector<double> gv = gamma.data;
    return attach(std::move(out), [xn, gn, bn, r, c, xhat, inv_std, gv](
                                      Tape& t, const std::vector<double>& g) {
        if (gn >= 0) {
            std::vector<double> dg(c, 0.0);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    dg[j] += g[i * c + j] * xhat[i * c + j];
            t.accum(gn, dg);
        }
        if (bn >= 0) {
            std::vector<double> db(c, 0.0);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    db[j] += g[i * c + j];
            t.accum(bn, db);
        }
        if (xn >= 0) {
            std::vector<double> dx(r * c);
            for (std::size_t i = 0; i < r; ++i) {
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    double dh = g[i * c + j] * gv[j];
                    mean_dh += dh;
                    mean_dh_h += dh * xhat[i * c + j];
                }
                mean_dh /= static_cast<double>(c);
                mean_dh_h /= static_cast<double>(c);
                for (std::size_t j = 0; j < c; ++j) {
                    double dh = g[i * c + j] * gv[j];
                    dx[i * c + j] =
                        inv_std[i] * (dh - mean_dh - xhat[i * c + j] * mean_dh_h);
                }
            }
            t.accum(xn, dx);
        }
    });
}

Tensor Tape::softmax_rows(const Tensor& x) {
    std::size_t r = x.rows, c = x.cols;
    Tensor out(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double e = std::exp(x.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= sum;
    }
    int xn = x.node;
    std::vector<double> y = out.data;
    return attach(std::move(out), [xn, r, c, y](Tape& t, const std::vector<double>& g) {
        if (xn < 0) return;
        std::vector<double> dx(r * c);
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                dx[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
        }
        t.accum(xn, dx);
    });
}

Tensor Tape::gmp(const Tensor& x, int axis) {
    if (axis != 0 && axis != 1) throw ContractError("gmp: axis must be 0 or 1");
    if (x.rows == 0 || x.cols == 0) throw ShapeError("gmp: empty input");
    std::size_t r = x.rows, c = x.cols;
    // Ties route the gradient to the lowest flat index.
    if (axis == 1) {
        Tensor out(1, r);
        std::vector<std::size_t> arg(r);
        for (std::size_t i = 0; i < r; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (x.at(i, j) > x.at(i, best)) best = j;
            arg[i] = best;
            out.at(0, i) = x.at(i, best);
        }
        int xn = x.node;
        return attach(std::move(out), [xn, r, c, arg](Tape& t, const std::vector<double>& g) {
            if (xn < 0) return;
            std::vector<double> dx(r * c, 0.0);
            for (std::size_t i = 0; i < r; ++i) dx[i * c + arg[i]] = g[i];
            t.accum(xn, dx);
        });
    }
    Tensor out(1, c);
    std::vector<std::size_t> arg(c);
    for (std::size_t j = 0; j < c; ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < r; ++i)
            if (x.at(i, j) > x.at(best, j)) best = i;
        arg[j] = best;
        out.at(0, j) = x.at(best, j);
    }
    int xn = x.node;
    return attach(std::move(out), [xn, r, c, arg](Tape& t, const std::vector<double>& g) {
        if (xn < 0) return;
        std::vector<double> dx(r * c, 0.0);
        for (std::size_t j = 0; j < c; ++j) dx[arg[j] * c + j] = g[j];
        t.accum(xn, dx);
    });
}

Tensor Tape::gelu(const Tensor& x) {
    Tensor out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = gelu_scalar(x.data[i]);
    int xn = x.node;
    std::vector<double> xv = x.data;
    return attach(std::move(out), [xn, xv](Tape& t, const std::vector<double>& g) {
        if (xn < 0) return;
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        std::vector<double> dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            double v = xv[i];
            double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
            double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            dx[i] = g[i] * (cdf + v * pdf);
        }
        t.accum(xn, dx);
    });
}

Tensor Tape::sigmoid(const Tensor& x) {
    Tensor out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = sigmoid_scalar(x.data[i]);
    int xn = x.node;
    std::vector<double> y = out.data;
    return attach(std::move(out), [xn, y](Tape& t, const std::vector<double>& g) {
        if (xn < 0) return;
        std::vector<double> dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * y[i] * (1.0 - y[i]);
        t.accum(xn, dx);
    });
}

Tensor Tape::sqrt(const Tensor& x) {
    Tensor out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = std::sqrt(x.data[i]);
    int xn = x.node;
    std::vector<double> y = out.data;
    return attach(std::move(out), [xn, y](Tape& t, const std::vector<double>& g) {
        if (xn < 0) return;
        std::vector<double> dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] / (2.0 * y[i]);
        t.accum(xn, dx);
    });
}

Tensor Tape::sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data) s += v;
    int xn = x.node;
    std::size_t n = x.numel();
    return attach(Tensor::scalar_of(s), [xn, n](Tape& t, const std::vector<double>& g) {
        if (xn < 0) return;
        t.accum(xn, std::vector<double>(n, g[0]));
    });
}

Tensor Tape::mean_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data) s += v;
    std::size_t n = x.numel();
    int xn = x.node;
    return attach(Tensor::scalar_of(s / static_cast<double>(n)),
                  [xn, n](Tape& t, const std::vector<double>& g) {
                      if (xn < 0) return;
                      t.accum(xn, std::vector<double>(n, g[0] / static_cast<double>(n)));
                  });
}

Tensor Tape::sub_scalar(const Tensor& x, const Tensor& s) {
    if (!s.is_scalar()) throw ShapeError("sub_scalar: s must be 1x1, got " + s.shape_str());
    Tensor out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] - s.data[0];
    int xn = x.node, sn = s.node;
    return attach(std::move(out), [xn, sn](Tape& t, const std::vector<double>& g) {
        t.accum(xn, g);
        if (sn >= 0) {
            double tot = 0.0;
            for (double v : g) tot += v;
            t.accum(sn, {-tot});
        }
    });
}

Tensor Tape::div_scalar(const Tensor& x, const Tensor& s) {
    if (!s.is_scalar()) throw ShapeError("div_scalar: s must be 1x1, got " + s.shape_str());
    double sv = s.data[0];
    Tensor out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] / sv;
    int xn = x.node, sn = s.node;
    std::vector<double> xv = x.data;
    return attach(std::move(out), [xn, sn, sv, xv](Tape& t, const std::vector<double>& g) {
        if (xn >= 0) {
            std::vector<double> dx(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] / sv;
            t.accum(xn, dx);
        }
        if (sn >= 0) {
            double tot = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) tot += g[i] * xv[i];
            t.accum(sn, {-tot / (sv * sv)});
        }
    });
}

Tensor Tape::mul_const(const Tensor& x, const std::vector<double>& c) {
    if (c.size() != x.numel())
        throw ShapeError("mul_const: constant length " + std::to_string(c.size()) +
                         " vs tensor " + x.shape_str());
    Tensor out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] * c[i];
    int xn = x.node;
    std::vector<double> cv = c;
    return attach(std::move(out), [xn, cv](Tape& t, const std::vector<double>& g) {
        if (xn < 0) return;
        std::vector<double> dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * cv[i];
        t.accum(xn, dx);
    });
}

Tensor Tape::gather_cols(const Tensor& x, const std::vector<std::size_t>& idx) {
    if (x.rows != 1) throw ShapeError("gather_cols: expects a row vector, got " + x.shape_str());
    Tensor out(1, idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= x.cols) throw ContractError("gather_cols: index out of range");
        out.data[i] = x.data[idx[i]];
    }
    int xn = x.node;
    std::size_t c = x.cols;
    std::vector<std::size_t> iv = idx;
    return attach(std::move(out), [xn, c, iv](Tape& t, const std::vector<double>& g) {
        if (xn < 0) return;
        std::vector<double> dx(c, 0.0);
        for (std::size_t i = 0; i < iv.size(); ++i) dx[iv[i]] += g[i];
        t.accum(xn, dx);
    });
}

Tensor Tape::pick(const Tensor& x, std::size_t index) {
    if (index >= x.numel()) throw ContractError("pick: index out of range");
    int xn = x.node;
    std::size_t n = x.numel();
    return attach(Tensor::scalar_of(x.data[index]),
                  [xn, n, index](Tape& t, const std::vector<double>& g) {
                      if (xn < 0) return;
                      std::vector<double> dx(n, 0.0);
                      dx[index] = g[0];
                      t.accum(xn, dx);
                  });
}

Tensor Tape::log_sum_exp_row(const Tensor& x) {
    if (x.rows != 1) throw ShapeError("log_sum_exp_row: expects a row vector");
    double mx = *std::max_element(x.data.begin(), x.data.end());
    double sum = 0.0;
    for (double v : x.data) sum += std::exp(v - mx);
    double lse = mx + std::log(sum);
    int xn = x.node;
    std::vector<double> soft(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) soft[i] = std::exp(x.data[i] - lse);
    return attach(Tensor::scalar_of(lse),
                  [xn, soft](Tape& t, const std::vector<double>& g) {
                      if (xn < 0) return;
                      std::vector<double> dx(soft.size());
                      for (std::size_t i = 0; i < soft.size(); ++i) dx[i] = g[0] * soft[i];
                      t.accum(xn, dx);
                  });
}

void Tape::backward(const Tensor& loss) {
    if (!loss.is_scalar()) throw ContractError("backward: loss must be scalar, got " + loss.shape_str());
    if (loss.node < 0) throw ContractError("backward: loss is not on this tape");
    if (ran_backward_) throw ContractError("backward: tape already consumed");
    ran_backward_ = true;
    nodes_[static_cast<std::size_t>(loss.node)].grad = {1.0};
    for (std::size_t k = nodes_.size(); k-- > 0;) {
        Node& n = nodes_[k];
        if (n.grad.empty() || !n.backward) continue;
        n.backward(*this, n.grad);
    }
}

const std::vector<double>& Tape::grad(const Tensor& t) const {
    if (t.node < 0 || nodes_[static_cast<std::size_t>(t.node)].grad.empty())
        throw ContractError("grad: no gradient recorded for this tensor");
    return nodes_[static_cast<std::size_t>(t.node)].grad;
}

bool Tape::has_grad(const Tensor& t) const {
    return t.node >= 0 && !nodes_[static_cast<std::size_t>(t.node)].grad.empty();
}

std::map<std::string, std::vector<double>> Tape::param_grads() const {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, node] : param_nodes_) {
        const Node& n = nodes_[static_cast<std::size_t>(node)];
        out[name] = n.grad.empty() ? std::vector<double>(n.numel, 0.0) : n.grad;
    }
    return out;
}

}  // namespace psvma
