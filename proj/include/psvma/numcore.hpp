#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace psvma {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major 2-D tensor of doubles. Vectors are 1xN. A tensor is
// attached to a Tape when node >= 0; detached tensors are plain values.
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;
    int node = -1;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Tensor(std::size_t r, std::size_t c, std::vector<double> d)
        : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols)
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str());
    }

    std::size_t numel() const { return rows * cols; }
    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    bool is_scalar() const { return rows == 1 && cols == 1; }
    double scalar() const {
        if (!is_scalar()) throw ContractError("scalar() on tensor of shape " + shape_str());
        return data[0];
    }
    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    static Tensor row(std::vector<double> d) {
        std::size_t n = d.size();
        return Tensor(1, n, std::move(d));
    }
    static Tensor scalar_of(double v) { return Tensor(1, 1, {v}); }
    static Tensor identity(std::size_t n) {
        Tensor t(n, n);
        for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    }
};

// Reverse-mode tape. Nodes are appended in forward order; backward walks
// them once in reverse. One tape per forward/backward pass.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

    // Leaves -----------------------------------------------------------
    Tensor leaf(const Tensor& value);                       // requires grad
    Tensor param(const std::string& name, const Tensor& value);
    static Tensor constant(const Tensor& value) { return value; }  // node = -1

    // Core ops (all differentiable w.r.t. attached inputs) --------------
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor transpose(const Tensor& a);
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);           // hadamard
    Tensor scale(const Tensor& a, double c);
    Tensor add_row_bias(const Tensor& x, const Tensor& bias);   // bias 1xD
    Tensor scale_rows(const Tensor& x, const Tensor& s);        // s 1xN, N = x.rows
    Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      double eps = 1e-5);
    Tensor softmax_rows(const Tensor& x);
    Tensor gmp(const Tensor& x, int axis);                  // axis 0: per-col max, 1: per-row max
    Tensor gelu(const Tensor& x);
    Tensor sigmoid(const Tensor& x);
    Tensor sqrt(const Tensor& x);
    Tensor sum_all(const Tensor& x);                        // 1x1
    Tensor mean_all(const Tensor& x);                       // 1x1
    Tensor sub_scalar(const Tensor& x, const Tensor& s);    // x - s, s 1x1
    Tensor div_scalar(const Tensor& x, const Tensor& s);    // x / s, s 1x1
    Tensor mul_const(const Tensor& x, const std::vector<double>& c);  // elementwise by constant
    Tensor gather_cols(const Tensor& x, const std::vector<std::size_t>& idx);  // x 1xC
    Tensor pick(const Tensor& x, std::size_t index);        // flat index -> 1x1
    Tensor log_sum_exp_row(const Tensor& x);                // x 1xM -> 1x1

    // Backward ----------------------------------------------------------
    void backward(const Tensor& loss);
    const std::vector<double>& grad(const Tensor& t) const;
    bool has_grad(const Tensor& t) const;
    // Gradients of all named parameters registered via param().
    std::map<std::string, std::vector<double>> param_grads() const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::size_t numel;
        BackwardFn backward;
        std::vector<double> grad;   // allocated lazily during backward
    };
    std::vector<Node> nodes_;
    std::map<std::string, int> param_nodes_;
    bool ran_backward_ = false;

    int push(std::size_t numel, BackwardFn fn);
    void accum(int node, const std::vector<double>& g);
    Tensor attach(Tensor value, BackwardFn fn);
};

// Detached elementwise helpers shared by forward-only paths.
double gelu_scalar(double x);
double sigmoid_scalar(double x);

}  // namespace psvma
