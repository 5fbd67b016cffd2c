#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "psvma/numcore.hpp"

namespace psvma {

// Named model parameters. Names are hierarchical dotted paths, e.g.
// "dsvtm.0.imse.q.weight". Initialization is keyed by (seed, name) so a
// parameter's initial value does not depend on registration order.
class ParamStore {
public:
    void add(const std::string& name, Tensor value);
    bool has(const std::string& name) const { return values_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    Tensor& get_mut(const std::string& name);
    const std::map<std::string, Tensor>& all() const { return values_; }
    std::map<std::string, Tensor>& all_mut() { return values_; }
    std::size_t total_scalars() const;

    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight, zero bias.
    void init_linear(const std::string& prefix, std::size_t in, std::size_t out,
                     bool bias, std::uint64_t seed);
    void init_layer_norm(const std::string& prefix, std::size_t dim);
    void init_matrix(const std::string& name, std::size_t rows, std::size_t cols,
                     std::uint64_t seed);  // bare matrix, same fan-in scaling

private:
    std::map<std::string, Tensor> values_;
};

// Tape-attached view of every parameter, created once per forward pass.
class Bound {
public:
    Bound(Tape& tape, const ParamStore& store);
    const Tensor& operator[](const std::string& name) const;

private:
    std::map<std::string, Tensor> bound_;
};

// Linear map y = x.W (+ b). Weight shape in x out.
struct Linear {
    std::string prefix;
    bool has_bias = true;
    Tensor apply(Tape& tape, const Bound& p, const Tensor& x) const;
};

// Row-wise LayerNorm with learned affine.
struct LayerNorm {
    std::string prefix;
    double eps = 1e-5;
    Tensor apply(Tape& tape, const Bound& p, const Tensor& x) const;
};

}  // namespace psvma
