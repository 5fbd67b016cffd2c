#include "psvma/params.hpp"

#include <cmath>
#include <random>

namespace psvma {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, const std::string& name) {
    // FNV-1a over the name, xored into the run seed.
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : name) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h ^ seed;
}

}  // namespace

void ParamStore::add(const std::string& name, Tensor value) {
    if (values_.count(name))
        throw ContractError("duplicate parameter name: " + name);
    values_.emplace(name, std::move(value));
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

Tensor& ParamStore::get_mut(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

std::size_t ParamStore::total_scalars() const {
    std::size_t n = 0;
    for (const auto& [k, v] : values_) n += v.numel();
    return n;
}

void ParamStore::init_matrix(const std::string& name, std::size_t rows,
                             std::size_t cols, std::uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed, name));
    double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w(rows, cols);
    for (double& v : w.data) v = dist(rng);
    add(name, std::move(w));
}

void ParamStore::init_linear(const std::string& prefix, std::size_t in,
                             std::size_t out, bool bias, std::uint64_t seed) {
    init_matrix(prefix + ".weight", in, out, seed);
    if (bias) add(prefix + ".bias", Tensor(1, out));
}

void ParamStore::init_layer_norm(const std::string& prefix, std::size_t dim) {
    Tensor gamma(1, dim);
    for (double& v : gamma.data) v = 1.0;
    add(prefix + ".gamma", std::move(gamma));
    add(prefix + ".beta", Tensor(1, dim));
}

Bound::Bound(Tape& tape, const ParamStore& store) {
    for (const auto& [name, value] : store.all())
        bound_.emplace(name, tape.param(name, value));
}

const Tensor& Bound::operator[](const std::string& name) const {
    auto it = bound_.find(name);
    if (it == bound_.end()) throw ContractError("unbound parameter: " + name);
    return it->second;
}

Tensor Linear::apply(Tape& tape, const Bound& p, const Tensor& x) const {
    Tensor y = tape.matmul(x, p[prefix + ".weight"]);
    if (has_bias) y = tape.add_row_bias(y, p[prefix + ".bias"]);
    return y;
}

Tensor LayerNorm::apply(Tape& tape, const Bound& p, const Tensor& x) const {
    return tape.layer_norm(x, p[prefix + ".gamma"], p[prefix + ".beta"], eps);
}

}  // namespace psvma
