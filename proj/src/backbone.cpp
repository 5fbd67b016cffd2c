#include "psvma/backbone.hpp"

#include <cmath>

namespace psvma {

void BackboneConfig::validate(std::size_t z_modules) const {
    if (n_patches == 0 || dim == 0)
        throw ContractError("backbone config: n_patches and dim must be positive");
    if (layers < z_modules)
        throw ContractError("backbone config: need L >= Z");
    if (mode == Mode::Identity && in_dim != dim)
        throw ContractError("backbone config: identity mode requires in_dim == dim");
    if (mode == Mode::ToyEncoder && in_dim == 0)
        throw ContractError("backbone config: toy encoder requires in_dim");
}

Backbone::Backbone(BackboneConfig cfg, std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)) {}

void Backbone::init_params(ParamStore& s, std::uint64_t seed) const {
    if (cfg_.mode == BackboneConfig::Mode::Identity) return;
    s.init_linear(prefix_ + ".embed", cfg_.in_dim, cfg_.dim, true, seed);
    s.init_matrix(prefix_ + ".pos", cfg_.n_patches, cfg_.dim, seed);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string b = prefix_ + ".block." + std::to_string(l);
        s.init_layer_norm(b + ".ln1", cfg_.dim);
        s.init_layer_norm(b + ".ln2", cfg_.dim);
        s.init_linear(b + ".q", cfg_.dim, cfg_.dim, true, seed);
        s.init_linear(b + ".k", cfg_.dim, cfg_.dim, false, seed);
        s.init_linear(b + ".v", cfg_.dim, cfg_.dim, true, seed);
        s.init_linear(b + ".proj", cfg_.dim, cfg_.dim, true, seed);
        s.init_linear(b + ".mlp.fc1", cfg_.dim, cfg_.mlp_ratio * cfg_.dim, true, seed);
        s.init_linear(b + ".mlp.fc2", cfg_.mlp_ratio * cfg_.dim, cfg_.dim, true, seed);
    }
}

Tensor Backbone::embed(Tape& tape, const Bound& p, const Tensor& tokens) const {
    if (cfg_.mode == BackboneConfig::Mode::Identity) {
        if (tokens.rows != cfg_.n_patches || tokens.cols != cfg_.dim)
            throw ShapeError("identity backbone expects " +
                             std::to_string(cfg_.n_patches) + "x" +
                             std::to_string(cfg_.dim) + " tokens, got " +
                             tokens.shape_str());
        return tape.leaf(tokens);
    }
    if (tokens.rows != cfg_.n_patches || tokens.cols != cfg_.in_dim)
        throw ShapeError("backbone expects " + std::to_string(cfg_.n_patches) + "x" +
                         std::to_string(cfg_.in_dim) + " tokens, got " +
                         tokens.shape_str());
    Linear embed{prefix_ + ".embed"};
    return tape.add(embed.apply(tape, p, tape.leaf(tokens)), p[prefix_ + ".pos"]);
}

Tensor Backbone::block(Tape& tape, const Bound& p, std::size_t layer,
                       const Tensor& x) const {
    if (cfg_.mode == BackboneConfig::Mode::Identity) return x;
    const std::string b = prefix_ + ".block." + std::to_string(layer);
    LayerNorm ln1{b + ".ln1"}, ln2{b + ".ln2"};
    Linear q{b + ".q"}, k{b + ".k", false}, v{b + ".v"}, proj{b + ".proj"};
    Tensor h = ln1.apply(tape, p, x);
    Tensor attn = tape.matmul(q.apply(tape, p, h), tape.transpose(k.apply(tape, p, h)));
    attn = tape.scale(attn, 1.0 / std::sqrt(static_cast<double>(cfg_.dim)));
    Tensor mixed = proj.apply(
        tape, p, tape.matmul(tape.softmax_rows(attn), v.apply(tape, p, h)));
    Tensor y = tape.add(x, mixed);
    Linear fc1{b + ".mlp.fc1"}, fc2{b + ".mlp.fc2"};
    Tensor m = fc2.apply(tape, p, tape.gelu(fc1.apply(tape, p, ln2.apply(tape, p, y))));
    return tape.add(y, m);
}

std::vector<Tensor> Backbone::encode(Tape& tape, const Bound& p,
                                     const Tensor& tokens) const {
    Tensor x = embed(tape, p, tokens);
    std::vector<Tensor> layers;
    layers.reserve(cfg_.layers);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        x = block(tape, p, l, x);
        layers.push_back(x);
    }
    return layers;
}

}  // namespace psvma
