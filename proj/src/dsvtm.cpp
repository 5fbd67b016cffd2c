#include "psvma/dsvtm.hpp"

#include <cmath>

namespace psvma {

void DsvtmConfig::validate() const {
    if (n_attrs == 0 || n_patches == 0 || dim == 0)
        throw ContractError("dsvtm config: n_attrs, n_patches and dim must be positive");
    if (r_loops < 1 || z_modules < 1)
        throw ContractError("dsvtm config: R and Z must be >= 1");
    if (n_groups < 1 || n_attrs / n_groups < 1)
        throw ContractError("dsvtm config: need floor(N_s/N_g) >= 1");
    if (hidden() <= n_patches)
        throw ContractError("dsvtm config: N_h must exceed N_v");
}

Dsvtm::Dsvtm(DsvtmConfig cfg, std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)) {
    cfg_.validate();
}

void Dsvtm::init_params(ParamStore& s, std::uint64_t seed) const {
    const std::size_t d = cfg_.dim;
    const std::string im = prefix_ + ".imse";
    s.init_layer_norm(im + ".ln_s", d);
    s.init_layer_norm(im + ".ln_f", d);
    s.init_linear(im + ".q", d, d, true, seed);
    s.init_linear(im + ".k", d, d, false, seed);
    s.init_linear(im + ".v", d, d, true, seed);
    s.init_matrix(im + ".gc.w1", cfg_.n_attrs, cfg_.group_width(), seed);
    s.init_matrix(im + ".gc.w2", cfg_.group_width(), cfg_.n_attrs, seed);
    s.init_linear(im + ".mlp.fc1", d, cfg_.mlp_ratio * d, true, seed);
    s.init_linear(im + ".mlp.fc2", cfg_.mlp_ratio * d, d, true, seed);

    const std::string sm = prefix_ + ".smid";
    s.init_layer_norm(sm + ".ln_f", d);
    s.init_layer_norm(sm + ".ln_s", d);
    s.init_linear(sm + ".q", d, d, true, seed);
    s.init_linear(sm + ".k", d, d, false, seed);
    s.init_linear(sm + ".v", d, d, true, seed);
    s.init_matrix(sm + ".mix.we", cfg_.n_patches, cfg_.hidden(), seed);
    s.init_matrix(sm + ".mix.ws", cfg_.hidden(), cfg_.hidden(), seed);
    s.init_matrix(sm + ".mix.wn", cfg_.hidden(), cfg_.n_patches, seed);
    s.init_linear(sm + ".mlp.fc1", d, cfg_.mlp_ratio * d, true, seed);
    s.init_linear(sm + ".mlp.fc2", cfg_.mlp_ratio * d, d, true, seed);
}

Tensor Dsvtm::mlp(Tape& tape, const Bound& p, const std::string& which,
                  const Tensor& x) const {
    Linear fc1{which + ".fc1"}, fc2{which + ".fc2"};
    return fc2.apply(tape, p, tape.gelu(fc1.apply(tape, p, x)));
}

std::pair<Tensor, Tensor> Dsvtm::imse_attention(Tape& tape, const Bound& p,
                                                const Tensor& s_in, const Tensor& f,
                                                const Tensor& residual_base) const {
    const std::string im = prefix_ + ".imse";
    LayerNorm ln_s{im + ".ln_s"}, ln_f{im + ".ln_f"};
    Linear q{im + ".q"}, k{im + ".k", false}, v{im + ".v"};
    Tensor sn = ln_s.apply(tape, p, s_in);
    Tensor fn = ln_f.apply(tape, p, f);
    Tensor m = tape.matmul(q.apply(tape, p, sn), tape.transpose(k.apply(tape, p, fn)));
    if (cfg_.attn_scale) m = tape.scale(m, 1.0 / std::sqrt(static_cast<double>(cfg_.dim)));
    Tensor s_attr = tape.add(tape.matmul(tape.softmax_rows(m), v.apply(tape, p, fn)),
                             residual_base);
    return {m, s_attr};
}

Tensor Dsvtm::attribute_group_gate(Tape& tape, const Bound& p,
                                   const Tensor& s_attr) const {
    const std::string im = prefix_ + ".imse";
    // gmp over the feature axis: one scalar per attribute.
    Tensor pooled = tape.gmp(s_attr, 1);  // 1 x N_s
    Tensor h = tape.gelu(tape.matmul(pooled, p[im + ".gc.w1"]));
    Tensor gate = tape.sigmoid(tape.matmul(h, p[im + ".gc.w2"]));  // 1 x N_s
    return tape.add(tape.scale_rows(s_attr, gate), s_attr);
}

Tensor Dsvtm::attribute_activate(Tape& tape, const Bound& p, const Tensor& s_bar,
                                 const Tensor& s_attr) const {
    Tensor out = mlp(tape, p, prefix_ + ".imse.mlp", s_bar);
    return tape.add(tape.add(out, s_bar), s_attr);
}

std::pair<Tensor, std::vector<Tensor>> Dsvtm::imse_forward(Tape& tape, const Bound& p,
                                                           const Tensor& s0,
                                                           const Tensor& f) const {
    Tensor s = s0;
    std::vector<Tensor> affinities;
    affinities.reserve(cfg_.r_loops);
    for (std::size_t r = 0; r < cfg_.r_loops; ++r) {
        const Tensor& base = cfg_.anchor_original ? s0 : s;
        auto [m, s_attr] = imse_attention(tape, p, s, f, base);
        affinities.push_back(m);
        Tensor s_bar = attribute_group_gate(tape, p, s_attr);
        s = attribute_activate(tape, p, s_bar, s_attr);
    }
    return {s, affinities};
}

Tensor Dsvtm::smid_attention(Tape& tape, const Bound& p, const Tensor& f,
                             const Tensor& s_hat) const {
    const std::string sm = prefix_ + ".smid";
    LayerNorm ln_f{sm + ".ln_f"}, ln_s{sm + ".ln_s"};
    Linear q{sm + ".q"}, k{sm + ".k", false}, v{sm + ".v"};
    Tensor fn = ln_f.apply(tape, p, f);
    Tensor sn = ln_s.apply(tape, p, s_hat);
    Tensor m = tape.matmul(q.apply(tape, p, fn), tape.transpose(k.apply(tape, p, sn)));
    if (cfg_.attn_scale) m = tape.scale(m, 1.0 / std::sqrt(static_cast<double>(cfg_.dim)));
    return tape.add(tape.matmul(tape.softmax_rows(m), v.apply(tape, p, sn)), f);
}

Tensor Dsvtm::patch_mixing(Tape& tape, const Bound& p, const Tensor& f_tilde) const {
    const std::string sm = prefix_ + ".smid";
    Tensor ft = tape.transpose(f_tilde);                          // D x N_v
    Tensor fe = tape.gelu(tape.matmul(ft, p[sm + ".mix.we"]));    // D x N_h
    Tensor fs = tape.gelu(tape.matmul(fe, p[sm + ".mix.ws"]));    // D x N_h
    Tensor fn = tape.matmul(fs, p[sm + ".mix.wn"]);               // D x N_v, linear bottleneck
    return tape.add(tape.transpose(fn), f_tilde);
}

Tensor Dsvtm::patch_activate(Tape& tape, const Bound& p, const Tensor& f_bar) const {
    return tape.add(mlp(tape, p, prefix_ + ".smid.mlp", f_bar), f_bar);
}

DsvtmState Dsvtm::forward(Tape& tape, const Bound& p, const Tensor& f,
                          const Tensor& s_in) const {
    DsvtmState state;
    Tensor s_hat = s_in;
    if (!cfg_.disable_imse) {
        Tensor s = s_in;
        for (std::size_t r = 0; r < cfg_.r_loops; ++r) {
            const Tensor& base = cfg_.anchor_original ? s_in : s;
            auto [m, s_attr] = imse_attention(tape, p, s, f, base);
            state.affinities.push_back(m);
            Tensor s_bar = attribute_group_gate(tape, p, s_attr);
            s = attribute_activate(tape, p, s_bar, s_attr);
            state.adapted_prototypes.push_back(s);
        }
        s_hat = s;
    }
    Tensor f_tilde = smid_attention(tape, p, f, s_hat);
    Tensor f_bar = patch_mixing(tape, p, f_tilde);
    state.decoder_output = patch_activate(tape, p, f_bar);
    return state;
}

Tensor semantic_alignment_loss(Tape& tape, const Tensor& m, const Tensor& a_y) {
    if (a_y.rows != 1 || a_y.cols != m.rows)
        throw ShapeError("semantic_alignment_loss: prototype " + a_y.shape_str() +
                         " vs affinity " + m.shape_str());
    Tensor pooled = tape.gmp(m, 1);  // max over patches, 1 x N_s
    Tensor diff = tape.sub(pooled, a_y);
    return tape.sum_all(tape.mul(diff, diff));
}

}  // namespace psvma
