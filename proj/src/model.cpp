#include "psvma/model.hpp"

#include <algorithm>

namespace psvma {

void ModelConfig::validate() const {
    dsvtm.validate();
    backbone.validate(dsvtm.z_modules);
    loss.validate();
    if (backbone.n_patches != dsvtm.n_patches || backbone.dim != dsvtm.dim)
        throw ContractError("model config: backbone and dsvtm disagree on N_v or D");
    if (d_sem == 0) throw ContractError("model config: d_sem must be set");
}

PsvmaModel::PsvmaModel(ModelConfig cfg)
    : cfg_(cfg), backbone_(cfg.backbone, "backbone") {
    cfg_.validate();
    for (std::size_t z = 0; z < cfg_.dsvtm.z_modules; ++z)
        dsvtms_.emplace_back(cfg_.dsvtm, "dsvtm." + std::to_string(z));
    backbone_.init_params(params_, cfg_.seed);
    for (const Dsvtm& d : dsvtms_) d.init_params(params_, cfg_.seed);
    if (cfg_.d_sem != cfg_.dsvtm.dim)
        params_.init_linear("sem_adapter", cfg_.d_sem, cfg_.dsvtm.dim, true, cfg_.seed);
    params_.init_matrix("head.w", cfg_.dsvtm.dim, cfg_.dsvtm.n_attrs, cfg_.seed);
}

Tensor PsvmaModel::adapt_semantics(Tape& tape, const Bound& p, const Tensor& s_raw) const {
    Tensor s = s_raw.node >= 0 ? s_raw : tape.leaf(s_raw);
    if (cfg_.d_sem != cfg_.dsvtm.dim) {
        Linear adapter{"sem_adapter"};
        s = adapter.apply(tape, p, s);
    }
    return s;
}

std::pair<Tensor, std::vector<DsvtmState>> PsvmaModel::features(
    Tape& tape, const Bound& p, const Tensor& tokens, const Tensor& s_shared) const {
    const std::size_t L = cfg_.backbone.layers;
    const std::size_t Z = cfg_.dsvtm.z_modules;
    Tensor s0 = adapt_semantics(tape, p, s_shared);

    Tensor x = backbone_.embed(tape, p, tokens);
    std::vector<DsvtmState> states;
    states.reserve(Z);
    Tensor s_in = s0;
    Tensor f_hat = x;
    std::size_t z = 0;
    for (std::size_t l = 0; l < L; ++l) {
        x = backbone_.block(tape, p, l, x);
        if (l + 1 > L - Z) {
            // DSVTM z sits after backbone layer L-Z+z.
            DsvtmState st = dsvtms_[z].forward(tape, p, x, s_in);
            f_hat = st.decoder_output;
            if (!cfg_.backbone.side_branch) x = f_hat;
            if (!cfg_.dsvtm.restart_semantics && !cfg_.dsvtm.disable_imse)
                s_in = st.adapted_prototypes.back();
            states.push_back(std::move(st));
            ++z;
        }
    }
    return {f_hat, std::move(states)};
}

PsvmaModel::SampleForward PsvmaModel::forward_sample(
    Tape& tape, const Bound& p, const Tensor& tokens,
    const AttributePrototypeSet& prototypes, std::size_t label,
    const std::vector<std::size_t>& seen_classes,
    const std::vector<std::size_t>& unseen_classes) const {
    SampleForward out;
    auto [f_hat, states] = features(tape, p, tokens, prototypes.S);
    out.states = std::move(states);

    out.pred = class_head(tape, f_hat, p["head.w"]);
    out.scores = cosine_scores(tape, out.pred, prototypes.A, cfg_.loss.tau);
    out.cls_loss = classification_loss(tape, out.scores, seen_classes, label);
    out.deb_loss = debias_loss(tape, out.scores, seen_classes, unseen_classes);

    if (!cfg_.dsvtm.disable_imse) {
        Tensor a_y(1, prototypes.A.cols);
        for (std::size_t j = 0; j < prototypes.A.cols; ++j)
            a_y.at(0, j) = prototypes.A.at(label, j);
        for (const DsvtmState& st : out.states)
            for (const Tensor& m : st.affinities)
                out.sem_terms.push_back(semantic_alignment_loss(tape, m, a_y));
    }
    return out;
}

PsvmaModel::BatchLoss PsvmaModel::forward_batch(
    Tape& tape, const Bound& p, const GzslDataset& ds,
    const std::vector<std::size_t>& sample_ids) const {
    if (sample_ids.empty()) throw ContractError("forward_batch: empty batch");
    const auto seen = ds.seen_class_ids();
    const auto unseen = ds.unseen_class_ids();
    const double inv_n = 1.0 / static_cast<double>(sample_ids.size());

    BatchLoss out;
    std::optional<Tensor> total;
    for (std::size_t id : sample_ids) {
        SampleForward f = forward_sample(tape, p, ds.instances[id], ds.prototypes,
                                         ds.labels[id], seen, unseen);
        Tensor sample_total = total_loss(tape, f.cls_loss, f.sem_terms,
                                         expected_sem_terms(), f.deb_loss, cfg_.loss);
        total = total ? tape.add(*total, sample_total) : sample_total;
        out.cls += f.cls_loss.scalar();
        out.deb += f.deb_loss.scalar();
        for (const Tensor& t : f.sem_terms) out.sem += t.scalar();

        std::size_t best = seen[0];
        for (std::size_t c : seen)
            if (f.scores.data[c] > f.scores.data[best]) best = c;
        if (best == ds.labels[id]) ++out.correct;
    }
    out.total = tape.scale(*total, inv_n);
    out.cls *= inv_n;
    out.sem *= inv_n;
    out.deb *= inv_n;
    return out;
}

ScoreVector PsvmaModel::score_sample(const GzslDataset& ds, std::size_t sample_id) const {
    Tape tape;
    Bound p(tape, params_);
    auto [f_hat, states] = features(tape, p, ds.instances[sample_id], ds.prototypes.S);
    Tensor pred = class_head(tape, f_hat, p["head.w"]);
    return cosine_scores_checked(pred.data, ds.prototypes.A, cfg_.loss.tau,
                                 ds.seen_mask());
}

std::vector<DsvtmState> PsvmaModel::run_states(const GzslDataset& ds,
                                               std::size_t sample_id) const {
    Tape tape;
    Bound p(tape, params_);
    auto [f_hat, states] = features(tape, p, ds.instances[sample_id], ds.prototypes.S);
    (void)f_hat;
    return states;
}

}  // namespace psvma
