#include "psvma/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "psvma/io.hpp"

namespace psvma {

using nlohmann::json;

namespace {
constexpr int kSchemaVersion = 1;
}

std::string split_name(Split s) {
    switch (s) {
        case Split::SeenTrain: return "seen-train";
        case Split::SeenTest: return "seen-test";
        case Split::UnseenTest: return "unseen-test";
    }
    throw ContractError("bad split value");
}

Split split_from_name(const std::string& name) {
    if (name == "seen-train") return Split::SeenTrain;
    if (name == "seen-test") return Split::SeenTest;
    if (name == "unseen-test") return Split::UnseenTest;
    throw DatasetIoError("unknown split tag: " + name);
}

void GenConfig::validate() const {
    if (c_seen < 1 || c_unseen < 1)
        throw ConfigError("need at least one seen and one unseen class");
    if (variants < 1) throw ConfigError("variants (G) must be >= 1");
    if (n_attrs == 0 || n_patches == 0 || in_dim == 0 || d_sem == 0)
        throw ConfigError("n_attrs, n_patches, in_dim and d_sem must be positive");
    if (n_groups < 1 || n_groups > n_attrs)
        throw ConfigError("n_groups must be in [1, n_attrs]");
    if (active_per_class < 1 || active_per_class > n_attrs)
        throw ConfigError("active_per_class must be in [1, n_attrs]");
    if (active_per_class > n_patches)
        throw ConfigError("infeasible config: " + std::to_string(active_per_class) +
                          " active attributes but only " + std::to_string(n_patches) +
                          " patches");
    if (samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        throw ConfigError("train_fraction must be in (0,1)");
}

std::vector<bool> GzslDataset::seen_mask() const {
    std::vector<bool> mask(n_classes(), false);
    for (std::size_t c = 0; c < config.c_seen; ++c) mask[c] = true;
    return mask;
}

std::vector<std::size_t> GzslDataset::seen_class_ids() const {
    std::vector<std::size_t> ids(config.c_seen);
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
}

std::vector<std::size_t> GzslDataset::unseen_class_ids() const {
    std::vector<std::size_t> ids(config.c_unseen);
    std::iota(ids.begin(), ids.end(), config.c_seen);
    return ids;
}

std::vector<std::size_t> GzslDataset::sample_ids(Split s) const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s) ids.push_back(i);
    return ids;
}

bool GzslDataset::operator==(const GzslDataset& o) const {
    auto tensor_eq = [](const Tensor& a, const Tensor& b) {
        return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
    };
    if (labels != o.labels || splits != o.splits || variant_of != o.variant_of)
        return false;
    if (prototypes.group_of != o.prototypes.group_of ||
        prototypes.n_groups != o.prototypes.n_groups)
        return false;
    if (!tensor_eq(prototypes.S, o.prototypes.S) || !tensor_eq(prototypes.A, o.prototypes.A))
        return false;
    if (instances.size() != o.instances.size()) return false;
    for (std::size_t i = 0; i < instances.size(); ++i)
        if (!tensor_eq(instances[i], o.instances[i])) return false;
    return true;
}

namespace {

std::vector<double> random_unit_vector(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> v(dim);
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (double& x : v) {
            x = gauss(rng);
            n2 += x * x;
        }
    } while (n2 == 0.0);
    double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
    return v;
}

std::vector<std::size_t> contiguous_groups(std::size_t n_attrs, std::size_t n_groups) {
    std::vector<std::size_t> group_of(n_attrs);
    std::size_t base = n_attrs / n_groups, rem = n_attrs % n_groups;
    std::size_t attr = 0;
    for (std::size_t g = 0; g < n_groups; ++g) {
        std::size_t len = base + (g < rem ? 1 : 0);
        for (std::size_t i = 0; i < len; ++i) group_of[attr++] = g;
    }
    return group_of;
}

}  // namespace

GzslDataset generate(const GenConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t C = cfg.c_seen + cfg.c_unseen;

    GzslDataset ds;
    ds.config = cfg;
    ds.prototypes.n_groups = cfg.n_groups;
    ds.prototypes.group_of = contiguous_groups(cfg.n_attrs, cfg.n_groups);

    // Shared attribute word vectors (GloVe stand-in).
    ds.prototypes.S = Tensor(cfg.n_attrs, cfg.d_sem);
    for (std::size_t i = 0; i < cfg.n_attrs; ++i) {
        auto v = random_unit_vector(rng, cfg.d_sem);
        for (std::size_t j = 0; j < cfg.d_sem; ++j)
            ds.prototypes.S.at(i, j) = io::to_f32(v[j]);
    }

    // Per-attribute renderer bank.
    std::vector<std::vector<std::vector<double>>> renderers(cfg.n_attrs);
    for (std::size_t i = 0; i < cfg.n_attrs; ++i)
        for (std::size_t g = 0; g < cfg.variants; ++g)
            renderers[i].push_back(random_unit_vector(rng, cfg.in_dim));

    // Class signatures: active attribute set + renderer choice per attribute.
    // Every attribute is planted in at least one seen class so unseen classes
    // always have transferable renderers to draw from.
    ds.variant_of.assign(C, std::vector<int>(cfg.n_attrs, -1));
    std::uniform_int_distribution<std::size_t> pick_variant(0, cfg.variants - 1);
    std::vector<std::vector<std::size_t>> active(C);

    for (std::size_t i = 0; i < cfg.n_attrs; ++i) {
        std::size_t c = i % cfg.c_seen;
        if (active[c].size() < cfg.active_per_class) active[c].push_back(i);
    }
    std::vector<std::size_t> all_attrs(cfg.n_attrs);
    std::iota(all_attrs.begin(), all_attrs.end(), 0);
    for (std::size_t c = 0; c < cfg.c_seen; ++c) {
        std::vector<std::size_t> pool = all_attrs;
        std::shuffle(pool.begin(), pool.end(), rng);
        for (std::size_t i : pool) {
            if (active[c].size() >= cfg.active_per_class) break;
            if (std::find(active[c].begin(), active[c].end(), i) == active[c].end())
                active[c].push_back(i);
        }
        std::sort(active[c].begin(), active[c].end());
        for (std::size_t i : active[c])
            ds.variant_of[c][i] = static_cast<int>(pick_variant(rng));
    }

    // Which (attribute, variant) pairs the seen domain exposes.
    std::vector<std::set<int>> seen_variants(cfg.n_attrs);
    for (std::size_t c = 0; c < cfg.c_seen; ++c)
        for (std::size_t i = 0; i < cfg.n_attrs; ++i)
            if (ds.variant_of[c][i] >= 0) seen_variants[i].insert(ds.variant_of[c][i]);

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < cfg.n_attrs; ++i)
        if (!seen_variants[i].empty()) eligible.push_back(i);
    if (eligible.size() < cfg.active_per_class)
        throw ConfigError("infeasible config: too few attributes covered by seen classes");

    for (std::size_t c = cfg.c_seen; c < C; ++c) {
        for (int attempt = 0;; ++attempt) {
            std::vector<std::size_t> pool = eligible;
            std::shuffle(pool.begin(), pool.end(), rng);
            pool.resize(cfg.active_per_class);
            std::sort(pool.begin(), pool.end());
            std::vector<int> row(cfg.n_attrs, -1);
            for (std::size_t i : pool) {
                std::vector<int> opts(seen_variants[i].begin(), seen_variants[i].end());
                row[i] = opts[std::uniform_int_distribution<std::size_t>(0, opts.size() - 1)(rng)];
            }
            bool duplicate = false;
            for (std::size_t other = 0; other < c && !duplicate; ++other)
                duplicate = (ds.variant_of[other] == row);
            if (!duplicate || attempt >= 64) {
                if (duplicate)
                    throw ConfigError("could not draw a distinct unseen class signature");
                ds.variant_of[c] = row;
                active[c] = pool;
                break;
            }
        }
    }

    // Category prototypes.
    ds.prototypes.A = Tensor(C, cfg.n_attrs);
    std::uniform_real_distribution<double> strength(0.2, 1.0);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i : active[c])
            ds.prototypes.A.at(c, i) =
                io::to_f32(cfg.continuous_strengths ? strength(rng) : 1.0);

    // Coverage check: every renderer an unseen class relies on is observed
    // in at least one seen class.
    for (std::size_t c = cfg.c_seen; c < C; ++c)
        for (std::size_t i = 0; i < cfg.n_attrs; ++i)
            if (ds.variant_of[c][i] >= 0 &&
                seen_variants[i].count(ds.variant_of[c][i]) == 0)
                throw ContractError("coverage violated for unseen class " +
                                    std::to_string(c));

    // Samples.
    const std::size_t n_train =
        std::max<std::size_t>(1, static_cast<std::size_t>(
            std::lround(cfg.train_fraction * static_cast<double>(cfg.samples_per_class))));
    std::vector<std::size_t> patch_ids(cfg.n_patches);
    std::iota(patch_ids.begin(), patch_ids.end(), 0);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
            Tensor inst(cfg.n_patches, cfg.in_dim);
            for (double& v : inst.data) v = cfg.noise_sigma * gauss(rng);
            std::vector<std::size_t> slots = patch_ids;
            std::shuffle(slots.begin(), slots.end(), rng);
            std::size_t slot = 0;
            for (std::size_t i : active[c]) {
                double w = ds.prototypes.A.at(c, i);
                const auto& r = renderers[i][static_cast<std::size_t>(ds.variant_of[c][i])];
                std::size_t pt = slots[slot++];
                for (std::size_t j = 0; j < cfg.in_dim; ++j)
                    inst.at(pt, j) += w * r[j];
            }
            for (double& v : inst.data) v = io::to_f32(v);
            ds.instances.push_back(std::move(inst));
            ds.labels.push_back(c);
            if (c < cfg.c_seen)
                ds.splits.push_back(s < n_train ? Split::SeenTrain : Split::SeenTest);
            else
                ds.splits.push_back(Split::UnseenTest);
        }
    }
    return ds;
}

GenConfig preset_config(const std::string& name) {
    GenConfig cfg;  // defaults are the toy preset
    if (name == "toy") return cfg;
    cfg.n_patches = 16;
    cfg.in_dim = 24;
    cfg.d_sem = 24;
    cfg.active_per_class = 12;
    cfg.samples_per_class = 8;
    if (name == "cub-shape") {
        cfg.c_seen = 150;
        cfg.c_unseen = 50;
        cfg.n_attrs = 312;
        cfg.n_groups = 28;
    } else if (name == "sun-shape") {
        cfg.c_seen = 645;
        cfg.c_unseen = 72;
        cfg.n_attrs = 102;
        cfg.n_groups = 4;
    } else if (name == "awa2-shape") {
        cfg.c_seen = 40;
        cfg.c_unseen = 10;
        cfg.n_attrs = 85;
        cfg.n_groups = 9;
    } else {
        throw ConfigError("unknown preset: " + name);
    }
    return cfg;
}

namespace {

json config_to_json(const GenConfig& c) {
    return json{{"c_seen", c.c_seen},
                {"c_unseen", c.c_unseen},
                {"n_attrs", c.n_attrs},
                {"n_groups", c.n_groups},
                {"n_patches", c.n_patches},
                {"in_dim", c.in_dim},
                {"d_sem", c.d_sem},
                {"variants", c.variants},
                {"samples_per_class", c.samples_per_class},
                {"active_per_class", c.active_per_class},
                {"noise_sigma", c.noise_sigma},
                {"train_fraction", c.train_fraction},
                {"continuous_strengths", c.continuous_strengths},
                {"seed", c.seed}};
}

GenConfig config_from_json(const json& j) {
    GenConfig c;   // missing keys keep the toy defaults
    c.c_seen = j.value("c_seen", c.c_seen);
    c.c_unseen = j.value("c_unseen", c.c_unseen);
    c.n_attrs = j.value("n_attrs", c.n_attrs);
    c.n_groups = j.value("n_groups", c.n_groups);
    c.n_patches = j.value("n_patches", c.n_patches);
    c.in_dim = j.value("in_dim", c.in_dim);
    c.d_sem = j.value("d_sem", c.d_sem);
    c.variants = j.value("variants", c.variants);
    c.samples_per_class = j.value("samples_per_class", c.samples_per_class);
    c.active_per_class = j.value("active_per_class", c.active_per_class);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.continuous_strengths = j.value("continuous_strengths", c.continuous_strengths);
    c.seed = j.value("seed", c.seed);
    return c;
}

}  // namespace

std::string gen_config_to_json(const GenConfig& cfg) { return config_to_json(cfg).dump(2); }

GenConfig gen_config_from_json(const std::string& text) {
    try {
        return config_from_json(json::parse(text));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed generation config: ") + e.what());
    }
}

void save_dataset(const GzslDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const std::size_t n = ds.instances.size();
    const std::size_t nv = ds.config.n_patches, di = ds.config.in_dim;

    std::vector<double> features;
    features.reserve(n * nv * di);
    for (const Tensor& t : ds.instances)
        features.insert(features.end(), t.data.begin(), t.data.end());
    io::write_f32(dir / "features.f32", features);
    io::write_f32(dir / "prototypes_A.f32", ds.prototypes.A.data);
    io::write_f32(dir / "prototypes_S.f32", ds.prototypes.S.data);

    json manifest;
    manifest["schema_version"] = kSchemaVersion;
    manifest["config"] = config_to_json(ds.config);
    manifest["n_samples"] = n;
    manifest["labels"] = ds.labels;
    std::vector<std::string> split_tags;
    split_tags.reserve(n);
    for (Split s : ds.splits) split_tags.push_back(split_name(s));
    manifest["splits"] = split_tags;
    manifest["group_of"] = ds.prototypes.group_of;
    manifest["variant_of"] = ds.variant_of;
    std::vector<std::string> class_names;
    for (std::size_t c = 0; c < ds.n_classes(); ++c)
        class_names.push_back((ds.is_seen_class(c) ? "seen_" : "unseen_") +
                              std::to_string(c));
    manifest["class_names"] = class_names;
    manifest["files"] = {
        {"features.f32", io::sha256_file(dir / "features.f32")},
        {"prototypes_A.f32", io::sha256_file(dir / "prototypes_A.f32")},
        {"prototypes_S.f32", io::sha256_file(dir / "prototypes_S.f32")}};

    std::ofstream out(dir / "manifest.json");
    if (!out) throw DatasetIoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
}

GzslDataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DatasetIoError("missing manifest: " + (dir / "manifest.json").string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw DatasetIoError("malformed manifest " + (dir / "manifest.json").string() +
                             ": " + e.what());
    }
    int version = manifest.value("schema_version", -1);
    if (version != kSchemaVersion)
        throw DatasetIoError("unsupported dataset schema version " +
                             std::to_string(version) + " (supported: " +
                             std::to_string(kSchemaVersion) + ")");

    GzslDataset ds;
    try {
        ds.config = config_from_json(manifest.at("config"));
        ds.labels = manifest.at("labels").get<std::vector<std::size_t>>();
        for (const auto& tag : manifest.at("splits"))
            ds.splits.push_back(split_from_name(tag.get<std::string>()));
        ds.prototypes.group_of = manifest.at("group_of").get<std::vector<std::size_t>>();
        ds.prototypes.n_groups = ds.config.n_groups;
        ds.variant_of = manifest.at("variant_of").get<std::vector<std::vector<int>>>();
    } catch (const json::exception& e) {
        throw DatasetIoError("malformed manifest " + (dir / "manifest.json").string() +
                             ": " + e.what());
    }

    for (const auto& [file, hash] : manifest.at("files").items()) {
        std::string actual = io::sha256_file(dir / file);
        if (actual != hash.get<std::string>())
            throw DatasetIoError("checksum mismatch for " + (dir / file).string());
    }

    const std::size_t n = manifest.at("n_samples");
    const std::size_t nv = ds.config.n_patches, di = ds.config.in_dim;
    const std::size_t C = ds.config.c_seen + ds.config.c_unseen;
    if (ds.labels.size() != n || ds.splits.size() != n)
        throw DatasetIoError("manifest arrays disagree with n_samples");

    auto features = io::read_f32(dir / "features.f32", n * nv * di);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor t(nv, di);
        std::copy(features.begin() + static_cast<std::ptrdiff_t>(i * nv * di),
                  features.begin() + static_cast<std::ptrdiff_t>((i + 1) * nv * di),
                  t.data.begin());
        ds.instances.push_back(std::move(t));
    }
    ds.prototypes.A = Tensor(C, ds.config.n_attrs,
                             io::read_f32(dir / "prototypes_A.f32", C * ds.config.n_attrs));
    ds.prototypes.S =
        Tensor(ds.config.n_attrs, ds.config.d_sem,
               io::read_f32(dir / "prototypes_S.f32", ds.config.n_attrs * ds.config.d_sem));
    return ds;
}

}  // namespace psvma
