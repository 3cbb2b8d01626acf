#include "wmbench/harness.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "wmbench/array_io.hpp"
#include "wmbench/attacks.hpp"
#include "wmbench/error.hpp"
#include "wmbench/hash.hpp"
#include "wmbench/metrics.hpp"
#include "wmbench/plot.hpp"
#include "wmbench/remover.hpp"
#include "wmbench/saliency.hpp"
#include "wmbench/stegastamp.hpp"
#include "wmbench/treering.hpp"

namespace wmbench {

// ---------------------------------------------------------------------------
// Dataset

Dataset ingest_dataset(const DatasetSpec& spec) {
    Dataset ds;
    require(spec.size >= 8, "dataset resolution must be at least 8");
    if (spec.directory) {
        ds.entries = ingest_directory(*spec.directory, spec.size);
        ds.manifest["source"] = {{"directory", spec.directory->string()}, {"size", spec.size}};
    } else {
        if (spec.count == 0) fail(ErrorKind::IngestionFailed, "synthetic dataset count must be positive");
        for (std::size_t i = 0; i < spec.count; ++i) {
            char id[32];
            std::snprintf(id, sizeof id, "synthetic-%05zu", i);
            auto img = procedural_image(derive_seed({spec.seed, i}), spec.size);
            ds.entries.push_back({id, image_sha256(img), std::move(img)});
        }
        ds.manifest["source"] = {{"synthetic", {{"count", spec.count}, {"size", spec.size}, {"seed", spec.seed}}}};
    }
    nlohmann::json images = nlohmann::json::array();
    for (const auto& e : ds.entries)
        images.push_back({{"id", e.id}, {"sha256", e.sha256}, {"height", e.image.height()}, {"width", e.image.width()}});
    ds.manifest["images"] = std::move(images);
    return ds;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

const std::set<std::string> kAttackTypes = {"none", "blur", "rotation", "straight-blur", "lba", "random-mask", "regen"};
const std::set<std::string> kWatermarks = {"stegastamp", "treering", "stacked-naive", "stacked"};

bool is_tpr_metric(const std::string& m) { return m.rfind("tpr@", 0) == 0; }

double tpr_target(const std::string& m) {
    try {
        std::size_t used = 0;
        const double v = std::stod(m.substr(4), &used);
        if (used != m.size() - 4) throw std::invalid_argument(m);
        return v;
    } catch (const std::logic_error&) {
        fail(ErrorKind::InvalidArgument, "invalid metric '" + m + "' (expected tpr@<fpr>)");
    }
}

void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& where) {
    if (!node.IsMap()) fail(ErrorKind::InvalidArgument, where + " must be a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.count(key)) fail(ErrorKind::InvalidArgument, "unknown key '" + key + "' in " + where);
    }
}

template <class T>
std::vector<T> as_list(const YAML::Node& node, const std::string& where) {
    if (!node.IsSequence()) fail(ErrorKind::InvalidArgument, where + " must be a list");
    std::vector<T> out;
    for (const auto& item : node) out.push_back(item.as<T>());
    return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("config is not valid YAML: ") + e.what());
    }
    ExperimentConfig c;
    try {
        check_keys(root, {"experiment", "seed", "dataset", "models", "treering", "watermarks", "attacks", "metrics", "plots"},
                   "config");
        if (root["experiment"]) c.id = root["experiment"].as<std::string>();
        if (root["seed"]) c.seed = root["seed"].as<std::uint64_t>();
        if (const auto d = root["dataset"]) {
            check_keys(d, {"synthetic", "directory", "size"}, "dataset");
            if (d["synthetic"] && d["directory"])
                fail(ErrorKind::InvalidArgument, "dataset must specify either synthetic or directory, not both");
            if (const auto s = d["synthetic"]) {
                check_keys(s, {"count", "size", "seed"}, "dataset.synthetic");
                if (s["count"]) c.dataset.count = s["count"].as<std::size_t>();
                if (s["size"]) c.dataset.size = s["size"].as<int>();
                if (s["seed"]) c.dataset.seed = s["seed"].as<std::uint64_t>();
            }
            if (d["directory"]) c.dataset.directory = resolve(base_dir, d["directory"].as<std::string>());
            if (d["size"]) c.dataset.size = d["size"].as<int>();
        }
        if (const auto m = root["models"]) {
            check_keys(m, {"stegastamp", "remover", "backend"}, "models");
            if (m["stegastamp"]) c.stegastamp = resolve(base_dir, m["stegastamp"].as<std::string>());
            if (m["remover"]) c.remover = resolve(base_dir, m["remover"].as<std::string>());
            if (m["backend"]) c.backend = m["backend"].as<std::string>();
        }
        if (const auto t = root["treering"]) {
            check_keys(t, {"key_seed", "radius"}, "treering");
            if (t["key_seed"]) c.key_seed = t["key_seed"].as<std::uint64_t>();
            if (t["radius"]) c.radius = t["radius"].as<int>();
        }
        if (root["watermarks"]) c.watermarks = as_list<std::string>(root["watermarks"], "watermarks");
        if (root["metrics"]) c.metrics = as_list<std::string>(root["metrics"], "metrics");
        if (root["plots"]) c.plots = root["plots"].as<bool>();
        if (const auto a = root["attacks"]) {
            if (!a.IsSequence()) fail(ErrorKind::InvalidArgument, "attacks must be a list");
            for (const auto& item : a) {
                check_keys(item, {"type", "percentiles", "kernels", "settings", "size", "degrees"}, "attack entry");
                AttackSpec s;
                if (!item["type"]) fail(ErrorKind::InvalidArgument, "attack entry without a type");
                s.type = item["type"].as<std::string>();
                if (item["percentiles"]) s.percentiles = as_list<double>(item["percentiles"], "percentiles");
                if (item["kernels"]) s.kernels = as_list<int>(item["kernels"], "kernels");
                if (item["settings"]) s.settings = as_list<std::string>(item["settings"], "settings");
                if (item["size"]) s.size = item["size"].as<int>();
                if (item["degrees"]) s.degrees = item["degrees"].as<double>();
                c.attacks.push_back(std::move(s));
            }
        }
    } catch (const YAML::Exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("config value has the wrong type: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::IoError, "cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

void ExperimentConfig::validate() const {
    require(!id.empty(), "experiment id must be nonempty");
    require(!watermarks.empty(), "watermark list must be nonempty");
    require(!attacks.empty(), "attack grid must be nonempty");
    require(!metrics.empty(), "metric list must be nonempty");
    require(dataset.size >= 8, "dataset size must be at least 8");
    if (dataset.directory) {
        require(std::filesystem::is_directory(*dataset.directory),
                "dataset directory " + dataset.directory->string() + " does not exist");
    } else {
        require(dataset.count > 0, "synthetic dataset count must be positive");
    }
    for (const auto& w : watermarks) {
        require(kWatermarks.count(w) > 0, "unknown watermark '" + w + "'");
        if (w != "treering") require(stegastamp.has_value(), "watermark '" + w + "' needs models.stegastamp");
        if (w == "stacked") require(remover.has_value(), "watermark 'stacked' needs models.remover");
    }
    for (const auto& p : {stegastamp, remover})
        if (p) require(std::filesystem::is_regular_file(*p), "checkpoint " + p->string() + " does not exist");
    for (const auto& m : metrics) {
        if (is_tpr_metric(m)) {
            const double t = tpr_target(m);
            require(t > 0.0 && t < 1.0, "TPR target must lie in (0,1)");
            continue;
        }
        require(m == "bitacc" || m == "det" || m == "fid" || m == "auc" || m == "distance", "unknown metric '" + m + "'");
    }
    for (const auto& a : attacks) {
        require(kAttackTypes.count(a.type) > 0, "unknown attack type '" + a.type + "'");
        if (a.type == "lba" || a.type == "random-mask") {
            require(!a.percentiles.empty() && !a.kernels.empty(), a.type + " needs nonempty percentiles and kernels");
            for (double p : a.percentiles) require(p >= 0.0 && p < 100.0, "percentile must lie in [0,100)");
        }
        if (a.type == "straight-blur") require(!a.kernels.empty(), "straight-blur needs kernels");
        for (int k : a.kernels) require(k >= 1 && k <= dataset.size, "kernel sizes must lie in [1, image size]");
        if (a.type == "regen") {
            require(!a.settings.empty(), "regen needs settings");
            for (const auto& s : a.settings) RegenConfig::parse(s);
        }
        if (a.type == "blur") require(a.size >= 1 && a.size <= dataset.size, "blur size must lie in [1, image size]");
    }
    require(radius >= 1, "Tree-Ring radius must be positive");
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json attacks_json = nlohmann::json::array();
    for (const auto& a : attacks)
        attacks_json.push_back({{"type", a.type},
                                {"percentiles", a.percentiles},
                                {"kernels", a.kernels},
                                {"settings", a.settings},
                                {"size", a.size},
                                {"degrees", a.degrees}});
    nlohmann::json ds;
    if (dataset.directory)
        ds = {{"directory", dataset.directory->string()}, {"size", dataset.size}};
    else
        ds = {{"synthetic", {{"count", dataset.count}, {"size", dataset.size}, {"seed", dataset.seed}}}};
    return {{"experiment", id},
            {"seed", seed},
            {"dataset", ds},
            {"models",
             {{"stegastamp", stegastamp ? stegastamp->string() : ""},
              {"remover", remover ? remover->string() : ""},
              {"backend", backend}}},
            {"treering", {{"key_seed", key_seed}, {"radius", radius}}},
            {"watermarks", watermarks},
            {"attacks", attacks_json},
            {"metrics", metrics},
            {"plots", plots}};
}

// ---------------------------------------------------------------------------
// Execution

int worker_count() {
    if (const char* env = std::getenv("WMBENCH_WORKERS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
    const auto n_threads = static_cast<std::size_t>(std::max(1, workers));
    if (n_threads == 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(n_threads, count); ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) fn(i);
        });
    for (auto& th : pool) th.join();
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

struct Cell {
    std::string attack;
    std::string params;
    std::string family;  // attack type
    double percentile = 0.0;
    int kernel = 1;
    int blur_size = 8;
    double degrees = 75.0;
    std::string regen;
};

Cell make_cell(std::string attack, std::string params, std::string family) {
    Cell c;
    c.attack = std::move(attack);
    c.params = std::move(params);
    c.family = std::move(family);
    return c;
}

std::vector<Cell> expand_cells(const std::vector<AttackSpec>& attacks) {
    std::vector<Cell> cells;
    for (const auto& a : attacks) {
        if (a.type == "none") {
            cells.push_back(make_cell("none", "", a.type));
        } else if (a.type == "blur") {
            auto c = make_cell("blur", "size=" + std::to_string(a.size), a.type);
            c.blur_size = a.size;
            cells.push_back(c);
        } else if (a.type == "rotation") {
            auto c = make_cell("rotation", "deg=" + format_number(a.degrees), a.type);
            c.degrees = a.degrees;
            cells.push_back(c);
        } else if (a.type == "straight-blur") {
            for (int k : a.kernels) {
                auto c = make_cell("straight-blur", "k=" + std::to_string(k), a.type);
                c.kernel = k;
                cells.push_back(c);
            }
        } else if (a.type == "lba" || a.type == "random-mask") {
            for (double p : a.percentiles)
                for (int k : a.kernels) {
                    auto c = make_cell(a.type, "p=" + format_number(p) + ";k=" + std::to_string(k), a.type);
                    c.percentile = p;
                    c.kernel = k;
                    cells.push_back(c);
                }
        } else if (a.type == "regen") {
            for (const auto& s : a.settings) {
                auto c = make_cell("regen", RegenConfig::parse(s).notation(), a.type);
                c.regen = s;
                cells.push_back(c);
            }
        }
    }
    return cells;
}

// Watermarked inputs for one watermark mode.
struct Prepared {
    std::vector<Image> clean;      // reference set for FID
    std::vector<Image> positives;  // watermarked
    std::vector<Image> negatives;  // unwatermarked counterparts (Tree-Ring modes)
    std::vector<BitMessage> messages;
    std::vector<Heatmap> pos_heatmaps, neg_heatmaps;
};

struct ItemResult {
    bool ok = false;
    std::string error_kind;
    std::string error_message;
    double bitacc = 0.0;
    bool tr_detected = false;
    double pos_score = 0.0, neg_score = 0.0, distance = 0.0;
    Eigen::VectorXd features;
};

struct Context {
    const ExperimentConfig* config = nullptr;
    std::optional<StegaParams> stega;
    std::optional<RemoverParams> remover;
    std::unique_ptr<LatentGenerator> gen;
    std::unique_ptr<RegenerationBackend> regen;
    std::optional<TreeRingKey> key;
    TreeRingConfig tr_config;
    std::unique_ptr<FeatureExtractor> extractor;
};

Image apply_attack(const Context& ctx, const Cell& cell, const Image& img, const Heatmap* heatmap,
                   std::uint64_t seed) {
    if (cell.family == "none") return img;
    if (cell.family == "blur") return attack_blur(img, cell.blur_size);
    if (cell.family == "rotation") return attack_rotation(img, cell.degrees);
    if (cell.family == "straight-blur") return blur(img, gaussian_kernel(cell.kernel, cell.kernel / 3.0));
    LBAConfig lc;
    lc.percentile = cell.percentile;
    lc.kernel = cell.kernel;
    if (cell.family == "lba") {
        if (!heatmap) fail(ErrorKind::AttackFailed, "LBA needs a StegaStamp decoder checkpoint");
        return lba_from_heatmap(img, *heatmap, lc).image;
    }
    if (cell.family == "random-mask") return randomized_mask_attack(img, lc, seed).image;
    if (cell.family == "regen") {
        auto rc = RegenConfig::parse(cell.regen);
        rc.seed = seed;
        return rinse(img, rc, *ctx.regen);
    }
    fail(ErrorKind::InvalidArgument, "unknown attack family " + cell.family);
}

bool uses_stega(const std::string& wm) { return wm != "treering"; }
bool uses_treering(const std::string& wm) { return wm != "stegastamp"; }

Prepared prepare(const Context& ctx, const std::string& wm, const Dataset& ds, bool need_heatmaps, int workers) {
    const auto& cfg = *ctx.config;
    const std::size_t n = ds.entries.size();
    Prepared p;
    p.clean.resize(n);
    p.positives.resize(n);
    if (uses_treering(wm)) p.negatives.resize(n);
    if (uses_stega(wm)) {
        for (std::size_t i = 0; i < n; ++i) {
            Rng rng(derive_seed({cfg.seed, 0x6d5367, i}));
            p.messages.push_back(BitMessage::random(ctx.stega->arch.bits, rng));
        }
    }
    parallel_for(n, workers, [&](std::size_t i) {
        if (wm == "stegastamp") {
            p.clean[i] = ds.entries[i].image;
            p.positives[i] = stega_encode(p.clean[i], p.messages[i], *ctx.stega).encoded;
            return;
        }
        const auto pos_seed = derive_seed({cfg.seed, 0x7472, i});
        const auto neg_seed = derive_seed({cfg.seed, 0x6e756c6c, i});
        p.clean[i] = tr_generate(*ctx.gen, *ctx.key, "", pos_seed).image;
        Image neg = ctx.gen->generate(ctx.gen->sample_noise(neg_seed), "");
        if (uses_stega(wm)) {
            p.positives[i] = stega_encode(p.clean[i], p.messages[i], *ctx.stega).encoded;
            p.negatives[i] = stega_encode(neg, p.messages[i], *ctx.stega).encoded;
        } else {
            p.positives[i] = p.clean[i];
            p.negatives[i] = std::move(neg);
        }
    });
    if (need_heatmaps && ctx.stega) {
        p.pos_heatmaps = gradcam_batch(*ctx.stega, p.positives);
        if (!p.negatives.empty()) p.neg_heatmaps = gradcam_batch(*ctx.stega, p.negatives);
    }
    return p;
}

ItemResult evaluate_item(const Context& ctx, const std::string& wm, const Cell& cell, const Prepared& p,
                         std::size_t i, std::uint64_t seed, bool need_features) {
    ItemResult r;
    try {
        const Heatmap* hp = p.pos_heatmaps.empty() ? nullptr : &p.pos_heatmaps[i];
        const Image attacked = apply_attack(ctx, cell, p.positives[i], hp, seed);
        if (need_features) r.features = ctx.extractor->extract(std::span<const Image>(&attacked, 1)).row(0).transpose();
        if (uses_stega(wm)) {
            const auto dec = stega_decode(attacked, *ctx.stega);
            r.bitacc = bit_accuracy(dec.message, p.messages[i]);
        }
        if (uses_treering(wm)) {
            const Heatmap* hn = p.neg_heatmaps.empty() ? nullptr : &p.neg_heatmaps[i];
            const Image neg_attacked = apply_attack(ctx, cell, p.negatives[i], hn, derive_seed({seed, 1}));
            const bool through_remover = wm == "stacked";
            const auto detect = [&](const Image& img) {
                return tr_detect(*ctx.gen, through_remover ? remove(img, *ctx.remover) : img, *ctx.key, ctx.tr_config);
            };
            const auto dpos = detect(attacked);
            const auto dneg = detect(neg_attacked);
            r.pos_score = dpos.score;
            r.neg_score = dneg.score;
            r.distance = dpos.distance;
            r.tr_detected = dpos.detected;
        }
        r.ok = true;
    } catch (const Error& e) {
        r.error_kind = to_string(e.kind());
        r.error_message = e.what();
    } catch (const std::exception& e) {
        r.error_kind = "attack-failed";
        r.error_message = e.what();
    }
    return r;
}

}  // namespace

ReportTable run_experiment(const ExperimentConfig& config, const std::function<void(const std::string&)>& log) {
    config.validate();
    const auto say = [&](const std::string& s) {
        if (log) log(s);
    };
    const int workers = worker_count();
    Context ctx;
    ctx.config = &config;
    const bool need_stega = std::any_of(config.watermarks.begin(), config.watermarks.end(), uses_stega);
    const bool need_tr = std::any_of(config.watermarks.begin(), config.watermarks.end(), uses_treering);
    if (config.stegastamp) ctx.stega = StegaParams::load(*config.stegastamp);
    if (config.remover) ctx.remover = RemoverParams::load(*config.remover);
    if (need_stega && !ctx.stega) fail(ErrorKind::InvalidArgument, "a StegaStamp checkpoint is required");
    const auto cells = expand_cells(config.attacks);
    const bool need_regen = std::any_of(cells.begin(), cells.end(), [](const Cell& c) { return c.family == "regen"; });
    const bool need_heatmaps = std::any_of(cells.begin(), cells.end(), [](const Cell& c) { return c.family == "lba"; });
    const bool need_fid = std::find(config.metrics.begin(), config.metrics.end(), "fid") != config.metrics.end();
    if (need_tr || need_regen) ctx.gen = make_generator(config.backend);
    if (need_regen) ctx.regen = make_regeneration_backend(config.backend);
    if (need_tr) {
        Rng krng(config.key_seed);
        ctx.key = make_key(ctx.gen->latent_shape(), config.radius, 0, krng);
        ctx.tr_config.radius = config.radius;
        ctx.tr_config.backend = config.backend;
    }
    if (need_fid) ctx.extractor = make_feature_extractor("proxy");

    say("ingesting dataset");
    const Dataset ds = ingest_dataset(config.dataset);
    if (ctx.stega)
        for (const auto& e : ds.entries)
            require(e.image.height() == ctx.stega->arch.resolution, "dataset resolution does not match the checkpoint");

    ReportTable table;
    table.experiment = config.id;
    table.grid_size = cells.size() * config.watermarks.size();

    const auto config_json = config.to_json();
    nlohmann::json prov;
    prov["config_sha256"] = sha256_hex(config_json.dump());
    prov["config"] = config_json;
    prov["master_seed"] = config.seed;
    prov["seed_rule"] = "cell seed = derive_seed(master, image index, attack cell index)";
    nlohmann::json ckpts = nlohmann::json::object();
    if (config.stegastamp) ckpts["stegastamp"] = file_sha256(*config.stegastamp);
    if (config.remover) ckpts["remover"] = file_sha256(*config.remover);
    prov["checkpoints"] = ckpts;
    prov["dataset_manifest_sha256"] = sha256_hex(ds.manifest.dump());
    prov["lba_kernel_sigma"] = "kernel / 3";
    prov["blur_attack_sigma"] = "size / 3";
    if (ctx.stega) prov["tau_detect"] = detection_threshold(ctx.stega->arch.bits);
    if (need_tr) {
        prov["treering"] = {{"key_seed", config.key_seed}, {"radius", config.radius}, {"p_cutoff", ctx.tr_config.p_cutoff}};
        prov["generator"] = ctx.gen->metadata();
    }
    if (ctx.regen) prov["regeneration"] = ctx.regen->metadata();
    if (ctx.extractor) prov["feature_extractor"] = ctx.extractor->name();
    table.provenance = prov;
    table.provenance["manifest"] = ds.manifest;

    const std::size_t n = ds.entries.size();
    for (const auto& wm : config.watermarks) {
        say("preparing " + wm + " inputs");
        const Prepared prep = prepare(ctx, wm, ds, need_heatmaps, workers);
        Eigen::MatrixXd ref_features;
        if (need_fid) ref_features = ctx.extractor->extract(prep.clean);

        std::vector<ItemResult> results(cells.size() * n);
        say("running " + std::to_string(cells.size()) + " cells x " + std::to_string(n) + " images for " + wm);
        parallel_for(results.size(), workers, [&](std::size_t job) {
            const std::size_t ci = job / n, i = job % n;
            const auto seed = derive_seed({config.seed, i, ci});
            results[job] = evaluate_item(ctx, wm, cells[ci], prep, i, seed, need_fid);
        });

        for (std::size_t ci = 0; ci < cells.size(); ++ci) {
            const auto& cell = cells[ci];
            std::vector<const ItemResult*> ok;
            std::map<std::string, std::size_t> failures;
            std::string first_message;
            for (std::size_t i = 0; i < n; ++i) {
                const auto& r = results[ci * n + i];
                if (r.ok) {
                    ok.push_back(&r);
                } else {
                    ++failures[r.error_kind];
                    if (first_message.empty()) first_message = r.error_message;
                }
            }
            std::string status = "ok";
            if (!failures.empty()) {
                std::size_t failed = 0;
                for (const auto& [k, c] : failures) failed += c;
                const auto kind = failures.begin()->first;
                status = "error:" + kind;
                table.errors.push_back({wm, cell.attack, cell.params, kind, first_message, failed});
            }
            const auto add = [&](const std::string& metric, double value) {
                table.rows.push_back({wm, cell.attack, cell.params, metric, value, ok.size(), status});
            };
            const double nan = std::numeric_limits<double>::quiet_NaN();
            for (const auto& metric : config.metrics) {
                if (metric == "bitacc") {
                    if (!uses_stega(wm)) continue;
                    double s = 0.0;
                    for (const auto* r : ok) s += r->bitacc;
                    add("bitacc", ok.empty() ? nan : s / static_cast<double>(ok.size()));
                } else if (metric == "det") {
                    if (uses_stega(wm)) {
                        std::vector<bool> v;
                        for (const auto* r : ok) v.push_back(stega_detected(r->bitacc, ctx.stega->arch.bits));
                        add(wm == "stegastamp" ? "det" : "ss-det", v.empty() ? nan : detection_rate(v));
                    }
                    if (uses_treering(wm)) {
                        std::vector<bool> v;
                        for (const auto* r : ok)
                            v.push_back(r->tr_detected);
                        add(wm == "treering" ? "det" : "tr-det", v.empty() ? nan : detection_rate(v));
                    }
                } else if (metric == "auc" || is_tpr_metric(metric)) {
                    if (!uses_treering(wm)) continue;
                    std::vector<double> pos, neg;
                    for (const auto* r : ok) {
                        pos.push_back(r->pos_score);
                        neg.push_back(r->neg_score);
                    }
                    if (pos.empty()) {
                        add(metric, nan);
                        continue;
                    }
                    const auto roc = roc_auc(pos, neg);
                    add(metric, metric == "auc" ? roc.auc : tpr_at_fpr(roc, tpr_target(metric)));
                    if (metric == "auc")
                        table.provenance["roc"][wm + "/" + cell.attack + (cell.params.empty() ? "" : "/" + cell.params)] = {
                            {"fpr", roc.fpr}, {"tpr", roc.tpr}};
                } else if (metric == "distance") {
                    if (!uses_treering(wm)) continue;
                    double s = 0.0;
                    for (const auto* r : ok) s += r->distance;
                    add("distance", ok.empty() ? nan : s / static_cast<double>(ok.size()));
                } else if (metric == "fid") {
                    if (ok.size() < 2) {
                        add("fid", nan);
                        continue;
                    }
                    Eigen::MatrixXd feats(static_cast<Eigen::Index>(ok.size()), ref_features.cols());
                    for (std::size_t k = 0; k < ok.size(); ++k) feats.row(static_cast<Eigen::Index>(k)) = ok[k]->features.transpose();
                    add("fid", fid(feature_stats(feats), feature_stats(ref_features)));
                }
            }
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// Reporting

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    return out + "\"";
}

std::string exact_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

constexpr const char* kCsvHeader = "watermark,attack,params,metric,value,n,status";

}  // namespace

std::string report_csv(const ReportTable& table) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& r : table.rows)
        out += csv_field(r.watermark) + "," + csv_field(r.attack) + "," + csv_field(r.params) + "," +
               csv_field(r.metric) + "," + exact_number(r.value) + "," + std::to_string(r.n) + "," +
               csv_field(r.status) + "\n";
    return out;
}

std::vector<ReportRow> parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) fail(ErrorKind::IoError, "results CSV has an unexpected header");
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 7) fail(ErrorKind::IoError, "malformed results CSV line: " + line);
        ReportRow r;
        r.watermark = f[0];
        r.attack = f[1];
        r.params = f[2];
        r.metric = f[3];
        r.value = f[4] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[4]);
        r.n = static_cast<std::size_t>(std::stoull(f[5]));
        r.status = f[6];
        rows.push_back(std::move(r));
    }
    return rows;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
    out << text;
    if (!out) fail(ErrorKind::IoError, "failed writing " + path.string());
}

void emit_plots(const ReportTable& table, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    // Detection rate vs percentile, one series per (attack family, kernel).
    std::map<std::string, std::map<std::string, std::vector<std::pair<double, double>>>> curves;
    for (const auto& r : table.rows) {
        if ((r.attack != "lba" && r.attack != "random-mask") || (r.metric != "det" && r.metric != "ss-det")) continue;
        const auto p = std::stod(r.params.substr(2, r.params.find(';') - 2));
        const auto k = r.params.substr(r.params.find(';') + 1);
        curves[r.watermark][r.attack + " " + k].emplace_back(p, r.value);
    }
    for (auto& [wm, series] : curves) {
        LinePlot plot(0.0, 100.0, 0.0, 1.0);
        for (auto& [name, pts] : series) {
            std::sort(pts.begin(), pts.end());
            plot.add_series(name, pts, name.rfind("lba", 0) == 0);
        }
        plot.save(dir / ("detection_vs_percentile_" + wm + ".png"));
    }
    // FID bars per watermark.
    std::map<std::string, std::vector<std::pair<std::string, double>>> bars;
    for (const auto& r : table.rows)
        if (r.metric == "fid" && std::isfinite(r.value))
            bars[r.watermark].emplace_back(r.attack + (r.params.empty() ? "" : " " + r.params), r.value);
    for (const auto& [wm, values] : bars) save_bar_chart(dir / ("fid_" + wm + ".png"), values);
    // ROC curves recorded during the run.
    if (table.provenance.contains("roc")) {
        LinePlot plot(0.0, 1.0, 0.0, 1.0);
        for (const auto& [name, roc] : table.provenance["roc"].items()) {
            std::vector<std::pair<double, double>> pts;
            const auto fpr = roc.at("fpr").get<std::vector<double>>();
            const auto tpr = roc.at("tpr").get<std::vector<double>>();
            for (std::size_t i = 0; i < fpr.size(); ++i) pts.emplace_back(fpr[i], tpr[i]);
            plot.add_series(name, pts, true);
        }
        plot.save(dir / "roc.png");
    }
}

}  // namespace

void emit_report(const ReportTable& table, const std::filesystem::path& dir, bool plots) {
    require(!table.rows.empty() || !table.errors.empty(), "report table is empty");
    try {
        std::filesystem::create_directories(dir);
    } catch (const std::filesystem::filesystem_error& e) {
        fail(ErrorKind::IoError, e.what());
    }
    write_text(dir / "results.csv", report_csv(table));
    nlohmann::json j;
    j["experiment"] = table.experiment;
    j["grid_size"] = table.grid_size;
    j["provenance"] = table.provenance;
    j["provenance"].erase("manifest");
    j["rows"] = nlohmann::json::array();
    for (const auto& r : table.rows)
        j["rows"].push_back({{"watermark", r.watermark},
                             {"attack", r.attack},
                             {"params", r.params},
                             {"metric", r.metric},
                             {"value", std::isnan(r.value) ? nlohmann::json(nullptr) : nlohmann::json(r.value)},
                             {"n", r.n},
                             {"status", r.status}});
    j["errors"] = nlohmann::json::array();
    for (const auto& e : table.errors)
        j["errors"].push_back({{"watermark", e.watermark},
                               {"attack", e.attack},
                               {"params", e.params},
                               {"kind", e.kind},
                               {"message", e.message},
                               {"failed_items", e.failed_items}});
    write_text(dir / "results.json", j.dump(2) + "\n");
    if (table.provenance.contains("manifest")) write_text(dir / "manifest.json", table.provenance["manifest"].dump(2) + "\n");
    if (plots) emit_plots(table, dir / "plots");
}

}  // namespace wmbench
