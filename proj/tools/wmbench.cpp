#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "wmbench/array_io.hpp"
#include "wmbench/attacks.hpp"
#include "wmbench/dataset.hpp"
#include "wmbench/error.hpp"
#include "wmbench/evaluate.hpp"
#include "wmbench/harness.hpp"
#include "wmbench/remover.hpp"
#include "wmbench/saliency.hpp"
#include "wmbench/stegastamp.hpp"
#include "wmbench/treering.hpp"

namespace fs = std::filesystem;
using namespace wmbench;

namespace {

std::vector<Image> load_training_images(const std::string& dir, std::size_t synthetic, int size, std::uint64_t seed) {
    if (!dir.empty()) {
        std::vector<Image> out;
        for (auto& e : ingest_directory(dir, size)) out.push_back(std::move(e.image));
        return out;
    }
    return procedural_corpus(seed, synthetic, size);
}

TreeRingKey key_from(const std::string& path, std::uint64_t key_seed, int radius, const LatentGenerator& gen) {
    if (!path.empty() && fs::exists(path)) return TreeRingKey::load(path);
    Rng rng(key_seed);
    auto key = make_key(gen.latent_shape(), radius, 0, rng);
    if (!path.empty()) key.save(path);
    return key;
}

void print_detection(const DetectionResult& d) {
    std::printf("distance %.6g\np-value %.6g\nverdict %s\n", d.distance, d.p_value, d.detected ? "watermarked" : "clean");
}

std::vector<fs::path> png_files(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) fail(ErrorKind::IngestionFailed, "no PNG files in " + dir.string());
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"wmbench: watermark embedding, removal, attack and evaluation workbench"};
    app.require_subcommand(1);

    // train-stegastamp
    auto* train_ss = app.add_subcommand("train-stegastamp", "Train a StegaStamp encoder/decoder");
    std::string data_dir, out_path;
    std::size_t synthetic = 5000;
    int size = 64, bits = 32, steps = 20000;
    std::uint64_t seed = 1;
    StegaTrainConfig ss_cfg;
    train_ss->add_option("--data", data_dir, "Directory of PNG training images (default: synthetic corpus)");
    train_ss->add_option("--synthetic", synthetic, "Synthetic corpus size when --data is absent");
    train_ss->add_option("--size", size, "Image resolution");
    train_ss->add_option("--bits", bits, "Message length");
    train_ss->add_option("--steps", steps, "Training steps");
    train_ss->add_option("--seed", seed, "Seed");
    train_ss->add_option("--lambda-r", ss_cfg.lambda_r, "Residual loss weight");
    train_ss->add_option("--lambda-p", ss_cfg.lambda_p, "Perceptual loss weight");
    train_ss->add_option("--lr", ss_cfg.learning_rate, "Learning rate");
    train_ss->add_option("--out", out_path, "Checkpoint path")->required();

    // embed / decode
    auto* embed = app.add_subcommand("embed", "Embed a message with a StegaStamp encoder");
    std::string ckpt, msg, in_path;
    embed->add_option("--ckpt", ckpt)->required();
    embed->add_option("--msg", msg, "Message as hex, most significant bit first")->required();
    embed->add_option("--in", in_path)->required();
    embed->add_option("--out", out_path)->required();
    auto* decode = app.add_subcommand("decode", "Decode a StegaStamp message");
    decode->add_option("--ckpt", ckpt)->required();
    decode->add_option("--in", in_path)->required();
    std::string json_out;
    decode->add_option("--json", json_out, "Also write the result as a prediction sidecar for evaluate");

    // Tree-Ring
    std::string backend = "toy", key_path;
    int radius = 10;
    std::uint64_t key_seed = 0;
    auto* tr_embed = app.add_subcommand("tr-embed", "Generate a Tree-Ring watermarked image");
    tr_embed->add_option("--backend", backend);
    tr_embed->add_option("--seed", seed, "Key seed (and default noise seed)");
    tr_embed->add_option("--noise-seed", key_seed, "Initial-noise seed (default: derived from --seed)");
    tr_embed->add_option("--radius", radius);
    tr_embed->add_option("--out", out_path)->required();
    tr_embed->add_option("--key", key_path, "Key file; reused when it exists, written otherwise")->required();
    auto* tr_detect_cmd = app.add_subcommand("tr-detect", "Detect a Tree-Ring watermark");
    tr_detect_cmd->add_option("--backend", backend);
    tr_detect_cmd->add_option("--key", key_path)->required();
    tr_detect_cmd->add_option("--in", in_path)->required();
    tr_detect_cmd->add_option("--json", json_out, "Also write the result as a prediction sidecar for evaluate");

    // Remover and stacking
    std::string stega_path, remover_path;
    std::size_t pairs = 2000;
    RemoverTrainConfig rm_cfg;
    auto* train_rm = app.add_subcommand("train-remover", "Train the StegaStamp remover on stacked pairs");
    train_rm->add_option("--stega", stega_path)->required();
    train_rm->add_option("--backend", backend);
    train_rm->add_option("--pairs", pairs, "Training pairs (10% more are generated for validation)");
    train_rm->add_option("--key", key_path, "Tree-Ring key; reused when it exists, written otherwise");
    train_rm->add_option("--key-seed", key_seed);
    train_rm->add_option("--epochs", rm_cfg.epochs);
    train_rm->add_option("--seed", rm_cfg.seed);
    train_rm->add_option("--out", out_path)->required();
    auto* st_embed = app.add_subcommand("stacked-embed", "Embed Tree-Ring then StegaStamp");
    std::string tr_out;
    st_embed->add_option("--stega", stega_path)->required();
    st_embed->add_option("--backend", backend);
    st_embed->add_option("--key", key_path)->required();
    st_embed->add_option("--seed", seed);
    st_embed->add_option("--msg", msg)->required();
    st_embed->add_option("--out", out_path)->required();
    st_embed->add_option("--tr-out", tr_out, "Also write the Tree-Ring-only image");
    auto* st_decode = app.add_subcommand("stacked-decode", "Decode both watermarks of a stacked image");
    st_decode->add_option("--stega", stega_path)->required();
    st_decode->add_option("--remover", remover_path)->required();
    st_decode->add_option("--backend", backend);
    st_decode->add_option("--key", key_path)->required();
    st_decode->add_option("--in", in_path)->required();

    // Saliency and attacks
    std::string layer = "last-conv";
    auto* cam = app.add_subcommand("gradcam", "GradCAM heatmap of the StegaStamp decoder");
    cam->add_option("--ckpt", ckpt)->required();
    cam->add_option("--in", in_path)->required();
    cam->add_option("--out", out_path)->required();
    cam->add_option("--layer", layer);
    auto* attack = app.add_subcommand("attack", "Attack every PNG in a directory");
    std::string attack_type;
    double percentile = 50.0, strength = 0.0;
    int kernel = 31, iters = 1;
    attack->add_option("--type", attack_type)
        ->required()
        ->check(CLI::IsMember({"rotation", "blur", "regen", "rinse", "lba", "random-mask"}));
    attack->add_option("--in", in_path)->required();
    attack->add_option("--out", out_path)->required();
    attack->add_option("--percentile", percentile);
    attack->add_option("--kernel", kernel);
    attack->add_option("--ckpt", ckpt);
    attack->add_option("--strength", strength);
    attack->add_option("--iters", iters);
    attack->add_option("--seed", seed);
    attack->add_option("--backend", backend);

    // Evaluation of externally produced predictions
    auto* eval = app.add_subcommand("evaluate", "Score decoder outputs against a truth manifest");
    std::string pred_dir, truth_path, metric_list = "bitacc,det", roc_out;
    eval->add_option("--pred", pred_dir, "Directory of <id>.json sidecars and/or <id>.png images")->required();
    eval->add_option("--truth", truth_path, "Truth manifest JSON")->required();
    eval->add_option("--metrics", metric_list, "Comma-separated: bitacc,det,auc,tpr@<fpr>,fid");
    eval->add_option("--out", out_path, "Results CSV")->required();
    eval->add_option("--roc", roc_out, "Also write ROC points as CSV");

    // Harness
    auto* run = app.add_subcommand("run", "Run an experiment config");
    std::string config_path;
    run->add_option("--config", config_path)->required();
    run->add_option("--out", out_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_ss) {
            const auto images = load_training_images(data_dir, synthetic, size, seed);
            ss_cfg.steps = steps;
            ss_cfg.seed = seed;
            ss_cfg.arch.resolution = size;
            ss_cfg.arch.bits = bits;
            ss_cfg.log_every = std::max(1, steps / 50);
            const auto res = train_stegastamp(
                images.size(), [&](std::size_t i) { return images[i]; }, ss_cfg, [](const StegaHistoryEntry& e) {
                    std::printf("step %d loss %.5f residual %.6f perceptual %.6f message %.4f bit-acc %.4f\n", e.step,
                                e.loss.total, e.loss.residual, e.loss.perceptual, e.loss.message, e.bit_accuracy);
                    std::fflush(stdout);
                });
            res.params.save(out_path);
        } else if (*embed) {
            const auto params = StegaParams::load(ckpt);
            const auto enc = stega_encode(load_png(in_path), BitMessage::from_hex(msg, params.arch.bits), params);
            save_png(out_path, enc.encoded);
        } else if (*decode) {
            const auto params = StegaParams::load(ckpt);
            const auto dec = stega_decode(load_png(in_path), params);
            std::printf("message %s\nconfidence", dec.message.to_hex().c_str());
            for (double l : dec.logits) std::printf(" %.4f", 1.0 / (1.0 + std::exp(-std::abs(l))));
            std::printf("\n");
            if (!json_out.empty())
                std::ofstream(json_out) << nlohmann::json{{"message", dec.message.to_hex()}, {"logits", dec.logits}}.dump(2)
                                        << "\n";
        } else if (*tr_embed) {
            const auto gen = make_generator(backend);
            const auto key = key_from(key_path, seed, radius, *gen);
            const auto noise_seed = key_seed != 0 ? key_seed : derive_seed({seed, 1});
            save_png(out_path, tr_generate(*gen, key, "", noise_seed).image);
        } else if (*tr_detect_cmd) {
            const auto gen = make_generator(backend);
            const auto key = TreeRingKey::load(key_path);
            TreeRingConfig cfg;
            cfg.radius = key.radius;
            cfg.channel = key.channel;
            cfg.backend = backend;
            const auto det = tr_detect(*gen, load_png(in_path), key, cfg);
            print_detection(det);
            if (!json_out.empty())
                std::ofstream(json_out) << nlohmann::json{{"score", det.score},
                                                          {"detected", det.detected},
                                                          {"distance", det.distance},
                                                          {"p_value", det.p_value}}
                                                   .dump(2)
                                        << "\n";
        } else if (*train_rm) {
            const auto stega = StegaParams::load(stega_path);
            const auto gen = make_generator(backend);
            const auto key = key_from(key_path, key_seed != 0 ? key_seed : 7, radius, *gen);
            const auto val_count = std::max<std::size_t>(1, pairs / 10);
            std::printf("generating %zu training and %zu validation pairs\n", pairs, val_count);
            const auto train = make_remover_pairs(*gen, key, stega, 1'000'000, pairs);
            const auto val = make_remover_pairs(*gen, key, stega, 2'000'000, val_count);
            rm_cfg.arch.resolution = stega.arch.resolution;
            const auto res = train_remover(train, val, rm_cfg, [](const RemoverHistoryEntry& e) {
                std::printf("epoch %d train %.6g val %.6g (per-element train %.3e val %.3e)\n", e.epoch, e.train_loss,
                            e.val_loss, e.train_loss_per_element, e.val_loss_per_element);
                std::fflush(stdout);
            });
            res.params.save(out_path);
        } else if (*st_embed) {
            const auto stega = StegaParams::load(stega_path);
            const auto gen = make_generator(backend);
            const auto key = TreeRingKey::load(key_path);
            const auto imgs = stacked_embed(*gen, key, "", seed, BitMessage::from_hex(msg, stega.arch.bits), stega);
            save_png(out_path, imgs.tr_ss);
            if (!tr_out.empty()) save_png(tr_out, imgs.tr);
        } else if (*st_decode) {
            const auto stega = StegaParams::load(stega_path);
            const auto remover = RemoverParams::load(remover_path);
            const auto gen = make_generator(backend);
            const auto key = TreeRingKey::load(key_path);
            TreeRingConfig cfg;
            cfg.radius = key.radius;
            cfg.channel = key.channel;
            cfg.backend = backend;
            const auto dec = stacked_decode(load_png(in_path), key, *gen, stega, remover, cfg);
            std::printf("message %s\n", dec.stega.message.to_hex().c_str());
            print_detection(dec.treering);
        } else if (*cam) {
            const auto params = StegaParams::load(ckpt);
            save_heatmap(out_path, gradcam(params, load_png(in_path), parse_layer(layer, params)));
        } else if (*attack) {
            fs::create_directories(out_path);
            std::optional<StegaParams> stega;
            if (attack_type == "lba") {
                if (ckpt.empty()) fail(ErrorKind::InvalidArgument, "lba needs --ckpt");
                stega = StegaParams::load(ckpt);
            }
            std::unique_ptr<RegenerationBackend> regen;
            if (attack_type == "regen" || attack_type == "rinse") regen = make_regeneration_backend(backend);
            LBAConfig lc;
            lc.percentile = percentile;
            lc.kernel = kernel;
            const auto files = png_files(in_path);
            for (std::size_t i = 0; i < files.size(); ++i) {
                const auto& file = files[i];
                const auto img = load_png(file);
                const auto image_seed = derive_seed({seed, i});
                nlohmann::json side = {{"attack", attack_type}, {"input", file.filename().string()}};
                Image out;
                if (attack_type == "rotation") {
                    out = attack_rotation(img);
                    side["degrees"] = kRotationDegrees;
                } else if (attack_type == "blur") {
                    out = attack_blur(img);
                    side["kernel"] = kBlurAttackSize;
                    side["sigma"] = kBlurAttackSize / 3.0;
                } else if (attack_type == "regen" || attack_type == "rinse") {
                    RegenConfig rc;
                    rc.strength = strength;
                    rc.iterations = attack_type == "regen" ? 1 : iters;
                    rc.seed = image_seed;
                    rc.backend = backend;
                    out = rinse(img, rc, *regen);
                    side["regen"] = {{"notation", rc.notation()},
                                     {"sigma", rc.effective_sigma(*regen)},
                                     {"backend", regen->metadata()}};
                    side["seed"] = image_seed;
                } else {
                    const auto res = attack_type == "lba" ? lba(img, *stega, lc) : randomized_mask_attack(img, lc, image_seed);
                    out = res.image;
                    side["config"] = lc.to_json();
                    side["mask_coverage"] = res.mask.coverage();
                    if (attack_type == "random-mask") side["seed"] = image_seed;
                }
                save_png(fs::path(out_path) / file.filename(), out);
                auto side_path = fs::path(out_path) / file.filename();
                side_path.replace_extension(".json");
                std::ofstream(side_path) << side.dump(2) << "\n";
            }
        } else if (*eval) {
            std::vector<std::string> metrics;
            std::stringstream ss(metric_list);
            for (std::string m; std::getline(ss, m, ',');)
                if (!m.empty()) metrics.push_back(m);
            const auto res = evaluate_predictions(load_truth_manifest(truth_path), pred_dir, metrics);
            std::ofstream(out_path) << eval_csv(res);
            for (const auto& r : res.rows) std::printf("%s %.6g (n=%zu)\n", r.metric.c_str(), r.value, r.n);
            if (!roc_out.empty()) {
                if (!res.roc) fail(ErrorKind::InvalidArgument, "--roc needs an auc or tpr@ metric");
                std::ofstream(roc_out) << roc_csv(*res.roc);
            }
        } else if (*run) {
            const auto config = load_config(config_path);
            const auto t0 = std::chrono::steady_clock::now();
            const auto table = run_experiment(config, [](const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); });
            emit_report(table, out_path, config.plots);
            const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::printf("%zu rows, %zu error cells, %.1f s\n", table.rows.size(), table.errors.size(), sec);
            for (const auto& e : table.errors)
                std::printf("error %s/%s/%s: %s (%zu items)\n", e.watermark.c_str(), e.attack.c_str(), e.params.c_str(),
                            e.message.c_str(), e.failed_items);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
