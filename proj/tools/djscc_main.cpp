// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "djscc/djscc.hpp"
#include "djscc/selftest.hpp"

namespace fs = std::filesystem;
using namespace djscc;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::vector<snr_db> parse_snr_list(const std::string& csv) {
    std::vector<snr_db> out;
    for (const auto& tok : kv_split_list(csv)) out.push_back(parse_snr(tok));
    if (out.empty()) throw std::invalid_argument("empty SNR list");
    return out;
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos)
        throw std::invalid_argument("size must look like HxW (e.g. 32x64), got '" + s + "'");
    return {static_cast<std::size_t>(kv_parse_int("size", s.substr(0, x))),
            static_cast<std::size_t>(kv_parse_int("size", s.substr(x + 1)))};
}

std::vector<stereo_pair<float>> eval_dataset(const model_config& arch, const std::string& data_dir,
                                             std::size_t count, double overlap, std::uint64_t seed) {
    std::vector<stereo_pair<float>> pairs;
    if (!data_dir.empty()) {
        auto loaded = load_pairs<float>(data_dir);
        if (loaded.warnings)
            std::fprintf(stderr, "note: %zu unpairable file(s) skipped in %s\n", loaded.warnings,
                         data_dir.c_str());
        for (auto& p : loaded.pairs) {
            if (p.x.shape[1] != arch.image_h || p.x.shape[2] != arch.image_w) {
                p.x = center_crop_resize(p.x, arch.image_h, arch.image_w);
                p.y = center_crop_resize(p.y, arch.image_h, arch.image_w);
            }
            pairs.push_back(std::move(p));
        }
        if (pairs.empty()) throw std::runtime_error("no image pairs found in " + data_dir);
    } else {
        jitter_config jit{0.05, 0.05, 0.005};
        for (std::size_t i = 0; i < count; ++i)
            pairs.push_back(generate_pair<float>(seed + i, overlap, arch.image_h, arch.image_w, jit));
    }
    return pairs;
}

void write_report(const eval_report& rep, const std::string& path) {
    if (path.empty() || path == "-") {
        std::fputs(rep.to_csv().c_str(), stdout);
        return;
    }
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write report to " + path);
    f << rep.to_csv();
}

int run_train(const std::string& config_path, const std::string& out_path,
              const std::string& resume_path, bool asymmetric, std::optional<std::uint64_t> seed) {
    train_config cfg = train_config::parse(read_file(config_path));
    if (asymmetric) cfg.asymmetric = true;
    if (seed) {
        cfg.seed_data = derive_seed(*seed, 1);
        cfg.seed_noise = derive_seed(*seed, 2);
        cfg.seed_init = derive_seed(*seed, 3);
    }
    cfg.validate();

    auto tr = resume_path.empty()
                  ? trainer<float>::fresh(cfg)
                  : trainer<float>::resume(cfg, read_checkpoint(resume_path));
    std::printf("training: %zu iterations, batch %zu, loss %s, %zu parameters%s\n",
                cfg.iterations, cfg.batch_size, loss_kind_name(cfg.loss).c_str(),
                parameter_count(tr.current_model()),
                resume_path.empty() ? "" : (" (resumed at " + std::to_string(tr.iteration()) + ")").c_str());

    double running = 0;
    std::size_t window = 0;
    while (tr.iteration() < cfg.iterations) {
        running += tr.step();
        ++window;
        const std::uint64_t it = tr.iteration();
        if (it % 100 == 0 || it == cfg.iterations) {
            std::printf("iter %6llu  loss %.6f\n", static_cast<unsigned long long>(it), running / window);
            std::fflush(stdout);
            running = 0;
            window = 0;
        }
        if (!out_path.empty() && (it % cfg.checkpoint_every == 0 || it == cfg.iterations))
            tr.save(out_path);
    }
    if (!out_path.empty()) std::printf("checkpoint written to %s\n", out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"distributed deep JSCC simulator for correlated stereo image pairs"};
    app.require_subcommand(1);
    app.failure_message([](const CLI::App*, const CLI::Error& e) {
        return std::string("error: ") + e.what() + "\n";
    });

    // train
    auto* train = app.add_subcommand("train", "train a model from a config file");
    std::string config_path, out_path, resume_path;
    bool asymmetric = false;
    std::optional<std::uint64_t> master_seed;
    train->add_option("--config", config_path, "key = value run configuration")->required();
    train->add_option("--out", out_path, "checkpoint output path");
    train->add_option("--resume", resume_path, "checkpoint to resume from");
    train->add_flag("--asymmetric", asymmetric, "force mu_y = NOISELESS during training");
    train->add_option("--seed", master_seed, "master seed overriding the config seeds");

    // eval-sweep
    auto* sweep = app.add_subcommand("eval-sweep", "equal-SNR quality sweep for a checkpoint");
    std::string ckpt_path, snrs_csv = "-3,1,7,13", channel_name = "awgn", report_path;
    std::string data_dir;
    std::size_t eval_pairs = 64;
    double eval_overlap = 0.7;
    std::uint64_t eval_seed = 90001, noise_seed = 420;
    sweep->add_option("--ckpt", ckpt_path, "checkpoint to evaluate")->required();
    sweep->add_option("--snrs", snrs_csv, "comma-separated SNR list in dB ('noiseless' allowed)");
    sweep->add_option("--channel", channel_name, "awgn or rayleigh");
    sweep->add_option("--report", report_path, "CSV output path ('-' for stdout)");
    sweep->add_option("--data-dir", data_dir, "evaluate on PPM pairs from this directory");
    sweep->add_option("--pairs", eval_pairs, "synthetic evaluation pair count");
    sweep->add_option("--overlap", eval_overlap, "synthetic overlap fraction");
    sweep->add_option("--data-seed", eval_seed, "synthetic dataset base seed");
    sweep->add_option("--noise-seed", noise_seed, "channel noise seed");

    // eval-delta
    auto* delta = app.add_subcommand("eval-delta", "side-SNR sweep at fixed mu_x");
    std::string delta_ckpt, deltas_csv = "-6,-3,0,3,6,noiseless", delta_report;
    std::string delta_data_dir;
    double snr_x = 1.0;
    std::size_t delta_pairs = 64;
    double delta_overlap = 0.7;
    std::uint64_t delta_eval_seed = 90001, delta_noise_seed = 420;
    delta->add_option("--ckpt", delta_ckpt, "checkpoint to evaluate")->required();
    delta->add_option("--snr-x", snr_x, "fixed mu_x in dB");
    delta->add_option("--deltas", deltas_csv, "comma-separated deltas ('noiseless' for the bound)");
    delta->add_option("--report", delta_report, "CSV output path ('-' for stdout)");
    delta->add_option("--data-dir", delta_data_dir, "evaluate on PPM pairs from this directory");
    delta->add_option("--pairs", delta_pairs, "synthetic evaluation pair count");
    delta->add_option("--overlap", delta_overlap, "synthetic overlap fraction");
    delta->add_option("--data-seed", delta_eval_seed, "synthetic dataset base seed");
    delta->add_option("--noise-seed", delta_noise_seed, "channel noise seed");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "write synthetic stereo PPM pairs");
    std::size_t gen_count = 16;
    double gen_overlap = 0.7;
    std::string gen_size = "32x64", gen_out;
    std::uint64_t gen_seed = 1;
    gen->add_option("--count", gen_count, "number of pairs");
    gen->add_option("--overlap", gen_overlap, "overlap fraction in [0,1]");
    gen->add_option("--size", gen_size, "image size HxW");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "base seed");

    // selftest
    app.add_subcommand("selftest", "run the built-in oracle and invariant checks");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("train"))
            return run_train(config_path, out_path, resume_path, asymmetric, master_seed);

        if (app.got_subcommand("eval-sweep")) {
            const checkpoint_data ck = read_checkpoint(ckpt_path);
            model<float> m = model_from_checkpoint<float>(ck);
            auto pairs = eval_dataset(m.config, data_dir, eval_pairs, eval_overlap, eval_seed);
            const auto rep = evaluate_sweep(m, pairs, parse_snr_list(snrs_csv),
                                            parse_channel_kind(channel_name), noise_seed);
            write_report(rep, report_path);
            return 0;
        }

        if (app.got_subcommand("eval-delta")) {
            const checkpoint_data ck = read_checkpoint(delta_ckpt);
            model<float> m = model_from_checkpoint<float>(ck);
            auto pairs = eval_dataset(m.config, delta_data_dir, delta_pairs, delta_overlap, delta_eval_seed);
            const auto rep = evaluate_delta_sweep(m, pairs, snr_db{snr_x}, parse_snr_list(deltas_csv),
                                                  channel_kind::awgn, delta_noise_seed);
            write_report(rep, delta_report);
            return 0;
        }

        if (app.got_subcommand("gen-data")) {
            const auto [h, w] = parse_size(gen_size);
            fs::create_directories(gen_out);
            jitter_config jit{0.05, 0.05, 0.005};
            for (std::size_t i = 0; i < gen_count; ++i) {
                const auto p = generate_pair<float>(gen_seed + i, gen_overlap, h, w, jit);
                char stem[32];
                std::snprintf(stem, sizeof stem, "pair_%05zu", i);
                write_ppm(fs::path(gen_out) / (std::string(stem) + "_left.ppm"), tensor_to_image(p.x));
                write_ppm(fs::path(gen_out) / (std::string(stem) + "_right.ppm"), tensor_to_image(p.y));
            }
            std::printf("wrote %zu pairs (%zux%zu, overlap %.2f) to %s\n", gen_count, h, w, gen_overlap,
                        gen_out.c_str());
            return 0;
        }

        if (app.got_subcommand("selftest")) return selftest();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
