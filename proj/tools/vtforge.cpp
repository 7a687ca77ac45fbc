// Command-line driver: attack, encode, cluster, eval, sweep, gradcheck.

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vtforge/attack.hpp"
#include "vtforge/clustering.hpp"
#include "vtforge/config.hpp"
#include "vtforge/encoder.hpp"
#include "vtforge/evaluation.hpp"
#include "vtforge/gradcheck_suite.hpp"
#include "vtforge/image_io.hpp"
#include "vtforge/log.hpp"
#include "vtforge/tensor_io.hpp"
#include "vtforge/version.hpp"
#include "vtforge/weights_io.hpp"

namespace fs = std::filesystem;
using namespace vtforge;

namespace {

int exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrKind::kConfig:
        case ErrKind::kShape:
            return 1;
        case ErrKind::kNumeric:
            return 2;
        case ErrKind::kIo:
            return 3;
    }
    return 1;
}

struct LoadedModel {
    RunConfig cfg;
    Weights<float> image_w;
    Weights<float> text_w;
    bool has_text = false;
};

LoadedModel load_model(const std::string& config_path, std::optional<uint64_t> seed_override) {
    LoadedModel m;
    m.cfg = load_run_config(config_path);
    if (seed_override) m.cfg.attack.seed = *seed_override;
    if (!m.cfg.image_weights_path.empty()) {
        m.image_w = load_image_weights(m.cfg.image_weights_path, m.cfg.image_encoder);
        log_info("loaded image weights from " + m.cfg.image_weights_path);
    } else {
        m.image_w = init_image_weights(m.cfg.image_encoder);
    }
    if (!m.cfg.text_weights_path.empty()) {
        m.text_w = load_text_weights(m.cfg.text_weights_path, m.cfg.text_encoder);
        m.has_text = true;
        log_info("loaded text weights from " + m.cfg.text_weights_path);
    } else {
        m.text_w = init_text_weights(m.cfg.text_encoder);
        m.has_text = true;
    }
    return m;
}

void ensure_out_dir(const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) fail(ErrKind::kIo, "cannot create output directory '" + out_dir + "': " + ec.message());
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

void write_metrics_csv(const std::string& path, const MetricsReport& rep) {
    std::string out = "metric,value\n";
    if (rep.has_proxy) {
        out += "clip_score_proxy_clean," + format_double(rep.clip_score_proxy_clean) + "\n";
        out += "clip_score_proxy_adv," + format_double(rep.clip_score_proxy_adv) + "\n";
    }
    out += "token_displacement_l2," + format_double(rep.displacement.mean_l2) + "\n";
    out += "token_displacement_cos," + format_double(rep.displacement.mean_cos) + "\n";
    if (rep.has_escape) out += "cluster_escape_rate," + format_double(rep.cluster_escape) + "\n";
    out += "loss_feature," + format_double(rep.final_losses.feature) + "\n";
    out += "loss_relation," + format_double(rep.final_losses.relation) + "\n";
    out += "loss_semantics," + format_double(rep.final_losses.semantics) + "\n";
    out += "loss_total," + format_double(rep.final_losses.total) + "\n";
    write_text_file(path, out);
}

// ---- attack ----

void attack_one(const LoadedModel& m, const std::string& image_path, const std::string& out_dir) {
    Tensor<float> image = load_png_rgb8(image_path);
    const RunConfig& cfg = m.cfg;

    auto result = run_attack(m.image_w, cfg.image_encoder, m.has_text ? &m.text_w : nullptr,
                             m.has_text ? &cfg.text_encoder : nullptr, image, cfg.attack);

    MetricsReport rep = compute_metrics(m.image_w, cfg.image_encoder, m.has_text ? &m.text_w : nullptr,
                                        m.has_text ? &cfg.text_encoder : nullptr, image, result.adversarial,
                                        cfg.attack);

    std::string stem = (fs::path(out_dir) / stem_of(image_path)).string();
    save_png_rgb8(stem + "_adv.png", result.adversarial);
    save_raw_tensor(stem + "_adv.vtt", result.adversarial);
    write_trace_csv(stem + "_trace.csv", result.trace);
    write_metrics_csv(stem + "_metrics.csv", rep);

    std::string image_bytes = detail::read_file_bytes(image_path);
    auto manifest = make_manifest(cfg, image_path, fnv1a64(image_bytes.data(), image_bytes.size()),
                                  result.image_weights_fp, result.text_weights_fp);
    write_text_file(stem + "_manifest.json", manifest.dump(2) + "\n");
    log_info(image_path + ": final joint loss " + format_double(result.final_losses.total));
}

int cmd_attack(const std::string& config_path, const std::vector<std::string>& images, const std::string& out_dir,
               std::optional<uint64_t> seed_override, int workers) {
    LoadedModel m = load_model(config_path, seed_override);
    ensure_out_dir(out_dir);
    if (images.empty()) fail(ErrKind::kConfig, "attack: no input images given");
    if (workers < 1) fail(ErrKind::kConfig, "attack: --workers must be >= 1");

    // per-image work is independent; worker count cannot change any output
    std::atomic<size_t> next{0};
    std::mutex mu;
    std::exception_ptr first_error;
    auto worker = [&] {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= images.size()) return;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (first_error) return;
            }
            try {
                attack_one(m, images[i], out_dir);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    int pool = std::min<int>(workers, static_cast<int>(images.size()));
    if (pool <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < pool; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    return 0;
}

// ---- encode ----

int cmd_encode(const std::string& config_path, const std::string& image_path, const std::string& out_dir,
               std::optional<uint64_t> seed_override, const std::string& save_image_w,
               const std::string& save_text_w) {
    LoadedModel m = load_model(config_path, seed_override);
    ensure_out_dir(out_dir);
    Tensor<float> image = load_png_rgb8(image_path);
    auto enc = encode_image(m.image_w, m.cfg.image_encoder, image);

    std::string stem = (fs::path(out_dir) / stem_of(image_path)).string();
    write_tokens_csv(stem + "_tokens.csv", enc.tokens);
    {
        std::string out;
        for (size_t j = 0; j < enc.cls.size(); ++j) out += (j ? "," : "") + std::string("c") + std::to_string(j);
        out += "\n";
        for (size_t j = 0; j < enc.cls.size(); ++j) out += (j ? "," : "") + format_double(double(enc.cls.data[j]));
        out += "\n";
        write_text_file(stem + "_cls.csv", out);
    }
    if (!save_image_w.empty()) save_image_weights(m.image_w, m.cfg.image_encoder, save_image_w);
    if (!save_text_w.empty()) save_text_weights(m.text_w, m.cfg.text_encoder, save_text_w);
    log_info(image_path + ": wrote " + std::to_string(enc.tokens.rows()) + " visual tokens");
    return 0;
}

// ---- cluster ----

int cmd_cluster(const std::string& config_path, const std::string& points_path, const std::string& out_dir,
                std::optional<uint64_t> seed_override) {
    LoadedModel m = load_model(config_path, seed_override);
    ensure_out_dir(out_dir);
    Tensor<float> points = read_points_csv(points_path);
    const AttackConfig& a = m.cfg.attack;
    auto sel = select_k(points, a.k_min, std::min(a.k_max, points.rows() - 1), a.seed);
    auto model = kmeans(points, sel.k, a.seed);

    std::string stem = (fs::path(out_dir) / stem_of(points_path)).string();
    {
        std::string out = "token,label\n";
        for (size_t i = 0; i < model.labels.size(); ++i)
            out += std::to_string(i) + "," + std::to_string(model.labels[i]) + "\n";
        write_text_file(stem + "_labels.csv", out);
    }
    {
        std::string out = "center";
        for (int j = 0; j < model.centers.cols(); ++j) out += ",c" + std::to_string(j);
        out += "\n";
        for (int i = 0; i < model.centers.rows(); ++i) {
            out += std::to_string(i);
            for (int j = 0; j < model.centers.cols(); ++j) out += "," + format_double(double(model.centers(i, j)));
            out += "\n";
        }
        write_text_file(stem + "_centers.csv", out);
    }
    {
        nlohmann::json per_k = nlohmann::json::array();
        for (auto [k, s] : sel.silhouettes) per_k.push_back({{"k", k}, {"silhouette", s}});
        nlohmann::json summary = {{"k", model.k},
                                  {"silhouette", model.silhouette},
                                  {"sse", model.sse},
                                  {"per_k", per_k}};
        write_text_file(stem + "_summary.json", summary.dump(2) + "\n");
    }
    std::printf("k*=%d silhouette=%.6f sse=%.6f\n", model.k, model.silhouette, model.sse);
    return 0;
}

// ---- eval ----

int cmd_eval(const std::string& config_path, const std::string& clean_path, const std::string& adv_path,
             const std::string& out_dir, std::optional<uint64_t> seed_override) {
    LoadedModel m = load_model(config_path, seed_override);
    ensure_out_dir(out_dir);
    Tensor<float> clean = load_png_rgb8(clean_path);
    Tensor<float> adv = fs::path(adv_path).extension() == ".vtt" ? load_raw_tensor(adv_path)
                                                                 : load_png_rgb8(adv_path);
    MetricsReport rep = compute_metrics(m.image_w, m.cfg.image_encoder, m.has_text ? &m.text_w : nullptr,
                                        m.has_text ? &m.cfg.text_encoder : nullptr, clean, adv, m.cfg.attack);
    std::string out_path = (fs::path(out_dir) / (stem_of(adv_path) + "_metrics.csv")).string();
    write_metrics_csv(out_path, rep);
    if (rep.has_proxy)
        std::printf("clip_score_proxy clean=%.4f adv=%.4f\n", rep.clip_score_proxy_clean, rep.clip_score_proxy_adv);
    std::printf("token_l2=%.6f token_cos=%.6f\n", rep.displacement.mean_l2, rep.displacement.mean_cos);
    return 0;
}

// ---- sweep ----

int cmd_sweep(const std::string& config_path, const std::string& image_path, const std::string& out_dir,
              const std::string& experiment, std::optional<uint64_t> seed_override) {
    LoadedModel m = load_model(config_path, seed_override);
    ensure_out_dir(out_dir);
    Tensor<float> image = load_png_rgb8(image_path);
    const RunConfig& cfg = m.cfg;
    const Weights<float>* tw = m.has_text ? &m.text_w : nullptr;
    const TextConfig* tc = m.has_text ? &cfg.text_encoder : nullptr;

    std::vector<SweepRow> rows;
    if (experiment == "epsilon") {
        for (uint64_t seed : cfg.sweep.seeds) {
            AttackConfig base = cfg.attack;
            base.seed = seed;
            auto r = epsilon_sweep(m.image_w, cfg.image_encoder, tw, tc, image, base, cfg.sweep.budgets);
            rows.insert(rows.end(), r.begin(), r.end());
        }
    } else if (experiment == "noise") {
        for (uint64_t seed : cfg.sweep.seeds) {
            AttackConfig base = cfg.attack;
            base.seed = seed;
            auto res = run_attack(m.image_w, cfg.image_encoder, tw, tc, image, base);
            auto r = noise_defense_sweep(m.image_w, cfg.image_encoder, tw, tc, res.adversarial, image, base,
                                         cfg.sweep.noise_sizes, {seed});
            rows.insert(rows.end(), r.begin(), r.end());
        }
    } else if (experiment == "iterations") {
        for (uint64_t seed : cfg.sweep.seeds) {
            AttackConfig base = cfg.attack;
            base.seed = seed;
            auto r = iteration_curve(m.image_w, cfg.image_encoder, tw, tc, image, base, cfg.sweep.checkpoints);
            rows.insert(rows.end(), r.begin(), r.end());
        }
    } else {
        fail(ErrKind::kConfig, "sweep: unknown experiment '" + experiment + "' (epsilon, noise, iterations)");
    }

    std::string out_path =
        (fs::path(out_dir) / (stem_of(image_path) + "_sweep_" + experiment + ".csv")).string();
    write_sweep_csv(out_path, rows);
    log_info("wrote " + std::to_string(rows.size()) + " sweep rows to " + out_path);
    return 0;
}

// ---- gradcheck ----

int cmd_gradcheck(double tolerance, int points, double step) {
    bool ok = true;
    auto results = primitive_gradcheck_suite(points, step);
    for (const auto& r : results) {
        bool pass = r.max_err < tolerance;
        ok = ok && pass;
        std::printf("%-24s max_rel_err=%.3e %s\n", r.name.c_str(), r.max_err, pass ? "[ok]" : "[FAIL]");
    }
    for (Divergence div : {Divergence::kMse, Divergence::kKl}) {
        double err = joint_loss_gradcheck(div);
        bool pass = err < tolerance;
        ok = ok && pass;
        std::printf("%-24s max_rel_err=%.3e %s\n",
                    (std::string("joint_loss/") + divergence_name(div)).c_str(), err, pass ? "[ok]" : "[FAIL]");
    }
    if (!ok) std::fprintf(stderr, "gradcheck: tolerance %.1e exceeded\n", tolerance);
    return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarial attacks against the visual tokens of a compact ViT encoder"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    std::string config_path, out_dir, clean_path, adv_path, experiment = "epsilon";
    std::string points_path, image_path, save_image_w, save_text_w;
    std::vector<std::string> images;
    std::optional<uint64_t> seed_override;
    uint64_t seed_value = 0;
    int workers = 1, gc_points = 100;
    double gc_tolerance = 1e-3, gc_step = 1e-3;

    auto add_common = [&](CLI::App* sub, bool needs_out) {
        sub->add_option("--config", config_path, "run configuration (JSON)")->required();
        if (needs_out) sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_option("--seed", seed_value, "override the attack seed")->each([&](const std::string&) {
            seed_override = seed_value;
        });
    };

    auto* attack = app.add_subcommand("attack", "generate adversarial images");
    add_common(attack, true);
    attack->add_option("images", images, "input PNG images")->required();
    attack->add_option("--workers", workers, "parallel image workers");

    auto* encode = app.add_subcommand("encode", "dump visual tokens and the projected [CLS] embedding");
    add_common(encode, true);
    encode->add_option("image", image_path, "input PNG image")->required();
    encode->add_option("--save-image-weights", save_image_w, "write the image tower weights to this path");
    encode->add_option("--save-text-weights", save_text_w, "write the text tower weights to this path");

    auto* cluster = app.add_subcommand("cluster", "k-means with silhouette model selection over a token CSV");
    add_common(cluster, true);
    cluster->add_option("points", points_path, "token CSV (token index, then coordinates)")->required();

    auto* eval = app.add_subcommand("eval", "attack-quality metrics for a clean/adversarial pair");
    add_common(eval, true);
    eval->add_option("--clean", clean_path, "clean PNG image")->required();
    eval->add_option("--adv", adv_path, "adversarial image (.png or .vtt)")->required();

    auto* sweep = app.add_subcommand("sweep", "parameter sweeps (epsilon, noise, iterations)");
    add_common(sweep, true);
    sweep->add_option("image", image_path, "input PNG image")->required();
    sweep->add_option("--experiment", experiment, "epsilon | noise | iterations");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every autodiff primitive");
    gradcheck->add_option("--tolerance", gc_tolerance, "max relative error allowed");
    gradcheck->add_option("--points", gc_points, "random points per primitive");
    gradcheck->add_option("--step", gc_step, "central difference step");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(attack)) return cmd_attack(config_path, images, out_dir, seed_override, workers);
        if (app.got_subcommand(encode))
            return cmd_encode(config_path, image_path, out_dir, seed_override, save_image_w, save_text_w);
        if (app.got_subcommand(cluster)) return cmd_cluster(config_path, points_path, out_dir, seed_override);
        if (app.got_subcommand(eval))
            return cmd_eval(config_path, clean_path, adv_path, out_dir, seed_override);
        if (app.got_subcommand(sweep))
            return cmd_sweep(config_path, image_path, out_dir, experiment, seed_override);
        if (app.got_subcommand(gradcheck)) return cmd_gradcheck(gc_tolerance, gc_points, gc_step);
    } catch (const Error& e) {
        std::fprintf(stderr, "vtforge: %s\n", e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "vtforge: %s\n", e.what());
        return 1;
    }
    return 0;
}
