#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "btk/config.hpp"
#include "btk/dataset.hpp"
#include "btk/dino.hpp"
#include "btk/explain.hpp"
#include "btk/image_io.hpp"
#include "btk/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace btk;

namespace {

// exit categories (documented in the README)
enum ExitCode {
    kOk = 0,
    kFailure = 1,
    kConfigError = 2,
    kIoErrorCode = 3,
    kDataError = 4,
    kCheckpointErrorCode = 5,
    kNumericError = 6,
};

int64_t worker_threads() {
    const char* env = std::getenv("BTK_THREADS");
    if (!env) return 1;
    int64_t n = std::strtoll(env, nullptr, 10);
    return std::max<int64_t>(1, n);
}

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    check<IoError>(!ec, "cannot create directory '", dir, "': ", ec.message());
}

void write_json_report(const json& report, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    check<IoError>(os.good(), "cannot open '", path, "' for writing");
    os << report.dump(2) << "\n";
    os.flush();
    check<IoError>(os.good(), "write to '", path, "' failed");
}

// Generation is parallel across samples (each one is an independent function
// of its seed); BTK_THREADS caps the worker count.
std::vector<PoseSample> generate_parallel(int64_t n, uint64_t seed) {
    int64_t threads = std::min<int64_t>(worker_threads(), std::max<int64_t>(1, n));
    if (threads <= 1 || n == 0) return synth_dataset(n, seed);
    std::vector<PoseSample> samples;
    samples.resize(size_t(n));
    std::vector<std::future<void>> jobs;
    for (int64_t t = 0; t < threads; ++t)
        jobs.push_back(std::async(std::launch::async, [&, t]() {
            for (int64_t i = t; i < n; i += threads) {
                PoseSample s = generate_sample(seed * 1000003ull + uint64_t(i));
                s.id = i;
                samples[size_t(i)] = std::move(s);
            }
        }));
    for (auto& j : jobs) j.get();
    return samples;
}

int cmd_synth(const RunConfig& cfg) {
    ensure_dir(cfg.out_dir);
    std::vector<PoseSample> samples = generate_parallel(cfg.n_samples, cfg.seed);
    write_dataset(samples, cfg.out_dir);
    std::cout << "synth: wrote " << samples.size() << " samples to " << cfg.out_dir << "\n";
    return kOk;
}

PoseModel<float> build_model(const RunConfig& cfg) {
    check<ConfigError>(!cfg.model.empty(), "model name is required (config key 'model')");
    ModelSpec spec = parse_name(cfg.model);
    check<ConfigError>(spec.init != InitMode::Pretrained || !cfg.init_checkpoint.empty(),
                       "model '", cfg.model, "' expects pretrained init; set init_checkpoint");
    PoseModel<float> model(spec, cfg.seed);
    if (!cfg.init_checkpoint.empty()) load_pretrained_init(model, cfg.init_checkpoint);
    return model;
}

int cmd_train(const RunConfig& cfg) {
    check<ConfigError>(!cfg.dataset_dir.empty(), "train: dataset_dir is required");
    ensure_dir(cfg.out_dir);
    std::vector<PoseSample> samples = load_dataset(cfg.dataset_dir);
    std::vector<PoseSample> eval_samples;
    if (!cfg.eval_dir.empty()) eval_samples = load_dataset(cfg.eval_dir);

    PoseModel<float> model = build_model(cfg);

    TrainOptions opts;
    opts.steps = cfg.steps > 0
                     ? cfg.steps
                     : cfg.epochs * int64_t(samples.size()) / std::max<int64_t>(1, cfg.batch_size);
    opts.batch_size = cfg.batch_size;
    opts.base_lr = cfg.base_lr;
    opts.lr_epoch_boundaries = cfg.lr_steps;
    opts.lr_factor = cfg.lr_factor;
    opts.loss = cfg.loss == "sinkhorn" ? LossKind::Sinkhorn : LossKind::L2;
    opts.sinkhorn.epsilon = float(cfg.sinkhorn_epsilon);
    opts.sinkhorn.n_iters = cfg.sinkhorn_iters;
    opts.beta1 = cfg.beta1;
    opts.beta2 = cfg.beta2;
    opts.weight_decay = cfg.weight_decay;
    opts.seed = cfg.seed;
    opts.augment = cfg.augment;

    std::string ckpt_path = (fs::path(cfg.out_dir) / "checkpoint.btk").string();
    std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
    std::ofstream metrics(metrics_path, std::ios::trunc);
    check<IoError>(metrics.good(), "train: cannot open '", metrics_path, "'");
    metrics << json{{"config", cfg.serialize()}}.dump() << "\n";

    double t0 = now_ms();
    opts.on_step = [&](int64_t step, double loss, double lr) {
        metrics << json{{"step", step}, {"loss", loss}, {"lr", lr}, {"wall_ms", now_ms() - t0}}
                       .dump()
                << "\n";
        if (cfg.save_every > 0 && (step + 1) % cfg.save_every == 0)
            save_checkpoint(model, ckpt_path);
        if (!eval_samples.empty() && cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
            EvalReport report = evaluate_pose_model(model, eval_samples);
            metrics << json{{"step", step}, {"ap", report.apar.ap}, {"ar", report.apar.ar}}.dump()
                    << "\n";
        }
    };

    try {
        train_pose_model(model, samples, opts);
    } catch (const ValueError&) {
        // keep the last periodic checkpoint on disk for post-mortem use
        metrics.flush();
        throw;
    }
    save_checkpoint(model, ckpt_path);

    json report{{"config", cfg.serialize()},
                {"steps", opts.steps},
                {"final_lr", scheduled_lr(opts.base_lr, opts.lr_factor, opts.lr_epoch_boundaries,
                                          double(opts.steps) * double(opts.batch_size) /
                                              double(samples.size()))},
                {"checkpoint", ckpt_path}};
    if (!eval_samples.empty()) {
        EvalReport er = evaluate_pose_model(model, eval_samples);
        report["ap"] = er.apar.ap;
        report["ar"] = er.apar.ar;
    }
    write_json_report(report, (fs::path(cfg.out_dir) / "train_report.json").string());
    std::cout << "train: finished " << opts.steps << " steps, checkpoint at " << ckpt_path
              << "\n";
    return kOk;
}

int cmd_pretrain(const RunConfig& cfg) {
    check<ConfigError>(!cfg.model.empty(), "pretrain: model name is required");
    check<ConfigError>(!cfg.dataset_dir.empty(), "pretrain: dataset_dir is required");
    ensure_dir(cfg.out_dir);
    std::vector<PoseSample> samples = load_dataset(cfg.dataset_dir);
    std::vector<Tensor<float>> images;
    images.reserve(samples.size());
    for (const auto& s : samples) images.push_back(s.image);

    DinoConfig dcfg;
    dcfg.prototypes = cfg.dino_prototypes;
    dcfg.bottleneck = cfg.dino_bottleneck;
    dcfg.hidden = cfg.dino_hidden;
    dcfg.tau_student = cfg.dino_tau_student;
    dcfg.tau_teacher = cfg.dino_tau_teacher;
    dcfg.ema_momentum = cfg.dino_ema_momentum;
    dcfg.center_momentum = cfg.dino_center_momentum;
    dcfg.centering = cfg.dino_centering;
    dcfg.include_encoder = cfg.dino_scope == "full";

    Dino<float> dino(parse_name(cfg.model), dcfg, cfg.seed);
    PretrainOptions opts;
    opts.steps = cfg.dino_steps;
    opts.batch_size = cfg.dino_batch_size;
    opts.lr = cfg.dino_lr;
    opts.seed = cfg.seed;

    std::string metrics_path = (fs::path(cfg.out_dir) / "pretrain_metrics.jsonl").string();
    std::ofstream metrics(metrics_path, std::ios::trunc);
    check<IoError>(metrics.good(), "pretrain: cannot open '", metrics_path, "'");
    metrics << json{{"config", cfg.serialize()}}.dump() << "\n";
    auto on_step = [&](int64_t step, double loss, double tstd) {
        metrics << json{{"step", step}, {"loss", loss}, {"teacher_std", tstd}}.dump() << "\n";
    };

    dino_pretrain(dino, images, opts, on_step);
    std::string ckpt_path = (fs::path(cfg.out_dir) / "backbone.btk").string();
    save_pretrain_checkpoint(dino, opts.steps, ckpt_path);
    std::cout << "pretrain: finished " << opts.steps << " steps, backbone checkpoint at "
              << ckpt_path << "\n";
    return kOk;
}

int cmd_eval(const RunConfig& cfg) {
    check<ConfigError>(!cfg.checkpoint.empty(), "eval: checkpoint is required");
    std::string dir = cfg.eval_dir.empty() ? cfg.dataset_dir : cfg.eval_dir;
    check<ConfigError>(!dir.empty(), "eval: eval_dir or dataset_dir is required");
    ensure_dir(cfg.out_dir);
    PoseModel<float> model = load_checkpoint<float>(cfg.checkpoint);
    if (!cfg.model.empty())
        check<CheckpointParamError>(model.spec.to_string() == cfg.model,
                                    "eval: checkpoint holds model '", model.spec.to_string(),
                                    "' but config requests '", cfg.model, "'");
    std::vector<PoseSample> samples = load_dataset(dir);
    EvalReport report = evaluate_pose_model(model, samples, cfg.batch_size);

    write_predictions(report.predictions, (fs::path(cfg.out_dir) / "predictions.json").string());
    json rep{{"config", cfg.serialize()},
             {"AP", report.apar.ap},
             {"AR", report.apar.ar},
             {"precision_per_threshold", report.apar.precision},
             {"recall_per_threshold", report.apar.recall}};
    json errs = json::object();
    for (int k = 0; k < kNumKeypoints; ++k)
        errs[kKeypointNames[size_t(k)]] = report.mean_pixel_error[size_t(k)];
    rep["mean_pixel_error"] = errs;
    write_json_report(rep, (fs::path(cfg.out_dir) / "eval_report.json").string());
    std::cout << "eval: AP " << report.apar.ap << " AR " << report.apar.ar << " over "
              << samples.size() << " images\n";
    return kOk;
}

int cmd_explain(const RunConfig& cfg, int64_t image_id, const std::string& keypoints_arg) {
    check<ConfigError>(!cfg.checkpoint.empty(), "explain: checkpoint is required");
    check<ConfigError>(!cfg.dataset_dir.empty(), "explain: dataset_dir is required");
    ensure_dir(cfg.out_dir);
    PoseModel<float> model = load_checkpoint<float>(cfg.checkpoint);
    std::vector<PoseSample> samples = load_dataset(cfg.dataset_dir);
    const PoseSample* sample = nullptr;
    for (const auto& s : samples)
        if (s.id == image_id) sample = &s;
    check<ValueError>(sample != nullptr, "explain: image id ", image_id, " not in dataset");

    std::vector<int> kp_indices;
    if (keypoints_arg == "all") {
        for (int k = 0; k < kNumKeypoints; ++k) kp_indices.push_back(k);
    } else {
        size_t pos = 0;
        while (pos <= keypoints_arg.size()) {
            size_t end = keypoints_arg.find(',', pos);
            if (end == std::string::npos) end = keypoints_arg.size();
            kp_indices.push_back(keypoint_index(keypoints_arg.substr(pos, end - pos)));
            pos = end + 1;
            if (end == keypoints_arg.size()) break;
        }
    }

    Tensor<float> images = Tensor<float>::zeros({1, 3, model.spec.input_h, model.spec.input_w});
    check<ShapeError>(sample->image.shape() ==
                          Shape({3, model.spec.input_h, model.spec.input_w}),
                      "explain: image shape ", shape_str(sample->image.shape()),
                      " does not match model input");
    std::copy(sample->image.value().begin(), sample->image.value().end(),
              images.value().begin());
    ForwardOptions fwd;
    fwd.retain_attention = true;
    ForwardResult<float> out = model.forward(images, fwd);
    Tensor<float> maps = Tensor<float>::from(
        {kNumKeypoints, out.heatmaps.dim(2), out.heatmaps.dim(3)}, out.heatmaps.value());
    KeypointPrediction pred = decode_keypoints(maps, model.spec.input_h, model.spec.input_w);

    int files = 0;
    for (int k : kp_indices) {
        int64_t token = keypoint_to_token(pred, k, model.spec.input_h, model.spec.input_w,
                                          out.attention.grid_h, out.attention.grid_w);
        for (AttentionSource src : {AttentionSource::Mhsa, AttentionSource::Encoder}) {
            DependencyMap dep = dependency_map(out.attention, src, -1, token);
            dep.keypoint = k;
            std::string name = format(image_id, "_", kKeypointNames[size_t(k)], "_",
                                      src == AttentionSource::Mhsa ? "mhsa" : "encoder", ".ppm");
            render_overlay(sample->image, dep, pred.pts[size_t(k)][0], pred.pts[size_t(k)][1],
                           nullptr, (fs::path(cfg.out_dir) / name).string());
            ++files;
        }
    }
    render_skeleton_panel(sample->image, pred,
                          (fs::path(cfg.out_dir) / format(image_id, "_skeleton.ppm")).string());
    ++files;
    std::cout << "explain: wrote " << files << " files to " << cfg.out_dir << "\n";
    return kOk;
}

int cmd_bench(const RunConfig& cfg) {
    ensure_dir(cfg.out_dir);
    if (cfg.checkpoint.empty())
        check<ConfigError>(!cfg.model.empty(), "bench: model or checkpoint is required");
    PoseModel<float> model = cfg.checkpoint.empty()
                                 ? PoseModel<float>(parse_name(cfg.model), cfg.seed)
                                 : load_checkpoint<float>(cfg.checkpoint);
    int64_t B = std::max<int64_t>(1, cfg.bench_batch);
    Rng rng(cfg.seed + 1);
    Tensor<float> images =
        Tensor<float>::rand_uniform({B, 3, model.spec.input_h, model.spec.input_w}, rng, 0, 1);
    ForwardOptions fwd;  // eval mode
    for (int i = 0; i < 3; ++i) model.forward(images, fwd);  // warmup
    int64_t iters = std::max<int64_t>(100, cfg.bench_iters);
    std::vector<double> per_iter_ms;
    double t_all0 = now_ms();
    for (int64_t i = 0; i < iters; ++i) {
        double t0 = now_ms();
        model.forward(images, fwd);
        per_iter_ms.push_back(now_ms() - t0);
    }
    double total_ms = now_ms() - t_all0;
    std::vector<double> sorted = per_iter_ms;
    std::sort(sorted.begin(), sorted.end());
    double mean_ms = total_ms / double(iters);
    double p95_ms = sorted[size_t(double(sorted.size()) * 0.95) >= sorted.size()
                              ? sorted.size() - 1
                              : size_t(double(sorted.size()) * 0.95)];
    double images_per_s = double(B) * double(iters) / (total_ms / 1000.0);

    json rep{{"config", cfg.serialize()},      {"model", model.spec.to_string()},
             {"iterations", iters},            {"batch", B},
             {"images_per_s", images_per_s},   {"mean_latency_ms", mean_ms},
             {"p95_latency_ms", p95_ms},       {"per_image_latency_ms", mean_ms / double(B)}};
    write_json_report(rep, (fs::path(cfg.out_dir) / "bench_report.json").string());
    std::cout << "bench: " << images_per_s << " images/s (mean " << mean_ms << " ms, p95 "
              << p95_ms << " ms, batch " << B << ")\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BTranspose pose estimation toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    int64_t seed_override = -1;
    std::string out_override;
    app.add_option("--config", config_path, "configuration file (key = value lines)");
    app.add_option("--seed", seed_override, "seed override");
    app.add_option("--out", out_override, "output directory override");

    auto* synth = app.add_subcommand("synth", "generate a synthetic pose dataset");
    auto* pretrain = app.add_subcommand("pretrain", "self-distillation backbone pretraining");
    auto* train = app.add_subcommand("train", "train the pose estimator");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate OKS AP/AR on a dataset");
    auto* explain = app.add_subcommand("explain", "render dependency-area overlays");
    auto* bench = app.add_subcommand("bench", "measure forward throughput");

    int64_t image_id = 0;
    std::string keypoints_arg = "all";
    explain->add_option("--image-id", image_id, "dataset image id");
    explain->add_option("--keypoints", keypoints_arg,
                        "comma-separated keypoint names, or 'all'");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg =
            config_path.empty() ? RunConfig{} : RunConfig::parse_file(config_path);
        if (seed_override >= 0) cfg.seed = uint64_t(seed_override);
        if (!out_override.empty()) cfg.out_dir = out_override;
        cfg.validate();

        if (synth->parsed()) return cmd_synth(cfg);
        if (pretrain->parsed()) return cmd_pretrain(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (eval_cmd->parsed()) return cmd_eval(cfg);
        if (explain->parsed()) return cmd_explain(cfg, image_id, keypoints_arg);
        if (bench->parsed()) return cmd_bench(cfg);
        std::cerr << "no subcommand\n";
        return kFailure;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kConfigError;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kCheckpointErrorCode;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kIoErrorCode;
    } catch (const AnnotationSchemaError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const AnnotationLengthError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return kDataError;
    } catch (const ValueError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumericError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
}
