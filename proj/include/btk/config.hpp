#pragma once

#include "btk/common.hpp"

namespace btk {

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(m) {}
};

// Flat `key = value` configuration with '#' comments. Unknown keys are
// rejected. serialize() emits the canonical form echoed in report headers.
struct RunConfig {
    std::string model;  // architecture name; required by train/pretrain
    std::string dataset_dir;
    std::string eval_dir;
    std::string out_dir = "out";
    std::string checkpoint;       // checkpoint to load (eval/explain/bench)
    std::string init_checkpoint;  // pretrained init for training
    int64_t batch_size = 16;
    int64_t epochs = 230;
    int64_t steps = 0;  // desk-scale override: train by steps when > 0
    double base_lr = 1e-4;
    std::vector<int64_t> lr_steps = {100, 150, 200, 220};
    double lr_factor = 0.25;
    std::string optimizer = "adam";
    double beta1 = 0.9;
    double beta2 = 0.99;
    double weight_decay = 0.0;
    std::string loss = "l2";  // l2 | sinkhorn
    double sinkhorn_epsilon = 0.05;
    int64_t sinkhorn_iters = 3;
    uint64_t seed = 0;
    int64_t n_samples = 256;
    int64_t eval_every = 0;  // steps between mid-training evals; 0 = end only
    int64_t save_every = 100;
    bool augment = true;
    // pretraining
    int64_t dino_steps = 500;
    int64_t dino_batch_size = 16;
    double dino_lr = 1e-3;
    int64_t dino_prototypes = 256;
    int64_t dino_bottleneck = 64;
    int64_t dino_hidden = 256;
    double dino_tau_student = 0.1;
    double dino_tau_teacher = 0.04;
    double dino_ema_momentum = 0.996;
    double dino_center_momentum = 0.9;
    bool dino_centering = true;
    std::string dino_scope = "groups";  // groups | full
    // bench
    int64_t bench_iters = 100;
    int64_t bench_batch = 1;

    void validate() const;
    std::string serialize() const;

    static RunConfig parse_file(const std::string& path);
    static RunConfig parse_text(const std::string& text, const std::string& origin = "<text>");
};

}  // namespace btk
