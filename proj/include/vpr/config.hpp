#pragma once

#include <string>

#include "vpr/losses.hpp"
#include "vpr/mining.hpp"
#include "vpr/model.hpp"

namespace vpr {

enum class OptKind { sgd_momentum, adam };

struct OptimizerConfig {
    OptKind kind = OptKind::sgd_momentum;
    double lr0 = 1e-4;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Full training configuration. File syntax is TOML (a small subset: sections,
// scalar values, integer lists, # comments) with sections encoder, attention,
// pooling, semseg, da, mining, optimizer, schedule and ablation.
struct TrainConfig {
    ModelConfig model;
    LossWeights weights;
    MiningPolicy mining;

    OptimizerConfig main_opt;   // SGD with momentum, lr 1e-4 by default
    OptimizerConfig discr_opt;  // Adam, lr 4e-4 by default

    double poly_power = 0.9;
    int total_steps = 500;
    int eval_every = 0;  // 0 → evaluate at the end only

    bool random_flip = false;
    bool random_crop = false;
    int crop_height = 0;
    int crop_width = 0;
    bool triplet_log = false;

    void validate() const;
};

TrainConfig default_train_config();
TrainConfig load_train_config(const std::string& path);
void save_train_config(const std::string& path, const TrainConfig& cfg);

}  // namespace vpr
