#pragma once

// Flat key=value run configuration: the only knobs a training run has.
// Unknown keys are rejected so run headers stay replayable.

#include <string>

#include "cliffm/model.hpp"

namespace cliffm {

struct RunConfig {
    int input_size = 448;
    i64 dim = 96;
    int num_self_blocks = 6;
    bool use_energy = true;
    double drop_path_max = 0.2;
    double head_dropout = 0.1;
    int num_classes = 8;
    double lr = 2e-4;
    double weight_decay = 0.08;
    int warmup_epochs = 10;
    int epochs = 200;
    int batch_size = 16;
    int accum_steps = 2;
    double grad_clip = 0.5;
    double ema_decay = 0.9998;
    int patience = 30;
    u64 seed = 42;
    double smoothing = 0.1;
    double weight_cap = 15.0;
    bool mix_enabled = true;
    double mixup_alpha = 0.3;
    double cutmix_alpha = 1.0;

    ModelConfig model_config() const;
    void set(const std::string& key, const std::string& value);
    void validate() const;
    std::string to_text() const;

    static RunConfig from_text(const std::string& text, const std::string& origin);
    static RunConfig from_file(const std::string& path);
};

}  // namespace cliffm
