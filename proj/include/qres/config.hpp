#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qres/common.hpp"

namespace qres {

// One resolution stage of the hierarchy, coarse to fine. `scale` is the
// downsample factor relative to the input image.
struct StageConfig {
    int scale = 2;
    int width = 32;            // feature channels (shared by both paths)
    int latent_blocks = 1;     // latent blocks operating at this scale
    int latent_channels = 4;   // channels of each z at this scale
    int depth = 1;             // residual blocks per latent block
};

struct ModelConfig {
    std::vector<StageConfig> stages;  // coarse -> fine
    int dw_kernel = 7;
    bool lossless = false;
    double lambda = 256.0;

    int num_blocks() const;
    int max_downsample() const;
    void validate() const;

    std::string serialize() const;
    static ModelConfig parse(const std::string& text);
    static ModelConfig load(const std::string& path);

    static ModelConfig preset(const std::string& name);  // "tiny" | "small" | "large"
};

enum class Distortion { Mse, MsSsim };

struct TrainConfig {
    double lambda = 256.0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 5.0;
    double ema_decay = 0.999;
    int batch_size = 8;
    int steps = 2000;
    int crop_size = 16;
    bool crop = true;
    bool hflip = true;
    Distortion distortion = Distortion::Mse;
    uint64_t seed = 0;
    std::string data_kind = "mixed";  // smooth | gradients | blobs | mixed
    int data_size = 16;
    int data_count = 256;
    int eval_count = 20;
    int log_every = 10;
    bool lossless = false;        // fine-tune the pixel-likelihood head
    std::string init_from;        // checkpoint to warm-start from

    void validate() const;
    std::string serialize() const;
    static TrainConfig parse(const std::string& text);
    static TrainConfig load(const std::string& path);
};

// Shared key=value reader: '#' comments, blank lines ignored.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::vector<int> parse_int_list(const std::string& value);

}  // namespace qres
