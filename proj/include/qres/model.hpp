#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qres/config.hpp"
#include "qres/prob.hpp"
#include "qres/rans.hpp"
#include "qres/tensor.hpp"

namespace qres {

// Replicate-pads the right and bottom borders until both sides are
// divisible by `multiple`; crop_spatial is the exact inverse on the valid
// region. Both participate in the gradient tape.
Tensor pad_replicate(const Tensor& x, int64_t multiple);
Tensor crop_spatial(const Tensor& x, int64_t height, int64_t width);

// ConvNeXt-style residual block: depthwise conv, layer norm, pointwise
// expansion with GELU, pointwise projection, residual add.
struct ConvNextBlock {
    Tensor dw_w, dw_b;
    Tensor ln_g, ln_b;
    Tensor w1, b1, w2, b2;
    int channels = 0;
    int kernel = 7;

    Tensor forward(const Tensor& x) const;
};

// One latent block. The posterior branch sees concat(bottom-up feature,
// state); the prior branch sees the state only, so its outputs are a
// function of z_<i> alone.
class LatentBlock {
public:
    LatentBlock(int feature_ch, int latent_ch, int depth, int dw_kernel);

    PosteriorStats posterior(const Tensor& feat, const Tensor& state) const;
    PriorStats prior(const Tensor& state) const;
    Tensor update_state(const Tensor& state, const Tensor& z) const;

    Tensor run_train(const Tensor& state, const Tensor& feat, Rng& rng, Tensor& rate_out) const;
    Tensor run_compress(const Tensor& state, const Tensor& feat, std::vector<uint8_t>& stream_out,
                        double& est_bits_out) const;
    Tensor run_decompress(const Tensor& state, std::span<const uint8_t> stream) const;
    Tensor run_sample(const Tensor& state, double t, Rng& rng) const;
    Tensor run_interpolate(const Tensor& state, const Tensor& feat_a, const Tensor& feat_b,
                           double alpha) const;

    void collect_params(const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor>>& out);
    void init(Rng& rng);
    int latent_channels() const { return latent_ch_; }

private:
    int feature_ch_;
    int latent_ch_;
    Tensor post_ln_g_, post_ln_b_, post_w1_, post_b1_, post_w2_, post_b2_;
    Tensor prior_ln_g_, prior_ln_b_, prior_w1_, prior_b1_, prior_w2_, prior_b2_;
    Tensor zproj_w_, zproj_b_;
    std::vector<ConvNextBlock> res_;
};

// The full hierarchy: bottom-up feature extractor, learnable top-down
// constant, latent blocks coarse to fine, sub-pixel upsamplers, and the
// reconstruction head (plus the pixel-likelihood head in lossless mode).
class Model {
public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    int num_blocks() const { return cfg_.num_blocks(); }
    int max_downsample() const { return cfg_.max_downsample(); }
    uint8_t model_id() const { return model_id_; }
    void set_model_id(uint8_t id) { model_id_ = id; }

    // One deterministic feature per stage, coarse to fine. x must be padded.
    std::vector<Tensor> bottom_up(const Tensor& x) const;

    struct TrainForward {
        Tensor xhat;
        Tensor rate_nats;  // scalar, summed over blocks and batch
        Tensor final_state;
    };
    TrainForward forward_train(const Tensor& x_padded, Rng& rng) const;

    struct LatentEncode {
        std::vector<std::vector<uint8_t>> streams;  // one per block, coarse to fine
        Tensor final_state;
        double est_bits = 0.0;
        std::vector<double> est_bits_per_block;
    };
    LatentEncode compress_latents(const Tensor& x_padded) const;

    // Decodes the first k blocks from streams and samples the remaining
    // N - k from the prior at temperature t. Spatial dims are the padded
    // image dims. rng may be null when t == 0 or k == N.
    Tensor decode_latents(std::span<const std::vector<uint8_t>> streams, int k, double t,
                          Rng* rng, int64_t h_pad, int64_t w_pad) const;

    // Single top-down trajectory injecting z = (1-alpha)*mu_a + alpha*mu_b.
    Tensor interpolate_trajectory(const Tensor& xa_padded, const Tensor& xb_padded,
                                  double alpha) const;

    Tensor reconstruct(const Tensor& final_state) const;

    // Lossless pixel-likelihood parameters in 0..255 units.
    struct PixelLikelihood {
        Tensor mean;
        Tensor sigma;
    };
    PixelLikelihood pixel_likelihood(const Tensor& final_state) const;

    std::vector<std::pair<std::string, Tensor>> named_params();
    void init_params(Rng& rng);
    void perturb_params(Rng& rng, double scale);

private:
    ModelConfig cfg_;
    uint8_t model_id_ = 0;

    struct Stage {
        StageConfig cfg;
        Tensor embed_w, embed_b;  // patch embed into this stage (stride = kernel)
        int embed_stride = 2;
        std::vector<ConvNextBlock> bu_blocks;
        std::vector<LatentBlock> latent_blocks;
        Tensor up_w, up_b;  // to next finer stage; undefined on the finest
        int up_ratio = 1;
    };
    std::vector<Stage> stages_;  // coarse -> fine
    Tensor constant_;            // (1, width_0, 1, 1)
    Tensor out_ln_g_, out_ln_b_, out_w_, out_b_;
    Tensor ll_w_, ll_b_;  // lossless head, defined when cfg_.lossless

    Tensor initial_state(int64_t batch, int64_t h_pad, int64_t w_pad) const;
    Tensor upsample(const Tensor& state, const Stage& stage) const;
    // Drives the top-down pass; fn(global_block_index, stage_index, block,
    // state) -> new state.
    Tensor run_top_down(
        int64_t batch, int64_t h_pad, int64_t w_pad,
        const std::function<Tensor(int, int, const LatentBlock&, Tensor)>& fn) const;
};

// Model file I/O: a QRWT checkpoint with the architecture embedded as
// reserved "__config__/" records, so decoding needs no side-channel config.
void save_model(const std::string& path, Model& model);
void save_model_params(const std::string& path, const ModelConfig& cfg,
                       const std::vector<std::pair<std::string, Tensor>>& params);
std::unique_ptr<Model> load_model(const std::string& path);

}  // namespace qres
