#pragma once

#include <map>
#include <string>
#include <vector>

#include "qres/codec.hpp"
#include "qres/config.hpp"
#include "qres/metrics.hpp"
#include "qres/model.hpp"

namespace qres {

// Deterministic synthetic images: "smooth" (blurred noise fields),
// "gradients" (random color ramps), "blobs" (piecewise-constant shapes),
// or "mixed" (cycling through the three).
std::vector<ImageU8> make_synthetic(const std::string& kind, int size, int count, uint64_t seed);

// Global-norm gradient clipping; returns the pre-clip norm.
double clip_gradients(std::vector<std::pair<std::string, Tensor>>& params, double max_norm);

class Adam {
public:
    Adam(double lr, double beta1, double beta2, double eps);
    void step(std::vector<std::pair<std::string, Tensor>>& params);

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Exponentially averaged shadow weights, keyed by parameter name.
class EmaState {
public:
    EmaState(double decay, const std::vector<std::pair<std::string, Tensor>>& params);
    void update(const std::vector<std::pair<std::string, Tensor>>& params);
    // Shadow values as fresh tensors, in the same order as the registry.
    std::vector<std::pair<std::string, Tensor>> snapshot(
        const std::vector<std::pair<std::string, Tensor>>& params) const;
    void load_into(std::vector<std::pair<std::string, Tensor>>& params) const;

private:
    double decay_;
    std::map<std::string, std::vector<double>> shadow_;
};

struct LossOutput {
    Tensor total;     // rate_per_pixel + lambda * distortion (scalar)
    Tensor rate_pp;   // nats per pixel (scalar)
    Tensor dist;      // MSE or 1 - MS-SSIM (scalar)
};

// Assembles the training loss on an already padded batch.
LossOutput training_loss(const Model& model, const Tensor& x_padded, double lambda,
                         Distortion distortion, Rng& rng);

// Lossless fine-tune loss: latent rate + pixel negative log-likelihood,
// both in nats per pixel.
LossOutput lossless_loss(const Model& model, const Tensor& x_padded, Rng& rng);

struct TrainResult {
    std::string checkpoint_ema;
    std::string checkpoint_raw;
    double initial_loss = 0.0;  // mean of the first window of steps
    double final_loss = 0.0;    // mean of the last window of steps
    int steps_run = 0;
    std::vector<RDPoint> eval_points;  // per-image, lossy models only
    RDPoint eval_mean;
};

// Full training run: synthetic data, Adam + clip + EMA, loss-curve CSV,
// raw and EMA checkpoints, and a held-out R-D evaluation with EMA weights.
// Divergence (non-finite loss) saves the last good checkpoint and throws
// TrainingDiverged.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::string& out_prefix);

// Mean actual bpp per latent block over an image set (payload bits only,
// flush and header excluded), coarse to fine. `collapsed` flags blocks
// under 1e-3 bpp (posterior-collapse indicator).
struct RateDistribution {
    std::vector<double> bpp_per_block;
    std::vector<bool> collapsed;
    double total_payload_bpp = 0.0;
};
RateDistribution rate_distribution(const Model& model, const std::vector<ImageU8>& images);

// Per-image compress/decompress metrics, then the per-image-then-average
// aggregate (ms_ssim computed when the image is large enough).
std::vector<RDPoint> evaluate_rd(const Model& model, const std::vector<ImageU8>& images,
                                 int jobs = 1);
RDPoint mean_rd(const std::vector<RDPoint>& points);

void write_rd_csv(const std::string& path, const std::vector<RDPoint>& rows,
                  const RDPoint& mean_row);

// Curve CSV (one point per lambda): header
// "lambda,bpp_estimated,bpp_actual,psnr,ms_ssim", one row per point.
void write_curve_csv(const std::string& path, const std::vector<RDPoint>& points);
std::vector<RDPoint> read_curve_csv(const std::string& path);

}  // namespace qres
