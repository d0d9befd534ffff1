#include "qres/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "qres/checkpoint.hpp"
#include "qres/prob.hpp"

namespace qres {

// ---- synthetic data ----------------------------------------------------------------

namespace {

ImageU8 synth_smooth(int size, Rng& rng) {
    // Low-resolution noise field upsampled bilinearly per channel.
    int grid = std::max(2, size / 8 + 1);
    std::vector<double> field(static_cast<size_t>(3 * grid * grid));
    for (auto& v : field) v = rng.uniform();
    ImageU8 img;
    img.width = img.height = size;
    img.rgb.resize(static_cast<size_t>(3 * size * size));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double fy = size == 1 ? 0.0
                                      : static_cast<double>(y) / (size - 1) * (grid - 1);
                double fx = size == 1 ? 0.0
                                      : static_cast<double>(x) / (size - 1) * (grid - 1);
                int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
                int y1 = std::min(y0 + 1, grid - 1), x1 = std::min(x0 + 1, grid - 1);
                double wy = fy - y0, wx = fx - x0;
                auto at = [&](int yy, int xx) {
                    return field[static_cast<size_t>((c * grid + yy) * grid + xx)];
                };
                double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                           wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
                img.rgb[static_cast<size_t>(3 * (y * size + x) + c)] =
                    static_cast<uint8_t>(round_half_even(std::clamp(v, 0.0, 1.0) * 255.0));
            }
    return img;
}

ImageU8 synth_gradient(int size, Rng& rng) {
    ImageU8 img;
    img.width = img.height = size;
    img.rgb.resize(static_cast<size_t>(3 * size * size));
    for (int c = 0; c < 3; ++c) {
        double base = rng.uniform();
        double gx = (rng.uniform() - 0.5) * 2.0;
        double gy = (rng.uniform() - 0.5) * 2.0;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double fy = size == 1 ? 0.0 : static_cast<double>(y) / (size - 1);
                double fx = size == 1 ? 0.0 : static_cast<double>(x) / (size - 1);
                double v = std::clamp(base + gx * fx + gy * fy, 0.0, 1.0);
                img.rgb[static_cast<size_t>(3 * (y * size + x) + c)] =
                    static_cast<uint8_t>(round_half_even(v * 255.0));
            }
    }
    return img;
}

ImageU8 synth_blobs(int size, Rng& rng) {
    ImageU8 img;
    img.width = img.height = size;
    img.rgb.resize(static_cast<size_t>(3 * size * size));
    uint8_t bg[3];
    for (auto& v : bg) v = static_cast<uint8_t>(rng.below(256));
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c)
                img.rgb[static_cast<size_t>(3 * (y * size + x) + c)] = bg[c];
    int shapes = 2 + static_cast<int>(rng.below(5));
    for (int s = 0; s < shapes; ++s) {
        uint8_t col[3];
        for (auto& v : col) v = static_cast<uint8_t>(rng.below(256));
        bool circle = rng.below(2) == 0;
        int cx = static_cast<int>(rng.below(static_cast<uint64_t>(size)));
        int cy = static_cast<int>(rng.below(static_cast<uint64_t>(size)));
        int r = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(std::max(2, size / 2))));
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                bool inside = circle
                                  ? (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r
                                  : std::abs(x - cx) <= r && std::abs(y - cy) <= r;
                if (!inside) continue;
                for (int c = 0; c < 3; ++c)
                    img.rgb[static_cast<size_t>(3 * (y * size + x) + c)] = col[c];
            }
    }
    return img;
}

}  // namespace

std::vector<ImageU8> make_synthetic(const std::string& kind, int size, int count,
                                    uint64_t seed) {
    if (size < 1 || count < 0) throw ContractError("make_synthetic: bad size/count");
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<ImageU8> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        std::string k = kind;
        if (kind == "mixed") {
            const char* kinds[3] = {"smooth", "gradients", "blobs"};
            k = kinds[i % 3];
        }
        if (k == "smooth") out.push_back(synth_smooth(size, rng));
        else if (k == "gradients") out.push_back(synth_gradient(size, rng));
        else if (k == "blobs") out.push_back(synth_blobs(size, rng));
        else throw ContractError("make_synthetic: unknown kind " + kind);
    }
    return out;
}

// ---- optimizer ---------------------------------------------------------------------

double clip_gradients(std::vector<std::pair<std::string, Tensor>>& params, double max_norm) {
    if (!(max_norm > 0.0)) throw ContractError("clip_gradients: max_norm must be positive");
    double sq = 0.0;
    for (auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        const double* g = t.grad();
        for (int64_t i = 0; i < t.numel(); ++i) sq += g[i] * g[i];
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm) {
        double scale = max_norm / norm;
        for (auto& [name, t] : params) {
            if (!t.has_grad()) continue;
            double* g = t.grad_data();
            for (int64_t i = 0; i < t.numel(); ++i) g[i] *= scale;
        }
    }
    return norm;
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::vector<std::pair<std::string, Tensor>>& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(static_cast<size_t>(params[i].second.numel()), 0.0);
            v_[i].assign(static_cast<size_t>(params[i].second.numel()), 0.0);
        }
    }
    if (m_.size() != params.size()) throw ContractError("Adam: parameter set changed");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].second;
        if (!t.has_grad()) continue;
        const double* g = t.grad();
        double* w = t.data();
        for (int64_t j = 0; j < t.numel(); ++j) {
            m_[i][static_cast<size_t>(j)] =
                beta1_ * m_[i][static_cast<size_t>(j)] + (1.0 - beta1_) * g[j];
            v_[i][static_cast<size_t>(j)] =
                beta2_ * v_[i][static_cast<size_t>(j)] + (1.0 - beta2_) * g[j] * g[j];
            double mhat = m_[i][static_cast<size_t>(j)] / bc1;
            double vhat = v_[i][static_cast<size_t>(j)] / bc2;
            w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

EmaState::EmaState(double decay, const std::vector<std::pair<std::string, Tensor>>& params)
    : decay_(decay) {
    for (const auto& [name, t] : params)
        shadow_[name] = std::vector<double>(t.data(), t.data() + t.numel());
}

void EmaState::update(const std::vector<std::pair<std::string, Tensor>>& params) {
    for (const auto& [name, t] : params) {
        auto& s = shadow_.at(name);
        const double* w = t.data();
        for (size_t i = 0; i < s.size(); ++i) s[i] = decay_ * s[i] + (1.0 - decay_) * w[i];
    }
}

std::vector<std::pair<std::string, Tensor>> EmaState::snapshot(
    const std::vector<std::pair<std::string, Tensor>>& params) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : params) {
        const auto& s = shadow_.at(name);
        out.emplace_back(name, Tensor::from_data(t.shape(), s));
    }
    return out;
}

void EmaState::load_into(std::vector<std::pair<std::string, Tensor>>& params) const {
    for (auto& [name, t] : params) {
        const auto& s = shadow_.at(name);
        std::copy(s.begin(), s.end(), t.data());
    }
}

// ---- loss --------------------------------------------------------------------------

LossOutput training_loss(const Model& model, const Tensor& x_padded, double lambda,
                         Distortion distortion, Rng& rng) {
    Model::TrainForward fwd = model.forward_train(x_padded, rng);
    double pixels = static_cast<double>(x_padded.dim(0)) *
                    static_cast<double>(x_padded.dim(2)) *
                    static_cast<double>(x_padded.dim(3));
    Tensor rate_pp = mul_scalar(fwd.rate_nats, 1.0 / pixels);
    Tensor dist;
    if (distortion == Distortion::Mse) {
        Tensor diff = sub(x_padded, fwd.xhat);
        dist = mean(mul(diff, diff));
    } else {
        dist = add_scalar(neg(ms_ssim_tensor(x_padded, fwd.xhat)), 1.0);
    }
    Tensor total = add(rate_pp, mul_scalar(dist, lambda));
    return {total, rate_pp, dist};
}

LossOutput lossless_loss(const Model& model, const Tensor& x_padded, Rng& rng) {
    Model::TrainForward fwd = model.forward_train(x_padded, rng);
    double pixels = static_cast<double>(x_padded.dim(0)) *
                    static_cast<double>(x_padded.dim(2)) *
                    static_cast<double>(x_padded.dim(3));
    Tensor rate_pp = mul_scalar(fwd.rate_nats, 1.0 / pixels);
    Model::PixelLikelihood pl = model.pixel_likelihood(fwd.final_state);
    Tensor values = Tensor::zeros(x_padded.shape());
    const double* px = x_padded.data();
    double* pv = values.data();
    for (int64_t i = 0; i < values.numel(); ++i) pv[i] = round_half_even(px[i] * 255.0);
    Tensor logp = lattice_logpdf(values, pl.mean, pl.sigma, 0.0, 255.0);
    Tensor nll_pp = mul_scalar(neg(sum(logp)), 1.0 / pixels);
    Tensor total = add(rate_pp, nll_pp);
    return {total, rate_pp, nll_pp};
}

// ---- training loop -----------------------------------------------------------------

namespace {

Tensor batch_tensor(const std::vector<ImageU8>& images, const std::vector<size_t>& indices,
                    const TrainConfig& cfg, Rng& rng) {
    int size = cfg.crop && cfg.crop_size < images[indices[0]].width ? cfg.crop_size
                                                                    : images[indices[0]].width;
    int64_t B = static_cast<int64_t>(indices.size());
    Tensor batch = Tensor::zeros({B, 3, size, size});
    double* p = batch.data();
    for (int64_t b = 0; b < B; ++b) {
        const ImageU8& img = images[indices[static_cast<size_t>(b)]];
        int max_off_y = img.height - size;
        int max_off_x = img.width - size;
        int oy = cfg.crop && max_off_y > 0 ? static_cast<int>(rng.below(max_off_y + 1)) : 0;
        int ox = cfg.crop && max_off_x > 0 ? static_cast<int>(rng.below(max_off_x + 1)) : 0;
        bool flip = cfg.hflip && rng.below(2) == 1;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    int sx = flip ? ox + size - 1 - x : ox + x;
                    double v = img.rgb[static_cast<size_t>(
                                   3 * ((oy + y) * img.width + sx) + c)] /
                               255.0;
                    p[((b * 3 + c) * size + y) * size + x] = v;
                }
    }
    return batch;
}

void write_text_atomic(const std::string& path, const std::string& text) {
    std::vector<uint8_t> bytes(text.begin(), text.end());
    write_file_atomic(path, bytes);
}

}  // namespace

std::vector<RDPoint> evaluate_rd(const Model& model, const std::vector<ImageU8>& images,
                                 int jobs) {
    std::vector<CompressResult> coded = compress_batch(images, model, jobs);
    std::vector<RDPoint> points;
    points.reserve(images.size());
    for (size_t i = 0; i < images.size(); ++i) {
        ImageU8 decoded = decompress(coded[i].coded, model);
        RDPoint pt;
        pt.lambda = model.config().lambda;
        pt.bpp_actual = coded[i].bpp_actual;
        pt.bpp_estimated = coded[i].bpp_estimated;
        pt.psnr = psnr(images[i], decoded);
        pt.ms_ssim = std::min(images[i].width, images[i].height) >= 11
                         ? ms_ssim(images[i], decoded)
                         : std::numeric_limits<double>::quiet_NaN();
        points.push_back(pt);
    }
    return points;
}

RDPoint mean_rd(const std::vector<RDPoint>& points) {
    if (points.empty()) throw ContractError("mean_rd: empty point set");
    RDPoint m;
    m.lambda = points.front().lambda;
    int ssim_count = 0;
    for (const RDPoint& p : points) {
        m.bpp_actual += p.bpp_actual;
        m.bpp_estimated += p.bpp_estimated;
        m.psnr += p.psnr;
        if (!std::isnan(p.ms_ssim)) {
            m.ms_ssim += p.ms_ssim;
            ++ssim_count;
        }
    }
    double n = static_cast<double>(points.size());
    m.bpp_actual /= n;
    m.bpp_estimated /= n;
    m.psnr /= n;
    m.ms_ssim = ssim_count > 0 ? m.ms_ssim / ssim_count
                               : std::numeric_limits<double>::quiet_NaN();
    return m;
}

void write_rd_csv(const std::string& path, const std::vector<RDPoint>& rows,
                  const RDPoint& mean_row) {
    std::ostringstream out;
    out << "row,lambda,bpp_estimated,bpp_actual,psnr,ms_ssim\n";
    out.precision(10);
    for (size_t i = 0; i < rows.size(); ++i) {
        const RDPoint& p = rows[i];
        out << i << "," << p.lambda << "," << p.bpp_estimated << "," << p.bpp_actual << ","
            << p.psnr << "," << p.ms_ssim << "\n";
    }
    out << "mean," << mean_row.lambda << "," << mean_row.bpp_estimated << ","
        << mean_row.bpp_actual << "," << mean_row.psnr << "," << mean_row.ms_ssim << "\n";
    write_text_atomic(path, out.str());
}

void write_curve_csv(const std::string& path, const std::vector<RDPoint>& points) {
    std::ostringstream out;
    out << "lambda,bpp_estimated,bpp_actual,psnr,ms_ssim\n";
    out.precision(10);
    for (const RDPoint& p : points)
        out << p.lambda << "," << p.bpp_estimated << "," << p.bpp_actual << "," << p.psnr << ","
            << p.ms_ssim << "\n";
    write_text_atomic(path, out.str());
}

std::vector<RDPoint> read_curve_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open curve file: " + path);
    std::string line;
    if (!std::getline(f, line)) throw FormatError("curve file empty: " + path);
    if (line.rfind("lambda,", 0) != 0) throw FormatError("curve file: unexpected header");
    std::vector<RDPoint> points;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::vector<double> vals;
        while (std::getline(row, field, ',')) {
            try {
                vals.push_back(std::stod(field));
            } catch (...) {
                throw FormatError("curve file: bad numeric field " + field);
            }
        }
        if (vals.size() != 5) throw FormatError("curve file: expected 5 columns");
        points.push_back({vals[0], vals[1], vals[2], vals[3], vals[4]});
    }
    return points;
}

RateDistribution rate_distribution(const Model& model, const std::vector<ImageU8>& images) {
    if (images.empty()) throw ContractError("rate_distribution: empty image set");
    RateDistribution rd;
    rd.bpp_per_block.assign(static_cast<size_t>(model.num_blocks()), 0.0);
    for (const ImageU8& img : images) {
        CompressResult res = compress(img, model);
        double pixels = static_cast<double>(img.width) * static_cast<double>(img.height);
        for (size_t b = 0; b < rd.bpp_per_block.size(); ++b) {
            double payload_bits =
                (static_cast<double>(res.coded.streams[b].size()) - kRansFlushBytes) * 8.0;
            rd.bpp_per_block[b] += payload_bits / pixels;
        }
    }
    for (auto& v : rd.bpp_per_block) v /= static_cast<double>(images.size());
    for (double v : rd.bpp_per_block) {
        rd.total_payload_bpp += v;
        rd.collapsed.push_back(v < 1e-3);
    }
    return rd;
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::string& out_prefix) {
    train_cfg.validate();
    ModelConfig cfg = model_cfg;
    cfg.lambda = train_cfg.lambda;
    cfg.lossless = cfg.lossless || train_cfg.lossless;
    Model model(cfg);
    Rng init_rng(train_cfg.seed);
    model.init_params(init_rng);
    auto params = model.named_params();
    if (!train_cfg.init_from.empty()) {
        // Warm start: copy every record whose name and shape match.
        auto records = checkpoint_load(train_cfg.init_from);
        for (auto& [name, t] : params) {
            auto it = records.find(name);
            if (it != records.end() && it->second.shape() == t.shape())
                std::copy(it->second.data(), it->second.data() + t.numel(), t.data());
        }
    }

    std::vector<ImageU8> dataset = make_synthetic(train_cfg.data_kind, train_cfg.data_size,
                                                  train_cfg.data_count, train_cfg.seed);
    std::vector<ImageU8> holdout = make_synthetic(train_cfg.data_kind, train_cfg.data_size,
                                                  train_cfg.eval_count, train_cfg.seed + 1);

    Adam adam(train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps);
    EmaState ema(train_cfg.ema_decay, params);
    Rng rng(train_cfg.seed + 2);

    std::ostringstream curve;
    curve << "step,total,rate_bpp,distortion\n";
    curve.precision(10);

    TrainResult result;
    result.checkpoint_ema = out_prefix + ".qrwt";
    result.checkpoint_raw = out_prefix + ".raw.qrwt";
    constexpr double kLog2e = 1.4426950408889634074;
    int window = std::min(20, train_cfg.steps);
    std::vector<double> first_losses, last_losses;

    for (int step = 0; step < train_cfg.steps; ++step) {
        std::vector<size_t> indices(static_cast<size_t>(train_cfg.batch_size));
        for (auto& ix : indices) ix = rng.below(dataset.size());
        Tensor batch = batch_tensor(dataset, indices, train_cfg, rng);
        batch = pad_replicate(batch, model.max_downsample());

        // In lossless mode the "distortion" column carries the pixel NLL in
        // nats per pixel.
        LossOutput loss =
            train_cfg.lossless
                ? lossless_loss(model, batch, rng)
                : training_loss(model, batch, train_cfg.lambda, train_cfg.distortion, rng);

        double total = loss.total.item();
        if (!std::isfinite(total)) {
            // Parameters still hold the last good step; persist and abort.
            save_model_params(result.checkpoint_ema, cfg, ema.snapshot(params));
            save_model_params(result.checkpoint_raw, cfg, params);
            write_text_atomic(out_prefix + ".loss.csv", curve.str());
            throw TrainingDiverged("training loss became non-finite at step " +
                                   std::to_string(step));
        }
        if (step < window) first_losses.push_back(total);
        if (step >= train_cfg.steps - window) last_losses.push_back(total);

        for (auto& [name, t] : params) t.zero_grad();
        backward(loss.total);
        clip_gradients(params, train_cfg.grad_clip);
        adam.step(params);
        ema.update(params);

        if (step % train_cfg.log_every == 0 || step == train_cfg.steps - 1)
            curve << step << "," << total << "," << loss.rate_pp.item() * kLog2e << ","
                  << loss.dist.item() << "\n";
    }

    result.steps_run = train_cfg.steps;
    result.initial_loss =
        pairwise_sum(first_losses.data(), static_cast<int64_t>(first_losses.size())) /
        static_cast<double>(first_losses.size());
    result.final_loss =
        pairwise_sum(last_losses.data(), static_cast<int64_t>(last_losses.size())) /
        static_cast<double>(last_losses.size());

    save_model_params(result.checkpoint_raw, cfg, params);
    save_model_params(result.checkpoint_ema, cfg, ema.snapshot(params));
    write_text_atomic(out_prefix + ".loss.csv", curve.str());

    if (!holdout.empty() && !train_cfg.lossless) {
        auto ema_model = load_model(result.checkpoint_ema);
        result.eval_points = evaluate_rd(*ema_model, holdout);
        result.eval_mean = mean_rd(result.eval_points);
        write_rd_csv(out_prefix + ".rd.csv", result.eval_points, result.eval_mean);
    }
    return result;
}

}  // namespace qres
