#include "qres/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "qres/checkpoint.hpp"
#include "qres/image.hpp"

namespace qres {

namespace {

using detail::make_op_output;
using detail::TensorImpl;

// softplus(x + kSigmaRawBias) = 1 at x = 0, so zero-initialized prior heads
// start with unit scale.
constexpr double kSigmaRawBias = 0.5413248546129181;
constexpr double kLnEps = 1e-6;

Tensor make_param(std::vector<int64_t> shape) { return Tensor::zeros(std::move(shape), true); }

}  // namespace

// ---- padding ---------------------------------------------------------------------

Tensor pad_replicate(const Tensor& x, int64_t multiple) {
    if (x.rank() != 4) throw ShapeError("pad_replicate: input must be NCHW");
    if (multiple < 1) throw ContractError("pad_replicate: bad multiple");
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t Hp = (H + multiple - 1) / multiple * multiple;
    int64_t Wp = (W + multiple - 1) / multiple * multiple;
    if (Hp == H && Wp == W) return x;
    std::vector<double> out(static_cast<size_t>(N * C * Hp * Wp));
    const double* px = x.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* src = px + nc * H * W;
        double* dst = out.data() + nc * Hp * Wp;
        for (int64_t y = 0; y < Hp; ++y) {
            int64_t sy = std::min(y, H - 1);
            for (int64_t xw = 0; xw < Wp; ++xw)
                dst[y * Wp + xw] = src[sy * W + std::min(xw, W - 1)];
        }
    }
    auto xi = x.impl();
    return make_op_output({N, C, Hp, Wp}, std::move(out), {x},
                          [xi, N, C, H, W, Hp, Wp](TensorImpl& self) {
                              if (!xi->requires_grad) return;
                              xi->ensure_grad();
                              for (int64_t nc = 0; nc < N * C; ++nc) {
                                  double* dx = xi->grad.data() + nc * H * W;
                                  const double* g = self.grad.data() + nc * Hp * Wp;
                                  for (int64_t y = 0; y < Hp; ++y) {
                                      int64_t sy = std::min(y, H - 1);
                                      for (int64_t xw = 0; xw < Wp; ++xw)
                                          dx[sy * W + std::min(xw, W - 1)] += g[y * Wp + xw];
                                  }
                              }
                          });
}

Tensor crop_spatial(const Tensor& x, int64_t height, int64_t width) {
    if (x.rank() != 4) throw ShapeError("crop_spatial: input must be NCHW");
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (height < 1 || width < 1 || height > H || width > W)
        throw ShapeError("crop_spatial: bad target size");
    if (height == H && width == W) return x;
    std::vector<double> out(static_cast<size_t>(N * C * height * width));
    const double* px = x.data();
    for (int64_t nc = 0; nc < N * C; ++nc)
        for (int64_t y = 0; y < height; ++y)
            std::copy(px + nc * H * W + y * W, px + nc * H * W + y * W + width,
                      out.begin() + nc * height * width + y * width);
    auto xi = x.impl();
    return make_op_output({N, C, height, width}, std::move(out), {x},
                          [xi, N, C, H, W, height, width](TensorImpl& self) {
                              if (!xi->requires_grad) return;
                              xi->ensure_grad();
                              for (int64_t nc = 0; nc < N * C; ++nc)
                                  for (int64_t y = 0; y < height; ++y)
                                      for (int64_t xw = 0; xw < width; ++xw)
                                          xi->grad[nc * H * W + y * W + xw] +=
                                              self.grad[nc * height * width + y * width + xw];
                          });
}

// ---- ConvNextBlock -----------------------------------------------------------------

Tensor ConvNextBlock::forward(const Tensor& x) const {
    Tensor h = conv2d(x, dw_w, dw_b, 1, kernel / 2, channels);
    h = layer_norm(h, ln_g, ln_b, kLnEps);
    h = linear(h, w1, b1);
    h = gelu(h);
    h = linear(h, w2, b2);
    return add(x, h);
}

namespace {

ConvNextBlock make_convnext(int channels, int kernel) {
    ConvNextBlock b;
    b.channels = channels;
    b.kernel = kernel;
    b.dw_w = make_param({channels, 1, kernel, kernel});
    b.dw_b = make_param({channels});
    b.ln_g = make_param({channels});
    b.ln_b = make_param({channels});
    b.w1 = make_param({2 * channels, channels});
    b.b1 = make_param({2 * channels});
    b.w2 = make_param({channels, 2 * channels});
    b.b2 = make_param({channels});
    return b;
}

void collect_convnext(ConvNextBlock& b, const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor>>& out) {
    out.emplace_back(prefix + ".dw.w", b.dw_w);
    out.emplace_back(prefix + ".dw.b", b.dw_b);
    out.emplace_back(prefix + ".ln.g", b.ln_g);
    out.emplace_back(prefix + ".ln.b", b.ln_b);
    out.emplace_back(prefix + ".w1", b.w1);
    out.emplace_back(prefix + ".b1", b.b1);
    out.emplace_back(prefix + ".w2", b.w2);
    out.emplace_back(prefix + ".b2", b.b2);
}

}  // namespace

// ---- LatentBlock -------------------------------------------------------------------

LatentBlock::LatentBlock(int feature_ch, int latent_ch, int depth, int dw_kernel)
    : feature_ch_(feature_ch), latent_ch_(latent_ch) {
    if (latent_ch_ > 0) {
        post_ln_g_ = make_param({2 * feature_ch});
        post_ln_b_ = make_param({2 * feature_ch});
        post_w1_ = make_param({feature_ch, 2 * feature_ch});
        post_b1_ = make_param({feature_ch});
        post_w2_ = make_param({latent_ch, feature_ch});
        post_b2_ = make_param({latent_ch});
        prior_ln_g_ = make_param({feature_ch});
        prior_ln_b_ = make_param({feature_ch});
        prior_w1_ = make_param({feature_ch, feature_ch});
        prior_b1_ = make_param({feature_ch});
        prior_w2_ = make_param({2 * latent_ch, feature_ch});
        prior_b2_ = make_param({2 * latent_ch});
        zproj_w_ = make_param({feature_ch, latent_ch});
        zproj_b_ = make_param({feature_ch});
    }
    for (int i = 0; i < depth; ++i) res_.push_back(make_convnext(feature_ch, dw_kernel));
}

PosteriorStats LatentBlock::posterior(const Tensor& feat, const Tensor& state) const {
    Tensor h = concat_channels(feat, state);
    h = layer_norm(h, post_ln_g_, post_ln_b_, kLnEps);
    h = linear(h, post_w1_, post_b1_);
    h = gelu(h);
    return {linear(h, post_w2_, post_b2_)};
}

PriorStats LatentBlock::prior(const Tensor& state) const {
    Tensor h = layer_norm(state, prior_ln_g_, prior_ln_b_, kLnEps);
    h = linear(h, prior_w1_, prior_b1_);
    h = gelu(h);
    Tensor o = linear(h, prior_w2_, prior_b2_);
    Tensor mu_hat = slice_channels(o, 0, latent_ch_);
    Tensor sraw = slice_channels(o, latent_ch_, 2 * latent_ch_);
    Tensor sigma = clamp(softplus(add_scalar(sraw, kSigmaRawBias)), kSigmaMin, kSigmaMax);
    return {mu_hat, sigma};
}

Tensor LatentBlock::update_state(const Tensor& state, const Tensor& z) const {
    Tensor s = state;
    if (latent_ch_ > 0) s = add(s, linear(z, zproj_w_, zproj_b_));
    for (const auto& block : res_) s = block.forward(s);
    return s;
}

Tensor LatentBlock::run_train(const Tensor& state, const Tensor& feat, Rng& rng,
                              Tensor& rate_out) const {
    if (latent_ch_ == 0) {
        rate_out = Tensor::scalar(0.0);
        Tensor s = state;
        for (const auto& block : res_) s = block.forward(s);
        return s;
    }
    PosteriorStats post = posterior(feat, state);
    PriorStats pr = prior(state);
    Tensor z = posterior_sample_train(post, rng);
    rate_out = rate_term(z, pr);
    return update_state(state, z);
}

namespace {

struct SymRecord {
    int index;
    bool escape;
    uint32_t ext;
    QuantizedPmf pmf;
};

// Shared by compress and decompress: z = mu_hat + n computed with the same
// expression on both sides so the updated states match bitwise.
Tensor encode_symbols(const Tensor& mu, const PriorStats& pr, std::vector<uint8_t>& stream_out) {
    int64_t count = mu.numel();
    const double* pm = mu.data();
    const double* ph = pr.mu_hat.data();
    const double* ps = pr.sigma_hat.data();
    Tensor z = Tensor::zeros(mu.shape());
    double* pz = z.data();
    std::vector<SymRecord> recs;
    recs.reserve(static_cast<size_t>(count));
    BypassWriter bypass;
    for (int64_t i = 0; i < count; ++i) {
        double nr = round_half_even(pm[i] - ph[i]);
        if (!(std::fabs(nr) < 2147483647.0))
            throw ContractError("latent symbol exceeds bypass width");
        int64_t n = static_cast<int64_t>(nr);
        QuantizedPmf pmf = build_pmf(ph[i], ps[i]);
        int radius = -pmf.offset;
        int sym;
        bool escape = false;
        uint32_t ext = 0;
        if (n >= radius) {
            sym = radius;
            escape = true;
            ext = static_cast<uint32_t>(n - radius);
        } else if (n <= -radius) {
            sym = -radius;
            escape = true;
            ext = static_cast<uint32_t>(-radius - n);
        } else {
            sym = static_cast<int>(n);
        }
        if (escape) bypass.put(ext, 32);
        pz[i] = ph[i] + static_cast<double>(n);
        recs.push_back({sym - pmf.offset, escape, ext, std::move(pmf)});
    }
    RansEncoder enc;
    for (auto it = recs.rbegin(); it != recs.rend(); ++it) enc.put_symbol(it->index, it->pmf);
    stream_out = assemble_stream(enc.finish(), bypass.finish());
    return z;
}

Tensor decode_symbols(const PriorStats& pr, StreamReader& reader) {
    const Tensor& mu_hat = pr.mu_hat;
    int64_t count = mu_hat.numel();
    const double* ph = mu_hat.data();
    const double* ps = pr.sigma_hat.data();
    Tensor z = Tensor::zeros(mu_hat.shape());
    double* pz = z.data();
    for (int64_t i = 0; i < count; ++i) {
        QuantizedPmf pmf = build_pmf(ph[i], ps[i]);
        int radius = -pmf.offset;
        int idx = reader.rans().get_symbol(pmf);
        int sym = pmf.offset + idx;
        int64_t n;
        if (sym == radius) {
            n = radius + static_cast<int64_t>(reader.read_bypass(32));
        } else if (sym == -radius) {
            n = -radius - static_cast<int64_t>(reader.read_bypass(32));
        } else {
            n = sym;
        }
        pz[i] = ph[i] + static_cast<double>(n);
    }
    return z;
}

}  // namespace

Tensor LatentBlock::run_compress(const Tensor& state, const Tensor& feat,
                                 std::vector<uint8_t>& stream_out, double& est_bits_out) const {
    if (latent_ch_ == 0) {
        stream_out = RansEncoder().finish();  // flush only
        est_bits_out = 0.0;
        Tensor s = state;
        for (const auto& block : res_) s = block.forward(s);
        return s;
    }
    PosteriorStats post = posterior(feat, state);
    PriorStats pr = prior(state);
    Tensor z = encode_symbols(post.mu, pr, stream_out);
    est_bits_out = estimated_bits(z, pr);
    return update_state(state, z);
}

Tensor LatentBlock::run_decompress(const Tensor& state, std::span<const uint8_t> stream) const {
    StreamReader reader(stream);
    if (latent_ch_ == 0) {
        reader.expect_consumed();
        Tensor s = state;
        for (const auto& block : res_) s = block.forward(s);
        return s;
    }
    PriorStats pr = prior(state);
    Tensor z = decode_symbols(pr, reader);
    reader.expect_consumed();
    return update_state(state, z);
}

Tensor LatentBlock::run_sample(const Tensor& state, double t, Rng& rng) const {
    if (latent_ch_ == 0) {
        Tensor s = state;
        for (const auto& block : res_) s = block.forward(s);
        return s;
    }
    PriorStats pr = prior(state);
    Tensor z = prior_sample(pr, t, rng);
    return update_state(state, z);
}

Tensor LatentBlock::run_interpolate(const Tensor& state, const Tensor& feat_a,
                                    const Tensor& feat_b, double alpha) const {
    if (latent_ch_ == 0) {
        Tensor s = state;
        for (const auto& block : res_) s = block.forward(s);
        return s;
    }
    Tensor mu_a = posterior(feat_a, state).mu;
    Tensor mu_b = posterior(feat_b, state).mu;
    Tensor z = add(mul_scalar(mu_a, 1.0 - alpha), mul_scalar(mu_b, alpha));
    return update_state(state, z);
}

void LatentBlock::collect_params(const std::string& prefix,
                                 std::vector<std::pair<std::string, Tensor>>& out) {
    if (latent_ch_ > 0) {
        out.emplace_back(prefix + ".post.ln.g", post_ln_g_);
        out.emplace_back(prefix + ".post.ln.b", post_ln_b_);
        out.emplace_back(prefix + ".post.w1", post_w1_);
        out.emplace_back(prefix + ".post.b1", post_b1_);
        out.emplace_back(prefix + ".post.w2", post_w2_);
        out.emplace_back(prefix + ".post.b2", post_b2_);
        out.emplace_back(prefix + ".prior.ln.g", prior_ln_g_);
        out.emplace_back(prefix + ".prior.ln.b", prior_ln_b_);
        out.emplace_back(prefix + ".prior.w1", prior_w1_);
        out.emplace_back(prefix + ".prior.b1", prior_b1_);
        out.emplace_back(prefix + ".prior.w2", prior_w2_);
        out.emplace_back(prefix + ".prior.b2", prior_b2_);
        out.emplace_back(prefix + ".zproj.w", zproj_w_);
        out.emplace_back(prefix + ".zproj.b", zproj_b_);
    }
    for (size_t i = 0; i < res_.size(); ++i)
        collect_convnext(res_[i], prefix + ".res" + std::to_string(i), out);
}

// ---- Model -------------------------------------------------------------------------

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    size_t S = cfg_.stages.size();
    stages_.resize(S);
    for (size_t i = 0; i < S; ++i) {
        Stage& st = stages_[i];
        st.cfg = cfg_.stages[i];
        int in_ch = (i + 1 < S) ? cfg_.stages[i + 1].width : 3;
        st.embed_stride =
            (i + 1 < S) ? cfg_.stages[i].scale / cfg_.stages[i + 1].scale : cfg_.stages[i].scale;
        st.embed_w = make_param({st.cfg.width, in_ch, st.embed_stride, st.embed_stride});
        st.embed_b = make_param({st.cfg.width});
        for (int d = 0; d < st.cfg.depth; ++d)
            st.bu_blocks.push_back(make_convnext(st.cfg.width, cfg_.dw_kernel));
        for (int b = 0; b < st.cfg.latent_blocks; ++b)
            st.latent_blocks.emplace_back(st.cfg.width, st.cfg.latent_channels, st.cfg.depth,
                                          cfg_.dw_kernel);
        if (i + 1 < S) {
            st.up_ratio = cfg_.stages[i].scale / cfg_.stages[i + 1].scale;
            st.up_w = make_param(
                {cfg_.stages[i + 1].width * st.up_ratio * st.up_ratio, st.cfg.width});
            st.up_b = make_param({cfg_.stages[i + 1].width * st.up_ratio * st.up_ratio});
        }
    }
    int w0 = cfg_.stages.front().width;
    constant_ = make_param({1, w0, 1, 1});
    int wf = cfg_.stages.back().width;
    int rf = cfg_.stages.back().scale;
    out_ln_g_ = make_param({wf});
    out_ln_b_ = make_param({wf});
    out_w_ = make_param({3 * rf * rf, wf});
    out_b_ = make_param({3 * rf * rf});
    if (cfg_.lossless) {
        ll_w_ = make_param({6 * rf * rf, wf});
        ll_b_ = make_param({6 * rf * rf});
    }
    Rng rng(0);
    init_params(rng);
}

std::vector<Tensor> Model::bottom_up(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("bottom_up: expected (N,3,H,W)");
    int md = max_downsample();
    if (x.dim(2) % md != 0 || x.dim(3) % md != 0)
        throw ContractError("bottom_up: input sides must be divisible by the max downsample");
    size_t S = stages_.size();
    std::vector<Tensor> feats(S);
    Tensor cur = x;
    for (size_t i = S; i-- > 0;) {
        const Stage& st = stages_[i];
        cur = conv2d(cur, st.embed_w, st.embed_b, st.embed_stride, 0, 1);
        for (const auto& b : st.bu_blocks) cur = b.forward(cur);
        feats[i] = cur;
    }
    return feats;
}

Tensor Model::initial_state(int64_t batch, int64_t h_pad, int64_t w_pad) const {
    int scale0 = cfg_.stages.front().scale;
    Tensor c = broadcast_batch(constant_, batch);
    return tile_spatial(c, h_pad / scale0, w_pad / scale0);
}

Tensor Model::upsample(const Tensor& state, const Stage& stage) const {
    return pixel_shuffle(linear(state, stage.up_w, stage.up_b), stage.up_ratio);
}

Tensor Model::run_top_down(
    int64_t batch, int64_t h_pad, int64_t w_pad,
    const std::function<Tensor(int, int, const LatentBlock&, Tensor)>& fn) const {
    Tensor state = initial_state(batch, h_pad, w_pad);
    int gi = 0;
    for (size_t si = 0; si < stages_.size(); ++si) {
        for (const LatentBlock& block : stages_[si].latent_blocks)
            state = fn(gi++, static_cast<int>(si), block, std::move(state));
        if (si + 1 < stages_.size()) state = upsample(state, stages_[si]);
    }
    return state;
}

Tensor Model::reconstruct(const Tensor& final_state) const {
    Tensor h = layer_norm(final_state, out_ln_g_, out_ln_b_, kLnEps);
    h = linear(h, out_w_, out_b_);
    return pixel_shuffle(h, cfg_.stages.back().scale);
}

Model::PixelLikelihood Model::pixel_likelihood(const Tensor& final_state) const {
    if (!cfg_.lossless) throw ContractError("pixel_likelihood: model has no lossless head");
    Tensor h = pixel_shuffle(linear(final_state, ll_w_, ll_b_), cfg_.stages.back().scale);
    Tensor mean = mul_scalar(slice_channels(h, 0, 3), 255.0);
    Tensor sigma = clamp(softplus(slice_channels(h, 3, 6)), kSigmaMin, 256.0);
    return {mean, sigma};
}

Model::TrainForward Model::forward_train(const Tensor& x_padded, Rng& rng) const {
    std::vector<Tensor> feats = bottom_up(x_padded);
    Tensor rate = Tensor::scalar(0.0);
    Tensor state = run_top_down(
        x_padded.dim(0), x_padded.dim(2), x_padded.dim(3),
        [&](int, int si, const LatentBlock& block, Tensor s) {
            Tensor rate_i;
            Tensor s2 = block.run_train(s, feats[static_cast<size_t>(si)], rng, rate_i);
            rate = add(rate, rate_i);
            return s2;
        });
    return {reconstruct(state), rate, state};
}

Model::LatentEncode Model::compress_latents(const Tensor& x_padded) const {
    if (x_padded.dim(0) != 1) throw ContractError("compress_latents: batch must be 1");
    NoGradGuard guard;
    std::vector<Tensor> feats = bottom_up(x_padded);
    LatentEncode out;
    Tensor state = run_top_down(
        1, x_padded.dim(2), x_padded.dim(3),
        [&](int, int si, const LatentBlock& block, Tensor s) {
            std::vector<uint8_t> stream;
            double bits = 0.0;
            Tensor s2 = block.run_compress(s, feats[static_cast<size_t>(si)], stream, bits);
            out.streams.push_back(std::move(stream));
            out.est_bits += bits;
            out.est_bits_per_block.push_back(bits);
            return s2;
        });
    out.final_state = state;
    return out;
}

Tensor Model::decode_latents(std::span<const std::vector<uint8_t>> streams, int k, double t,
                             Rng* rng, int64_t h_pad, int64_t w_pad) const {
    int N = num_blocks();
    if (k < 0 || k > N) throw ContractError("decode_latents: k out of range");
    if (!(t >= 0.0 && t <= 1.0)) throw ContractError("decode_latents: t out of range");
    if (static_cast<int>(streams.size()) < k)
        throw DecodeError("decode_latents: fewer streams than k");
    if (k < N && t > 0.0 && rng == nullptr)
        throw ContractError("decode_latents: rng required for t > 0");
    NoGradGuard guard;
    Rng fallback(0);  // never drawn from when t == 0
    Rng& r = rng ? *rng : fallback;
    return run_top_down(1, h_pad, w_pad,
                        [&](int gi, int, const LatentBlock& block, Tensor s) {
                            if (gi < k)
                                return block.run_decompress(s, streams[static_cast<size_t>(gi)]);
                            return block.run_sample(s, t, r);
                        });
}

Tensor Model::interpolate_trajectory(const Tensor& xa_padded, const Tensor& xb_padded,
                                     double alpha) const {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ContractError("interpolate_trajectory: alpha out of range");
    if (xa_padded.shape() != xb_padded.shape())
        throw ContractError("interpolate_trajectory: size mismatch");
    NoGradGuard guard;
    std::vector<Tensor> fa = bottom_up(xa_padded);
    std::vector<Tensor> fb = bottom_up(xb_padded);
    return run_top_down(1, xa_padded.dim(2), xa_padded.dim(3),
                        [&](int, int si, const LatentBlock& block, Tensor s) {
                            return block.run_interpolate(s, fa[static_cast<size_t>(si)],
                                                         fb[static_cast<size_t>(si)], alpha);
                        });
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("constant", constant_);
    for (size_t i = 0; i < stages_.size(); ++i) {
        std::string sp = "s" + std::to_string(i);
        Stage& st = stages_[i];
        out.emplace_back(sp + ".embed.w", st.embed_w);
        out.emplace_back(sp + ".embed.b", st.embed_b);
        for (size_t j = 0; j < st.bu_blocks.size(); ++j)
            collect_convnext(st.bu_blocks[j], sp + ".bu" + std::to_string(j), out);
        for (size_t j = 0; j < st.latent_blocks.size(); ++j)
            st.latent_blocks[j].collect_params(sp + ".lb" + std::to_string(j), out);
        if (st.up_w.defined()) {
            out.emplace_back(sp + ".up.w", st.up_w);
            out.emplace_back(sp + ".up.b", st.up_b);
        }
    }
    out.emplace_back("out.ln.g", out_ln_g_);
    out.emplace_back("out.ln.b", out_ln_b_);
    out.emplace_back("out.w", out_w_);
    out.emplace_back("out.b", out_b_);
    if (ll_w_.defined()) {
        out.emplace_back("ll.w", ll_w_);
        out.emplace_back("ll.b", ll_b_);
    }
    return out;
}

namespace {

void fill_uniform(Tensor& t, double limit, Rng& rng) {
    double* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = (2.0 * rng.uniform() - 1.0) * limit;
}

void fill_const(Tensor& t, double v) {
    double* p = t.data();
    std::fill(p, p + t.numel(), v);
}

// fan_in-scaled uniform init for a weight whose trailing dims multiply to
// fan_in; variance 1/fan_in.
void init_weight(Tensor& t, Rng& rng) {
    int64_t fan_in = 1;
    for (int i = 1; i < t.rank(); ++i) fan_in *= t.dim(i);
    fill_uniform(t, std::sqrt(3.0 / static_cast<double>(fan_in)), rng);
}

void init_convnext_params(ConvNextBlock& b, Rng& rng) {
    init_weight(b.dw_w, rng);
    fill_const(b.dw_b, 0.0);
    fill_const(b.ln_g, 1.0);
    fill_const(b.ln_b, 0.0);
    init_weight(b.w1, rng);
    fill_const(b.b1, 0.0);
    // Residual branches start as identity.
    fill_const(b.w2, 0.0);
    fill_const(b.b2, 0.0);
}

}  // namespace

void LatentBlock::init(Rng& rng) {
    if (latent_ch_ > 0) {
        fill_const(post_ln_g_, 1.0);
        fill_const(post_ln_b_, 0.0);
        init_weight(post_w1_, rng);
        fill_const(post_b1_, 0.0);
        fill_const(post_w2_, 0.0);  // mu starts at 0
        fill_const(post_b2_, 0.0);
        fill_const(prior_ln_g_, 1.0);
        fill_const(prior_ln_b_, 0.0);
        init_weight(prior_w1_, rng);
        fill_const(prior_b1_, 0.0);
        fill_const(prior_w2_, 0.0);  // mu_hat 0, sigma_hat 1 at init
        fill_const(prior_b2_, 0.0);
        // The projection starts live so distortion gradients reach the
        // posterior from the first step.
        init_weight(zproj_w_, rng);
        fill_const(zproj_b_, 0.0);
    }
    for (auto& b : res_) init_convnext_params(b, rng);
}

void Model::init_params(Rng& rng) {
    // Traversal order mirrors named_params so a fixed seed pins every value.
    fill_uniform(constant_, 1.0, rng);
    for (auto& st : stages_) {
        init_weight(st.embed_w, rng);
        fill_const(st.embed_b, 0.0);
        for (auto& b : st.bu_blocks) init_convnext_params(b, rng);
        for (auto& lb : st.latent_blocks) lb.init(rng);
        if (st.up_w.defined()) {
            init_weight(st.up_w, rng);
            fill_const(st.up_b, 0.0);
        }
    }
    fill_const(out_ln_g_, 1.0);
    fill_const(out_ln_b_, 0.0);
    fill_const(out_w_, 0.0);
    fill_const(out_b_, 0.5);  // mid-gray reconstruction at init
    if (ll_w_.defined()) {
        fill_const(ll_w_, 0.0);
        double* b = ll_b_.data();
        int rf = cfg_.stages.back().scale;
        for (int64_t i = 0; i < ll_b_.numel(); ++i)
            b[i] = i < 3 * rf * rf ? 0.5 : 64.0;  // mean mid-gray, wide scale
    }
}

void Model::perturb_params(Rng& rng, double scale) {
    for (auto& [name, t] : named_params()) {
        double* p = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) p[i] += scale * rng.normal();
    }
}

// ---- model file I/O ----------------------------------------------------------------

namespace {

constexpr const char* kCfgPrefix = "__config__/";

std::vector<std::pair<std::string, Tensor>> config_records(const ModelConfig& cfg) {
    auto vec_record = [](std::vector<double> v) {
        int64_t n = static_cast<int64_t>(v.size());
        return Tensor::from_data({n}, std::move(v));
    };
    std::vector<double> scales, widths, blocks, latents, depths;
    for (const auto& s : cfg.stages) {
        scales.push_back(s.scale);
        widths.push_back(s.width);
        blocks.push_back(s.latent_blocks);
        latents.push_back(s.latent_channels);
        depths.push_back(s.depth);
    }
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back(std::string(kCfgPrefix) + "format", Tensor::scalar(1.0));
    out.emplace_back(std::string(kCfgPrefix) + "stage_scales", vec_record(std::move(scales)));
    out.emplace_back(std::string(kCfgPrefix) + "stage_widths", vec_record(std::move(widths)));
    out.emplace_back(std::string(kCfgPrefix) + "stage_latent_blocks",
                     vec_record(std::move(blocks)));
    out.emplace_back(std::string(kCfgPrefix) + "stage_latent_channels",
                     vec_record(std::move(latents)));
    out.emplace_back(std::string(kCfgPrefix) + "stage_depths", vec_record(std::move(depths)));
    out.emplace_back(std::string(kCfgPrefix) + "dw_kernel",
                     Tensor::scalar(static_cast<double>(cfg.dw_kernel)));
    out.emplace_back(std::string(kCfgPrefix) + "lossless",
                     Tensor::scalar(cfg.lossless ? 1.0 : 0.0));
    out.emplace_back(std::string(kCfgPrefix) + "lambda", Tensor::scalar(cfg.lambda));
    return out;
}

ModelConfig config_from_records(const std::map<std::string, Tensor>& records) {
    auto need = [&](const std::string& key) -> const Tensor& {
        auto it = records.find(std::string(kCfgPrefix) + key);
        if (it == records.end()) throw FormatError("model file: missing config record " + key);
        return it->second;
    };
    auto as_ints = [](const Tensor& t) {
        std::vector<int> v;
        for (int64_t i = 0; i < t.numel(); ++i) v.push_back(static_cast<int>(t.data()[i]));
        return v;
    };
    if (static_cast<int>(need("format").item()) != 1)
        throw FormatError("model file: unsupported config format");
    std::vector<int> scales = as_ints(need("stage_scales"));
    std::vector<int> widths = as_ints(need("stage_widths"));
    std::vector<int> blocks = as_ints(need("stage_latent_blocks"));
    std::vector<int> latents = as_ints(need("stage_latent_channels"));
    std::vector<int> depths = as_ints(need("stage_depths"));
    if (scales.size() != widths.size() || scales.size() != blocks.size() ||
        scales.size() != latents.size() || scales.size() != depths.size())
        throw FormatError("model file: inconsistent stage records");
    ModelConfig cfg;
    for (size_t i = 0; i < scales.size(); ++i)
        cfg.stages.push_back({scales[i], widths[i], blocks[i], latents[i], depths[i]});
    cfg.dw_kernel = static_cast<int>(need("dw_kernel").item());
    cfg.lossless = need("lossless").item() != 0.0;
    cfg.lambda = need("lambda").item();
    cfg.validate();
    return cfg;
}

}  // namespace

void save_model_params(const std::string& path, const ModelConfig& cfg,
                       const std::vector<std::pair<std::string, Tensor>>& params) {
    std::vector<std::pair<std::string, Tensor>> records = config_records(cfg);
    records.insert(records.end(), params.begin(), params.end());
    write_file_atomic(path, checkpoint_serialize(records));
}

void save_model(const std::string& path, Model& model) {
    save_model_params(path, model.config(), model.named_params());
    model.set_model_id(static_cast<uint8_t>(fnv1a64(read_file(path)) & 0xFF));
}

std::unique_ptr<Model> load_model(const std::string& path) {
    std::vector<uint8_t> bytes = read_file(path);
    std::map<std::string, Tensor> records = checkpoint_deserialize(bytes);
    ModelConfig cfg = config_from_records(records);
    auto model = std::make_unique<Model>(cfg);
    auto params = model->named_params();
    size_t matched = 0;
    for (auto& [name, t] : params) {
        auto it = records.find(name);
        if (it == records.end()) throw FormatError("model file: missing parameter " + name);
        if (it->second.shape() != t.shape())
            throw FormatError("model file: shape mismatch for " + name);
        std::copy(it->second.data(), it->second.data() + t.numel(), t.data());
        ++matched;
    }
    size_t config_count = 0;
    for (const auto& [name, t] : records)
        if (name.rfind(kCfgPrefix, 0) == 0) ++config_count;
    if (matched + config_count != records.size())
        throw FormatError("model file: unexpected extra records");
    model->set_model_id(static_cast<uint8_t>(fnv1a64(bytes) & 0xFF));
    return model;
}

}  // namespace qres
