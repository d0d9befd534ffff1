#include "qres/codec.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "qres/prob.hpp"
#include "qres/rans.hpp"

namespace qres {

namespace {

Tensor padded_input(const ImageU8& image, const Model& model) {
    return pad_replicate(image_to_tensor(image), model.max_downsample());
}

ImageU8 export_image(const Tensor& xhat_padded, uint32_t width, uint32_t height) {
    return tensor_to_image(crop_spatial(xhat_padded, height, width));
}

void check_model_match(const CodedImage& coded, const Model& model) {
    if (coded.model_id != model.model_id())
        throw FormatError("coded image was produced by a different model");
    if (coded.streams.size() !=
        static_cast<size_t>(model.num_blocks()) + (coded.mode == kModeLossless ? 1 : 0))
        throw FormatError("coded image stream count does not match the model");
}

double container_bpp(const CodedImage& coded) {
    return static_cast<double>(coded.total_bytes()) * 8.0 /
           (static_cast<double>(coded.width) * static_cast<double>(coded.height));
}

// Scan order within the pixel stream: channel-major, then raster, restricted
// to the pre-padding region.
template <typename Fn>
void for_each_pixel_symbol(int64_t h_pad, int64_t w_pad, uint32_t width, uint32_t height,
                           Fn&& fn) {
    int64_t w = static_cast<int64_t>(width), h = static_cast<int64_t>(height);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) fn((c * h_pad + y) * w_pad + x, c, y, x);
}

std::vector<uint8_t> encode_pixel_stream(const ImageU8& image, const Tensor& mean,
                                         const Tensor& sigma) {
    int64_t h_pad = mean.dim(2), w_pad = mean.dim(3);
    const double* pm = mean.data();
    const double* ps = sigma.data();
    struct Rec {
        int index;
        QuantizedPmf pmf;
    };
    std::vector<Rec> recs;
    recs.reserve(image.rgb.size());
    for_each_pixel_symbol(h_pad, w_pad, static_cast<uint32_t>(image.width),
                          static_cast<uint32_t>(image.height),
                          [&](int64_t grid, int64_t c, int64_t y, int64_t x) {
                              int v = image.rgb[static_cast<size_t>(
                                  3 * (y * image.width + x) + c)];
                              QuantizedPmf pmf = build_pixel_pmf(pm[grid], ps[grid]);
                              recs.push_back({v, std::move(pmf)});
                          });
    RansEncoder enc;
    for (auto it = recs.rbegin(); it != recs.rend(); ++it) enc.put_symbol(it->index, it->pmf);
    return enc.finish();
}

ImageU8 decode_pixel_stream(std::span<const uint8_t> stream, const Tensor& mean,
                            const Tensor& sigma, uint32_t width, uint32_t height) {
    int64_t h_pad = mean.dim(2), w_pad = mean.dim(3);
    const double* pm = mean.data();
    const double* ps = sigma.data();
    ImageU8 out;
    out.width = static_cast<int>(width);
    out.height = static_cast<int>(height);
    out.rgb.resize(static_cast<size_t>(3 * width * height));
    RansDecoder dec(stream);
    for_each_pixel_symbol(h_pad, w_pad, width, height,
                          [&](int64_t grid, int64_t c, int64_t y, int64_t x) {
                              QuantizedPmf pmf = build_pixel_pmf(pm[grid], ps[grid]);
                              int v = dec.get_symbol(pmf);
                              out.rgb[static_cast<size_t>(3 * (y * width + x) + c)] =
                                  static_cast<uint8_t>(v);
                          });
    dec.expect_finished(stream.size());
    return out;
}

CompressResult compress_impl(const ImageU8& image, const Model& model, bool lossless) {
    if (image.width < 1 || image.height < 1) throw ContractError("compress: empty image");
    if (lossless && !model.config().lossless)
        throw ContractError("compress: model has no lossless head");
    NoGradGuard guard;
    Tensor x = padded_input(image, model);
    Model::LatentEncode enc = model.compress_latents(x);

    CompressResult res;
    res.coded.mode = lossless ? kModeLossless : kModeLossy;
    res.coded.width = static_cast<uint32_t>(image.width);
    res.coded.height = static_cast<uint32_t>(image.height);
    res.coded.model_id = model.model_id();
    res.coded.lambda_code = 0;  // index into the checkpoint's declared lambda list
    res.coded.streams = std::move(enc.streams);
    res.est_bits_per_block = enc.est_bits_per_block;

    double est_bits = enc.est_bits;
    if (lossless) {
        Model::PixelLikelihood pl = model.pixel_likelihood(enc.final_state);
        res.coded.streams.push_back(encode_pixel_stream(image, pl.mean, pl.sigma));
        res.recon = image;
    } else {
        res.recon = export_image(model.reconstruct(enc.final_state), res.coded.width,
                                 res.coded.height);
    }
    res.bytes = container_write(res.coded);
    double pixels = static_cast<double>(image.width) * static_cast<double>(image.height);
    res.bpp_actual = static_cast<double>(res.bytes.size()) * 8.0 / pixels;
    res.bpp_estimated = est_bits / pixels;
    return res;
}

}  // namespace

CompressResult compress(const ImageU8& image, const Model& model) {
    return compress_impl(image, model, false);
}

CompressResult compress_lossless(const ImageU8& image, const Model& model) {
    return compress_impl(image, model, true);
}

ImageU8 decompress(const CodedImage& coded, const Model& model) {
    if (coded.mode != kModeLossy) throw FormatError("decompress: container is not lossy mode");
    check_model_match(coded, model);
    NoGradGuard guard;
    int md = model.max_downsample();
    int64_t h_pad = (coded.height + md - 1) / md * md;
    int64_t w_pad = (coded.width + md - 1) / md * md;
    Tensor state = model.decode_latents(coded.streams, model.num_blocks(), 0.0, nullptr, h_pad,
                                        w_pad);
    return export_image(model.reconstruct(state), coded.width, coded.height);
}

ImageU8 decompress_bytes(std::span<const uint8_t> bytes, const Model& model) {
    CodedImage coded = container_read(bytes);
    if (coded.mode == kModeLossless) return decompress_lossless(coded, model);
    return decompress(coded, model);
}

ImageU8 progressive_decode(const CodedImage& coded, const ProgressiveSpec& spec,
                           const Model& model, Rng& rng) {
    if (coded.mode != kModeLossy)
        throw FormatError("progressive_decode: container is not lossy mode");
    check_model_match(coded, model);
    if (spec.k < 0 || spec.k > model.num_blocks())
        throw ContractError("progressive_decode: k out of range");
    if (!(spec.t >= 0.0 && spec.t <= 1.0))
        throw ContractError("progressive_decode: t out of range");
    NoGradGuard guard;
    int md = model.max_downsample();
    int64_t h_pad = (coded.height + md - 1) / md * md;
    int64_t w_pad = (coded.width + md - 1) / md * md;
    Tensor state = model.decode_latents(coded.streams, spec.k, spec.t, &rng, h_pad, w_pad);
    return export_image(model.reconstruct(state), coded.width, coded.height);
}

ImageU8 decompress_lossless(const CodedImage& coded, const Model& model) {
    if (coded.mode != kModeLossless)
        throw FormatError("decompress_lossless: container is not lossless mode");
    check_model_match(coded, model);
    if (!model.config().lossless)
        throw FormatError("decompress_lossless: model has no lossless head");
    NoGradGuard guard;
    int md = model.max_downsample();
    int64_t h_pad = (coded.height + md - 1) / md * md;
    int64_t w_pad = (coded.width + md - 1) / md * md;
    size_t n_latent = coded.streams.size() - 1;
    std::vector<std::vector<uint8_t>> latent_streams(coded.streams.begin(),
                                                     coded.streams.begin() + n_latent);
    Tensor state =
        model.decode_latents(latent_streams, model.num_blocks(), 0.0, nullptr, h_pad, w_pad);
    Model::PixelLikelihood pl = model.pixel_likelihood(state);
    return decode_pixel_stream(coded.streams.back(), pl.mean, pl.sigma, coded.width,
                               coded.height);
}

ImageU8 interpolate_latents(const ImageU8& a, const ImageU8& b, double alpha,
                            const Model& model) {
    if (a.width != b.width || a.height != b.height)
        throw ContractError("interpolate_latents: image sizes differ");
    Tensor xa = padded_input(a, model);
    Tensor xb = padded_input(b, model);
    Tensor state = model.interpolate_trajectory(xa, xb, alpha);
    NoGradGuard guard;
    return export_image(model.reconstruct(state), static_cast<uint32_t>(a.width),
                        static_cast<uint32_t>(a.height));
}

ImageU8 sample_unconditional(const Model& model, int width, int height, double t, Rng& rng) {
    if (width < 1 || height < 1) throw ContractError("sample_unconditional: bad size");
    NoGradGuard guard;
    int md = model.max_downsample();
    int64_t h_pad = (height + md - 1) / md * md;
    int64_t w_pad = (width + md - 1) / md * md;
    Tensor state = model.decode_latents(std::span<const std::vector<uint8_t>>{}, 0, t, &rng,
                                        h_pad, w_pad);
    return export_image(model.reconstruct(state), static_cast<uint32_t>(width),
                        static_cast<uint32_t>(height));
}

int effective_jobs(int requested) {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    int jobs = requested < 1 ? 1 : requested;
    if (const char* env = std::getenv("QRES_THREADS")) {
        int cap = std::atoi(env);
        if (cap >= 1) jobs = std::min(jobs, cap);
    }
    return std::min(jobs, hw);
}

std::vector<CompressResult> compress_batch(const std::vector<ImageU8>& images,
                                           const Model& model, int jobs, bool lossless) {
    std::vector<CompressResult> results(images.size());
    int workers = std::min<int>(effective_jobs(jobs), static_cast<int>(images.size()));
    if (workers < 1) workers = 1;
    std::atomic<size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&]() {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= images.size()) return;
            try {
                results[i] = compress_impl(images[i], model, lossless);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
    return results;
}

}  // namespace qres
