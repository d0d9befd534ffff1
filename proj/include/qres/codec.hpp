#pragma once

#include <cstdint>
#include <vector>

#include "qres/container.hpp"
#include "qres/image.hpp"
#include "qres/model.hpp"

namespace qres {

// Progressive decode request: decode the first k streams, sample the rest
// at temperature t.
struct ProgressiveSpec {
    int k = 0;
    double t = 0.0;
};

struct CompressResult {
    CodedImage coded;
    std::vector<uint8_t> bytes;  // serialized container
    ImageU8 recon;               // encoder-side reconstruction
    double bpp_actual = 0.0;     // container bits / pre-padding pixels
    double bpp_estimated = 0.0;  // ideal code length / pre-padding pixels
    std::vector<double> est_bits_per_block;
};

CompressResult compress(const ImageU8& image, const Model& model);
ImageU8 decompress(const CodedImage& coded, const Model& model);
ImageU8 decompress_bytes(std::span<const uint8_t> bytes, const Model& model);

ImageU8 progressive_decode(const CodedImage& coded, const ProgressiveSpec& spec,
                           const Model& model, Rng& rng);

CompressResult compress_lossless(const ImageU8& image, const Model& model);
ImageU8 decompress_lossless(const CodedImage& coded, const Model& model);

// Blockwise linear interpolation of the two images' posterior means along a
// single shared top-down trajectory; alpha = 0 reproduces the noise-free
// reconstruction of image a.
ImageU8 interpolate_latents(const ImageU8& a, const ImageU8& b, double alpha, const Model& model);

ImageU8 sample_unconditional(const Model& model, int width, int height, double t, Rng& rng);

// Compresses images in parallel across a worker pool; outputs are ordered
// by input index so results are independent of the worker count.
std::vector<CompressResult> compress_batch(const std::vector<ImageU8>& images, const Model& model,
                                           int jobs, bool lossless = false);

// Worker count from the environment (QRES_THREADS), clamped to [1, hw].
int effective_jobs(int requested);

}  // namespace qres
