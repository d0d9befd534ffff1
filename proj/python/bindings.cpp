#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "qres/codec.hpp"
#include "qres/train.hpp"

namespace py = pybind11;
using namespace qres;

namespace {

ImageU8 image_from_array(const py::array_t<uint8_t>& array) {
    py::buffer_info info = array.request();
    if (info.ndim != 3 || info.shape[2] != 3)
        throw ContractError("expected an (H, W, 3) uint8 array");
    ImageU8 img;
    img.height = static_cast<int>(info.shape[0]);
    img.width = static_cast<int>(info.shape[1]);
    img.rgb.resize(static_cast<size_t>(3 * img.width * img.height));
    auto view = array.unchecked<3>();
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                img.rgb[static_cast<size_t>(3 * (y * img.width + x) + c)] = view(y, x, c);
    return img;
}

py::array_t<uint8_t> image_to_array(const ImageU8& img) {
    py::array_t<uint8_t> out({img.height, img.width, 3});
    auto view = out.mutable_unchecked<3>();
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                view(y, x, c) = img.rgb[static_cast<size_t>(3 * (y * img.width + x) + c)];
    return out;
}

py::bytes to_bytes(const std::vector<uint8_t>& v) {
    return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

std::vector<uint8_t> from_bytes(const py::bytes& b) {
    std::string s = b;
    return std::vector<uint8_t>(s.begin(), s.end());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Quantized hierarchical VAE image codec";

    py::register_exception<ShapeError>(m, "ShapeError");
    py::register_exception<ContractError>(m, "ContractError");
    py::register_exception<FormatError>(m, "FormatError");
    py::register_exception<DecodeError>(m, "DecodeError");
    py::register_exception<TrainingDiverged>(m, "TrainingDiverged");

    py::class_<Model>(m, "Model")
        .def_property_readonly("num_blocks", &Model::num_blocks)
        .def_property_readonly("max_downsample", &Model::max_downsample)
        .def_property_readonly("model_id", &Model::model_id)
        .def_property_readonly("lossless", [](const Model& m) { return m.config().lossless; })
        .def_property_readonly("lam", [](const Model& m) { return m.config().lambda; });

    m.def("load_model", [](const std::string& path) { return load_model(path); },
          py::arg("path"));

    m.def(
        "compress",
        [](const Model& model, const py::array_t<uint8_t>& image) {
            CompressResult res = compress(image_from_array(image), model);
            py::dict stats;
            stats["bpp_actual"] = res.bpp_actual;
            stats["bpp_estimated"] = res.bpp_estimated;
            return py::make_tuple(to_bytes(res.bytes), stats);
        },
        py::arg("model"), py::arg("image"),
        "Compress an (H, W, 3) uint8 array; returns (container_bytes, stats).");

    m.def(
        "decompress",
        [](const Model& model, const py::bytes& data) {
            return image_to_array(decompress_bytes(from_bytes(data), model));
        },
        py::arg("model"), py::arg("data"));

    m.def(
        "progressive_decode",
        [](const Model& model, const py::bytes& data, int k, double t, uint64_t seed) {
            CodedImage coded = container_read(from_bytes(data));
            Rng rng(seed);
            return image_to_array(progressive_decode(coded, {k, t}, model, rng));
        },
        py::arg("model"), py::arg("data"), py::arg("k"), py::arg("t") = 0.0,
        py::arg("seed") = 0);

    m.def(
        "lossless_compress",
        [](const Model& model, const py::array_t<uint8_t>& image) {
            CompressResult res = compress_lossless(image_from_array(image), model);
            py::dict stats;
            stats["bpp_actual"] = res.bpp_actual;
            stats["bpp_estimated"] = res.bpp_estimated;
            return py::make_tuple(to_bytes(res.bytes), stats);
        },
        py::arg("model"), py::arg("image"));

    m.def(
        "lossless_decompress",
        [](const Model& model, const py::bytes& data) {
            CodedImage coded = container_read(from_bytes(data));
            return image_to_array(decompress_lossless(coded, model));
        },
        py::arg("model"), py::arg("data"));

    m.def(
        "interpolate",
        [](const Model& model, const py::array_t<uint8_t>& a, const py::array_t<uint8_t>& b,
           double alpha) {
            return image_to_array(
                interpolate_latents(image_from_array(a), image_from_array(b), alpha, model));
        },
        py::arg("model"), py::arg("a"), py::arg("b"), py::arg("alpha"));

    m.def(
        "sample",
        [](const Model& model, int width, int height, double t, uint64_t seed) {
            Rng rng(seed);
            return image_to_array(sample_unconditional(model, width, height, t, rng));
        },
        py::arg("model"), py::arg("width"), py::arg("height"), py::arg("t") = 0.0,
        py::arg("seed") = 0);

    m.def(
        "psnr",
        [](const py::array_t<uint8_t>& a, const py::array_t<uint8_t>& b) {
            return psnr(image_from_array(a), image_from_array(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "ms_ssim",
        [](const py::array_t<uint8_t>& a, const py::array_t<uint8_t>& b) {
            return ms_ssim(image_from_array(a), image_from_array(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "bd_rate",
        [](const std::vector<std::pair<double, double>>& curve_a,
           const std::vector<std::pair<double, double>>& curve_b) {
            auto to_points = [](const std::vector<std::pair<double, double>>& c) {
                std::vector<RDPoint> pts;
                for (auto [bpp, db] : c) pts.push_back({0.0, bpp, bpp, db, 0.0});
                return pts;
            };
            return bd_rate(to_points(curve_a), to_points(curve_b));
        },
        py::arg("curve_a"), py::arg("curve_b"),
        "BD-rate in percent between two [(bpp, psnr), ...] curves.");

    m.def(
        "make_synthetic",
        [](const std::string& kind, int size, int count, uint64_t seed) {
            std::vector<py::array_t<uint8_t>> out;
            for (const ImageU8& img : make_synthetic(kind, size, count, seed))
                out.push_back(image_to_array(img));
            return out;
        },
        py::arg("kind"), py::arg("size"), py::arg("count"), py::arg("seed") = 0);

    m.def(
        "train",
        [](const std::string& preset, const std::string& train_cfg_path,
           const std::string& out_prefix) {
            TrainConfig tc = train_cfg_path.empty() ? TrainConfig{}
                                                    : TrainConfig::load(train_cfg_path);
            TrainResult res = train(ModelConfig::preset(preset), tc, out_prefix);
            py::dict d;
            d["checkpoint_ema"] = res.checkpoint_ema;
            d["checkpoint_raw"] = res.checkpoint_raw;
            d["initial_loss"] = res.initial_loss;
            d["final_loss"] = res.final_loss;
            return d;
        },
        py::arg("preset"), py::arg("train_config") = std::string(),
        py::arg("out_prefix") = std::string("model"));
}
