#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qres/codec.hpp"
#include "qres/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace qres;

namespace {

constexpr const char* kJsonSchema = "qres-cli/1";

// Exit codes: 0 success, 1 usage/contract error, 2 format or decode error,
// 3 training divergence.
enum ExitCode { kOk = 0, kUsage = 1, kFormat = 2, kDiverged = 3 };

struct Output {
    bool as_json = false;
    json summary;

    void set(const std::string& key, json value) { summary[key] = std::move(value); }
    void line(const std::string& text) {
        if (!as_json) std::cout << text << "\n";
    }
    void flush(const std::string& command) {
        if (as_json) {
            summary["schema"] = kJsonSchema;
            summary["command"] = command;
            std::cout << summary.dump(2) << "\n";
        }
    }
};

std::vector<std::string> list_ppm_files(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".ppm")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ContractError("no .ppm files in " + dir);
    return files;
}

json rd_to_json(const RDPoint& p) {
    return json{{"lambda", p.lambda},
                {"bpp_estimated", p.bpp_estimated},
                {"bpp_actual", p.bpp_actual},
                {"psnr", p.psnr},
                {"ms_ssim", p.ms_ssim}};
}

int run_compress(const std::string& model_path, const std::string& in, const std::string& out,
                 const std::string& in_dir, const std::string& out_dir, int jobs, bool lossless,
                 Output& output) {
    auto model = load_model(model_path);
    if (!in_dir.empty()) {
        if (out_dir.empty()) throw ContractError("--out-dir required with --dir");
        fs::create_directories(out_dir);
        std::vector<std::string> files = list_ppm_files(in_dir);
        std::vector<ImageU8> images;
        images.reserve(files.size());
        for (const auto& f : files) images.push_back(read_ppm(f));
        std::vector<CompressResult> results = compress_batch(images, *model, jobs, lossless);
        json items = json::array();
        for (size_t i = 0; i < files.size(); ++i) {
            std::string name = fs::path(files[i]).stem().string() + ".qres";
            std::string dst = (fs::path(out_dir) / name).string();
            write_file_atomic(dst, results[i].bytes);
            items.push_back({{"in", files[i]},
                             {"out", dst},
                             {"bpp_actual", results[i].bpp_actual},
                             {"bpp_estimated", results[i].bpp_estimated}});
            output.line(files[i] + " -> " + dst + "  bpp=" +
                        std::to_string(results[i].bpp_actual));
        }
        output.set("items", items);
        return kOk;
    }
    if (in.empty() || out.empty()) throw ContractError("--in and --out required");
    ImageU8 image = read_ppm(in);
    CompressResult res =
        lossless ? compress_lossless(image, *model) : compress(image, *model);
    write_file_atomic(out, res.bytes);
    output.set("in", in);
    output.set("out", out);
    output.set("bytes", res.bytes.size());
    output.set("bpp_actual", res.bpp_actual);
    output.set("bpp_estimated", res.bpp_estimated);
    output.set("psnr_encoder_side", lossless ? 99.0 : psnr(image, res.recon));
    output.line("wrote " + out + ": " + std::to_string(res.bytes.size()) +
                " bytes, bpp=" + std::to_string(res.bpp_actual));
    return kOk;
}

int run_decompress(const std::string& model_path, const std::string& in, const std::string& out,
                   bool lossless, Output& output) {
    auto model = load_model(model_path);
    CodedImage coded = container_read(read_file(in));
    ImageU8 image =
        lossless ? decompress_lossless(coded, *model) : decompress(coded, *model);
    write_ppm(out, image);
    output.set("in", in);
    output.set("out", out);
    output.set("width", image.width);
    output.set("height", image.height);
    output.line("wrote " + out + " (" + std::to_string(image.width) + "x" +
                std::to_string(image.height) + ")");
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qres: quantized hierarchical VAE image codec"};
    app.require_subcommand(1);
    bool as_json = false;
    app.add_flag("--json", as_json, "emit a machine-readable JSON summary on stdout");

    // train
    auto* cmd_train = app.add_subcommand("train", "train a model on synthetic data");
    std::string tr_model_cfg, tr_train_cfg, tr_preset = "small", tr_out = "model";
    double tr_lambda = -1.0;
    int tr_steps = -1;
    int64_t tr_seed = -1;
    cmd_train->add_option("--model-config", tr_model_cfg, "model config file (key=value)");
    cmd_train->add_option("--preset", tr_preset, "model preset: tiny|small|large");
    cmd_train->add_option("--train-config", tr_train_cfg, "training config file (key=value)");
    cmd_train->add_option("--out", tr_out, "output checkpoint prefix");
    cmd_train->add_option("--lambda", tr_lambda, "override lambda");
    cmd_train->add_option("--steps", tr_steps, "override step count");
    cmd_train->add_option("--seed", tr_seed, "override seed");

    // compress / lossless-compress
    std::string c_model, c_in, c_out, c_dir, c_out_dir;
    int c_jobs = 1;
    auto add_compress_opts = [&](CLI::App* cmd) {
        cmd->add_option("--model", c_model, "model checkpoint (.qrwt)")->required();
        cmd->add_option("--in", c_in, "input image (.ppm)");
        cmd->add_option("--out", c_out, "output file (.qres)");
        cmd->add_option("--dir", c_dir, "compress every .ppm in this directory");
        cmd->add_option("--out-dir", c_out_dir, "output directory for --dir");
        cmd->add_option("--jobs", c_jobs, "parallel workers for --dir");
    };
    auto* cmd_compress = app.add_subcommand("compress", "compress an image");
    add_compress_opts(cmd_compress);
    auto* cmd_ll_compress =
        app.add_subcommand("lossless-compress", "compress an image losslessly");
    add_compress_opts(cmd_ll_compress);

    // decompress / lossless-decompress
    std::string d_model, d_in, d_out;
    auto add_decompress_opts = [&](CLI::App* cmd) {
        cmd->add_option("--model", d_model, "model checkpoint (.qrwt)")->required();
        cmd->add_option("--in", d_in, "input file (.qres)")->required();
        cmd->add_option("--out", d_out, "output image (.ppm)")->required();
    };
    auto* cmd_decompress = app.add_subcommand("decompress", "decompress an image");
    add_decompress_opts(cmd_decompress);
    auto* cmd_ll_decompress =
        app.add_subcommand("lossless-decompress", "decompress a lossless image");
    add_decompress_opts(cmd_ll_decompress);

    // progressive
    auto* cmd_prog = app.add_subcommand("progressive", "progressive decode");
    std::string p_model, p_in, p_out;
    int p_k = 0;
    double p_t = 0.0;
    uint64_t p_seed = 0;
    cmd_prog->add_option("--model", p_model)->required();
    cmd_prog->add_option("--in", p_in)->required();
    cmd_prog->add_option("--out", p_out)->required();
    cmd_prog->add_option("--k", p_k, "streams to decode")->required();
    cmd_prog->add_option("--t", p_t, "sampling temperature for the rest");
    cmd_prog->add_option("--seed", p_seed, "rng seed for t > 0");

    // sample
    auto* cmd_sample = app.add_subcommand("sample", "unconditional sampling");
    std::string s_model, s_out;
    int s_width = 0, s_height = 0;
    double s_t = 0.0;
    uint64_t s_seed = 0;
    cmd_sample->add_option("--model", s_model)->required();
    cmd_sample->add_option("--out", s_out)->required();
    cmd_sample->add_option("--width", s_width)->required();
    cmd_sample->add_option("--height", s_height)->required();
    cmd_sample->add_option("--t", s_t, "temperature");
    cmd_sample->add_option("--seed", s_seed);

    // eval
    auto* cmd_eval = app.add_subcommand("eval", "compress/decompress a directory and report R-D");
    std::string e_model, e_dir, e_csv;
    int e_jobs = 1;
    cmd_eval->add_option("--model", e_model)->required();
    cmd_eval->add_option("--dir", e_dir, "directory of .ppm images")->required();
    cmd_eval->add_option("--csv", e_csv, "output CSV path")->required();
    cmd_eval->add_option("--jobs", e_jobs, "parallel workers");

    // rate-dist
    auto* cmd_rd = app.add_subcommand("rate-dist", "per-block bit-rate distribution");
    std::string r_model, r_dir, r_csv;
    cmd_rd->add_option("--model", r_model)->required();
    cmd_rd->add_option("--dir", r_dir, "directory of .ppm images")->required();
    cmd_rd->add_option("--csv", r_csv, "output CSV path")->required();

    // bdrate
    auto* cmd_bd = app.add_subcommand("bdrate", "BD-rate between two R-D curves");
    std::string b_a, b_b;
    cmd_bd->add_option("--curve-a", b_a, "anchor curve CSV")->required();
    cmd_bd->add_option("--curve-b", b_b, "test curve CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    Output output;
    output.as_json = as_json;
    std::string command = app.get_subcommands().front()->get_name();

    try {
        int rc = kOk;
        if (cmd_train->parsed()) {
            ModelConfig mc = tr_model_cfg.empty() ? ModelConfig::preset(tr_preset)
                                                  : ModelConfig::load(tr_model_cfg);
            TrainConfig tc =
                tr_train_cfg.empty() ? TrainConfig{} : TrainConfig::load(tr_train_cfg);
            if (tr_lambda > 0.0) tc.lambda = tr_lambda;
            if (tr_steps > 0) tc.steps = tr_steps;
            if (tr_seed >= 0) tc.seed = static_cast<uint64_t>(tr_seed);
            TrainResult res = train(mc, tc, tr_out);
            output.set("checkpoint_ema", res.checkpoint_ema);
            output.set("checkpoint_raw", res.checkpoint_raw);
            output.set("initial_loss", res.initial_loss);
            output.set("final_loss", res.final_loss);
            output.set("steps", res.steps_run);
            if (!res.eval_points.empty()) output.set("eval_mean", rd_to_json(res.eval_mean));
            output.line("trained " + std::to_string(res.steps_run) + " steps: loss " +
                        std::to_string(res.initial_loss) + " -> " +
                        std::to_string(res.final_loss));
            output.line("checkpoints: " + res.checkpoint_ema + " (EMA), " + res.checkpoint_raw);
        } else if (cmd_compress->parsed() || cmd_ll_compress->parsed()) {
            rc = run_compress(c_model, c_in, c_out, c_dir, c_out_dir, c_jobs,
                              cmd_ll_compress->parsed(), output);
        } else if (cmd_decompress->parsed() || cmd_ll_decompress->parsed()) {
            rc = run_decompress(d_model, d_in, d_out, cmd_ll_decompress->parsed(), output);
        } else if (cmd_prog->parsed()) {
            auto model = load_model(p_model);
            CodedImage coded = container_read(read_file(p_in));
            Rng rng(p_seed);
            ImageU8 image = progressive_decode(coded, {p_k, p_t}, *model, rng);
            write_ppm(p_out, image);
            output.set("out", p_out);
            output.set("k", p_k);
            output.set("t", p_t);
            output.line("wrote " + p_out);
        } else if (cmd_sample->parsed()) {
            auto model = load_model(s_model);
            Rng rng(s_seed);
            ImageU8 image = sample_unconditional(*model, s_width, s_height, s_t, rng);
            write_ppm(s_out, image);
            output.set("out", s_out);
            output.line("wrote " + s_out);
        } else if (cmd_eval->parsed()) {
            auto model = load_model(e_model);
            std::vector<std::string> files = list_ppm_files(e_dir);
            std::vector<ImageU8> images;
            images.reserve(files.size());
            for (const auto& f : files) images.push_back(read_ppm(f));
            std::vector<RDPoint> points = evaluate_rd(*model, images, e_jobs);
            RDPoint m = mean_rd(points);
            write_rd_csv(e_csv, points, m);
            output.set("csv", e_csv);
            output.set("images", files.size());
            output.set("mean", rd_to_json(m));
            output.line("evaluated " + std::to_string(files.size()) + " images; mean bpp " +
                        std::to_string(m.bpp_actual) + ", mean psnr " + std::to_string(m.psnr));
        } else if (cmd_rd->parsed()) {
            auto model = load_model(r_model);
            std::vector<std::string> files = list_ppm_files(r_dir);
            std::vector<ImageU8> images;
            images.reserve(files.size());
            for (const auto& f : files) images.push_back(read_ppm(f));
            RateDistribution dist = rate_distribution(*model, images);
            std::string csv = "block_index,bpp,collapsed\n";
            json blocks = json::array();
            for (size_t b = 0; b < dist.bpp_per_block.size(); ++b) {
                csv += std::to_string(b + 1) + "," + std::to_string(dist.bpp_per_block[b]) +
                       "," + (dist.collapsed[b] ? "1" : "0") + "\n";
                blocks.push_back({{"block", b + 1},
                                  {"bpp", dist.bpp_per_block[b]},
                                  {"collapsed", static_cast<bool>(dist.collapsed[b])}});
                output.line("Z_" + std::to_string(b + 1) + ": " +
                            std::to_string(dist.bpp_per_block[b]) + " bpp" +
                            (dist.collapsed[b] ? " (collapsed)" : ""));
            }
            std::vector<uint8_t> bytes(csv.begin(), csv.end());
            write_file_atomic(r_csv, bytes);
            output.set("csv", r_csv);
            output.set("blocks", blocks);
            output.set("total_payload_bpp", dist.total_payload_bpp);
        } else if (cmd_bd->parsed()) {
            double rate = bd_rate(read_curve_csv(b_a), read_curve_csv(b_b));
            output.set("bd_rate_percent", rate);
            output.line("BD-rate: " + std::to_string(rate) + "%");
        }
        output.flush(command);
        return rc;
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDiverged;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFormat;
    } catch (const DecodeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFormat;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
}
