#include "qres/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace qres {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int to_int(const std::string& key, const std::string& v) {
    try {
        return std::stoi(v);
    } catch (...) {
        throw FormatError("config: bad integer for " + key + ": " + v);
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (...) {
        throw FormatError("config: bad number for " + key + ": " + v);
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw FormatError("config: bad boolean for " + key + ": " + v);
}

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("config: expected key = value: " + line);
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw FormatError("config: empty key");
        kv[key] = value;
    }
    return kv;
}

std::vector<int> parse_int_list(const std::string& value) {
    std::vector<int> out;
    std::istringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) throw FormatError("config: empty list item");
        out.push_back(to_int("list", item));
    }
    return out;
}

// ---- ModelConfig -------------------------------------------------------------------

int ModelConfig::num_blocks() const {
    int n = 0;
    for (const auto& s : stages) n += s.latent_blocks;
    return n;
}

int ModelConfig::max_downsample() const {
    int m = 1;
    for (const auto& s : stages) m = std::max(m, s.scale);
    return m;
}

void ModelConfig::validate() const {
    if (stages.empty()) throw FormatError("model config: no stages");
    int prev_scale = 0;
    for (size_t i = 0; i < stages.size(); ++i) {
        const StageConfig& s = stages[i];
        if (s.scale < 2) throw FormatError("model config: stage scale must be >= 2");
        if (s.width < 1) throw FormatError("model config: stage width must be >= 1");
        if (s.latent_blocks < 0 || s.latent_channels < 0 || s.depth < 0)
            throw FormatError("model config: negative stage field");
        if (i > 0) {
            if (s.scale >= prev_scale)
                throw FormatError("model config: scales must decrease coarse to fine");
            int ratio = prev_scale / s.scale;
            if (prev_scale % s.scale != 0 || (ratio != 2 && ratio != 4))
                throw FormatError("model config: adjacent stage scale ratio must be 2 or 4");
        }
        prev_scale = s.scale;
    }
    int finest = stages.back().scale;
    if (finest != 2 && finest != 4)
        throw FormatError("model config: finest stage scale must be 2 or 4");
    if (dw_kernel < 1 || dw_kernel % 2 == 0)
        throw FormatError("model config: dw_kernel must be odd and positive");
    if (num_blocks() < 1) throw FormatError("model config: needs at least one latent block");
    if (num_blocks() > 254) throw FormatError("model config: too many latent blocks");
    if (!(lambda > 0.0)) throw FormatError("model config: lambda must be positive");
}

std::string ModelConfig::serialize() const {
    std::vector<int> scales, widths, blocks, latents, depths;
    for (const auto& s : stages) {
        scales.push_back(s.scale);
        widths.push_back(s.width);
        blocks.push_back(s.latent_blocks);
        latents.push_back(s.latent_channels);
        depths.push_back(s.depth);
    }
    std::ostringstream out;
    out << "# qres model configuration (stages listed coarse to fine)\n";
    out << "stage_scales = " << join_ints(scales) << "\n";
    out << "stage_widths = " << join_ints(widths) << "\n";
    out << "stage_latent_blocks = " << join_ints(blocks) << "\n";
    out << "stage_latent_channels = " << join_ints(latents) << "\n";
    out << "stage_depths = " << join_ints(depths) << "\n";
    out << "dw_kernel = " << dw_kernel << "\n";
    out << "lossless = " << (lossless ? 1 : 0) << "\n";
    out << "lambda = " << lambda << "\n";
    return out.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
    auto kv = parse_key_values(text);
    auto need = [&](const char* key) -> std::string {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(std::string("model config: missing ") + key);
        return it->second;
    };
    std::vector<int> scales = parse_int_list(need("stage_scales"));
    std::vector<int> widths = parse_int_list(need("stage_widths"));
    std::vector<int> blocks = parse_int_list(need("stage_latent_blocks"));
    std::vector<int> latents = parse_int_list(need("stage_latent_channels"));
    std::vector<int> depths = parse_int_list(need("stage_depths"));
    if (scales.size() != widths.size() || scales.size() != blocks.size() ||
        scales.size() != latents.size() || scales.size() != depths.size())
        throw FormatError("model config: stage lists must have equal length");
    ModelConfig cfg;
    for (size_t i = 0; i < scales.size(); ++i)
        cfg.stages.push_back({scales[i], widths[i], blocks[i], latents[i], depths[i]});
    if (kv.count("dw_kernel")) cfg.dw_kernel = to_int("dw_kernel", kv["dw_kernel"]);
    if (kv.count("lossless")) cfg.lossless = to_bool("lossless", kv["lossless"]);
    if (kv.count("lambda")) cfg.lambda = to_double("lambda", kv["lambda"]);
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::load(const std::string& path) { return parse(read_text_file(path)); }

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig cfg;
    if (name == "tiny") {
        cfg.stages = {{4, 16, 1, 2, 1}, {2, 16, 1, 2, 1}};
    } else if (name == "small") {
        cfg.stages = {{16, 48, 1, 8, 1}, {8, 48, 1, 8, 1}, {4, 32, 1, 4, 1}, {2, 32, 1, 4, 1}};
    } else if (name == "large") {
        cfg.stages = {{64, 96, 1, 16, 1},
                      {32, 96, 1, 16, 1},
                      {16, 64, 2, 8, 1},
                      {8, 48, 4, 8, 1},
                      {4, 32, 4, 4, 1}};
    } else {
        throw FormatError("unknown model preset: " + name);
    }
    cfg.validate();
    return cfg;
}

// ---- TrainConfig -------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(lambda > 0.0)) throw FormatError("train config: lambda must be positive");
    if (!(lr > 0.0)) throw FormatError("train config: lr must be positive");
    if (!(grad_clip > 0.0)) throw FormatError("train config: grad_clip must be positive");
    if (!(ema_decay > 0.0 && ema_decay < 1.0))
        throw FormatError("train config: ema_decay must be in (0, 1)");
    if (batch_size < 1 || steps < 1 || crop_size < 1 || data_size < 1 || data_count < 1 ||
        eval_count < 0 || log_every < 1)
        throw FormatError("train config: bad count field");
    if (data_kind != "smooth" && data_kind != "gradients" && data_kind != "blobs" &&
        data_kind != "mixed")
        throw FormatError("train config: unknown data_kind " + data_kind);
}

std::string TrainConfig::serialize() const {
    std::ostringstream out;
    out << "# qres training configuration\n";
    out << "lambda = " << lambda << "\n";
    out << "lr = " << lr << "\n";
    out << "beta1 = " << beta1 << "\n";
    out << "beta2 = " << beta2 << "\n";
    out << "adam_eps = " << adam_eps << "\n";
    out << "grad_clip = " << grad_clip << "\n";
    out << "ema_decay = " << ema_decay << "\n";
    out << "batch_size = " << batch_size << "\n";
    out << "steps = " << steps << "\n";
    out << "crop_size = " << crop_size << "\n";
    out << "crop = " << (crop ? 1 : 0) << "\n";
    out << "hflip = " << (hflip ? 1 : 0) << "\n";
    out << "distortion = " << (distortion == Distortion::Mse ? "mse" : "msssim") << "\n";
    out << "seed = " << seed << "\n";
    out << "data_kind = " << data_kind << "\n";
    out << "data_size = " << data_size << "\n";
    out << "data_count = " << data_count << "\n";
    out << "eval_count = " << eval_count << "\n";
    out << "log_every = " << log_every << "\n";
    out << "lossless = " << (lossless ? 1 : 0) << "\n";
    if (!init_from.empty()) out << "init_from = " << init_from << "\n";
    return out.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
    auto kv = parse_key_values(text);
    TrainConfig cfg;
    for (const auto& [key, value] : kv) {
        if (key == "lambda") cfg.lambda = to_double(key, value);
        else if (key == "lr") cfg.lr = to_double(key, value);
        else if (key == "beta1") cfg.beta1 = to_double(key, value);
        else if (key == "beta2") cfg.beta2 = to_double(key, value);
        else if (key == "adam_eps") cfg.adam_eps = to_double(key, value);
        else if (key == "grad_clip") cfg.grad_clip = to_double(key, value);
        else if (key == "ema_decay") cfg.ema_decay = to_double(key, value);
        else if (key == "batch_size") cfg.batch_size = to_int(key, value);
        else if (key == "steps") cfg.steps = to_int(key, value);
        else if (key == "crop_size") cfg.crop_size = to_int(key, value);
        else if (key == "crop") cfg.crop = to_bool(key, value);
        else if (key == "hflip") cfg.hflip = to_bool(key, value);
        else if (key == "seed") cfg.seed = static_cast<uint64_t>(std::stoull(value));
        else if (key == "data_kind") cfg.data_kind = value;
        else if (key == "data_size") cfg.data_size = to_int(key, value);
        else if (key == "data_count") cfg.data_count = to_int(key, value);
        else if (key == "eval_count") cfg.eval_count = to_int(key, value);
        else if (key == "log_every") cfg.log_every = to_int(key, value);
        else if (key == "lossless") cfg.lossless = to_bool(key, value);
        else if (key == "init_from") cfg.init_from = value;
        else if (key == "distortion") {
            if (value == "mse") cfg.distortion = Distortion::Mse;
            else if (value == "msssim") cfg.distortion = Distortion::MsSsim;
            else throw FormatError("train config: unknown distortion " + value);
        } else {
            throw FormatError("train config: unknown key " + key);
        }
    }
    cfg.validate();
    return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) { return parse(read_text_file(path)); }

}  // namespace qres
