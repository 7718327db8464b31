#include "fcad/config.hpp"

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fcad {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// strips an inline '#' comment that is not inside a quoted string
std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') quoted = !quoted;
        if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
        return s.substr(1, s.size() - 2);
    return s;
}

using RawConfig = std::map<std::string, std::map<std::string, std::string>>;

RawConfig parse_raw(const std::string& text) {
    RawConfig raw;
    std::string section = "run";
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": malformed section header: " + line);
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError("config line " + std::to_string(lineno) + ": empty section");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key = value, got: " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": empty key or value: " + line);
        raw[section][key] = value;
    }
    return raw;
}

long long to_int(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

uint64_t to_u64(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        const unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a non-negative integer, got '" +
                          v + "'");
    }
}

double to_double(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

std::array<float, 3> to_triple(const std::string& v, const std::string& key) {
    std::string body = trim(v);
    if (body.size() < 2 || body.front() != '[' || body.back() != ']')
        throw ConfigError("config: key '" + key + "' expects [a, b, c], got '" + v + "'");
    body = body.substr(1, body.size() - 2);
    std::array<float, 3> out{};
    std::stringstream ss(body);
    std::string field;
    int i = 0;
    while (std::getline(ss, field, ',')) {
        if (i >= 3) throw ConfigError("config: key '" + key + "' expects exactly 3 values");
        out[static_cast<size_t>(i++)] =
            static_cast<float>(to_double(trim(field), key));
    }
    if (i != 3) throw ConfigError("config: key '" + key + "' expects exactly 3 values");
    return out;
}

void bind_run(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "variant") c.variant = make_variant(parse_variant(unquote(value)));
    else if (key == "backbone") c.backbone_id = parse_backbone_id(unquote(value));
    else if (key == "iterations") c.iterations = static_cast<int>(to_int(value, key));
    else if (key == "batch_size") c.batch_size = static_cast<int>(to_int(value, key));
    else if (key == "lr_new") c.lr_new = to_double(value, key);
    else if (key == "lr_pretrained") c.lr_pretrained = to_double(value, key);
    else if (key == "weight_decay") c.weight_decay = to_double(value, key);
    else if (key == "beta1") c.betas.first = to_double(value, key);
    else if (key == "beta2") c.betas.second = to_double(value, key);
    else if (key == "bn_policy") c.bn_policy = parse_bn_policy(unquote(value));
    else if (key == "seed") c.seed = to_u64(value, key);
    else if (key == "eval_every") c.eval_every = static_cast<int>(to_int(value, key));
    else if (key == "smoothing_sigma") c.smoothing_sigma = to_double(value, key);
    else throw ConfigError("config: unknown key 'run." + key + "'");
}

void bind_dataset(DatasetSpec& d, const std::string& key, const std::string& value) {
    if (key == "layout") d.layout = parse_layout(unquote(value));
    else if (key == "root") d.root = unquote(value);
    else if (key == "category") d.category = unquote(value);
    else if (key == "image_size") d.image_size = static_cast<int>(to_int(value, key));
    else if (key == "center_crop") d.center_crop = static_cast<int>(to_int(value, key));
    else if (key == "mean") d.normalization.mean = to_triple(value, key);
    else if (key == "std") d.normalization.std = to_triple(value, key);
    else if (key == "score_reduction") d.score_reduction = parse_reduction(unquote(value));
    else if (key == "split_file") d.split_file = unquote(value);
    else throw ConfigError("config: unknown key 'dataset." + key + "'");
}

void bind_hard_mining(HardMiningConfig& h, const std::string& key, const std::string& value) {
    if (key == "alpha") h.alpha = to_double(value, key);
    else if (key == "alpha_start") h.alpha_start = to_double(value, key);
    else if (key == "alpha_end") h.alpha_end = to_double(value, key);
    else if (key == "warmup_fraction") h.warmup_fraction = to_double(value, key);
    else throw ConfigError("config: unknown key 'hard_mining." + key + "'");
}

void apply_setting(RunConfig& c, const std::string& section, const std::string& key,
                   const std::string& value) {
    if (section == "run") bind_run(c, key, value);
    else if (section == "dataset") bind_dataset(c.dataset, key, value);
    else if (section == "hard_mining") bind_hard_mining(c.hard_mining, key, value);
    else
        throw ConfigError("config: unknown section '[" + section +
                          "]' (expected run, dataset, or hard_mining)");
}

const std::map<std::string, std::vector<std::string>>& schema() {
    static const std::map<std::string, std::vector<std::string>> s = {
        {"run",
         {"variant", "backbone", "iterations", "batch_size", "lr_new", "lr_pretrained",
          "weight_decay", "beta1", "beta2", "bn_policy", "seed", "eval_every",
          "smoothing_sigma"}},
        {"dataset",
         {"layout", "root", "category", "image_size", "center_crop", "mean", "std",
          "score_reduction", "split_file"}},
        {"hard_mining", {"alpha", "alpha_start", "alpha_end", "warmup_fraction"}},
    };
    return s;
}

// section owning a bare key; unknown keys → ConfigError
std::string route_key(const std::string& key) {
    for (const auto& [section, keys] : schema())
        for (const auto& k : keys)
            if (k == key) return section;
    throw ConfigError("config: unknown key '" + key + "'");
}

std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig c;
    for (const auto& [section, kv] : parse_raw(text))
        for (const auto& [key, value] : kv) apply_setting(c, section, key, value);
    return c;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    RunConfig c;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw IoError("config: cannot open file: " + path);
        std::stringstream buf;
        buf << in.rdbuf();
        c = parse_run_config(buf.str());
    }
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("config: override must look like key=value, got '" + ov + "'");
        std::string key = trim(ov.substr(0, eq));
        const std::string value = trim(ov.substr(eq + 1));
        std::string section;
        const auto dot = key.find('.');
        if (dot != std::string::npos) {
            section = key.substr(0, dot);
            key = key.substr(dot + 1);
        } else {
            section = route_key(key);
        }
        apply_setting(c, section, key, value);
    }
    return c;
}

std::string run_config_to_toml(const RunConfig& c) {
    std::ostringstream out;
    out << "[run]\n";
    out << "variant = \"" << variant_name(c.variant.name) << "\"\n";
    out << "backbone = \"" << backbone_name(c.backbone_id) << "\"\n";
    out << "iterations = " << c.iterations << "\n";
    out << "batch_size = " << c.batch_size << "\n";
    out << "lr_new = " << fmt_double(c.lr_new) << "\n";
    out << "lr_pretrained = " << fmt_double(c.lr_pretrained) << "\n";
    out << "weight_decay = " << fmt_double(c.weight_decay) << "\n";
    out << "beta1 = " << fmt_double(c.betas.first) << "\n";
    out << "beta2 = " << fmt_double(c.betas.second) << "\n";
    out << "bn_policy = \"" << bn_policy_name(c.bn_policy) << "\"\n";
    out << "seed = " << c.seed << "\n";
    out << "eval_every = " << c.eval_every << "\n";
    if (c.smoothing_sigma) out << "smoothing_sigma = " << fmt_double(*c.smoothing_sigma) << "\n";
    out << "\n[dataset]\n";
    out << "layout = \"" << layout_name(c.dataset.layout) << "\"\n";
    out << "root = \"" << c.dataset.root << "\"\n";
    out << "category = \"" << c.dataset.category << "\"\n";
    out << "image_size = " << c.dataset.image_size << "\n";
    if (c.dataset.center_crop) out << "center_crop = " << *c.dataset.center_crop << "\n";
    const auto& nm = c.dataset.normalization;
    out << "mean = [" << fmt_double(nm.mean[0]) << ", " << fmt_double(nm.mean[1]) << ", "
        << fmt_double(nm.mean[2]) << "]\n";
    out << "std = [" << fmt_double(nm.std[0]) << ", " << fmt_double(nm.std[1]) << ", "
        << fmt_double(nm.std[2]) << "]\n";
    out << "score_reduction = \"" << reduction_name(c.dataset.score_reduction) << "\"\n";
    if (!c.dataset.split_file.empty())
        out << "split_file = \"" << c.dataset.split_file << "\"\n";
    out << "\n[hard_mining]\n";
    out << "alpha = " << fmt_double(c.hard_mining.alpha) << "\n";
    out << "alpha_start = " << fmt_double(c.hard_mining.alpha_start) << "\n";
    out << "alpha_end = " << fmt_double(c.hard_mining.alpha_end) << "\n";
    out << "warmup_fraction = " << fmt_double(c.hard_mining.warmup_fraction) << "\n";
    return out.str();
}

void write_resolved_config(const RunConfig& config, const std::string& path) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("config: cannot write resolved config: " + path);
    out << run_config_to_toml(config);
    if (!out) throw IoError("config: short write: " + path);
}

}  // namespace fcad
