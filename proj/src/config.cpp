#include "degan/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace degan {
namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

long parse_long_value(const std::string& key, const std::string& s) {
    errno = 0;
    char* end = nullptr;
    long v = std::strtol(s.c_str(), &end, 10);
    if (errno != 0 || end == s.c_str() || *end != '\0')
        throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + s + "'");
    return v;
}

std::uint64_t parse_u64_value(const std::string& key, const std::string& s) {
    errno = 0;
    char* end = nullptr;
    unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (errno != 0 || end == s.c_str() || *end != '\0' || s.find('-') != std::string::npos)
        throw std::invalid_argument("config: key '" + key + "' expects a non-negative integer, got '" + s + "'");
    return static_cast<std::uint64_t>(v);
}

double parse_double_value(const std::string& key, const std::string& s) {
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (errno != 0 || end == s.c_str() || *end != '\0')
        throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + s + "'");
    return v;
}

bool parse_bool_value(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("config: key '" + key + "' expects true/false, got '" + s + "'");
}

struct Entry {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

Entry entry(const char* key, std::string RunConfig::* f) {
    return {key, [f](const RunConfig& c) { return c.*f; },
            [f](RunConfig& c, const std::string& s) { c.*f = s; }};
}

Entry entry(const char* key, long RunConfig::* f) {
    std::string k = key;
    return {k, [f](const RunConfig& c) { return std::to_string(c.*f); },
            [f, k](RunConfig& c, const std::string& s) { c.*f = parse_long_value(k, s); }};
}

Entry entry(const char* key, std::uint64_t RunConfig::* f) {
    std::string k = key;
    return {k, [f](const RunConfig& c) { return std::to_string(c.*f); },
            [f, k](RunConfig& c, const std::string& s) { c.*f = parse_u64_value(k, s); }};
}

Entry entry(const char* key, double RunConfig::* f) {
    std::string k = key;
    return {k, [f](const RunConfig& c) { return fmt_double(c.*f); },
            [f, k](RunConfig& c, const std::string& s) { c.*f = parse_double_value(k, s); }};
}

Entry entry(const char* key, bool RunConfig::* f) {
    std::string k = key;
    return {k, [f](const RunConfig& c) { return std::string(c.*f ? "true" : "false"); },
            [f, k](RunConfig& c, const std::string& s) { c.*f = parse_bool_value(k, s); }};
}

const std::vector<Entry>& schema() {
    static const std::vector<Entry> s = {
        entry("data_dir", &RunConfig::data_dir),
        entry("out_dir", &RunConfig::out_dir),
        entry("setting_label", &RunConfig::setting_label),
        entry("stage1_checkpoint", &RunConfig::stage1_checkpoint),
        entry("image_size", &RunConfig::image_size),
        entry("channels", &RunConfig::channels),
        entry("last_n_frames", &RunConfig::last_n_frames),
        entry("augment", &RunConfig::augment),
        entry("write_samples", &RunConfig::write_samples),
        entry("synth_identities", &RunConfig::synth_identities),
        entry("synth_expressions", &RunConfig::synth_expressions),
        entry("synth_per_pair", &RunConfig::synth_per_pair),
        entry("synth_seed", &RunConfig::synth_seed),
        entry("lr", &RunConfig::lr),
        entry("adam_beta1", &RunConfig::adam_beta1),
        entry("adam_beta2", &RunConfig::adam_beta2),
        entry("batch_size", &RunConfig::batch_size),
        entry("width", &RunConfig::width),
        entry("code_dim", &RunConfig::code_dim),
        entry("noise_dim", &RunConfig::noise_dim),
        entry("d_acc_threshold", &RunConfig::d_acc_threshold),
        entry("g_per_d_late", &RunConfig::g_per_d_late),
        entry("acc_window", &RunConfig::acc_window),
        entry("stage1_epochs", &RunConfig::stage1_epochs),
        entry("stage1_steps_per_epoch", &RunConfig::stage1_steps_per_epoch),
        entry("stage1_seed", &RunConfig::stage1_seed),
        entry("checkpoint_every", &RunConfig::checkpoint_every),
        entry("sample_rows", &RunConfig::sample_rows),
        entry("fusion_dim", &RunConfig::fusion_dim),
        entry("local_width", &RunConfig::local_width),
        entry("fused_hidden", &RunConfig::fused_hidden),
        entry("lambda1", &RunConfig::lambda1),
        entry("lambda2", &RunConfig::lambda2),
        entry("lambda3", &RunConfig::lambda3),
        entry("lambda4", &RunConfig::lambda4),
        entry("lambda_fused", &RunConfig::lambda_fused),
        entry("stage2_epochs", &RunConfig::stage2_epochs),
        entry("stage2_steps_per_epoch", &RunConfig::stage2_steps_per_epoch),
        entry("stage2_seed", &RunConfig::stage2_seed),
        entry("baseline_width", &RunConfig::baseline_width),
        entry("baseline_epochs", &RunConfig::baseline_epochs),
        entry("baseline_steps_per_epoch", &RunConfig::baseline_steps_per_epoch),
        entry("baseline_seed", &RunConfig::baseline_seed),
        entry("kfold_k", &RunConfig::kfold_k),
        entry("fold_seed", &RunConfig::fold_seed),
        entry("probe_seed", &RunConfig::probe_seed),
        entry("transfer_count", &RunConfig::transfer_count),
        entry("transfer_seed", &RunConfig::transfer_seed),
    };
    return s;
}

const Entry* find_entry(const std::string& key) {
    for (const Entry& e : schema())
        if (e.key == key) return &e;
    return nullptr;
}

void require_positive(const char* key, long v) {
    if (v < 1) throw std::invalid_argument(std::string("config: key '") + key + "' must be >= 1");
}

void require_non_negative(const char* key, long v) {
    if (v < 0) throw std::invalid_argument(std::string("config: key '") + key + "' must be >= 0");
}

void require_non_negative(const char* key, double v) {
    if (!(v >= 0.0)) throw std::invalid_argument(std::string("config: key '") + key + "' must be >= 0");
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    keys.reserve(schema().size());
    for (const Entry& e : schema()) keys.push_back(e.key);
    return keys;
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        " is not of the form key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        const Entry* e = find_entry(key);
        if (e == nullptr) throw std::invalid_argument("config: unknown key '" + key + "'");
        if (!seen.insert(key).second)
            throw std::invalid_argument("config: duplicate key '" + key + "'");
        e->set(cfg, value);
    }
    validate_config(cfg);
    return cfg;
}

RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("config: override '" + assignment + "' is not of the form key=value");
    std::string key = trim(assignment.substr(0, eq));
    std::string value = trim(assignment.substr(eq + 1));
    const Entry* e = find_entry(key);
    if (e == nullptr) throw std::invalid_argument("config: unknown key '" + key + "'");
    e->set(cfg, value);
}

std::map<std::string, std::string> config_to_map(const RunConfig& cfg) {
    std::map<std::string, std::string> m;
    for (const Entry& e : schema()) m[e.key] = e.get(cfg);
    return m;
}

RunConfig config_from_map(const std::map<std::string, std::string>& m) {
    RunConfig cfg;
    for (const auto& [key, value] : m) {
        const Entry* e = find_entry(key);
        if (e == nullptr) throw std::invalid_argument("config: unknown key '" + key + "'");
        e->set(cfg, value);
    }
    validate_config(cfg);
    return cfg;
}

void validate_config(const RunConfig& cfg) {
    require_positive("image_size", cfg.image_size);
    if (cfg.image_size % 16 != 0)
        throw std::invalid_argument("config: key 'image_size' must be a multiple of 16");
    if (cfg.channels != 1 && cfg.channels != 3)
        throw std::invalid_argument("config: key 'channels' must be 1 or 3");
    require_positive("last_n_frames", cfg.last_n_frames);
    require_positive("synth_identities", cfg.synth_identities);
    require_positive("synth_expressions", cfg.synth_expressions);
    require_positive("synth_per_pair", cfg.synth_per_pair);
    if (!(cfg.lr >= 0.0)) throw std::invalid_argument("config: key 'lr' must be >= 0");
    if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0))
        throw std::invalid_argument("config: key 'adam_beta1' must be in [0, 1)");
    if (!(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0))
        throw std::invalid_argument("config: key 'adam_beta2' must be in [0, 1)");
    require_positive("batch_size", cfg.batch_size);
    require_positive("width", cfg.width);
    require_positive("code_dim", cfg.code_dim);
    require_positive("noise_dim", cfg.noise_dim);
    require_positive("g_per_d_late", cfg.g_per_d_late);
    require_positive("acc_window", cfg.acc_window);
    require_non_negative("stage1_epochs", cfg.stage1_epochs);
    require_non_negative("stage1_steps_per_epoch", cfg.stage1_steps_per_epoch);
    require_positive("checkpoint_every", cfg.checkpoint_every);
    require_positive("sample_rows", cfg.sample_rows);
    require_positive("fusion_dim", cfg.fusion_dim);
    require_positive("local_width", cfg.local_width);
    require_positive("fused_hidden", cfg.fused_hidden);
    require_non_negative("lambda1", cfg.lambda1);
    require_non_negative("lambda2", cfg.lambda2);
    require_non_negative("lambda3", cfg.lambda3);
    require_non_negative("lambda4", cfg.lambda4);
    require_non_negative("lambda_fused", cfg.lambda_fused);
    require_non_negative("stage2_epochs", cfg.stage2_epochs);
    require_non_negative("stage2_steps_per_epoch", cfg.stage2_steps_per_epoch);
    require_positive("baseline_width", cfg.baseline_width);
    require_non_negative("baseline_epochs", cfg.baseline_epochs);
    require_non_negative("baseline_steps_per_epoch", cfg.baseline_steps_per_epoch);
    if (cfg.kfold_k < 2) throw std::invalid_argument("config: key 'kfold_k' must be >= 2");
    require_positive("transfer_count", cfg.transfer_count);
}

std::string utc_timestamp() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void RunManifest::write(const std::string& path) const {
    nlohmann::json j;
    j["command"] = command;
    j["status"] = status;
    j["started"] = started;
    j["finished"] = finished;
    j["config"] = config;
    j["outputs"] = outputs;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("manifest: cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

RunManifest RunManifest::read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("manifest: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("manifest: '" + path + "' is not valid JSON: " + e.what());
    }
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.status = j.value("status", "");
    m.started = j.value("started", "");
    m.finished = j.value("finished", "");
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    if (j.contains("outputs")) m.outputs = j.at("outputs").get<std::vector<std::string>>();
    return m;
}

}  // namespace degan
