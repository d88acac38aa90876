#include "din/config.hpp"

#include <fstream>

namespace din {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error("config: bad boolean for " + key + ": " + v);
}

}  // namespace

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(path + ": line " + std::to_string(line_no) + ": expected key=value");
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
    try {
        if (key == "alpha") cfg.alpha = std::stod(value);
        else if (key == "gamma") cfg.gamma = std::stod(value);
        else if (key == "tau") cfg.tau = std::stod(value);
        else if (key == "rfl_clip") cfg.rfl_clip = std::stod(value);
        else if (key == "T") cfg.T = std::stoi(value);
        else if (key == "beta_start") cfg.beta_start = std::stod(value);
        else if (key == "beta_end") cfg.beta_end = std::stod(value);
        else if (key == "dif_loss") cfg.dif_loss = value;
        else if (key == "init") cfg.init = value;
        else if (key == "lr") cfg.lr = std::stod(value);
        else if (key == "batch_size") cfg.batch_size = std::stoi(value);
        else if (key == "epochs") cfg.epochs = std::stoi(value);
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "use_ad") cfg.use_ad = parse_bool(value, key);
        else if (key == "use_rfl") cfg.use_rfl = parse_bool(value, key);
        else if (key == "use_aa") cfg.use_aa = parse_bool(value, key);
        else if (key == "d") cfg.d = std::stoi(value);
        else if (key == "heads") cfg.heads = std::stoi(value);
        else if (key == "enc_blocks") cfg.enc_blocks = std::stoi(value);
        else if (key == "ffn_mult") cfg.ffn_mult = std::stoi(value);
        else if (key == "patch") cfg.patch = std::stoi(value);
        else if (key == "time_embed") cfg.time_embed = std::stoi(value);
        else if (key == "denoiser_hidden") cfg.denoiser_hidden = std::stoi(value);
        else if (key == "max_q_tokens") cfg.max_q_tokens = std::stoi(value);
        else if (key == "classifier_input") cfg.classifier_input = value;
        else if (key == "threads") cfg.threads = std::stoi(value);
        else throw Error("config: unknown key " + key);
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        throw Error("config: bad value for " + key + ": " + value);
    }
}

TrainConfig config_from_file(const std::string& path, TrainConfig base) {
    for (const auto& [k, v] : parse_config_file(path)) apply_config_entry(base, k, v);
    return base;
}

}  // namespace din
