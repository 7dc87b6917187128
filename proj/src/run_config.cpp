#include "cliffm/run_config.hpp"

#include <fstream>
#include <sstream>

namespace cliffm {

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("config: " + key + " must be a boolean, got '" + v + "'");
}

template <typename T>
T parse_num(const std::string& key, const std::string& v, T (*conv)(const std::string&)) {
    try {
        return conv(v);
    } catch (const std::exception&) {
        throw ConfigError("config: bad value '" + v + "' for " + key);
    }
}

int to_int(const std::string& v) { return std::stoi(v); }
double to_double(const std::string& v) { return std::stod(v); }
u64 to_u64(const std::string& v) { return std::stoull(v); }

}  // namespace

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.input_size = input_size;
    m.dim = dim;
    m.num_self_blocks = num_self_blocks;
    m.use_energy = use_energy;
    m.drop_path_max = drop_path_max;
    m.head_dropout = head_dropout;
    m.num_classes = num_classes;
    return m;
}

void RunConfig::set(const std::string& key, const std::string& v) {
    if (key == "input_size") input_size = parse_num(key, v, to_int);
    else if (key == "dim") dim = parse_num(key, v, to_int);
    else if (key == "num_self_blocks") num_self_blocks = parse_num(key, v, to_int);
    else if (key == "use_energy") use_energy = parse_bool(key, v);
    else if (key == "drop_path_max") drop_path_max = parse_num(key, v, to_double);
    else if (key == "head_dropout") head_dropout = parse_num(key, v, to_double);
    else if (key == "num_classes") num_classes = parse_num(key, v, to_int);
    else if (key == "lr") lr = parse_num(key, v, to_double);
    else if (key == "weight_decay") weight_decay = parse_num(key, v, to_double);
    else if (key == "warmup_epochs") warmup_epochs = parse_num(key, v, to_int);
    else if (key == "epochs") epochs = parse_num(key, v, to_int);
    else if (key == "batch_size") batch_size = parse_num(key, v, to_int);
    else if (key == "accum_steps") accum_steps = parse_num(key, v, to_int);
    else if (key == "grad_clip") grad_clip = parse_num(key, v, to_double);
    else if (key == "ema_decay") ema_decay = parse_num(key, v, to_double);
    else if (key == "patience") patience = parse_num(key, v, to_int);
    else if (key == "seed") seed = parse_num(key, v, to_u64);
    else if (key == "smoothing") smoothing = parse_num(key, v, to_double);
    else if (key == "weight_cap") weight_cap = parse_num(key, v, to_double);
    else if (key == "mix_enabled") mix_enabled = parse_bool(key, v);
    else if (key == "mixup_alpha") mixup_alpha = parse_num(key, v, to_double);
    else if (key == "cutmix_alpha") cutmix_alpha = parse_num(key, v, to_double);
    else throw ConfigError("config: unknown key '" + key + "'");
}

void RunConfig::validate() const {
    model_config().validate();
    if (lr <= 0.0 || weight_decay < 0.0 || grad_clip <= 0.0)
        throw ConfigError("config: lr/weight_decay/grad_clip out of range");
    if (epochs < 1 || epochs > 200) throw ConfigError("config: epochs must be in [1, 200]");
    if (warmup_epochs < 0 || warmup_epochs >= epochs + 1)
        throw ConfigError("config: warmup_epochs out of range");
    if (batch_size < 1 || accum_steps < 1)
        throw ConfigError("config: batch_size and accum_steps must be >= 1");
    if (ema_decay <= 0.0 || ema_decay >= 1.0)
        throw ConfigError("config: ema_decay must be in (0,1)");
    if (patience < 1) throw ConfigError("config: patience must be >= 1");
    if (smoothing < 0.0 || smoothing >= 1.0) throw ConfigError("config: smoothing in [0,1)");
    if (weight_cap < 1.0) throw ConfigError("config: weight_cap must be >= 1");
    if (mixup_alpha <= 0.0 || cutmix_alpha <= 0.0)
        throw ConfigError("config: mix alphas must be positive");
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "input_size=" << input_size << "\n";
    os << "dim=" << dim << "\n";
    os << "num_self_blocks=" << num_self_blocks << "\n";
    os << "use_energy=" << (use_energy ? 1 : 0) << "\n";
    os << "drop_path_max=" << drop_path_max << "\n";
    os << "head_dropout=" << head_dropout << "\n";
    os << "num_classes=" << num_classes << "\n";
    os << "lr=" << lr << "\n";
    os << "weight_decay=" << weight_decay << "\n";
    os << "warmup_epochs=" << warmup_epochs << "\n";
    os << "epochs=" << epochs << "\n";
    os << "batch_size=" << batch_size << "\n";
    os << "accum_steps=" << accum_steps << "\n";
    os << "grad_clip=" << grad_clip << "\n";
    os << "ema_decay=" << ema_decay << "\n";
    os << "patience=" << patience << "\n";
    os << "seed=" << seed << "\n";
    os << "smoothing=" << smoothing << "\n";
    os << "weight_cap=" << weight_cap << "\n";
    os << "mix_enabled=" << (mix_enabled ? 1 : 0) << "\n";
    os << "mixup_alpha=" << mixup_alpha << "\n";
    os << "cutmix_alpha=" << cutmix_alpha << "\n";
    return os.str();
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        line_no++;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": expected key=value, got '" + line + "'");
        cfg.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str(), path);
}

}  // namespace cliffm
