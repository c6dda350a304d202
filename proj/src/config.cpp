#include "vpr/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <variant>

namespace vpr {

namespace {

struct TomlValue {
    std::variant<bool, std::int64_t, double, std::string, std::vector<std::int64_t>> v;
    int line = 0;
};

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

TomlValue parse_value(std::string text, int line) {
    text = trim(text);
    if (text.empty()) throw IoError("config line " + std::to_string(line) + ": missing value");
    TomlValue out;
    out.line = line;
    if (text == "true") {
        out.v = true;
        return out;
    }
    if (text == "false") {
        out.v = false;
        return out;
    }
    if (text.front() == '"') {
        if (text.size() < 2 || text.back() != '"')
            throw IoError("config line " + std::to_string(line) + ": unterminated string");
        out.v = text.substr(1, text.size() - 2);
        return out;
    }
    if (text.front() == '[') {
        if (text.back() != ']')
            throw IoError("config line " + std::to_string(line) + ": unterminated list");
        std::vector<std::int64_t> values;
        std::string inner = text.substr(1, text.size() - 2);
        std::stringstream ss(inner);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            std::int64_t v{};
            auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
            if (ec != std::errc() || p != item.data() + item.size())
                throw IoError("config line " + std::to_string(line) + ": bad list entry '" +
                              item + "'");
            values.push_back(v);
        }
        out.v = std::move(values);
        return out;
    }
    // integer, then float
    {
        std::int64_t v{};
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec == std::errc() && p == text.data() + text.size()) {
            out.v = v;
            return out;
        }
    }
    {
        try {
            std::size_t pos = 0;
            double v = std::stod(text, &pos);
            if (pos == text.size()) {
                out.v = v;
                return out;
            }
        } catch (const std::exception&) {
        }
    }
    throw IoError("config line " + std::to_string(line) + ": cannot parse value '" + text + "'");
}

using TomlTable = std::map<std::string, TomlValue>;

TomlTable parse_toml(std::istream& is) {
    TomlTable table;
    std::string line, section;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        // strip comments outside strings
        bool in_str = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_str = !in_str;
            if (line[i] == '#' && !in_str) {
                line = line.substr(0, i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw IoError("config line " + std::to_string(line_no) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw IoError("config line " + std::to_string(line_no) + ": empty section name");
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw IoError("config line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (key.empty())
            throw IoError("config line " + std::to_string(line_no) + ": empty key");
        std::string full = section.empty() ? key : section + "." + key;
        if (table.count(full))
            throw IoError("config line " + std::to_string(line_no) + ": duplicate key '" +
                          full + "'");
        table[full] = parse_value(line.substr(eq + 1), line_no);
    }
    return table;
}

// Typed extraction that tracks consumed keys so leftovers can be rejected.
class Reader {
public:
    explicit Reader(TomlTable table) : table_(std::move(table)) {}

    void get(const std::string& key, bool& out) { fetch<bool>(key, out, "boolean"); }
    void get(const std::string& key, int& out) {
        std::int64_t v = out;
        fetch<std::int64_t>(key, v, "integer");
        out = static_cast<int>(v);
    }
    void get(const std::string& key, double& out) {
        auto it = table_.find(key);
        if (it == table_.end()) return;
        consumed_.insert(key);
        if (std::holds_alternative<double>(it->second.v))
            out = std::get<double>(it->second.v);
        else if (std::holds_alternative<std::int64_t>(it->second.v))
            out = static_cast<double>(std::get<std::int64_t>(it->second.v));
        else
            throw IoError("config line " + std::to_string(it->second.line) + ": '" + key +
                          "' must be a number");
    }
    void get(const std::string& key, std::string& out) { fetch<std::string>(key, out, "string"); }
    void get(const std::string& key, std::vector<int>& out) {
        auto it = table_.find(key);
        if (it == table_.end()) return;
        consumed_.insert(key);
        if (!std::holds_alternative<std::vector<std::int64_t>>(it->second.v))
            throw IoError("config line " + std::to_string(it->second.line) + ": '" + key +
                          "' must be a list of integers");
        out.clear();
        for (std::int64_t v : std::get<std::vector<std::int64_t>>(it->second.v))
            out.push_back(static_cast<int>(v));
    }

    void finish() const {
        for (const auto& [key, value] : table_) {
            if (!consumed_.count(key))
                throw IoError("config line " + std::to_string(value.line) + ": unknown key '" +
                              key + "'");
        }
    }

private:
    template <typename T>
    void fetch(const std::string& key, T& out, const char* what) {
        auto it = table_.find(key);
        if (it == table_.end()) return;
        consumed_.insert(key);
        if (!std::holds_alternative<T>(it->second.v))
            throw IoError("config line " + std::to_string(it->second.line) + ": '" + key +
                          "' must be a " + what);
        out = std::get<T>(it->second.v);
    }

    TomlTable table_;
    std::set<std::string> consumed_;
};

OptKind parse_opt_kind(const std::string& s) {
    if (s == "sgd" || s == "sgd-momentum") return OptKind::sgd_momentum;
    if (s == "adam") return OptKind::adam;
    throw IoError("config: unknown optimizer kind '" + s + "'");
}

}  // namespace

void TrainConfig::validate() const {
    model.encoder.validate();
    weights.validate();
    mining.validate();
    if (model.p4 < 1.0 || model.p5 < 1.0)
        throw ParameterError("config: pooling p must be >= 1");
    if (total_steps < 0) throw ParameterError("config: total_steps must be >= 0");
    if (eval_every < 0) throw ParameterError("config: eval_every must be >= 0");
    if (poly_power <= 0.0) throw ParameterError("config: poly power must be positive");
    if (random_crop && (crop_height < 1 || crop_width < 1))
        throw ParameterError("config: random_crop needs crop_height and crop_width");
    if (model.num_classes < 2) throw ParameterError("config: need at least two classes");
}

TrainConfig default_train_config() {
    TrainConfig cfg;
    cfg.discr_opt.kind = OptKind::adam;
    cfg.discr_opt.lr0 = 4e-4;
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    Reader r(parse_toml(is));
    TrainConfig cfg = default_train_config();

    r.get("encoder.in_channels", cfg.model.encoder.in_channels);
    r.get("encoder.c4", cfg.model.encoder.c4);
    r.get("encoder.c5", cfg.model.encoder.c5);
    r.get("encoder.kernel", cfg.model.encoder.kernel);
    r.get("encoder.stage_strides", cfg.model.encoder.stage_strides);

    r.get("attention.bank_stride", cfg.model.att_bank_stride);

    r.get("pooling.p4", cfg.model.p4);
    r.get("pooling.p5", cfg.model.p5);
    r.get("pooling.trainable_p", cfg.model.trainable_p);

    r.get("semseg.num_classes", cfg.model.num_classes);
    r.get("semseg.hidden", cfg.model.decoder_hidden);
    r.get("semseg.alpha", cfg.weights.alpha);

    r.get("da.beta", cfg.weights.beta);
    r.get("da.gamma", cfg.weights.gamma);
    {
        std::vector<int> ch;
        r.get("da.discr_channels", ch);
        if (!ch.empty()) {
            if (ch.size() != 5)
                throw IoError("config: da.discr_channels must list exactly 5 values");
            for (std::size_t i = 0; i < 5; ++i) cfg.model.discr_channels[i] = ch[i];
        }
    }

    r.get("mining.positive_radius_m", cfg.mining.positive_radius_m);
    r.get("mining.negative_exclusion_radius_m", cfg.mining.negative_exclusion_radius_m);
    r.get("mining.negatives_per_query", cfg.mining.negatives_per_query);
    r.get("mining.cache_refresh_every", cfg.mining.cache_refresh_every);
    r.get("mining.margin", cfg.weights.margin);
    r.get("mining.random_flip", cfg.random_flip);
    r.get("mining.random_crop", cfg.random_crop);
    r.get("mining.crop_height", cfg.crop_height);
    r.get("mining.crop_width", cfg.crop_width);
    r.get("mining.triplet_log", cfg.triplet_log);

    std::string main_kind = "sgd", discr_kind = "adam";
    r.get("optimizer.main_kind", main_kind);
    r.get("optimizer.discr_kind", discr_kind);
    cfg.main_opt.kind = parse_opt_kind(main_kind);
    cfg.discr_opt.kind = parse_opt_kind(discr_kind);
    r.get("optimizer.main_lr", cfg.main_opt.lr0);
    r.get("optimizer.discr_lr", cfg.discr_opt.lr0);
    r.get("optimizer.momentum", cfg.main_opt.momentum);
    double wd = cfg.main_opt.weight_decay;
    r.get("optimizer.weight_decay", wd);
    cfg.main_opt.weight_decay = wd;
    cfg.discr_opt.weight_decay = wd;
    r.get("optimizer.adam_beta1", cfg.discr_opt.beta1);
    r.get("optimizer.adam_beta2", cfg.discr_opt.beta2);
    r.get("optimizer.adam_eps", cfg.discr_opt.eps);

    std::string schedule_kind = "poly";
    r.get("schedule.kind", schedule_kind);
    if (schedule_kind != "poly")
        throw IoError("config: unknown schedule kind '" + schedule_kind + "'");
    r.get("schedule.power", cfg.poly_power);
    r.get("schedule.total_steps", cfg.total_steps);
    r.get("schedule.eval_every", cfg.eval_every);

    r.get("ablation.ms_gem", cfg.model.ablation.ms_gem);
    r.get("ablation.att", cfg.model.ablation.att);
    r.get("ablation.semseg", cfg.model.ablation.semseg);
    r.get("ablation.g_semseg", cfg.model.ablation.g_semseg);
    r.get("ablation.da", cfg.model.ablation.da);

    r.finish();
    cfg.validate();
    return cfg;
}

void save_train_config(const std::string& path, const TrainConfig& cfg) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write config: " + path);
    auto b = [](bool v) { return v ? "true" : "false"; };
    os << "[encoder]\n";
    os << "in_channels = " << cfg.model.encoder.in_channels << "\n";
    os << "c4 = " << cfg.model.encoder.c4 << "\n";
    os << "c5 = " << cfg.model.encoder.c5 << "\n";
    os << "kernel = " << cfg.model.encoder.kernel << "\n";
    os << "stage_strides = [";
    for (std::size_t i = 0; i < cfg.model.encoder.stage_strides.size(); ++i)
        os << (i ? ", " : "") << cfg.model.encoder.stage_strides[i];
    os << "]\n\n";
    os << "[attention]\nbank_stride = " << cfg.model.att_bank_stride << "\n\n";
    os << "[pooling]\np4 = " << cfg.model.p4 << "\np5 = " << cfg.model.p5
       << "\ntrainable_p = " << b(cfg.model.trainable_p) << "\n\n";
    os << "[semseg]\nnum_classes = " << cfg.model.num_classes
       << "\nhidden = " << cfg.model.decoder_hidden << "\nalpha = " << cfg.weights.alpha
       << "\n\n";
    os << "[da]\nbeta = " << cfg.weights.beta << "\ngamma = " << cfg.weights.gamma
       << "\ndiscr_channels = [";
    for (std::size_t i = 0; i < 5; ++i) os << (i ? ", " : "") << cfg.model.discr_channels[i];
    os << "]\n\n";
    os << "[mining]\n";
    os << "positive_radius_m = " << cfg.mining.positive_radius_m << "\n";
    os << "negative_exclusion_radius_m = " << cfg.mining.negative_exclusion_radius_m << "\n";
    os << "negatives_per_query = " << cfg.mining.negatives_per_query << "\n";
    os << "cache_refresh_every = " << cfg.mining.cache_refresh_every << "\n";
    os << "margin = " << cfg.weights.margin << "\n";
    os << "random_flip = " << b(cfg.random_flip) << "\n";
    os << "random_crop = " << b(cfg.random_crop) << "\n";
    os << "crop_height = " << cfg.crop_height << "\n";
    os << "crop_width = " << cfg.crop_width << "\n";
    os << "triplet_log = " << b(cfg.triplet_log) << "\n\n";
    os << "[optimizer]\n";
    os << "main_kind = \"" << (cfg.main_opt.kind == OptKind::adam ? "adam" : "sgd") << "\"\n";
    os << "main_lr = " << cfg.main_opt.lr0 << "\n";
    os << "discr_kind = \"" << (cfg.discr_opt.kind == OptKind::adam ? "adam" : "sgd") << "\"\n";
    os << "discr_lr = " << cfg.discr_opt.lr0 << "\n";
    os << "momentum = " << cfg.main_opt.momentum << "\n";
    os << "weight_decay = " << cfg.main_opt.weight_decay << "\n";
    os << "adam_beta1 = " << cfg.discr_opt.beta1 << "\n";
    os << "adam_beta2 = " << cfg.discr_opt.beta2 << "\n";
    os << "adam_eps = " << cfg.discr_opt.eps << "\n\n";
    os << "[schedule]\nkind = \"poly\"\npower = " << cfg.poly_power
       << "\ntotal_steps = " << cfg.total_steps << "\neval_every = " << cfg.eval_every
       << "\n\n";
    os << "[ablation]\n";
    os << "ms_gem = " << b(cfg.model.ablation.ms_gem) << "\n";
    os << "att = " << b(cfg.model.ablation.att) << "\n";
    os << "semseg = " << b(cfg.model.ablation.semseg) << "\n";
    os << "g_semseg = " << b(cfg.model.ablation.g_semseg) << "\n";
    os << "da = " << b(cfg.model.ablation.da) << "\n";
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace vpr
