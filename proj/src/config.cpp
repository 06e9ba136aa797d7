#include "budgetnet/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace bnet {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

struct Parser {
    std::map<std::string, std::string> kv;
    std::string origin;

    void ingest(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + line + "'");
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (key.empty() || value.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key or value");
            if (!kv.emplace(key, value).second)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                                  key + "'");
        }
    }

    bool has(const std::string& key) const { return kv.count(key) != 0; }

    std::string take(const std::string& key) {
        auto it = kv.find(key);
        std::string v = it->second;
        kv.erase(it);
        return v;
    }

    int64_t as_int(const std::string& key, const std::string& raw) const {
        int64_t v = 0;
        const char* b = raw.data();
        const char* e = raw.data() + raw.size();
        auto r = std::from_chars(b, e, v);
        if (r.ec != std::errc() || r.ptr != e)
            throw ConfigError(origin + ": key '" + key + "': expected integer, got '" + raw + "'");
        return v;
    }

    double as_double(const std::string& key, const std::string& raw) const {
        try {
            size_t pos = 0;
            const double v = std::stod(raw, &pos);
            if (pos != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(origin + ": key '" + key + "': expected number, got '" + raw + "'");
        }
    }

    bool as_bool(const std::string& key, const std::string& raw) const {
        if (raw == "true") return true;
        if (raw == "false") return false;
        throw ConfigError(origin + ": key '" + key + "': expected true or false, got '" + raw +
                          "'");
    }

    std::vector<int64_t> as_int_list(const std::string& key, const std::string& raw) const {
        if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']')
            throw ConfigError(origin + ": key '" + key + "': expected [a, b, ...], got '" + raw +
                              "'");
        std::vector<int64_t> out;
        std::string body = raw.substr(1, raw.size() - 2);
        std::istringstream in(body);
        std::string item;
        while (std::getline(in, item, ',')) {
            item = trim(item);
            if (item.empty())
                throw ConfigError(origin + ": key '" + key + "': empty list element");
            out.push_back(as_int(key, item));
        }
        return out;
    }
};

}  // namespace

TrainConfig TrainConfig::from_string(const std::string& text, const std::string& origin) {
    Parser p;
    p.origin = origin;
    p.ingest(text);

    TrainConfig c;
    auto geti = [&p](const std::string& k, int64_t* dst) {
        if (p.has(k)) *dst = p.as_int(k, p.take(k));
    };
    auto getd = [&p](const std::string& k, double* dst) {
        if (p.has(k)) *dst = p.as_double(k, p.take(k));
    };
    auto getb = [&p](const std::string& k, bool* dst) {
        if (p.has(k)) *dst = p.as_bool(k, p.take(k));
    };
    auto getlist = [&p](const std::string& k, std::vector<int64_t>* dst) {
        if (p.has(k)) *dst = p.as_int_list(k, p.take(k));
    };
    auto gets = [&p](const std::string& k, std::string* dst) {
        if (p.has(k)) *dst = p.take(k);
    };

    // Architecture
    geti("residual_layers", &c.model.n_layers);
    getlist("residual_blocks", &c.model.blocks);
    getlist("channels", &c.model.channels);
    getlist("conv_kernel_sizes", &c.model.conv_kernels);
    getlist("shortcut_kernel_sizes", &c.model.skip_kernels);
    geti("avg_pool_kernel_size", &c.model.pool_kernel);
    getb("squeeze_and_excitation", &c.model.se_enabled);
    geti("se_ratio", &c.model.se_ratio);
    getd("dropout", &c.model.dropout_p);
    geti("num_classes", &c.model.num_classes);

    // Optimizer
    if (p.has("optimizer")) {
        const std::string v = p.take("optimizer");
        if (v == "sgd") c.opt.kind = OptKind::kSgd;
        else if (v == "adam") c.opt.kind = OptKind::kAdam;
        else throw ConfigError(origin + ": key 'optimizer': expected sgd or adam, got '" + v + "'");
    }
    getd("learning_rate", &c.opt.lr);
    getd("momentum", &c.opt.momentum);
    getd("weight_decay", &c.opt.weight_decay);
    getd("beta1", &c.opt.beta1);
    getd("beta2", &c.opt.beta2);
    getd("adam_eps", &c.opt.eps);

    // Schedule
    if (p.has("lr_scheduler")) c.schedule.kind = schedule_kind_from_string(p.take("lr_scheduler"));
    if (p.has("t_max")) {
        c.schedule.t_max = p.as_int("t_max", p.take("t_max"));
        c.schedule_t_max_set = true;
    }
    getd("eta_min", &c.schedule.eta_min);
    geti("step_size", &c.schedule.step_size);
    getlist("milestones", &c.schedule.milestones);
    getd("lr_gamma", &c.schedule.gamma);
    getd("max_lr", &c.schedule.max_lr);
    getd("pct_start", &c.schedule.pct_start);
    geti("t_0", &c.schedule.t0);
    geti("t_mult", &c.schedule.t_mult);

    // Strategies
    getd("gradient_clip", &c.grad_clip);
    getb("lookahead", &c.lookahead);
    geti("lookahead_k", &c.lookahead_k);
    getd("lookahead_alpha", &c.lookahead_alpha);

    // Run shape
    geti("epochs", &c.epochs);
    geti("batch_size", &c.batch_size);
    getb("data_augmentation", &c.augment);
    getb("data_normalization", &c.normalize);
    geti("number_of_workers", &c.workers);

    if (p.has("init")) c.init.kind = init_kind_from_string(p.take("init"));
    getd("normal_std", &c.init.normal_std);
    if (p.has("seed")) c.seed = static_cast<uint64_t>(p.as_int("seed", p.take("seed")));

    gets("data_dir", &c.data_dir);
    gets("output_dir", &c.output_dir);
    geti("reference_params", &c.reference_params);

    if (!p.kv.empty())
        throw ConfigError(origin + ": unknown key '" + p.kv.begin()->first + "'");
    return c;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return from_string(buf.str(), path);
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_list(const std::vector<int64_t>& v) {
    std::string out = "[";
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(v[i]);
    }
    return out + "]";
}

}  // namespace

std::string TrainConfig::to_string() const {
    std::ostringstream o;
    o << "residual_layers = " << model.n_layers << "\n";
    o << "residual_blocks = " << fmt_list(model.blocks) << "\n";
    o << "channels = " << fmt_list(model.channels) << "\n";
    o << "conv_kernel_sizes = " << fmt_list(model.conv_kernels) << "\n";
    o << "shortcut_kernel_sizes = " << fmt_list(model.skip_kernels) << "\n";
    o << "avg_pool_kernel_size = " << model.pool_kernel << "\n";
    o << "squeeze_and_excitation = " << (model.se_enabled ? "true" : "false") << "\n";
    o << "se_ratio = " << model.se_ratio << "\n";
    o << "dropout = " << fmt_double(model.dropout_p) << "\n";
    o << "num_classes = " << model.num_classes << "\n";
    o << "optimizer = " << (opt.kind == OptKind::kSgd ? "sgd" : "adam") << "\n";
    o << "learning_rate = " << fmt_double(opt.lr) << "\n";
    o << "momentum = " << fmt_double(opt.momentum) << "\n";
    o << "weight_decay = " << fmt_double(opt.weight_decay) << "\n";
    o << "beta1 = " << fmt_double(opt.beta1) << "\n";
    o << "beta2 = " << fmt_double(opt.beta2) << "\n";
    o << "adam_eps = " << fmt_double(opt.eps) << "\n";
    o << "lr_scheduler = " << schedule_kind_name(schedule.kind) << "\n";
    o << "t_max = " << schedule.t_max << "\n";
    o << "eta_min = " << fmt_double(schedule.eta_min) << "\n";
    o << "step_size = " << schedule.step_size << "\n";
    o << "milestones = " << fmt_list(schedule.milestones) << "\n";
    o << "lr_gamma = " << fmt_double(schedule.gamma) << "\n";
    o << "max_lr = " << fmt_double(schedule.max_lr) << "\n";
    o << "pct_start = " << fmt_double(schedule.pct_start) << "\n";
    o << "t_0 = " << schedule.t0 << "\n";
    o << "t_mult = " << schedule.t_mult << "\n";
    o << "gradient_clip = " << fmt_double(grad_clip) << "\n";
    o << "lookahead = " << (lookahead ? "true" : "false") << "\n";
    o << "lookahead_k = " << lookahead_k << "\n";
    o << "lookahead_alpha = " << fmt_double(lookahead_alpha) << "\n";
    o << "epochs = " << epochs << "\n";
    o << "batch_size = " << batch_size << "\n";
    o << "data_augmentation = " << (augment ? "true" : "false") << "\n";
    o << "data_normalization = " << (normalize ? "true" : "false") << "\n";
    o << "number_of_workers = " << workers << "\n";
    o << "init = " << init_kind_name(init.kind) << "\n";
    o << "normal_std = " << fmt_double(init.normal_std) << "\n";
    o << "seed = " << seed << "\n";
    if (!data_dir.empty()) o << "data_dir = " << data_dir << "\n";
    if (output_dir != ".") o << "output_dir = " << output_dir << "\n";
    if (reference_params != 0) o << "reference_params = " << reference_params << "\n";
    return o.str();
}

void TrainConfig::validate() {
    model.validate();
    if (epochs < 1) throw ConfigError("config field 'epochs': must be >= 1, got " + std::to_string(epochs));
    if (batch_size < 1)
        throw ConfigError("config field 'batch_size': must be >= 1, got " + std::to_string(batch_size));
    if (opt.lr <= 0.0) throw ConfigError("config field 'learning_rate': must be positive");
    if (opt.momentum < 0.0 || opt.momentum >= 1.0)
        throw ConfigError("config field 'momentum': must be in [0,1)");
    if (opt.weight_decay < 0.0) throw ConfigError("config field 'weight_decay': must be >= 0");
    if (grad_clip < 0.0) throw ConfigError("config field 'gradient_clip': must be >= 0 (0 disables)");
    if (lookahead) {
        if (lookahead_k < 1) throw ConfigError("config field 'lookahead_k': must be >= 1");
        if (lookahead_alpha <= 0.0 || lookahead_alpha > 1.0)
            throw ConfigError("config field 'lookahead_alpha': must be in (0,1]");
    }
    if (workers < 0) throw ConfigError("config field 'number_of_workers': must be >= 0");
    if (!schedule_t_max_set) {
        schedule.t_max = epochs;
        schedule_t_max_set = true;
    }
    schedule.base_lr = opt.lr;
}

}  // namespace bnet
