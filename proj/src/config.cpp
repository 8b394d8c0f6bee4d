#include "btk/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>

namespace btk {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// shortest decimal that round-trips the double
std::string format_double(double v) {
    for (int prec = 1; prec <= 17; ++prec) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::stod(buf) == v) return buf;
    }
    return std::to_string(v);
}

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

int64_t to_i64(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        int64_t x = std::stoll(v, &used);
        check<ConfigError>(used == v.size(), "config: bad integer '", v, "' for key '", key, "'");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(format("config: bad integer '", v, "' for key '", key, "'"));
    }
}

double to_f64(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        double x = std::stod(v, &used);
        check<ConfigError>(used == v.size(), "config: bad number '", v, "' for key '", key, "'");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(format("config: bad number '", v, "' for key '", key, "'"));
    }
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError(format("config: bad boolean '", v, "' for key '", key, "'"));
}

const std::vector<std::pair<std::string, Field>>& fields() {
    auto str = [](std::string RunConfig::* p) {
        return Field{[p](RunConfig& c, const std::string& v) { c.*p = v; },
                     [p](const RunConfig& c) { return c.*p; }};
    };
    auto i64 = [](int64_t RunConfig::* p) {
        return Field{[p](RunConfig& c, const std::string& v) { c.*p = to_i64(v, "int"); },
                     [p](const RunConfig& c) { return std::to_string(c.*p); }};
    };
    auto u64 = [](uint64_t RunConfig::* p) {
        return Field{[p](RunConfig& c, const std::string& v) {
                         c.*p = uint64_t(to_i64(v, "uint"));
                     },
                     [p](const RunConfig& c) { return std::to_string(c.*p); }};
    };
    auto f64 = [](double RunConfig::* p) {
        return Field{[p](RunConfig& c, const std::string& v) { c.*p = to_f64(v, "float"); },
                     [p](const RunConfig& c) { return format_double(c.*p); }};
    };
    auto boolean = [](bool RunConfig::* p) {
        return Field{[p](RunConfig& c, const std::string& v) { c.*p = to_bool(v, "bool"); },
                     [p](const RunConfig& c) { return (c.*p) ? "true" : "false"; }};
    };
    auto i64_list = [](std::vector<int64_t> RunConfig::* p) {
        return Field{[p](RunConfig& c, const std::string& v) {
                         std::vector<int64_t> out;
                         size_t pos = 0;
                         if (!trim(v).empty())
                             while (pos <= v.size()) {
                                 size_t end = v.find(',', pos);
                                 if (end == std::string::npos) end = v.size();
                                 out.push_back(to_i64(trim(v.substr(pos, end - pos)), "list"));
                                 pos = end + 1;
                                 if (end == v.size()) break;
                             }
                         c.*p = std::move(out);
                     },
                     [p](const RunConfig& c) {
                         std::string s;
                         for (size_t i = 0; i < (c.*p).size(); ++i)
                             s += (i ? "," : "") + std::to_string((c.*p)[i]);
                         return s;
                     }};
    };

    static const std::vector<std::pair<std::string, Field>> table = {
        {"model", str(&RunConfig::model)},
        {"dataset_dir", str(&RunConfig::dataset_dir)},
        {"eval_dir", str(&RunConfig::eval_dir)},
        {"out_dir", str(&RunConfig::out_dir)},
        {"checkpoint", str(&RunConfig::checkpoint)},
        {"init_checkpoint", str(&RunConfig::init_checkpoint)},
        {"batch_size", i64(&RunConfig::batch_size)},
        {"epochs", i64(&RunConfig::epochs)},
        {"steps", i64(&RunConfig::steps)},
        {"base_lr", f64(&RunConfig::base_lr)},
        {"lr_steps", i64_list(&RunConfig::lr_steps)},
        {"lr_factor", f64(&RunConfig::lr_factor)},
        {"optimizer", str(&RunConfig::optimizer)},
        {"beta1", f64(&RunConfig::beta1)},
        {"beta2", f64(&RunConfig::beta2)},
        {"weight_decay", f64(&RunConfig::weight_decay)},
        {"loss", str(&RunConfig::loss)},
        {"sinkhorn_epsilon", f64(&RunConfig::sinkhorn_epsilon)},
        {"sinkhorn_iters", i64(&RunConfig::sinkhorn_iters)},
        {"seed", u64(&RunConfig::seed)},
        {"n_samples", i64(&RunConfig::n_samples)},
        {"eval_every", i64(&RunConfig::eval_every)},
        {"save_every", i64(&RunConfig::save_every)},
        {"augment", boolean(&RunConfig::augment)},
        {"dino_steps", i64(&RunConfig::dino_steps)},
        {"dino_batch_size", i64(&RunConfig::dino_batch_size)},
        {"dino_lr", f64(&RunConfig::dino_lr)},
        {"dino_prototypes", i64(&RunConfig::dino_prototypes)},
        {"dino_bottleneck", i64(&RunConfig::dino_bottleneck)},
        {"dino_hidden", i64(&RunConfig::dino_hidden)},
        {"dino_tau_student", f64(&RunConfig::dino_tau_student)},
        {"dino_tau_teacher", f64(&RunConfig::dino_tau_teacher)},
        {"dino_ema_momentum", f64(&RunConfig::dino_ema_momentum)},
        {"dino_center_momentum", f64(&RunConfig::dino_center_momentum)},
        {"dino_centering", boolean(&RunConfig::dino_centering)},
        {"dino_scope", str(&RunConfig::dino_scope)},
        {"bench_iters", i64(&RunConfig::bench_iters)},
        {"bench_batch", i64(&RunConfig::bench_batch)},
    };
    return table;
}

}  // namespace

void RunConfig::validate() const {
    check<ConfigError>(batch_size >= 1, "config: batch_size must be >= 1, got ", batch_size);
    check<ConfigError>(epochs >= 1, "config: epochs must be >= 1, got ", epochs);
    for (size_t i = 0; i < lr_steps.size(); ++i) {
        check<ConfigError>(i == 0 || lr_steps[i] > lr_steps[i - 1],
                           "config: lr_steps must be strictly increasing");
        check<ConfigError>(lr_steps[i] < epochs, "config: lr_step ", lr_steps[i],
                           " must be < epochs (", epochs, ")");
    }
    check<ConfigError>(loss == "l2" || loss == "sinkhorn", "config: loss must be l2|sinkhorn");
    check<ConfigError>(optimizer == "adam", "config: only the adam optimizer is supported");
    check<ConfigError>(dino_scope == "groups" || dino_scope == "full",
                       "config: dino_scope must be groups|full");
    check<ConfigError>(sinkhorn_epsilon > 0 && sinkhorn_iters >= 1,
                       "config: sinkhorn_epsilon must be > 0 and sinkhorn_iters >= 1");
}

std::string RunConfig::serialize() const {
    std::string out;
    for (const auto& [key, field] : fields()) out += key + " = " + field.get(*this) + "\n";
    return out;
}

RunConfig RunConfig::parse_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    size_t pos = 0;
    int line_no = 0;
    while (pos <= text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        ++line_no;
        pos = end + 1;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) {
            if (end == text.size()) break;
            continue;
        }
        size_t eq = line.find('=');
        check<ConfigError>(eq != std::string::npos, "config ", origin, ":", line_no,
                           ": expected 'key = value', got '", line, "'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        bool found = false;
        for (const auto& [name, field] : fields())
            if (name == key) {
                field.set(cfg, value);
                found = true;
                break;
            }
        check<ConfigError>(found, "config ", origin, ":", line_no, ": unknown key '", key, "'");
        if (end == text.size()) break;
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream is(path);
    check<IoError>(is.good(), "config: cannot open '", path, "'");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_text(text, path);
}

}  // namespace btk
