#include "pgx/config.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "pgx/format.hpp"

namespace pgx {

Settings::Settings() {
    // One seed and one pair of data dimensions drive both the generator
    // and the model.
    train.seed = synth.seed;
    train.dims.d_in = synth.feature_dim;
    train.dims.d_g = synth.genomic_dim;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (v.empty() || v[0] == '-' || v[0] == '+') throw std::invalid_argument("");
        const unsigned long long n = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return n;
    } catch (const std::exception&) {
        throw ValidationError("setting " + key +
                              " needs a nonnegative integer, got '" + v + "'");
    }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(parse_u64(key, v));
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return x;
    } catch (const std::exception&) {
        throw ValidationError("setting " + key + " needs a number, got '" + v +
                              "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ValidationError("setting " + key + " must be true or false, got '" +
                          v + "'");
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

struct Entry {
    const char* key;
    std::function<void(Settings&, const std::string&)> set;
    std::function<std::string(const Settings&)> get;
};

const std::vector<Entry>& registry() {
    static const std::vector<Entry> entries = {
        {"seed",
         [](Settings& s, const std::string& v) {
             s.synth.seed = parse_u64("seed", v);
             s.train.seed = s.synth.seed;
         },
         [](const Settings& s) { return std::to_string(s.train.seed); }},
        {"n_patients",
         [](Settings& s, const std::string& v) {
             s.synth.n_patients = parse_size("n_patients", v);
         },
         [](const Settings& s) { return std::to_string(s.synth.n_patients); }},
        {"latent_dim",
         [](Settings& s, const std::string& v) {
             s.synth.latent_dim = parse_size("latent_dim", v);
         },
         [](const Settings& s) { return std::to_string(s.synth.latent_dim); }},
        {"d_in",
         [](Settings& s, const std::string& v) {
             s.synth.feature_dim = parse_size("d_in", v);
             s.train.dims.d_in = s.synth.feature_dim;
         },
         [](const Settings& s) { return std::to_string(s.train.dims.d_in); }},
        {"d_g",
         [](Settings& s, const std::string& v) {
             s.synth.genomic_dim = parse_size("d_g", v);
             s.train.dims.d_g = s.synth.genomic_dim;
         },
         [](const Settings& s) { return std::to_string(s.train.dims.d_g); }},
        {"patches_min",
         [](Settings& s, const std::string& v) {
             s.synth.patches_min = parse_size("patches_min", v);
         },
         [](const Settings& s) { return std::to_string(s.synth.patches_min); }},
        {"patches_max",
         [](Settings& s, const std::string& v) {
             s.synth.patches_max = parse_size("patches_max", v);
         },
         [](const Settings& s) { return std::to_string(s.synth.patches_max); }},
        {"informative_fraction",
         [](Settings& s, const std::string& v) {
             s.synth.informative_fraction = parse_double("informative_fraction", v);
         },
         [](const Settings& s) { return g17(s.synth.informative_fraction); }},
        {"genomic_noise",
         [](Settings& s, const std::string& v) {
             s.synth.genomic_noise = parse_double("genomic_noise", v);
         },
         [](const Settings& s) { return g17(s.synth.genomic_noise); }},
        {"imaging_noise",
         [](Settings& s, const std::string& v) {
             s.synth.imaging_noise = parse_double("imaging_noise", v);
         },
         [](const Settings& s) { return g17(s.synth.imaging_noise); }},
        {"hazard_coefficient",
         [](Settings& s, const std::string& v) {
             s.synth.hazard_coefficient = parse_double("hazard_coefficient", v);
         },
         [](const Settings& s) { return g17(s.synth.hazard_coefficient); }},
        {"censoring_target",
         [](Settings& s, const std::string& v) {
             s.synth.censoring_target = parse_double("censoring_target", v);
         },
         [](const Settings& s) { return g17(s.synth.censoring_target); }},
        {"d",
         [](Settings& s, const std::string& v) {
             s.train.dims.d = parse_size("d", v);
         },
         [](const Settings& s) { return std::to_string(s.train.dims.d); }},
        {"heads",
         [](Settings& s, const std::string& v) {
             s.train.dims.heads = parse_size("heads", v);
         },
         [](const Settings& s) { return std::to_string(s.train.dims.heads); }},
        {"hidden",
         [](Settings& s, const std::string& v) {
             s.train.dims.hidden = parse_size("hidden", v);
         },
         [](const Settings& s) { return std::to_string(s.train.dims.hidden); }},
        {"learning_rate",
         [](Settings& s, const std::string& v) {
             s.train.learning_rate = parse_double("learning_rate", v);
         },
         [](const Settings& s) { return g17(s.train.learning_rate); }},
        {"l2_weight_decay",
         [](Settings& s, const std::string& v) {
             s.train.l2_weight_decay = parse_double("l2_weight_decay", v);
         },
         [](const Settings& s) { return g17(s.train.l2_weight_decay); }},
        {"decoupled_decay",
         [](Settings& s, const std::string& v) {
             s.train.decoupled_decay = parse_bool("decoupled_decay", v);
         },
         [](const Settings& s) { return bool_text(s.train.decoupled_decay); }},
        {"epochs",
         [](Settings& s, const std::string& v) {
             s.train.epochs = parse_size("epochs", v);
         },
         [](const Settings& s) { return std::to_string(s.train.epochs); }},
        {"batch_size",
         [](Settings& s, const std::string& v) {
             s.train.batch_size = parse_size("batch_size", v);
         },
         [](const Settings& s) { return std::to_string(s.train.batch_size); }},
        {"lambda1",
         [](Settings& s, const std::string& v) {
             s.train.weights.lambda1 = parse_double("lambda1", v);
         },
         [](const Settings& s) { return g17(s.train.weights.lambda1); }},
        {"lambda2",
         [](Settings& s, const std::string& v) {
             s.train.weights.lambda2 = parse_double("lambda2", v);
         },
         [](const Settings& s) { return g17(s.train.weights.lambda2); }},
        {"alpha",
         [](Settings& s, const std::string& v) {
             s.train.weights.alpha = parse_double("alpha", v);
         },
         [](const Settings& s) { return g17(s.train.weights.alpha); }},
        {"enable_latent",
         [](Settings& s, const std::string& v) {
             s.train.enable_latent = parse_bool("enable_latent", v);
         },
         [](const Settings& s) { return bool_text(s.train.enable_latent); }},
        {"enable_translation",
         [](Settings& s, const std::string& v) {
             s.train.enable_translation = parse_bool("enable_translation", v);
         },
         [](const Settings& s) {
             return bool_text(s.train.enable_translation);
         }},
        {"risk_input",
         [](Settings& s, const std::string& v) {
             if (v == "translated") {
                 s.train.risk_input = RiskInput::kTranslated;
             } else if (v == "class_token") {
                 s.train.risk_input = RiskInput::kClassToken;
             } else {
                 throw ValidationError(
                     "setting risk_input must be translated or class_token, "
                     "got '" +
                     v + "'");
             }
         },
         [](const Settings& s) {
             return s.train.risk_input == RiskInput::kTranslated
                        ? "translated"
                        : "class_token";
         }},
        {"cox_mean_over_events",
         [](Settings& s, const std::string& v) {
             s.train.cox_mean_over_events = parse_bool("cox_mean_over_events", v);
         },
         [](const Settings& s) {
             return bool_text(s.train.cox_mean_over_events);
         }},
        {"folds",
         [](Settings& s, const std::string& v) {
             s.folds = parse_size("folds", v);
         },
         [](const Settings& s) { return std::to_string(s.folds); }},
    };
    return entries;
}

}  // namespace

void apply_setting(Settings& s, const std::string& key,
                   const std::string& value) {
    for (const Entry& entry : registry()) {
        if (key == entry.key) {
            entry.set(s, value);
            return;
        }
    }
    throw ValidationError("unknown setting: " + key);
}

Settings parse_settings(const std::string& text, Settings base) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("line " + std::to_string(line_no) +
                                  ": expected key = value, got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ValidationError("line " + std::to_string(line_no) +
                                  ": missing key");
        }
        try {
            apply_setting(base, key, value);
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(line_no) + ": " +
                                  e.what());
        }
    }
    return base;
}

Settings load_settings_file(const std::filesystem::path& path, Settings base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_settings(std::move(buf).str(), std::move(base));
}

std::string settings_echo(const Settings& s) {
    std::string out;
    for (const Entry& entry : registry()) {
        out += "# ";
        out += entry.key;
        out += " = ";
        out += entry.get(s);
        out += "\n";
    }
    return out;
}

}  // namespace pgx
