#include "fia/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "fia/util.hpp"

namespace fia::config {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string current;
    std::istringstream in(s);
    while (std::getline(in, current, sep)) {
        const std::string token = trim(current);
        if (!token.empty()) parts.push_back(token);
    }
    return parts;
}

std::uint64_t parse_u64(const std::string& text, const std::string& key) {
    try {
        std::size_t pos = 0;
        const auto v = std::stoull(text, &pos);
        if (pos != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + text + "'");
    }
}

double parse_number(const std::string& text, const std::string& key) {
    try {
        return parse_double(text);
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": '" + text + "'");
    }
}

std::string normalize_concept(const std::string& token) {
    // Accept both "concept2" and bare indices like "2".
    if (!token.empty() && token.find_first_not_of("0123456789") == std::string::npos) {
        return "concept" + token;
    }
    return token;
}

}  // namespace

double parse_fraction(const std::string& text) {
    std::string t = trim(text);
    if (t.empty()) throw ConfigError("config: empty fraction");
    if (t.back() == '%') {
        return parse_number(trim(t.substr(0, t.size() - 1)), "fraction") / 100.0;
    }
    return parse_number(t, "fraction");
}

double parse_percent_flag(const std::string& text) {
    std::string t = trim(text);
    if (t.empty()) throw ConfigError("config: empty percent value");
    if (t.back() == '%') t = trim(t.substr(0, t.size() - 1));
    return parse_number(t, "percent flag") / 100.0;
}

void PipelineConfig::validate() const {
    data.validate();
    auto check_fraction = [](double v, const char* name) {
        if (!(v > 0.0 && v <= 1.0)) {
            throw ConfigError(std::string("config: ") + name + " must be in (0, 1]");
        }
    };
    check_fraction(r1, "r1");
    check_fraction(r2, "r2");
    for (const auto& [concept_id, value] : r2_per_concept) {
        check_fraction(value, ("r2." + concept_id).c_str());
    }
    check_fraction(alpha, "alpha");
    if (!(epsilon >= 0.0)) throw ConfigError("config: epsilon must be >= 0");
    if (!window.valid_for(total_timesteps)) {
        throw ConfigError("config: window must be a nonempty range within [1, T]");
    }
    if (hidden_width == 0 || cond_dim == 0) throw ConfigError("config: zero model dimension");
    if (total_timesteps == 0) throw ConfigError("config: timesteps must be positive");
    if (!(beta_first > 0.0 && beta_first < beta_last && beta_last < 1.0)) {
        throw ConfigError("config: need 0 < beta_first < beta_last < 1");
    }
    if (prompts_per_group < 2) throw ConfigError("config: prompts_per_group must be >= 2");
    if (positions == 0) throw ConfigError("config: positions must be positive");
    if (trace_layers.empty()) throw ConfigError("config: trace layer list is empty");
    for (const auto& id : trace_layers) {
        if (!toydiff::model_layer_from_id(id)) {
            throw ConfigError("config: unknown trace layer '" + id + "'");
        }
    }
    if (eval_samples == 0) throw ConfigError("config: eval_samples must be positive");
    if (forget_concepts.empty()) throw ConfigError("config: forget list is empty");

    std::set<std::string> forget(forget_concepts.begin(), forget_concepts.end());
    for (const auto& c : preserve_concepts) {
        if (forget.count(c) != 0) {
            throw ConfigError("config: concept '" + c + "' is both forgotten and preserved");
        }
    }
    for (const auto& c : forget_concepts) concept_index_of(c);
    for (const auto& c : preserve_concepts) concept_index_of(c);
    if (resolve_target_layers().empty()) {
        throw ConfigError("config: target_layers matches no traced layer");
    }
}

double PipelineConfig::r2_for(const std::string& concept_id) const {
    auto it = r2_per_concept.find(concept_id);
    return it == r2_per_concept.end() ? r2 : it->second;
}

std::vector<std::string> PipelineConfig::resolve_target_layers() const {
    std::vector<std::string> resolved;
    for (const auto& layer_id : trace_layers) {
        bool matched = false;
        for (const auto& filter : target_layers) {
            if (filter == layer_id) {
                matched = true;
                break;
            }
            const auto kind = trace::target_kind_from_name(filter);
            if (kind) {
                const auto layer = toydiff::model_layer_from_id(layer_id);
                if (layer &&
                    ((*layer == toydiff::ModelLayer::Ffn1 && *kind == trace::TargetKind::Ffn1) ||
                     (*layer == toydiff::ModelLayer::Ffn2 && *kind == trace::TargetKind::Ffn2))) {
                    matched = true;
                    break;
                }
            }
        }
        if (matched) resolved.push_back(layer_id);
    }
    return resolved;
}

std::uint32_t PipelineConfig::concept_index_of(const std::string& concept_id) const {
    for (std::uint32_t c = 0; c < data.concept_count; ++c) {
        if (toydiff::concept_group_id(c) == concept_id) return c;
    }
    throw ConfigError("config: unknown concept '" + concept_id + "'");
}

std::string PipelineConfig::canonical() const {
    std::ostringstream out;
    out << "alpha=" << format_double(alpha) << '\n';
    out << "beta_first=" << format_double(beta_first) << '\n';
    out << "beta_last=" << format_double(beta_last) << '\n';
    out << "batch_size=" << train.batch_size << '\n';
    out << "cond_dim=" << cond_dim << '\n';
    out << "cond_dropout=" << format_double(train.cond_dropout) << '\n';
    out << "concepts=" << data.concept_count << '\n';
    out << "epsilon=" << format_double(epsilon) << '\n';
    out << "eval_samples=" << eval_samples << '\n';
    out << "eval_seed=" << eval_seed << '\n';
    out << "forget=";
    for (const auto& c : forget_concepts) out << c << ';';
    out << '\n';
    out << "granularity=" << selection::granularity_name(granularity) << '\n';
    out << "hidden_width=" << hidden_width << '\n';
    out << "l1_ffn1=" << format_double(train.l1_ffn1) << '\n';
    out << "l1_ffn2=" << format_double(train.l1_ffn2) << '\n';
    out << "learning_rate=" << format_double(train.learning_rate) << '\n';
    out << "mode_std=" << format_double(data.mode_std) << '\n';
    out << "modes=";
    for (const auto& m : data.modes) out << format_double(m[0]) << ',' << format_double(m[1]) << ';';
    out << '\n';
    out << "positions=" << positions << '\n';
    out << "preserve=";
    for (const auto& c : preserve_concepts) out << c << ';';
    out << '\n';
    out << "prompts_per_group=" << prompts_per_group << '\n';
    out << "r1=" << format_double(r1) << '\n';
    out << "r2=" << format_double(r2) << '\n';
    for (const auto& [concept_id, value] : r2_per_concept) {
        out << "r2." << concept_id << '=' << format_double(value) << '\n';
    }
    out << "samples_per_concept=" << data.samples_per_concept << '\n';
    out << "seed=" << seed << '\n';
    out << "std_mode=" << (std_mode == saliency::StdMode::Population ? "population" : "sample")
        << '\n';
    out << "steps=" << train.steps << '\n';
    out << "target_layers=";
    for (const auto& t : target_layers) out << t << ';';
    out << '\n';
    out << "timesteps=" << total_timesteps << '\n';
    out << "trace_layers=";
    for (const auto& t : trace_layers) out << t << ';';
    out << '\n';
    out << "window=" << window.first << ':' << window.last << '\n';
    return out.str();
}

StageHashes compute_stage_hashes(const PipelineConfig& cfg) {
    // Each stage hash chains the previous one with exactly the parameters
    // that stage adds, so overriding a late-stage knob leaves earlier
    // artifacts compatible.
    std::ostringstream trace_part;
    trace_part << "concepts=" << cfg.data.concept_count << ";mode_std="
               << format_double(cfg.data.mode_std) << ";modes=";
    for (const auto& m : cfg.data.modes) {
        trace_part << format_double(m[0]) << ',' << format_double(m[1]) << ';';
    }
    trace_part << "samples=" << cfg.data.samples_per_concept << ";steps=" << cfg.train.steps
               << ";lr=" << format_double(cfg.train.learning_rate)
               << ";batch=" << cfg.train.batch_size
               << ";dropout=" << format_double(cfg.train.cond_dropout)
               << ";l1=" << format_double(cfg.train.l1_ffn1) << ','
               << format_double(cfg.train.l1_ffn2)
               << ";hidden=" << cfg.hidden_width << ";cond_dim=" << cfg.cond_dim
               << ";T=" << cfg.total_timesteps << ";beta=" << format_double(cfg.beta_first) << ','
               << format_double(cfg.beta_last) << ";seed=" << cfg.seed
               << ";prompts=" << cfg.prompts_per_group << ";positions=" << cfg.positions
               << ";layers=";
    for (const auto& l : cfg.trace_layers) trace_part << l << ',';

    StageHashes hashes;
    std::uint64_t h = fnv1a(trace_part.str());
    hashes.trace = hex64(h);

    std::ostringstream saliency_part;
    saliency_part << "epsilon=" << format_double(cfg.epsilon) << ";std_mode="
                  << (cfg.std_mode == saliency::StdMode::Population ? "population" : "sample")
                  << ";window=" << cfg.window.first << ':' << cfg.window.last << ";targets=";
    for (const auto& l : cfg.resolve_target_layers()) saliency_part << l << ',';
    saliency_part << ";forget=";
    for (const auto& c : cfg.forget_concepts) saliency_part << c << ',';
    h = fnv1a(saliency_part.str(), h);
    hashes.saliency = hex64(h);

    h = fnv1a("r1=" + format_double(cfg.r1), h);
    hashes.sensitivity = hex64(h);

    std::ostringstream select_part;
    select_part << "r2=" << format_double(cfg.r2) << ";granularity="
                << selection::granularity_name(cfg.granularity);
    for (const auto& [concept_id, value] : cfg.r2_per_concept) {
        select_part << ";r2." << concept_id << '=' << format_double(value);
    }
    h = fnv1a(select_part.str(), h);
    hashes.select = hex64(h);

    h = fnv1a("alpha=" + format_double(cfg.alpha), h);
    hashes.fuse = hex64(h);

    h = fnv1a("apply", h);
    hashes.apply = hex64(h);

    std::ostringstream eval_part;
    eval_part << "eval_samples=" << cfg.eval_samples << ";eval_seed=" << cfg.eval_seed
              << ";preserve=";
    for (const auto& c : cfg.preserve_concepts) eval_part << c << ',';
    h = fnv1a(eval_part.str(), h);
    hashes.eval = hex64(h);
    return hashes;
}

namespace {

void apply_entry(PipelineConfig& cfg, const std::string& section, const std::string& key,
                 const std::string& value) {
    const std::string full = section.empty() ? key : section + "." + key;

    if (section == "data") {
        if (key == "concepts") {
            cfg.data.concept_count = static_cast<std::uint32_t>(parse_u64(value, full));
            return;
        }
        if (key == "modes") {
            cfg.data.modes.clear();
            for (const auto& pair : split(value, ';')) {
                const auto coords = split(pair, ',');
                if (coords.size() != 2) {
                    throw ConfigError("config: modes entries need two coordinates");
                }
                cfg.data.modes.push_back(
                    {parse_number(coords[0], full), parse_number(coords[1], full)});
            }
            return;
        }
        if (key == "mode_std") {
            cfg.data.mode_std = parse_number(value, full);
            return;
        }
        if (key == "samples_per_concept") {
            cfg.data.samples_per_concept = static_cast<std::uint32_t>(parse_u64(value, full));
            return;
        }
    }
    if (section == "train") {
        if (key == "steps") {
            cfg.train.steps = static_cast<std::uint32_t>(parse_u64(value, full));
            return;
        }
        if (key == "learning_rate") {
            cfg.train.learning_rate = parse_number(value, full);
            return;
        }
        if (key == "batch_size") {
            cfg.train.batch_size = static_cast<std::uint32_t>(parse_u64(value, full));
            return;
        }
        if (key == "cond_dropout") {
            cfg.train.cond_dropout = parse_fraction(value);
            return;
        }
        if (key == "l1_ffn1") {
            cfg.train.l1_ffn1 = parse_number(value, full);
            return;
        }
        if (key == "l1_ffn2") {
            cfg.train.l1_ffn2 = parse_number(value, full);
            return;
        }
        if (key == "hidden_width") {
            cfg.hidden_width = static_cast<std::uint32_t>(parse_u64(value, full));
            return;
        }
        if (key == "cond_dim") {
            cfg.cond_dim = static_cast<std::uint32_t>(parse_u64(value, full));
            return;
        }
        if (key == "timesteps") {
            cfg.total_timesteps = static_cast<std::uint32_t>(parse_u64(value, full));
            return;
        }
        if (key == "beta_first") {
            cfg.beta_first = parse_number(value, full);
            return;
        }
        if (key == "beta_last") {
            cfg.beta_last = parse_number(value, full);
            return;
        }
        if (key == "seed") {
            cfg.seed = parse_u64(value, full);
            return;
        }
    }
    if (section == "trace") {
        if (key == "prompts_per_group") {
            cfg.prompts_per_group = static_cast<std::uint32_t>(parse_u64(value, full));
            return;
        }
        if (key == "positions") {
            cfg.positions = static_cast<std::uint32_t>(parse_u64(value, full));
            return;
        }
        if (key == "layers") {
            cfg.trace_layers = split(value, ',');
            return;
        }
    }
    if (section == "saliency") {
        if (key == "epsilon") {
            cfg.epsilon = parse_number(value, full);
            return;
        }
        if (key == "std_mode") {
            if (value == "population") {
                cfg.std_mode = saliency::StdMode::Population;
            } else if (value == "sample") {
                cfg.std_mode = saliency::StdMode::Sample;
            } else {
                throw ConfigError("config: std_mode must be population or sample");
            }
            return;
        }
        if (key == "window") {
            const auto parts = split(value, ':');
            if (parts.size() != 2) throw ConfigError("config: window must be first:last");
            cfg.window.first = static_cast<std::uint32_t>(parse_u64(parts[0], full));
            cfg.window.last = static_cast<std::uint32_t>(parse_u64(parts[1], full));
            return;
        }
    }
    if (section == "sensitivity" && key == "r1") {
        cfg.r1 = parse_fraction(value);
        return;
    }
    if (section == "select") {
        if (key == "r2") {
            cfg.r2 = parse_fraction(value);
            return;
        }
        if (key.rfind("r2.", 0) == 0) {
            cfg.r2_per_concept[normalize_concept(key.substr(3))] = parse_fraction(value);
            return;
        }
        if (key == "granularity") {
            const auto g = selection::granularity_from_name(value);
            if (!g) throw ConfigError("config: granularity must be channel, layer or both");
            cfg.granularity = *g;
            return;
        }
    }
    if (section == "fuse" && key == "alpha") {
        cfg.alpha = parse_fraction(value);
        return;
    }
    if (section == "run") {
        if (key == "forget") {
            cfg.forget_concepts.clear();
            for (const auto& c : split(value, ',')) {
                cfg.forget_concepts.push_back(normalize_concept(c));
            }
            return;
        }
        if (key == "preserve") {
            cfg.preserve_concepts.clear();
            for (const auto& c : split(value, ',')) {
                cfg.preserve_concepts.push_back(normalize_concept(c));
            }
            return;
        }
        if (key == "target_layers") {
            cfg.target_layers = split(value, ',');
            return;
        }
        if (key == "eval_samples") {
            cfg.eval_samples = static_cast<std::uint32_t>(parse_u64(value, full));
            return;
        }
        if (key == "eval_seed") {
            cfg.eval_seed = parse_u64(value, full);
            return;
        }
    }
    throw ConfigError("config: unknown key '" + full + "'");
}

}  // namespace

PipelineConfig parse_config_text(const std::string& text) {
    PipelineConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto comment = line.find('#');
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("config: malformed section at line " + std::to_string(line_no));
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: expected key = value at line " + std::to_string(line_no));
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config: empty key at line " + std::to_string(line_no));
        }
        apply_entry(cfg, section, key, value);
    }
    cfg.validate();
    return cfg;
}

PipelineConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

}  // namespace fia::config
