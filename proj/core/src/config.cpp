#include "cfp/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace cfp::io {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& v, int lo, int hi) {
    int out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    if (out < lo || out > hi)
        throw ConfigError(key + ": " + v + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return out;
}

float parse_float(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        float f = std::stof(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return f;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    return out;
}

std::vector<int> parse_levels(const std::string& v) {
    std::vector<int> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        int lvl = parse_int("gcr.levels", item, 0, 4);
        for (int seen : out)
            if (seen == lvl) throw ConfigError("gcr.levels: duplicate level " + item);
        out.push_back(lvl);
    }
    return out;
}

std::string format_float(float f) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(f));
    return buf;
}

} // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (!seen.insert(key).second)
            throw ConfigError("duplicate key '" + key + "' at line " + std::to_string(lineno));

        if (key == "stem.channels") cfg.stem_channels = parse_int(key, value, 1, 1 << 16);
        else if (key == "mlp.expansion") cfg.mlp_expansion = parse_int(key, value, 1, 64);
        else if (key == "mlp.dconv_kernel") cfg.mlp_dconv_kernel = parse_int(key, value, 1, 15);
        else if (key == "mlp.groupnorm_groups") cfg.mlp_groupnorm_groups = parse_int(key, value, 1, 1 << 16);
        else if (key == "lvc.codewords") cfg.lvc_codewords = parse_int(key, value, 1, 1 << 16);
        else if (key == "gcr.levels") cfg.gcr_levels = parse_levels(value);
        else if (key == "gcr.repeat") cfg.gcr_repeat = parse_int(key, value, 1, 16);
        else if (key == "droppath") {
            cfg.droppath = parse_float(key, value);
            if (!(cfg.droppath >= 0.0f && cfg.droppath < 1.0f))
                throw ConfigError("droppath must be in [0, 1), got " + value);
        } else if (key == "eps") {
            cfg.eps = parse_float(key, value);
            if (!(cfg.eps > 0.0f)) throw ConfigError("eps must be > 0, got " + value);
        } else if (key == "seed") cfg.seed = parse_u64(key, value);
        else if (key == "mode") {
            if (value == "eval") cfg.mode = Mode::eval;
            else if (value == "train") cfg.mode = Mode::train;
            else throw ConfigError("mode must be eval or train, got '" + value + "'");
        } else {
            throw ConfigError("unknown key '" + key + "' at line " + std::to_string(lineno));
        }
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatError::Code::io, "cannot open config " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "stem.channels=" << cfg.stem_channels << '\n';
    os << "mlp.expansion=" << cfg.mlp_expansion << '\n';
    os << "mlp.dconv_kernel=" << cfg.mlp_dconv_kernel << '\n';
    os << "mlp.groupnorm_groups=" << cfg.mlp_groupnorm_groups << '\n';
    os << "lvc.codewords=" << cfg.lvc_codewords << '\n';
    os << "gcr.levels=";
    for (std::size_t i = 0; i < cfg.gcr_levels.size(); ++i) {
        if (i) os << ',';
        os << cfg.gcr_levels[i];
    }
    os << '\n';
    os << "gcr.repeat=" << cfg.gcr_repeat << '\n';
    os << "droppath=" << format_float(cfg.droppath) << '\n';
    os << "eps=" << format_float(cfg.eps) << '\n';
    os << "seed=" << cfg.seed << '\n';
    os << "mode=" << (cfg.mode == Mode::eval ? "eval" : "train") << '\n';
    return os.str();
}

} // namespace cfp::io
