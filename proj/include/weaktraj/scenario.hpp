#pragma once

// Scenario configuration (JSON), bundled setups, and the run pipeline.

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bohmian.hpp"
#include "classical.hpp"
#include "csv.hpp"
#include "parallel.hpp"
#include "propagation.hpp"
#include "weak.hpp"

namespace weaktraj {

inline constexpr const char* kVersion = "1.0.0";

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config types

struct CalibrationDirective {
    double t_O = kReturnTime;
    std::array<double, 2> xi_ratio{1.0, 1.0};
    std::array<double, 2> ups_ratio{0.3, 0.3};
    std::array<int, 2> zero_index{2, 1};
};

struct PotentialConfig {
    std::optional<std::array<AxisPotential, 2>> axes;
    std::optional<CalibrationDirective> calibrate;
    double m = 1.0;

    PotentialParams resolve() const {
        if (axes) {
            PotentialParams p{*axes, m};
            p.validate();
            return p;
        }
        const auto& c = *calibrate;
        PotentialParams tmpl;
        tmpl.m = m;
        for (std::size_t i = 0; i < 2; ++i) tmpl.axis[i] = {c.xi_ratio[i], c.ups_ratio[i], 1.0};
        return calibrate_return_time(tmpl, c.t_O, c.zero_index);
    }
};

struct BranchConfig {
    std::string label;
    Complex c{1.0};
    Vec2 p;
};

struct PreselectionConfig {
    Vec2 r0;
    double delta = 1.0;
    std::vector<BranchConfig> branches;
};

// A postselected component at t_f. `retrace` copies the named branch's exact
// state; `branch` takes only its classical centre and momentum with a real
// width delta_f; otherwise r_f and p_f are explicit.
struct PostStateConfig {
    std::string retrace;
    std::string branch;
    Vec2 r_f;
    Vec2 p_f;
    std::optional<double> delta_f;
    Vec2 offset;
    Vec2 momentum_offset;
    Complex c{1.0};
};

struct PostselectionConfig {
    double t_f = 3.65;
    std::vector<PostStateConfig> states;
};

struct MeterConfig {
    std::string id;
    std::optional<Vec2> R0;
    std::string on_branch;
    double on_t = 0.0;
    Vec2 offset;
    double Delta = 0.1;
    double g = 0.01;
    double tau = 1e-2;
};

struct TimeGridConfig {
    double t_i = 0.0;
    double t_f = 3.65;
    double step = 1e-3;
};

struct FamilyConfig {
    std::string branch = "I";
    double offset = 0.05;
    int half_width = 1;
    double t_end = 0.0;
};

struct OutputsConfig {
    std::vector<std::string> products;
    std::vector<double> snapshot_times;
    SnapshotMesh mesh;
    std::size_t shots = 10000;
    FamilyConfig family;
};

struct ScenarioConfig {
    PotentialConfig potential;
    PreselectionConfig preselection;
    PostselectionConfig postselection;
    std::vector<MeterConfig> meters;
    TimeGridConfig time_grid;
    OutputsConfig outputs;
    std::uint64_t seed = 0;
    json source;
};

inline const std::vector<std::string>& known_products() {
    static const std::vector<std::string> p{"classical", "propagate", "weak-traj", "average-traj", "pointer"};
    return p;
}

inline std::string roman(std::size_t n) {
    static const char* r[] = {"I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X"};
    return n < 10 ? r[n] : "B" + std::to_string(n + 1);
}

// ---------------------------------------------------------------------------
// Parsing with field paths in every error.

namespace cfg {

inline void fail(const std::string& path, const std::string& what) { throw ConfigError(path + ": " + what); }

inline void object(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) fail(path, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }))
            fail(path.empty() ? it.key() : path + "." + it.key(), "unknown key");
    }
}

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline const json& at(const json& j, const std::string& path, const char* key) {
    if (!j.contains(key)) fail(join(path, key), "missing");
    return j.at(key);
}

inline double number(const json& j, const std::string& path) {
    if (!j.is_number()) fail(path, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) fail(path, "must be finite");
    return v;
}

inline double number(const json& j, const std::string& path, const char* key, double dflt) {
    return j.contains(key) ? number(j.at(key), join(path, key)) : dflt;
}

inline double positive(const json& j, const std::string& path, const char* key, double dflt) {
    const double v = number(j, path, key, dflt);
    if (!(v > 0.0)) fail(join(path, key), "must be positive");
    return v;
}

inline Vec2 vec2(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 2) fail(path, "expected [x, y]");
    return {number(j[0], path + "[0]"), number(j[1], path + "[1]")};
}

inline Complex complex_value(const json& j, const std::string& path) {
    if (j.is_number()) return {number(j, path), 0.0};
    if (j.is_array() && j.size() == 2) return {number(j[0], path + "[0]"), number(j[1], path + "[1]")};
    fail(path, "expected a number or [re, im]");
    return {};
}

inline std::string string(const json& j, const std::string& path) {
    if (!j.is_string()) fail(path, "expected a string");
    return j.get<std::string>();
}

inline const json& array(const json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "expected an array");
    return j;
}

}  // namespace cfg

inline PotentialConfig parse_potential(const json& j) {
    const std::string path = "potential";
    cfg::object(j, path, {"axes", "calibrate", "m"});
    PotentialConfig p;
    p.m = cfg::positive(j, path, "m", 1.0);
    if (j.contains("axes") == j.contains("calibrate")) cfg::fail(path, "give exactly one of 'axes' or 'calibrate'");
    if (j.contains("axes")) {
        const auto& a = cfg::array(j.at("axes"), path + ".axes");
        if (a.size() != 2) cfg::fail(path + ".axes", "expected two axes");
        std::array<AxisPotential, 2> axes;
        for (std::size_t i = 0; i < 2; ++i) {
            const std::string ap = path + ".axes[" + std::to_string(i) + "]";
            cfg::object(a[i], ap, {"xi", "ups", "omega"});
            axes[i] = {cfg::number(cfg::at(a[i], ap, "xi"), ap + ".xi"), cfg::number(cfg::at(a[i], ap, "ups"), ap + ".ups"),
                       cfg::number(cfg::at(a[i], ap, "omega"), ap + ".omega")};
        }
        p.axes = axes;
    } else {
        const std::string cp = path + ".calibrate";
        const auto& c = j.at("calibrate");
        cfg::object(c, cp, {"t_O", "xi_ratio", "ups_ratio", "zero_index"});
        CalibrationDirective d;
        d.t_O = cfg::positive(c, cp, "t_O", kReturnTime);
        if (c.contains("xi_ratio")) {
            const Vec2 v = cfg::vec2(c.at("xi_ratio"), cp + ".xi_ratio");
            d.xi_ratio = {v.x, v.y};
        }
        if (c.contains("ups_ratio")) {
            const Vec2 v = cfg::vec2(c.at("ups_ratio"), cp + ".ups_ratio");
            d.ups_ratio = {v.x, v.y};
        }
        if (c.contains("zero_index")) {
            const auto& z = c.at("zero_index");
            if (!z.is_array() || z.size() != 2 || !z[0].is_number_integer() || !z[1].is_number_integer() ||
                z[0].get<int>() < 1 || z[1].get<int>() < 1)
                cfg::fail(cp + ".zero_index", "expected two integers >= 1");
            d.zero_index = {z[0].get<int>(), z[1].get<int>()};
        }
        p.calibrate = d;
    }
    return p;
}

inline PreselectionConfig parse_preselection(const json& j) {
    const std::string path = "preselection";
    cfg::object(j, path, {"r0", "delta", "branches"});
    PreselectionConfig p;
    p.r0 = j.contains("r0") ? cfg::vec2(j.at("r0"), path + ".r0") : Vec2{};
    p.delta = cfg::positive(j, path, "delta", 1.0);
    const auto& b = cfg::array(cfg::at(j, path, "branches"), path + ".branches");
    if (b.empty()) cfg::fail(path + ".branches", "at least one branch required");
    std::set<std::string> labels;
    for (std::size_t k = 0; k < b.size(); ++k) {
        const std::string bp = path + ".branches[" + std::to_string(k) + "]";
        cfg::object(b[k], bp, {"label", "c", "p"});
        BranchConfig bc;
        bc.label = b[k].contains("label") ? cfg::string(b[k].at("label"), bp + ".label") : roman(k);
        bc.c = b[k].contains("c") ? cfg::complex_value(b[k].at("c"), bp + ".c") : Complex{1.0};
        bc.p = cfg::vec2(cfg::at(b[k], bp, "p"), bp + ".p");
        if (!labels.insert(bc.label).second) cfg::fail(bp + ".label", "duplicate label " + bc.label);
        p.branches.push_back(bc);
    }
    return p;
}

inline PostselectionConfig parse_postselection(const json& j) {
    const std::string path = "postselection";
    cfg::object(j, path, {"t_f", "states"});
    PostselectionConfig p;
    p.t_f = cfg::number(cfg::at(j, path, "t_f"), path + ".t_f");
    const auto& s = cfg::array(cfg::at(j, path, "states"), path + ".states");
    if (s.empty()) cfg::fail(path + ".states", "at least one postselected component required");
    for (std::size_t k = 0; k < s.size(); ++k) {
        const std::string sp = path + ".states[" + std::to_string(k) + "]";
        cfg::object(s[k], sp, {"retrace", "branch", "r_f", "p_f", "delta_f", "offset", "momentum_offset", "c"});
        PostStateConfig st;
        const int modes = int(s[k].contains("retrace")) + int(s[k].contains("branch")) + int(s[k].contains("r_f"));
        if (modes != 1) cfg::fail(sp, "give exactly one of 'retrace', 'branch' or 'r_f'");
        if (s[k].contains("retrace")) {
            st.retrace = cfg::string(s[k].at("retrace"), sp + ".retrace");
            if (s[k].contains("delta_f") || s[k].contains("p_f")) cfg::fail(sp, "'retrace' takes the branch's own width and momentum");
        } else if (s[k].contains("branch")) {
            st.branch = cfg::string(s[k].at("branch"), sp + ".branch");
            if (s[k].contains("p_f")) cfg::fail(sp + ".p_f", "not allowed with 'branch'");
        } else {
            st.r_f = cfg::vec2(s[k].at("r_f"), sp + ".r_f");
            st.p_f = s[k].contains("p_f") ? cfg::vec2(s[k].at("p_f"), sp + ".p_f") : Vec2{};
        }
        if (s[k].contains("delta_f")) st.delta_f = cfg::positive(s[k], sp, "delta_f", 1.0);
        if (s[k].contains("offset")) st.offset = cfg::vec2(s[k].at("offset"), sp + ".offset");
        if (s[k].contains("momentum_offset"))
            st.momentum_offset = cfg::vec2(s[k].at("momentum_offset"), sp + ".momentum_offset");
        if (s[k].contains("c")) st.c = cfg::complex_value(s[k].at("c"), sp + ".c");
        p.states.push_back(st);
    }
    return p;
}

inline std::vector<MeterConfig> parse_meters(const json& j) {
    const auto& a = cfg::array(j, "meters");
    std::vector<MeterConfig> out;
    std::set<std::string> ids;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const std::string mp = "meters[" + std::to_string(k) + "]";
        cfg::object(a[k], mp, {"id", "R0", "on_branch", "offset", "Delta", "g", "tau"});
        MeterConfig m;
        m.id = cfg::string(cfg::at(a[k], mp, "id"), mp + ".id");
        if (!ids.insert(m.id).second) cfg::fail(mp + ".id", "duplicate meter id " + m.id);
        if (a[k].contains("R0") == a[k].contains("on_branch")) cfg::fail(mp, "give exactly one of 'R0' or 'on_branch'");
        if (a[k].contains("R0")) {
            m.R0 = cfg::vec2(a[k].at("R0"), mp + ".R0");
        } else {
            const std::string op = mp + ".on_branch";
            const auto& o = a[k].at("on_branch");
            cfg::object(o, op, {"branch", "t"});
            m.on_branch = cfg::string(cfg::at(o, op, "branch"), op + ".branch");
            m.on_t = cfg::number(cfg::at(o, op, "t"), op + ".t");
        }
        if (a[k].contains("offset")) m.offset = cfg::vec2(a[k].at("offset"), mp + ".offset");
        m.Delta = cfg::positive(a[k], mp, "Delta", 0.1);
        m.g = cfg::number(a[k], mp, "g", 0.01);
        if (m.g < 0.0) cfg::fail(mp + ".g", "must be non-negative");
        m.tau = cfg::number(a[k], mp, "tau", 1e-2);
        if (m.tau < 0.0) cfg::fail(mp + ".tau", "must be non-negative");
        out.push_back(m);
    }
    return out;
}

inline TimeGridConfig parse_time_grid(const json& j) {
    const std::string path = "time_grid";
    cfg::object(j, path, {"t_i", "t_f", "step"});
    TimeGridConfig g;
    g.t_i = cfg::number(j, path, "t_i", 0.0);
    g.t_f = cfg::number(cfg::at(j, path, "t_f"), path + ".t_f");
    g.step = cfg::positive(j, path, "step", 1e-3);
    if (!(g.t_f > g.t_i)) cfg::fail(path + ".t_f", "must exceed t_i");
    return g;
}

inline OutputsConfig parse_outputs(const json& j) {
    const std::string path = "outputs";
    cfg::object(j, path, {"products", "snapshot_times", "snapshot_mesh", "shots", "family"});
    OutputsConfig o;
    const auto& p = cfg::array(cfg::at(j, path, "products"), path + ".products");
    for (std::size_t k = 0; k < p.size(); ++k) {
        const auto name = cfg::string(p[k], path + ".products[" + std::to_string(k) + "]");
        const auto& known = known_products();
        if (std::find(known.begin(), known.end(), name) == known.end())
            cfg::fail(path + ".products[" + std::to_string(k) + "]", "unknown product " + name);
        o.products.push_back(name);
    }
    if (j.contains("snapshot_times")) {
        const auto& t = cfg::array(j.at("snapshot_times"), path + ".snapshot_times");
        for (std::size_t k = 0; k < t.size(); ++k)
            o.snapshot_times.push_back(cfg::number(t[k], path + ".snapshot_times[" + std::to_string(k) + "]"));
    }
    if (j.contains("snapshot_mesh")) {
        const std::string mp = path + ".snapshot_mesh";
        const auto& m = j.at("snapshot_mesh");
        cfg::object(m, mp, {"lo", "hi", "n"});
        o.mesh.lo = cfg::vec2(cfg::at(m, mp, "lo"), mp + ".lo");
        o.mesh.hi = cfg::vec2(cfg::at(m, mp, "hi"), mp + ".hi");
        const auto& n = cfg::at(m, mp, "n");
        if (!n.is_array() || n.size() != 2 || !n[0].is_number_integer() || !n[1].is_number_integer() ||
            n[0].get<long>() < 2 || n[1].get<long>() < 2)
            cfg::fail(mp + ".n", "expected two integers >= 2");
        o.mesh.nx = n[0].get<std::size_t>();
        o.mesh.ny = n[1].get<std::size_t>();
        if (!(o.mesh.hi.x > o.mesh.lo.x && o.mesh.hi.y > o.mesh.lo.y)) cfg::fail(mp, "hi must exceed lo");
    }
    if (j.contains("shots")) {
        const auto& s = j.at("shots");
        if (!s.is_number_integer() || s.get<long long>() < 1) cfg::fail(path + ".shots", "expected an integer >= 1");
        o.shots = s.get<std::size_t>();
    }
    if (j.contains("family")) {
        const std::string fp = path + ".family";
        const auto& f = j.at("family");
        cfg::object(f, fp, {"branch", "offset", "half_width", "t_end"});
        if (f.contains("branch")) o.family.branch = cfg::string(f.at("branch"), fp + ".branch");
        o.family.offset = cfg::positive(f, fp, "offset", 0.05);
        if (f.contains("half_width")) {
            if (!f.at("half_width").is_number_integer() || f.at("half_width").get<int>() < 0)
                cfg::fail(fp + ".half_width", "expected an integer >= 0");
            o.family.half_width = f.at("half_width").get<int>();
        }
        o.family.t_end = cfg::number(f, fp, "t_end", 0.0);
    }
    return o;
}

inline ScenarioConfig parse_config(const json& j) {
    cfg::object(j, "", {"potential", "preselection", "postselection", "meters", "time_grid", "outputs", "seed"});
    for (const char* k : {"potential", "preselection", "postselection", "meters", "time_grid", "outputs", "seed"})
        if (!j.contains(k)) cfg::fail(k, "missing");
    ScenarioConfig c;
    c.source = j;
    c.potential = parse_potential(j.at("potential"));
    c.preselection = parse_preselection(j.at("preselection"));
    c.postselection = parse_postselection(j.at("postselection"));
    c.meters = parse_meters(j.at("meters"));
    c.time_grid = parse_time_grid(j.at("time_grid"));
    c.outputs = parse_outputs(j.at("outputs"));
    const auto& s = j.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0))
        cfg::fail("seed", "expected a non-negative integer");
    c.seed = s.get<std::uint64_t>();

    // Cross-field checks.
    const auto& g = c.time_grid;
    auto in_grid = [&](double t) { return t >= g.t_i - 1e-12 && t <= g.t_f + 1e-12; };
    if (!in_grid(c.postselection.t_f) || c.postselection.t_f <= g.t_i)
        cfg::fail("postselection.t_f", "outside time_grid");
    std::set<std::string> labels;
    for (const auto& b : c.preselection.branches) labels.insert(b.label);
    auto known_label = [&](const std::string& l, const std::string& path) {
        if (!labels.count(l)) cfg::fail(path, "unknown branch label " + l);
    };
    for (std::size_t k = 0; k < c.postselection.states.size(); ++k) {
        const auto& s = c.postselection.states[k];
        const std::string sp = "postselection.states[" + std::to_string(k) + "]";
        if (!s.retrace.empty()) known_label(s.retrace, sp + ".retrace");
        if (!s.branch.empty()) known_label(s.branch, sp + ".branch");
    }
    for (std::size_t k = 0; k < c.meters.size(); ++k) {
        const auto& m = c.meters[k];
        if (m.on_branch.empty()) continue;
        const std::string mp = "meters[" + std::to_string(k) + "].on_branch";
        known_label(m.on_branch, mp + ".branch");
        if (!in_grid(m.on_t)) cfg::fail(mp + ".t", "outside time_grid");
    }
    for (std::size_t k = 0; k < c.outputs.snapshot_times.size(); ++k)
        if (!in_grid(c.outputs.snapshot_times[k]))
            cfg::fail("outputs.snapshot_times[" + std::to_string(k) + "]", "outside time_grid");
    const auto& prods = c.outputs.products;
    auto wants = [&](const char* p) { return std::find(prods.begin(), prods.end(), p) != prods.end(); };
    if (wants("average-traj")) {
        known_label(c.outputs.family.branch, "outputs.family.branch");
        if (!in_grid(c.outputs.family.t_end)) cfg::fail("outputs.family.t_end", "outside time_grid");
    }
    if ((wants("weak-traj") || wants("pointer")) && c.meters.empty())
        cfg::fail("meters", "weak-traj and pointer need at least one meter");
    return c;
}

inline ScenarioConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(j);
}

// ---------------------------------------------------------------------------
// Bundled setups

namespace detail {

inline json base_setup() {
    return json::parse(R"({
  "potential": {"calibrate": {"t_O": 2.84, "xi_ratio": [1.0, 1.0], "ups_ratio": [0.3, 0.3], "zero_index": [2, 1]}, "m": 1.0},
  "preselection": {"r0": [0.0, 0.0], "delta": 1.0, "branches": [
    {"label": "I",   "c": 0.32, "p": [17.0, 7.0]},
    {"label": "II",  "c": 0.35, "p": [-7.0, 15.0]},
    {"label": "III", "c": 0.33, "p": [0.0, 15.0]}]},
  "postselection": {"t_f": 3.65, "states": [{"retrace": "I"}]},
  "meters": [],
  "time_grid": {"t_i": 0.0, "t_f": 3.65, "step": 0.001},
  "outputs": {"products": []},
  "seed": 20240607
})");
}

inline json meter(const char* id, const char* branch, double t) {
    return {{"id", id}, {"on_branch", {{"branch", branch}, {"t", t}}}, {"Delta", 0.1}, {"g", 0.01}, {"tau", 0.01}};
}

}  // namespace detail

inline const std::vector<std::string>& scenario_names() {
    static const std::vector<std::string> n{"fig1", "fig2a", "fig2b", "fig3a", "fig3b"};
    return n;
}

inline std::string scenario_summary(const std::string& name) {
    if (name == "fig1") return "three-branch state, classical guides and snapshots at t = 0.7, 2, 3.15, 3.65";
    if (name == "fig2a") return "meters D1 on III, D2 on II, D3 on I; postselection retraces I at t_f = 3.65";
    if (name == "fig2b") return "nine average trajectories ending around q_I(3.65)";
    if (name == "fig3a") return "three meters on trajectory I; postselection retraces I";
    if (name == "fig3b") return "three-term postselection at the common return time 2.84, meters on all trajectories";
    throw ConfigError("unknown scenario " + name);
}

inline json bundled_scenario(const std::string& name) {
    json j = detail::base_setup();
    auto& out = j["outputs"];
    if (name == "fig1") {
        out["products"] = {"classical", "propagate"};
        out["snapshot_times"] = {0.7, 2.0, 3.15, 3.65};
        out["snapshot_mesh"] = {{"lo", {-16.0, -18.0}}, {"hi", {16.0, 18.0}}, {"n", {128, 128}}};
    } else if (name == "fig2a") {
        j["meters"] = {detail::meter("D1", "III", 0.7), detail::meter("D2", "II", 2.0), detail::meter("D3", "I", 3.15)};
        out["products"] = {"classical", "weak-traj", "pointer"};
        out["shots"] = 100000;
    } else if (name == "fig2b") {
        j["meters"] = {detail::meter("D1", "III", 0.7), detail::meter("D2", "II", 2.0), detail::meter("D3", "I", 3.15)};
        out["products"] = {"classical", "average-traj"};
        out["family"] = {{"branch", "I"}, {"offset", 0.05}, {"half_width", 1}, {"t_end", 0.0}};
    } else if (name == "fig3a") {
        j["meters"] = {detail::meter("D1'", "I", 0.7), detail::meter("D2'", "I", 2.0), detail::meter("D3", "I", 3.15)};
        out["products"] = {"classical", "weak-traj", "pointer"};
        out["shots"] = 100000;
    } else if (name == "fig3b") {
        j["postselection"] = {{"t_f", 2.84},
                              {"states", {{{"branch", "I"}}, {{"branch", "II"}}, {{"branch", "III"}}}}};
        j["time_grid"]["t_f"] = 2.84;
        j["meters"] = {detail::meter("I-a", "I", 0.7),    detail::meter("I-b", "I", 1.7),
                       detail::meter("I-c", "I", 2.5),    detail::meter("II-a", "II", 0.8),
                       detail::meter("II-b", "II", 2.1),  detail::meter("III-a", "III", 0.6),
                       detail::meter("III-b", "III", 2.3)};
        out["products"] = {"classical", "weak-traj", "pointer"};
        out["shots"] = 100000;
    } else {
        throw ConfigError("unknown scenario " + name);
    }
    return j;
}

// ---------------------------------------------------------------------------
// Building the physical model

struct ScenarioModel {
    PotentialParams pot;
    TimeGrid grid;
    std::vector<std::string> labels;
    Superposition psi;
    Superposition chi;
    std::vector<Meter> meters;
    double t_f = 0.0;

    std::size_t branch_index(const std::string& label) const {
        const auto it = std::find(labels.begin(), labels.end(), label);
        if (it == labels.end()) throw ConfigError("unknown branch label " + label);
        return static_cast<std::size_t>(it - labels.begin());
    }
};

struct BuildOptions {
    double omega_scale = 1.0;  // multiplies the resolved omegas (sensitivity probes)
    unsigned threads = 1;
};

inline ScenarioModel build_model(const ScenarioConfig& c, const BuildOptions& opt = {}) {
    ScenarioModel m;
    m.pot = c.potential.resolve();
    if (opt.omega_scale != 1.0)
        for (auto& a : m.pot.axis) a.omega *= opt.omega_scale;
    m.grid = TimeGrid(c.time_grid.t_i, c.time_grid.t_f, c.time_grid.step);
    m.t_f = c.postselection.t_f;

    const auto& pre = c.preselection;
    m.psi.branches.resize(pre.branches.size());
    for (const auto& b : pre.branches) m.labels.push_back(b.label);
    parallel_for(pre.branches.size(), opt.threads, [&](std::size_t j) {
        const auto& b = pre.branches[j];
        m.psi.branches[j] = propagate_forward(make_wavepacket(pre.r0, b.p, pre.delta), m.pot, m.grid, b.c);
    });

    const auto& post = c.postselection;
    m.chi.branches.resize(post.states.size());
    parallel_for(post.states.size(), opt.threads, [&](std::size_t k) {
        const auto& s = post.states[k];
        ComplexGaussian g;
        if (!s.retrace.empty()) {
            g = m.psi[m.branch_index(s.retrace)].state_at(m.t_f);
        } else if (!s.branch.empty()) {
            const auto st = m.psi[m.branch_index(s.branch)].guide().state_at(m.t_f);
            g = make_wavepacket(st.q, st.p, s.delta_f.value_or(pre.delta));
        } else {
            g = make_wavepacket(s.r_f, s.p_f, s.delta_f.value_or(pre.delta));
        }
        g.q = g.q + s.offset;
        g.p = g.p + s.momentum_offset;
        m.chi.branches[k] = backward_postselected(g, m.t_f, m.pot, m.grid, s.c);
    });

    for (const auto& mc : c.meters) {
        Meter mt;
        mt.id = mc.id;
        mt.Delta = mc.Delta;
        mt.g = mc.g;
        mt.tau = mc.tau;
        mt.R0 = mc.R0 ? *mc.R0 : m.psi[m.branch_index(mc.on_branch)].guide().state_at(mc.on_t).q;
        mt.R0 = mt.R0 + mc.offset;
        m.meters.push_back(mt);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Run pipeline

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct RunOptions {
    std::optional<std::uint64_t> seed;
    std::optional<std::vector<std::string>> products;  // overrides outputs.products
    unsigned threads = 1;
    double omega_scale = 1.0;
};

struct RunSummary {
    std::vector<std::string> files;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::optional<WeakTrajectory> weak;
    std::vector<AverageTrajectory> family;
};

namespace detail {

inline std::string time_tag(double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", t);
    return buf;
}

}  // namespace detail

inline RunSummary run_scenario(const ScenarioConfig& c, const std::filesystem::path& out_dir, const RunOptions& opt = {}) {
    const auto products = opt.products.value_or(c.outputs.products);
    auto wants = [&](const char* p) { return std::find(products.begin(), products.end(), p) != products.end(); };
    if ((wants("weak-traj") || wants("pointer")) && c.meters.empty())
        throw ConfigError("meters: weak-traj and pointer need at least one meter");
    if (wants("average-traj")) {
        const auto& f = c.outputs.family;
        const bool known = std::any_of(c.preselection.branches.begin(), c.preselection.branches.end(),
                                       [&](const auto& b) { return b.label == f.branch; });
        if (!known) throw ConfigError("outputs.family.branch: unknown branch label " + f.branch);
    }

    RunSummary sum;
    sum.seed = opt.seed.value_or(c.seed);
    json canonical = c.source;
    canonical["seed"] = sum.seed;
    sum.config_hash = hex64(fnv1a(canonical.dump()));

    const ScenarioModel m = build_model(c, {opt.omega_scale, opt.threads});
    std::filesystem::create_directories(out_dir);
    auto emit = [&](const std::string& name, auto&& write) {
        auto os = csv::open(out_dir / name);
        write(os);
        sum.files.push_back(name);
    };

    if (wants("classical")) {
        for (std::size_t j = 0; j < m.psi.size(); ++j)
            emit("classical_" + m.labels[j] + ".csv", [&](std::ostream& os) { m.psi[j].guide().write_csv(os); });
        for (std::size_t k = 0; k < m.chi.size(); ++k)
            emit("postselected_guide_" + std::to_string(k) + ".csv",
                 [&](std::ostream& os) { m.chi[k].guide().write_csv(os); });
    }
    if (wants("propagate")) {
        auto times = c.outputs.snapshot_times;
        if (times.empty()) times.push_back(m.t_f);
        for (double t : times) {
            emit("snapshot_t" + detail::time_tag(t) + ".csv", [&](std::ostream& os) {
                write_snapshot_csv(os, c.outputs.mesh, [&](Vec2 r) { return evaluate_superposition(m.psi, r, t); });
            });
        }
    }
    if (wants("weak-traj") || wants("pointer")) {
        sum.weak = weak_trajectory(m.psi, m.chi, m.meters);
        if (wants("weak-traj"))
            emit("weak_trajectory.csv", [&](std::ostream& os) { write_weak_trajectory_csv(os, *sum.weak, m.meters); });
    }
    if (wants("pointer")) {
        emit("pointer.csv", [&](std::ostream& os) {
            csv::Writer w(os);
            w.header({"meter_id", "t_k", "momentum_shift_x", "momentum_shift_y", "position_shift_x", "position_shift_y",
                      "shots", "mean_px", "mean_py", "se_px", "se_py", "shots_5sigma_x", "shots_5sigma_y"});
            for (std::size_t k = 0; k < sum.weak->samples.size(); ++k) {
                const auto& s = sum.weak->samples[k];
                const auto it = std::find_if(m.meters.begin(), m.meters.end(), [&](const Meter& mt) { return mt.id == s.meter; });
                const auto readout = pointer_readout(*it, s.value);
                const auto est = simulate_shots(readout, c.outputs.shots, sum.seed + k);
                const Vec2 sigma = momentum_sigma(readout.final_pointer);
                w << s.meter << s.t_k << readout.momentum_shift.x << readout.momentum_shift.y << readout.position_shift.x
                  << readout.position_shift.y << est.n << est.mean.x << est.mean.y << est.standard_error.x
                  << est.standard_error.y << shots_for_significance(std::abs(readout.momentum_shift.x), sigma.x)
                  << shots_for_significance(std::abs(readout.momentum_shift.y), sigma.y);
                w.end_row();
            }
        });
    }
    if (wants("average-traj")) {
        const auto& f = c.outputs.family;
        const Vec2 centre = m.psi[m.branch_index(f.branch)].guide().state_at(m.t_f).q;
        const int hw = f.half_width;
        const std::size_t side = static_cast<std::size_t>(2 * hw + 1);
        sum.family.resize(side * side);
        parallel_for(sum.family.size(), opt.threads, [&](std::size_t idx) {
            const int i = static_cast<int>(idx / side) - hw;
            const int j = static_cast<int>(idx % side) - hw;
            sum.family[idx] = integrate_average_trajectory(m.psi, centre + Vec2{f.offset * i, f.offset * j}, m.t_f, f.t_end);
        });
        for (std::size_t idx = 0; idx < sum.family.size(); ++idx) {
            emit("average_trajectory_" + std::to_string(idx) + ".csv", [&](std::ostream& os) {
                const auto& tr = sum.family[idx];
                csv::Writer w(os);
                w.header({"t", "x", "y", "nearest_branch", "abs2_psi", "abort_flag"});
                for (std::size_t k = 0; k < tr.size(); ++k) {
                    w << tr.t[k] << tr.r[k].x << tr.r[k].y << m.labels[tr.nearest[k]] << tr.abs2_psi[k]
                      << static_cast<int>(tr.aborted && k + 1 == tr.size());
                    w.end_row();
                }
            });
        }
    }

    json manifest;
    manifest["version"] = kVersion;
    manifest["config_hash"] = sum.config_hash;
    manifest["seed"] = sum.seed;
    manifest["products"] = products;
    manifest["files"] = sum.files;
    manifest["potential"] = json::array();
    for (const auto& a : m.pot.axis) manifest["potential"].push_back({{"xi", a.xi}, {"ups", a.ups}, {"omega", a.omega}});
    manifest["config"] = canonical;
    std::ofstream(out_dir / "manifest.json") << manifest.dump(2) << '\n';
    return sum;
}

}  // namespace weaktraj
