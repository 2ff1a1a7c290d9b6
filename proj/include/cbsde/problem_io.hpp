#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cbsde/json_out.hpp"
#include "cbsde/model.hpp"
#include "cbsde/simulate.hpp"

namespace cbsde {

// Problem files use the "cbsde/1" schema; regimes are 1-based on disk and
// 0-based in memory.

namespace io_detail {

using nlohmann::json;

inline json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw MalformedSpec("cannot open file: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw MalformedSpec("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

inline AffineMap parse_affine_map(const json& j, int rows, int cols) {
    AffineMap m;
    m.rows = rows;
    m.cols = cols;
    m.use_abs = j.value("abs", false);
    if (j.contains("A")) {
        for (const auto& row : j.at("A"))
            for (const auto& v : row) m.A.push_back(v.get<double>());
        if (static_cast<int>(m.A.size()) != rows * cols)
            throw MalformedSpec("coefficient matrix A has wrong shape");
    }
    if (j.contains("a")) {
        for (const auto& v : j.at("a")) m.a.push_back(v.get<double>());
        if (static_cast<int>(m.a.size()) != rows) throw MalformedSpec("offset a has wrong shape");
    } else {
        m.a.assign(static_cast<std::size_t>(rows), 0.0);
    }
    return m;
}

inline CoefficientSpec parse_coefficient(const json& j, int rows, int dim, int modes) {
    CoefficientSpec spec;
    spec.rows = rows;
    spec.input_dim = dim;
    const std::string kind = j.value("kind", "affine");
    if (kind == "affine") {
        spec.kind = CoeffKind::Affine;
        for (const auto& pm : j.at("per_mode")) spec.per_mode.push_back(parse_affine_map(pm, rows, dim));
    } else if (kind == "pwc") {
        spec.kind = CoeffKind::PiecewiseConstantInTime;
        for (const auto& b : j.at("breaks")) spec.time_breaks.push_back(b.get<double>());
        for (const auto& pm : j.at("per_mode")) {
            std::vector<AffineMap> buckets;
            for (const auto& bj : pm) buckets.push_back(parse_affine_map(bj, rows, dim));
            if (buckets.size() != spec.time_breaks.size() + 1)
                throw MalformedSpec("pwc coefficient needs breaks+1 buckets per regime");
            spec.per_mode_buckets.push_back(std::move(buckets));
        }
    } else if (kind == "path_feature") {
        spec.kind = CoeffKind::PathFeature;
        spec.feature_id = j.value("feature", "running_average");
        spec.declared_lipschitz = j.value("lipschitz", 1.0);
        spec.input_dim = 2 * dim;
        for (const auto& pm : j.at("per_mode"))
            spec.per_mode.push_back(parse_affine_map(pm, rows, 2 * dim));
    } else {
        throw MalformedSpec("unknown coefficient kind: " + kind);
    }
    if (spec.kind != CoeffKind::PiecewiseConstantInTime &&
        static_cast<int>(spec.per_mode.size()) != modes)
        throw MalformedSpec("coefficient needs one entry per regime");
    return spec;
}

inline CostSpec parse_cost(const json& j, int modes) {
    CostSpec c;
    c.modes = modes;
    for (const auto& row : j.at("c0"))
        for (const auto& v : row) c.c0.push_back(v.get<double>());
    if (j.contains("c1"))
        for (const auto& row : j.at("c1"))
            for (const auto& v : row) c.c1.push_back(v.get<double>());
    if (static_cast<int>(c.c0.size()) != modes * modes)
        throw MalformedSpec("cost c0 must be an m x m table");
    if (!c.c1.empty() && c.c1.size() != c.c0.size())
        throw MalformedSpec("cost c1 must match c0's shape");
    return c;
}

inline DriverSpec parse_driver(const json& j, int dim, int modes, const CoefficientSpec& fallback) {
    DriverSpec d;
    d.base = j.contains("base") ? parse_coefficient(j.at("base"), 1, dim, modes) : fallback;
    d.y_coef = j.value("y_coef", 0.0);
    if (j.contains("z_coef")) for (const auto& v : j.at("z_coef")) d.z_coef.push_back(v.get<double>());
    if (j.contains("u_coef")) for (const auto& v : j.at("u_coef")) d.u_coef.push_back(v.get<double>());
    d.lipschitz = j.value("lipschitz", 0.0);
    if (j.contains("gamma_bounds")) {
        const auto& g = j.at("gamma_bounds");
        d.jump_monotonicity = std::make_pair(g.at(0).get<double>(), g.at(1).get<double>());
    }
    return d;
}

}  // namespace io_detail

struct ProblemFile {
    SwitchingProblem problem;
    // optional general-equation override: solve this instead of the
    // switching-derived equation (constraint absent = plain solve)
    std::optional<ConstrainedBsde> bsde_override;
};

inline ProblemFile load_problem(const std::string& path) {
    using io_detail::json;
    const json j = io_detail::load_json(path);
    if (j.value("schema", "") != std::string("cbsde/1"))
        throw MalformedSpec("problem file: expected schema \"cbsde/1\"");
    ProblemFile out;
    auto& p = out.problem;
    p.modes.count = j.at("modes").get<int>();
    for (const auto& v : j.at("lambda")) p.modes.intensity.push_back(v.get<double>());
    p.dim = j.at("dim").get<int>();
    for (const auto& v : j.at("x0")) p.x0.push_back(v.get<double>());
    p.initial_mode = j.at("i0").get<int>() - 1;
    p.horizon = j.at("T").get<double>();
    const auto& sb = j.at("state_box");
    for (const auto& v : sb.at("lo")) p.box.lo.push_back(v.get<double>());
    for (const auto& v : sb.at("hi")) p.box.hi.push_back(v.get<double>());
    p.drift = io_detail::parse_coefficient(j.at("b"), p.dim, p.dim, p.modes.count);
    p.vol = io_detail::parse_coefficient(j.at("sigma"), p.dim, p.dim, p.modes.count);
    p.running_profit = io_detail::parse_coefficient(j.at("psi"), 1, p.dim, p.modes.count);
    p.terminal_profit = io_detail::parse_coefficient(j.at("g"), 1, p.dim, p.modes.count);
    p.cost = io_detail::parse_cost(j.at("c"), p.modes.count);
    const auto& b = j.at("bounds");
    p.bounds.psi_bar = b.at("psi_bar").get<double>();
    p.bounds.g_bar = b.at("g_bar").get<double>();
    p.bounds.c_bar = b.at("c_bar").get<double>();

    if (j.contains("bsde")) {
        const auto& eq = j.at("bsde");
        ConstrainedBsde ov;
        ov.driver = io_detail::parse_driver(eq.at("driver"), p.dim, p.modes.count,
                                            CoefficientSpec::constant(1, p.dim, p.modes.count, 0.0));
        if (eq.contains("terminal"))
            ov.terminal.value =
                io_detail::parse_coefficient(eq.at("terminal"), 1, p.dim, p.modes.count);
        else
            ov.terminal.value = p.terminal_profit;
        if (eq.value("constraint", "none") == std::string("switching")) {
            ConstraintSpec con;
            con.kind = ConstraintKind::SwitchingCost;
            con.modes = p.modes.count;
            con.cost = p.cost;
            ov.constraint = con;
        }
        out.bsde_override = std::move(ov);
    }
    return out;
}

inline Strategy load_strategy(const std::string& path) {
    using io_detail::json;
    const json j = io_detail::load_json(path);
    Strategy s;
    s.initial_mode = j.at("i0").get<int>() - 1;
    if (j.contains("switches"))
        for (const auto& sw : j.at("switches"))
            s.switches.emplace_back(sw.at("t").get<double>(), sw.at("to").get<int>() - 1);
    return s;
}

inline JsonValue strategy_to_json(const Strategy& s) {
    JsonValue out = JsonValue::object();
    out["i0"] = s.initial_mode + 1;
    JsonValue switches = JsonValue::array();
    for (const auto& [t, to] : s.switches) {
        JsonValue sw = JsonValue::object();
        sw["t"] = t;
        sw["to"] = to + 1;
        switches.push_back(std::move(sw));
    }
    out["switches"] = std::move(switches);
    return out;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write file: " + path);
    os << text;
}

inline JsonValue validation_to_json(const ValidationReport& rep) {
    JsonValue out = JsonValue::object();
    out["pass"] = rep.pass();
    JsonValue clauses = JsonValue::array();
    for (const auto& c : rep.clauses) {
        JsonValue cj = JsonValue::object();
        cj["id"] = c.id;
        cj["pass"] = c.pass;
        cj["witness"] = c.witness;
        clauses.push_back(std::move(cj));
    }
    out["clauses"] = std::move(clauses);
    return out;
}

}  // namespace cbsde
