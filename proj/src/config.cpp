#include "credmort/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace credmort {

namespace {

using nlohmann::json;

json default_subpopulations() {
    return json::array({
        {{"id", "1"}, {"cohort_size", 5000}, {"law", {{"kind", "uniform"}, {"lower", 0.7}, {"upper", 0.8}}}},
        {{"id", "2"}, {"cohort_size", 500}, {"law", {{"kind", "uniform"}, {"lower", 1.2}, {"upper", 1.3}}}},
        {{"id", "3"}, {"cohort_size", 94500}, {"law", {{"kind", "constant"}, {"lower", 1.0}, {"upper", 1.0}}}},
    });
}

std::vector<std::string> split_dots(const std::string& path) {
    std::vector<std::string> parts;
    std::stringstream ss(path);
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    return parts;
}

json::json_pointer pointer(const std::string& path) {
    std::string p;
    for (const auto& part : split_dots(path)) p += "/" + part;
    return json::json_pointer(p);
}

std::string type_name(KeyType t) {
    switch (t) {
        case KeyType::Integer: return "integer";
        case KeyType::Number: return "number";
        case KeyType::Boolean: return "boolean";
        case KeyType::String: return "string";
        case KeyType::StringList: return "list of strings";
        case KeyType::IntPair: return "[first, last] integer pair";
        case KeyType::Array: return "array";
    }
    return "?";
}

bool type_ok(const json& v, KeyType t) {
    switch (t) {
        case KeyType::Integer: return v.is_number_integer();
        case KeyType::Number: return v.is_number();
        case KeyType::Boolean: return v.is_boolean();
        case KeyType::String: return v.is_string();
        case KeyType::StringList:
            return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
        case KeyType::IntPair:
            return v.is_array() && v.size() == 2 && v[0].is_number_integer() && v[1].is_number_integer();
        case KeyType::Array: return v.is_array();
    }
    return false;
}

const ConfigKey* find_key(const std::string& path) {
    for (const auto& k : config_schema()) {
        if (k.path == path) return &k;
    }
    return nullptr;
}

bool is_section(const std::string& path) {
    const auto prefix = path + ".";
    return std::any_of(config_schema().begin(), config_schema().end(),
                       [&](const ConfigKey& k) { return k.path.compare(0, prefix.size(), prefix) == 0; });
}

void find_unknown(const json& node, const std::string& prefix, std::vector<std::string>& problems) {
    for (auto it = node.begin(); it != node.end(); ++it) {
        const auto path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (find_key(path)) continue;
        if (is_section(path)) {
            if (it->is_object()) {
                find_unknown(*it, path, problems);
            } else {
                problems.push_back(path + ": expected an object");
            }
            continue;
        }
        problems.push_back("unknown key '" + path + "'");
    }
}

json parse_override(const ConfigKey& key, const std::string& text) {
    auto fail = [&]() -> json {
        throw std::invalid_argument("--" + key.path + ": cannot read '" + text + "' as " + type_name(key.type));
    };
    switch (key.type) {
        case KeyType::Integer: {
            long long v = 0;
            const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
            if (r.ec != std::errc{} || r.ptr != text.data() + text.size()) return fail();
            return v;
        }
        case KeyType::Number: {
            double v = 0.0;
            const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
            if (r.ec != std::errc{} || r.ptr != text.data() + text.size()) return fail();
            return v;
        }
        case KeyType::Boolean:
            if (text == "true" || text == "1") return true;
            if (text == "false" || text == "0") return false;
            return fail();
        case KeyType::String: return text;
        case KeyType::StringList: {
            json a = json::array();
            std::stringstream ss(text);
            for (std::string p; std::getline(ss, p, ',');) a.push_back(p);
            return a;
        }
        case KeyType::IntPair: {
            const auto comma = text.find(',');
            if (comma == std::string::npos) return fail();
            int a = 0, b = 0;
            const auto r1 = std::from_chars(text.data(), text.data() + comma, a);
            const auto r2 = std::from_chars(text.data() + comma + 1, text.data() + text.size(), b);
            if (r1.ec != std::errc{} || r2.ec != std::errc{} || r1.ptr != text.data() + comma ||
                r2.ptr != text.data() + text.size()) {
                return fail();
            }
            return json::array({a, b});
        }
        case KeyType::Array: {
            auto v = json::parse(text, nullptr, false);
            if (v.is_discarded() || !v.is_array()) return fail();
            return v;
        }
    }
    return fail();
}

template <typename Fn>
void check(std::vector<std::string>& problems, const std::string& path, Fn&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        problems.push_back(path + ": " + e.what());
    }
}

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

EffectLaw parse_law(const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    const double lo = j.at("lower").get<double>();
    const double hi = j.contains("upper") ? j.at("upper").get<double>() : lo;
    if (kind == "constant") return EffectLaw::constant(lo);
    if (kind == "uniform") return EffectLaw::uniform(lo, hi);
    throw std::invalid_argument("law kind must be constant or uniform");
}

std::vector<SubPopulationSpec> parse_subpopulations(const json& arr) {
    std::vector<SubPopulationSpec> out;
    for (const auto& e : arr) {
        if (!e.is_object()) throw std::invalid_argument("each sub-population must be an object");
        for (auto it = e.begin(); it != e.end(); ++it) {
            if (it.key() != "id" && it.key() != "cohort_size" && it.key() != "law") {
                throw std::invalid_argument("unknown sub-population key '" + it.key() + "'");
            }
        }
        SubPopulationSpec s;
        s.id = e.at("id").get<std::string>();
        s.cohort_size = e.at("cohort_size").get<double>();
        s.law = parse_law(e.at("law"));
        require(s.cohort_size >= 0 && std::floor(s.cohort_size) == s.cohort_size,
                "cohort_size must be a non-negative integer");
        require(s.id != "0", "sub-population id 0 is reserved for the aggregate");
        out.push_back(std::move(s));
    }
    require(!out.empty(), "at least one sub-population is required");
    return out;
}

IntRange pair(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error([&] {
          std::string msg = "invalid configuration: ";
          for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
          return msg;
      }()),
      problems_(std::move(problems)) {}

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema{
        {"seed", KeyType::Integer, 20240601, "master seed; CREDMORT_SEED overrides it"},
        {"threads", KeyType::Integer, 1, "worker threads; results do not depend on it"},

        {"simulate.ages", KeyType::IntPair, {0, 110}, "simulated ages [first, last]"},
        {"simulate.years", KeyType::IntPair, {1971, 2020}, "simulated calendar years [first, last]"},
        {"simulate.subpopulations", KeyType::Array, default_subpopulations(),
         "list of {id, cohort_size, law: {kind: constant|uniform, lower, upper}}"},
        {"simulate.baseline.intercept", KeyType::Number, -10.6, "baseline log-odds at age 0, reference year"},
        {"simulate.baseline.age_slope", KeyType::Number, 0.095, "baseline log-odds slope per year of age"},
        {"simulate.baseline.year_slope", KeyType::Number, -0.015, "baseline log-odds slope per calendar year"},
        {"simulate.baseline.reference_year", KeyType::Number, 2000.0, "calendar year where year_slope is centred"},
        {"simulate.delta_csv", KeyType::String, "", "CSV age,year,delta replacing the parametric baseline"},

        {"global_model.family", KeyType::String, "LC", "LC | APC | RH"},
        {"global_model.center_kappa", KeyType::Boolean, true, "impose sum kappa = 0"},
        {"global_model.center_gamma", KeyType::Boolean, true, "impose sum gamma = 0 (RH)"},
        {"global_model.min_cohort_cells", KeyType::Integer, 3, "cohorts with fewer observed cells are left out"},
        {"global_model.tolerance", KeyType::Number, 1e-8, "absolute deviance change that ends the fit"},
        {"global_model.max_sweeps", KeyType::Integer, 10000, "sweep limit"},
        {"global_model.ages", KeyType::IntPair, {16, 85}, "ages used by fit/forecast/msep"},
        {"global_model.last_year", KeyType::Integer, 2014, "last in-sample year for fit/forecast/msep (0: all)"},

        {"forecast.h", KeyType::Integer, 6, "forecast horizon in years"},
        {"forecast.mean_mode", KeyType::String, "lognormal", "lognormal | plugin estimate of mu_bar"},
        {"forecast.freeze_orders", KeyType::Boolean, false, "evaluate: keep the first window's ARIMA orders"},

        {"credibility.binning", KeyType::Boolean, true, "CART-smooth theta_hat and Var(Theta) over age"},
        {"credibility.cv_folds", KeyType::Integer, 5, "cross-validation folds for the CART penalty"},
        {"credibility.one_se_rule", KeyType::Boolean, true, "simplest subtree within one SE of the best"},

        {"msep.formula", KeyType::String, "closed_form", "closed_form | common_effect"},
        {"msep.bootstrap", KeyType::Boolean, true, "add residual-bootstrap rows for approach C"},
        {"msep.bootstrap_replicates", KeyType::Integer, 200, "bootstrap replicates (>= 200)"},

        {"evaluate.t_prime", KeyType::Integer, 2014, "last in-sample year of the first window"},
        {"evaluate.h", KeyType::Integer, 6, "number of rolling one-step windows"},
        {"evaluate.ages", KeyType::IntPair, {16, 85}, "ages scored"},
        {"evaluate.age_width", KeyType::Integer, 5, "width of the age brackets"},
        {"evaluate.approaches", KeyType::StringList, {"A", "B", "C", "D"}, "approaches to score"},
        {"evaluate.replications", KeyType::Integer, 3, "independent simulated data sets (seed, seed+1, ...)"},
        {"evaluate.deviance_sign", KeyType::String, "conventional", "conventional | paper"},
        {"evaluate.fan_age", KeyType::Integer, 65, "age of the fan-plot data"},
        {"evaluate.fan_horizon", KeyType::Integer, 5, "years ahead in the fan-plot data"},

        {"io.out_dir", KeyType::String, "out", "directory for every artifact"},
        {"io.data_csv", KeyType::String, "", "input mortality CSV (default: <out_dir>/sim.csv)"},
        {"io.model_json", KeyType::String, "", "fitted model JSON (default: <out_dir>/model.json)"},
        {"io.population", KeyType::String, "0", "population the global model is fitted to"},
    };
    return schema;
}

json default_config() {
    json j = json::object();
    for (const auto& k : config_schema()) j[pointer(k.path)] = k.default_value;
    return j;
}

json resolve_config(const json& user, const std::vector<std::pair<std::string, std::string>>& overrides) {
    std::vector<std::string> problems;
    json cfg = default_config();
    if (!user.is_null()) {
        if (!user.is_object()) throw ConfigError({"configuration must be a JSON object"});
        find_unknown(user, "", problems);
        for (const auto& k : config_schema()) {
            const auto p = pointer(k.path);
            if (!user.contains(p)) continue;
            const auto& v = user.at(p);
            if (!type_ok(v, k.type)) {
                problems.push_back(k.path + ": expected " + type_name(k.type));
                continue;
            }
            cfg[p] = v;
        }
    }
    for (const auto& [path, text] : overrides) {
        const auto* k = find_key(path);
        if (!k) {
            problems.push_back("unknown key '" + path + "'");
            continue;
        }
        check(problems, path, [&] { cfg[pointer(path)] = parse_override(*k, text); });
    }
    // Value checks. Keys that failed above still hold their defaults.
    auto at = [&](const char* p) -> const json& { return cfg.at(pointer(p)); };
    check(problems, "threads", [&] { require(at("threads").get<long long>() >= 1, "must be >= 1"); });
    check(problems, "seed", [&] { require(at("seed").get<long long>() >= 0, "must be >= 0"); });
    check(problems, "simulate.ages", [&] {
        const auto r = pair(at("simulate.ages"));
        require(r.first >= 0 && r.first <= r.last, "need 0 <= first <= last");
    });
    check(problems, "simulate.years", [&] {
        const auto r = pair(at("simulate.years"));
        require(r.first <= r.last, "need first <= last");
    });
    check(problems, "simulate.subpopulations", [&] { (void)parse_subpopulations(at("simulate.subpopulations")); });
    check(problems, "global_model.family", [&] { (void)parse_family(at("global_model.family").get<std::string>()); });
    check(problems, "global_model.min_cohort_cells",
          [&] { require(at("global_model.min_cohort_cells").get<int>() >= 1, "must be >= 1"); });
    check(problems, "global_model.tolerance",
          [&] { require(at("global_model.tolerance").get<double>() > 0.0, "must be > 0"); });
    check(problems, "global_model.max_sweeps",
          [&] { require(at("global_model.max_sweeps").get<int>() >= 1, "must be >= 1"); });
    check(problems, "global_model.ages", [&] {
        const auto r = pair(at("global_model.ages"));
        require(r.first + 2 <= r.last, "need at least 3 ages");
    });
    check(problems, "forecast.h", [&] { require(at("forecast.h").get<int>() >= 1, "must be >= 1"); });
    check(problems, "forecast.mean_mode", [&] { (void)parse_mean_mode(at("forecast.mean_mode").get<std::string>()); });
    check(problems, "credibility.cv_folds", [&] { require(at("credibility.cv_folds").get<int>() >= 2, "must be >= 2"); });
    check(problems, "msep.formula", [&] { (void)parse_msep_formula(at("msep.formula").get<std::string>()); });
    check(problems, "msep.bootstrap_replicates",
          [&] { require(at("msep.bootstrap_replicates").get<int>() >= 200, "must be >= 200"); });
    check(problems, "evaluate.h", [&] { require(at("evaluate.h").get<int>() >= 1, "must be >= 1"); });
    check(problems, "evaluate.ages", [&] {
        const auto r = pair(at("evaluate.ages"));
        require(r.first + 2 <= r.last, "need at least 3 ages");
    });
    check(problems, "evaluate.age_width", [&] { require(at("evaluate.age_width").get<int>() >= 1, "must be >= 1"); });
    check(problems, "evaluate.approaches", [&] {
        const auto& a = at("evaluate.approaches");
        require(!a.empty(), "must name at least one approach");
        for (const auto& s : a) (void)parse_approach(s.get<std::string>());
    });
    check(problems, "evaluate.replications",
          [&] { require(at("evaluate.replications").get<int>() >= 1, "must be >= 1"); });
    check(problems, "evaluate.deviance_sign",
          [&] { (void)parse_deviance_sign(at("evaluate.deviance_sign").get<std::string>()); });
    check(problems, "evaluate.fan_horizon",
          [&] { require(at("evaluate.fan_horizon").get<int>() >= 1, "must be >= 1"); });
    check(problems, "io.out_dir", [&] { require(!at("io.out_dir").get<std::string>().empty(), "must not be empty"); });
    if (!problems.empty()) throw ConfigError(problems);
    return cfg;
}

RunConfig build_run_config(const json& c) {
    auto at = [&](const char* p) -> const json& { return c.at(pointer(p)); };
    RunConfig r;
    r.seed = at("seed").get<std::uint64_t>();
    r.threads = at("threads").get<int>();

    r.simulate.ages = pair(at("simulate.ages"));
    r.simulate.years = pair(at("simulate.years"));
    r.simulate.subpopulations = parse_subpopulations(at("simulate.subpopulations"));
    r.simulate.gompertz.intercept = at("simulate.baseline.intercept").get<double>();
    r.simulate.gompertz.age_slope = at("simulate.baseline.age_slope").get<double>();
    r.simulate.gompertz.year_slope = at("simulate.baseline.year_slope").get<double>();
    r.simulate.gompertz.reference_year = at("simulate.baseline.reference_year").get<double>();
    if (const auto path = at("simulate.delta_csv").get<std::string>(); !path.empty()) {
        r.simulate.delta = read_delta_csv(path);
    }
    r.simulate.seed = r.seed;
    r.simulate.threads = r.threads;

    r.global_model.family = parse_family(at("global_model.family").get<std::string>());
    r.global_model.center_kappa = at("global_model.center_kappa").get<bool>();
    r.global_model.center_gamma = at("global_model.center_gamma").get<bool>();
    r.global_model.min_cohort_cells = at("global_model.min_cohort_cells").get<int>();
    r.global_model.tolerance = at("global_model.tolerance").get<double>();
    r.global_model.max_sweeps = at("global_model.max_sweeps").get<int>();
    r.fit_ages = pair(at("global_model.ages"));
    r.fit_last_year = at("global_model.last_year").get<int>();

    r.forecast.mean_mode = parse_mean_mode(at("forecast.mean_mode").get<std::string>());
    r.forecast_h = at("forecast.h").get<int>();

    r.credibility.binning = at("credibility.binning").get<bool>();
    r.credibility.cart.folds = at("credibility.cv_folds").get<int>();
    r.credibility.cart.one_se_rule = at("credibility.one_se_rule").get<bool>();

    r.msep_formula = parse_msep_formula(at("msep.formula").get<std::string>());
    r.bootstrap = at("msep.bootstrap").get<bool>();
    r.bootstrap_replicates = at("msep.bootstrap_replicates").get<int>();

    auto& e = r.evaluate;
    e.t_prime = at("evaluate.t_prime").get<int>();
    e.h = at("evaluate.h").get<int>();
    const auto ages = pair(at("evaluate.ages"));
    e.age_groups = age_brackets(ages.first, ages.last, at("evaluate.age_width").get<int>());
    e.approaches.clear();
    for (const auto& s : at("evaluate.approaches")) e.approaches.push_back(parse_approach(s.get<std::string>()));
    e.replications = at("evaluate.replications").get<int>();
    e.seed = r.seed;
    e.global_model = r.global_model;
    e.forecast = r.forecast;
    e.credibility = r.credibility;
    e.msep_formula = r.msep_formula;
    e.freeze_orders = at("forecast.freeze_orders").get<bool>();
    e.deviance_sign = parse_deviance_sign(at("evaluate.deviance_sign").get<std::string>());
    e.fan_age = at("evaluate.fan_age").get<int>();
    e.fan_horizon = at("evaluate.fan_horizon").get<int>();
    e.threads = r.threads;

    r.io.out_dir = at("io.out_dir").get<std::string>();
    r.io.data_csv = at("io.data_csv").get<std::string>();
    r.io.model_json = at("io.model_json").get<std::string>();
    r.io.population = at("io.population").get<std::string>();
    if (r.io.data_csv.empty()) r.io.data_csv = r.io.out_dir + "/sim.csv";
    if (r.io.model_json.empty()) r.io.model_json = r.io.out_dir + "/model.json";
    return r;
}

}  // namespace credmort
