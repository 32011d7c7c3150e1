#include "credmort/config.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace credmort;
using nlohmann::json;

namespace {

void log(const std::string& msg) { std::cerr << "credmort: " << msg << '\n'; }

std::string one_line(std::string s) {
    for (auto& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    return out;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("'" + path + "' is not valid JSON");
    return j;
}

fs::path out_dir(const RunConfig& c) {
    fs::path p(c.io.out_dir);
    fs::create_directories(p);
    return p;
}

// The in-sample window used by fit/forecast/msep.
MortalityTable fit_window(const MortalityTable& t, const RunConfig& c) {
    const int last = c.fit_last_year == 0 ? t.years().last : c.fit_last_year;
    const IntRange years{t.years().first, last};
    if (!t.ages().contains(c.fit_ages) || !t.years().contains(years)) {
        throw std::runtime_error("population " + t.population_id() + " does not cover ages " +
                                 std::to_string(c.fit_ages.first) + "-" + std::to_string(c.fit_ages.last) +
                                 " and years " + std::to_string(years.first) + "-" + std::to_string(years.last));
    }
    return t.subset(c.fit_ages, years);
}

struct Loaded {
    std::vector<MortalityTable> tables;  // fit window
    std::size_t global = 0;
};

Loaded load_data(const RunConfig& c) {
    Loaded d;
    for (const auto& t : read_csv_all(c.io.data_csv)) d.tables.push_back(fit_window(t, c));
    bool found = false;
    for (std::size_t i = 0; i < d.tables.size(); ++i) {
        if (d.tables[i].population_id() == c.io.population) {
            d.global = i;
            found = true;
        }
    }
    if (!found) throw std::runtime_error("population '" + c.io.population + "' not in " + c.io.data_csv);
    return d;
}

struct LoadedModel {
    FittedGapc fit;
    GlobalForecast forecast;
};

LoadedModel load_model(const RunConfig& c) {
    const auto j = read_json_file(c.io.model_json);
    if (!j.contains("forecast")) throw std::runtime_error("'" + c.io.model_json + "' has no forecast section");
    return {fitted_from_json(j), global_forecast_from_json(j.at("forecast"))};
}

void check_grid(const FittedGapc& fit, const MortalityTable& t) {
    if (!(fit.ages == t.ages()) || !(fit.years == t.years())) {
        throw std::runtime_error("model grid does not match the data window of population " + t.population_id());
    }
}

int cmd_simulate(const RunConfig& c) {
    const auto dir = out_dir(c);
    log("simulating " + std::to_string(c.simulate.subpopulations.size()) + " sub-populations");
    const auto sim = simulate(c.simulate);
    std::vector<MortalityTable> all{sim.super};
    all.insert(all.end(), sim.subpopulations.begin(), sim.subpopulations.end());
    {
        auto out = open_out(dir / "sim.csv");
        write_csv(out, all);
    }
    auto out = open_out(dir / "theta_true.csv");
    write_theta_csv(out, c.simulate, sim);
    log("wrote " + (dir / "sim.csv").string() + " and " + (dir / "theta_true.csv").string());
    return 0;
}

int cmd_fit(const RunConfig& c) {
    const auto dir = out_dir(c);
    const auto data = load_data(c);
    const auto& table = data.tables[data.global];
    log("fitting " + to_string(c.global_model.family) + " to population " + table.population_id());
    const auto fitted = fit(table, c.global_model);
    if (!fitted.converged) log("warning: fit did not converge in " + std::to_string(fitted.n_iter) + " sweeps");
    const auto fc = fit_global_forecast(fitted, c.forecast);
    log("kappa model " + to_string(fc.kappa.order) + (fc.gamma ? ", gamma model " + to_string(fc.gamma->order) : ""));
    auto j = to_json(fitted);
    j["forecast"] = to_json(fc);
    auto out = open_out(fs::path(c.io.model_json));
    out << j.dump(2) << '\n';
    log("wrote " + c.io.model_json);
    (void)dir;
    return 0;
}

void write_rates_csv(std::ostream& out, const RateForecast& f) {
    out << "age,horizon,year,mu_bar,sigma2_bar\n";
    for (std::size_t ix = 0; ix < f.ages.size(); ++ix) {
        for (int h = 1; h <= f.horizon; ++h) {
            const auto col = static_cast<std::size_t>(h - 1);
            out << f.ages.at(ix) << ',' << h << ',' << f.t_prime + h << ',' << format_double(f.mu_bar(ix, col)) << ','
                << format_double(f.sigma2_bar(ix, col)) << '\n';
        }
    }
}

int cmd_forecast(const RunConfig& c) {
    const auto dir = out_dir(c);
    const auto data = load_data(c);
    const auto model = load_model(c);
    check_grid(model.fit, data.tables[data.global]);
    const auto rates = forecast_rates(model.fit, model.forecast, c.forecast_h, c.forecast.mean_mode);
    const auto mu_hat = fitted_rates(model.fit);
    std::vector<CredibilityRow> rows;
    for (std::size_t i = 0; i < data.tables.size(); ++i) {
        if (i == data.global) continue;
        const auto est = estimate_credibility(data.tables[i], mu_hat, c.credibility);
        const auto r = credibility_forecast(est, rates);
        rows.insert(rows.end(), r.begin(), r.end());
    }
    {
        auto out = open_out(dir / "rates.csv");
        write_rates_csv(out, rates);
    }
    auto out = open_out(dir / "credibility.csv");
    write_credibility_csv(out, rows);
    log("wrote " + (dir / "rates.csv").string() + " and " + (dir / "credibility.csv").string());
    return 0;
}

int cmd_msep(const RunConfig& c) {
    const auto dir = out_dir(c);
    const auto data = load_data(c);
    const auto model = load_model(c);
    check_grid(model.fit, data.tables[data.global]);
    const auto rates = forecast_rates(model.fit, model.forecast, c.forecast_h, c.forecast.mean_mode);
    const auto mu_hat = fitted_rates(model.fit);
    std::vector<MsepRow> rows;
    for (std::size_t i = 0; i < data.tables.size(); ++i) {
        if (i == data.global) continue;
        const auto& t = data.tables[i];
        const auto est = estimate_credibility(t, mu_hat, c.credibility);
        const auto r = credibility_msep(t, mu_hat, est, rates, c.msep_formula);
        rows.insert(rows.end(), r.begin(), r.end());
        if (!c.bootstrap) continue;
        log("bootstrap MSEP for population " + t.population_id() + " (" + std::to_string(c.bootstrap_replicates) +
            " replicates)");
        const auto own = fit(t, c.global_model);
        BootstrapOptions bo;
        bo.replicates = c.bootstrap_replicates;
        bo.seed = stream_key(c.seed, {0x626f6f74ULL, i});
        bo.threads = c.threads;
        bo.forecast = c.forecast;
        const auto b = bootstrap_msep_benchmark(own, t, c.forecast_h, bo);
        if (b.unreliable) {
            log("warning: bootstrap for population " + t.population_id() + " dropped " + std::to_string(b.dropped) +
                " replicates");
        }
        const auto br = bootstrap_rows(t.population_id(), b);
        rows.insert(rows.end(), br.begin(), br.end());
    }
    auto out = open_out(dir / "msep.csv");
    write_msep_csv(out, rows);
    log("wrote " + (dir / "msep.csv").string());
    return 0;
}

int cmd_evaluate(const RunConfig& c) {
    const auto dir = out_dir(c);
    const auto start = std::chrono::steady_clock::now();
    log("evaluating " + std::to_string(c.evaluate.replications) + " replications");
    const auto result = evaluate(c.simulate, c.evaluate);
    const auto metrics = result.metrics();
    {
        auto out = open_out(dir / "results.csv");
        write_metrics_csv(out, metrics);
    }
    json summary = json::object();
    json reps = json::array();
    for (const auto& r : result.replications) {
        auto out = open_out(dir / ("fan_r" + std::to_string(r.replication) + ".csv"));
        write_fan_csv(out, r.fan);
        json rep{{"replication", r.replication}, {"seed", r.seed}};
        json mare = json::object();
        std::vector<std::string> pops;
        for (const auto& m : r.metrics) {
            if (std::find(pops.begin(), pops.end(), m.population_id) == pops.end()) pops.push_back(m.population_id);
        }
        for (const auto& p : pops) {
            json per = json::object();
            for (auto a : c.evaluate.approaches) per[to_string(a)] = aggregate_mare(r.metrics, a, p, r.replication);
            mare[p] = per;
        }
        rep["mean_mare"] = mare;
        json fb = json::object();
        for (const auto& [p, n] : r.fallbacks) fb[p] = n;
        rep["fallbacks"] = fb;
        reps.push_back(rep);
    }
    summary["replications"] = reps;
    auto out = open_out(dir / "summary.json");
    out << summary.dump(2) << '\n';
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log("wrote results.csv, summary.json and fan data to " + dir.string() + " in " + std::to_string(secs) + " s");
    return 0;
}

std::string default_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Credibility-weighted multi-population mortality forecasting"};
    app.require_subcommand(1);
    std::string config_path;

    using Cmd = int (*)(const RunConfig&);
    const std::vector<std::pair<std::string, std::pair<std::string, Cmd>>> commands{
        {"simulate", {"simulate sub-populations and write sim.csv, theta_true.csv", cmd_simulate}},
        {"fit", {"fit the global GAPC model and its index forecasts, write model.json", cmd_fit}},
        {"forecast", {"write rates.csv and credibility.csv from model.json", cmd_forecast}},
        {"msep", {"write msep.csv (credibility and bootstrap MSEP)", cmd_msep}},
        {"evaluate", {"simulate, run approaches A-D over rolling windows, write results", cmd_evaluate}},
    };

    std::map<std::string, std::string> values;
    std::vector<std::pair<CLI::App*, Cmd>> subs;
    std::vector<CLI::Option*> key_options;
    for (const auto& [name, info] : commands) {
        auto* sub = app.add_subcommand(name, info.first);
        sub->add_option("--config", config_path, "JSON configuration file");
        sub->allow_extras();
        for (const auto& k : config_schema()) {
            auto* opt = sub->add_option("--" + k.path, values[k.path],
                                        k.help + " [default: " + default_text(k.default_value) + "]");
            opt->group("Configuration keys");
            key_options.push_back(opt);
        }
        subs.emplace_back(sub, info.second);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << one_line(e.what()) << '\n';
        return 2;
    }

    try {
        for (const auto& [sub, run] : subs) {
            if (!sub->parsed()) continue;
            std::vector<std::string> problems;
            const auto extras = sub->remaining();
            for (std::size_t i = 0; i < extras.size(); ++i) {
                if (extras[i].rfind("--", 0) != 0) {
                    problems.push_back("unexpected argument '" + extras[i] + "'");
                    continue;
                }
                auto name = extras[i].substr(2);
                name = name.substr(0, name.find('='));
                problems.push_back("unknown key '" + name + "'");
                // Swallow the value that belongs to the unknown flag.
                if (extras[i].find('=') == std::string::npos && i + 1 < extras.size() &&
                    extras[i + 1].rfind("--", 0) != 0) {
                    ++i;
                }
            }
            if (!problems.empty()) throw ConfigError(problems);

            json user;
            if (!config_path.empty()) user = read_json_file(config_path);
            std::vector<std::pair<std::string, std::string>> overrides;
            if (const char* env = std::getenv("CREDMORT_SEED")) overrides.emplace_back("seed", env);
            for (auto* opt : key_options) {
                if (opt->count() == 0) continue;
                const auto path = opt->get_name().substr(2);
                overrides.emplace_back(path, values[path]);
            }
            const auto cfg = build_run_config(resolve_config(user, overrides));
            return run(cfg);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << one_line(e.what()) << '\n';
        return 1;
    }
    return 1;
}
