#include "credmort/popsim.hpp"

#include "credmort/parallel.hpp"
#include "credmort/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace credmort {

namespace {

constexpr std::uint64_t kThetaStream = 0x7468657461ULL;
constexpr std::uint64_t kCohortStream = 0x636f686f7274ULL;

double parse_field(std::string_view s, std::size_t row) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("delta CSV row " + std::to_string(row) + ": non-numeric field '" + std::string(s) + "'");
    }
    return v;
}

void check_config(const SimConfig& c) {
    if (c.ages.size() == 0 || c.years.size() == 0) throw std::invalid_argument("simulation needs non-empty ages and years");
    if (c.subpopulations.empty()) throw std::invalid_argument("simulation needs at least one sub-population");
    for (const auto& s : c.subpopulations) {
        if (!(s.cohort_size >= 0.0) || std::floor(s.cohort_size) != s.cohort_size) {
            throw std::invalid_argument("cohort size of sub-population " + s.id + " must be a non-negative integer");
        }
        if (s.id == "0") throw std::invalid_argument("sub-population id 0 is reserved for the aggregate");
        const bool bad = s.law.kind == EffectLaw::Kind::Constant ? !(s.law.lower > 0.0)
                                                                  : !(s.law.lower > 0.0 && s.law.upper >= s.law.lower);
        if (bad) throw std::invalid_argument("effect law of sub-population " + s.id + " must be positive");
    }
    if (c.delta) {
        const IntRange raw_ages{c.ages.first, c.ages.last + 1};
        if (!c.delta->ages.contains(raw_ages)) {
            throw std::invalid_argument("delta matrix must cover ages " + std::to_string(raw_ages.first) + ".." +
                                        std::to_string(raw_ages.last));
        }
    }
}

}  // namespace

double DeltaMatrix::operator()(int age, int year) const {
    if (!ages.contains(age)) throw std::out_of_range("delta matrix has no age " + std::to_string(age));
    const int y = std::clamp(year, years.first, years.last);
    return delta(ages.index(age), years.index(y));
}

DeltaMatrix read_delta_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty delta CSV: missing header");
    while (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "age,year,delta") throw std::runtime_error("unexpected delta CSV header, expected 'age,year,delta'");
    std::map<std::pair<int, int>, double> cells;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<std::string_view> f;
        std::string_view sv(line);
        for (std::size_t start = 0;;) {
            const auto pos = sv.find(',', start);
            f.push_back(sv.substr(start, pos == std::string_view::npos ? sv.npos : pos - start));
            if (pos == std::string_view::npos) break;
            start = pos + 1;
        }
        if (f.size() != 3) throw std::runtime_error("delta CSV row " + std::to_string(row) + ": expected 3 fields");
        const double a = parse_field(f[0], row), y = parse_field(f[1], row), d = parse_field(f[2], row);
        if (a != std::floor(a) || y != std::floor(y)) {
            throw std::runtime_error("delta CSV row " + std::to_string(row) + ": age and year must be integers");
        }
        if (!std::isfinite(d)) throw std::runtime_error("delta CSV row " + std::to_string(row) + ": delta not finite");
        if (!cells.emplace(std::pair{static_cast<int>(a), static_cast<int>(y)}, d).second) {
            throw std::runtime_error("delta CSV row " + std::to_string(row) + ": duplicate cell");
        }
    }
    if (cells.empty()) throw std::runtime_error("delta CSV has no rows");
    DeltaMatrix m;
    m.ages = {cells.begin()->first.first, cells.rbegin()->first.first};
    int y0 = cells.begin()->first.second, y1 = y0;
    for (const auto& [k, v] : cells) {
        y0 = std::min(y0, k.second);
        y1 = std::max(y1, k.second);
    }
    m.years = {y0, y1};
    m.delta = Matrix<double>(m.ages.size(), m.years.size());
    for (int a = m.ages.first; a <= m.ages.last; ++a) {
        for (int y = y0; y <= y1; ++y) {
            const auto it = cells.find({a, y});
            if (it == cells.end()) {
                throw std::runtime_error("delta CSV is missing age " + std::to_string(a) + ", year " + std::to_string(y));
            }
            m.delta(m.ages.index(a), m.years.index(y)) = it->second;
        }
    }
    return m;
}

DeltaMatrix read_delta_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open delta CSV '" + path + "'");
    return read_delta_csv(in);
}

double death_prob(double delta, double theta) {
    if (!std::isfinite(delta)) throw std::invalid_argument("log-odds must be finite");
    if (!(theta > 0.0)) throw std::invalid_argument("relative risk must be positive");
    // Logistic of log(theta) + delta, evaluated without overflow.
    const double z = std::log(theta) + delta;
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

SimOutput simulate(const SimConfig& config) {
    check_config(config);
    const auto& ages = config.ages;
    const auto& years = config.years;
    const IntRange raw_ages{ages.first, ages.last + 1};
    const IntRange raw_years{years.first, years.last + 1};
    const auto ns = config.subpopulations.size();
    const int na = static_cast<int>(raw_ages.size());

    // Effects: one per raw age and sub-population.
    Matrix<double> theta_raw(raw_ages.size(), ns);
    for (std::size_t s = 0; s < ns; ++s) {
        CounterRng rng(stream_key(config.seed, {kThetaStream, s}));
        const auto& law = config.subpopulations[s].law;
        for (std::size_t ix = 0; ix < raw_ages.size(); ++ix) {
            theta_raw(ix, s) = law.kind == EffectLaw::Kind::Constant
                                   ? law.lower
                                   : law.lower + (law.upper - law.lower) * rng.uniform();
        }
    }

    SimOutput out;
    out.raw.resize(ns);
    for (std::size_t s = 0; s < ns; ++s) {
        auto& r = out.raw[s];
        r.population_id = config.subpopulations[s].id;
        r.ages = raw_ages;
        r.years = raw_years;
        r.lives = Matrix<double>(raw_ages.size(), raw_years.size());
        r.raw_deaths = Matrix<double>(raw_ages.size(), raw_years.size());
    }

    // A cohort is identified by the year it enters at the youngest age.
    const int first_entry = raw_years.first - (na - 1);
    const int n_cohorts = raw_years.last - first_entry + 1;
    const auto tasks = ns * static_cast<std::size_t>(n_cohorts);
    parallel_for(tasks, config.threads, [&](std::size_t task) {
        const auto s = task / static_cast<std::size_t>(n_cohorts);
        const int entry = first_entry + static_cast<int>(task % static_cast<std::size_t>(n_cohorts));
        CounterRng rng(stream_key(config.seed, {kCohortStream, s, static_cast<std::uint64_t>(entry)}));
        auto& raw = out.raw[s];
        long long alive = static_cast<long long>(config.subpopulations[s].cohort_size);
        for (int k = 0; k < na; ++k) {
            const int age = raw_ages.first + k;
            const int year = entry + k;
            if (year > raw_years.last) break;
            const bool inside = raw_years.contains(year);
            if (inside) raw.lives(raw_ages.index(age), raw_years.index(year)) = static_cast<double>(alive);
            const double q = death_prob(config.baseline(age, year), theta_raw(static_cast<std::size_t>(k), s));
            const long long d = alive > 0 ? std::binomial_distribution<long long>(alive, q)(rng) : 0;
            if (inside) raw.raw_deaths(raw_ages.index(age), raw_years.index(year)) = static_cast<double>(d);
            alive -= d;
        }
    });

    out.subpopulations.reserve(ns);
    for (const auto& r : out.raw) out.subpopulations.push_back(lexis_convert(r));
    out.super = aggregate(out.subpopulations, "0");
    out.theta = Matrix<double>(ages.size(), ns);
    for (std::size_t ix = 0; ix < ages.size(); ++ix) {
        for (std::size_t s = 0; s < ns; ++s) out.theta(ix, s) = theta_raw(ix, s);
    }
    return out;
}

double poisson_approx_rel_error(double q, double n) {
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("q must lie in (0, 1)");
    if (!(n >= 0.0)) throw std::invalid_argument("N must be non-negative");
    // Work in logs: ratio exp(-N odds) / (1-q)^N = exp(-N (odds + log(1-q))).
    const double odds = q / (1.0 - q);
    const double log_ratio = -n * (odds + std::log1p(-q));
    return std::abs(std::expm1(log_ratio));
}

double poisson_approx_check(std::span<const double> q, double n) {
    double worst = 0.0;
    for (double v : q) worst = std::max(worst, poisson_approx_rel_error(v, n));
    return worst;
}

void write_theta_csv(std::ostream& out, const SimConfig& config, const SimOutput& sim) {
    out << "population,age,theta\n";
    for (std::size_t s = 0; s < config.subpopulations.size(); ++s) {
        for (std::size_t ix = 0; ix < config.ages.size(); ++ix) {
            out << config.subpopulations[s].id << ',' << config.ages.at(ix) << ',' << format_double(sim.theta(ix, s))
                << '\n';
        }
    }
}

}  // namespace credmort
