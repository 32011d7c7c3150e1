#pragma once

#include "credmort/credibility.hpp"
#include "credmort/evalharness.hpp"
#include "credmort/gapc.hpp"
#include "credmort/msep.hpp"
#include "credmort/popsim.hpp"
#include "credmort/ts_forecast.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace credmort {

enum class KeyType { Integer, Number, Boolean, String, StringList, IntPair, Array };

/// One configuration key: dotted path, type, default and a help line.
struct ConfigKey {
    std::string path;
    KeyType type;
    nlohmann::json default_value;
    std::string help;
};

/// Every accepted key. Sections: simulate, global_model, forecast, credibility, msep,
/// evaluate, io, plus top-level seed and threads.
[[nodiscard]] const std::vector<ConfigKey>& config_schema();

/// Thrown with every violation found, joined into one line.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> problems);
    [[nodiscard]] const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    std::vector<std::string> problems_;
};

/// Default document built from the schema.
[[nodiscard]] nlohmann::json default_config();

/// Merges `user` over the defaults, then applies dotted-path overrides given as
/// strings (parsed according to the key type). Unknown keys, wrong types and bad
/// values are all reported together in one ConfigError.
[[nodiscard]] nlohmann::json resolve_config(const nlohmann::json& user,
                                            const std::vector<std::pair<std::string, std::string>>& overrides = {});

struct IoPaths {
    std::string out_dir;
    std::string data_csv;
    std::string model_json;
    std::string population;
};

/// Typed view of a resolved configuration.
struct RunConfig {
    std::uint64_t seed = 0;
    int threads = 1;
    SimConfig simulate;
    GapcSpec global_model;
    IntRange fit_ages;
    int fit_last_year = 0;  // 0: last year in the data
    ForecastOptions forecast;
    int forecast_h = 6;
    CredibilityOptions credibility;
    MsepFormula msep_formula = MsepFormula::Closed;
    int bootstrap_replicates = 200;
    bool bootstrap = true;
    EvalPlan evaluate;
    IoPaths io;
};

[[nodiscard]] RunConfig build_run_config(const nlohmann::json& resolved);

}  // namespace credmort
