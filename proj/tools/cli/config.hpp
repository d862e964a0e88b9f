#pragma once

#include "epicalib/acquisition.hpp"
#include "epicalib/calibrate.hpp"
#include "epicalib/data_io.hpp"
#include "epicalib/twostage.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace epicalib::cli {

/// Flat command-line overrides; they win over the config file.
struct Overrides {
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> profile;
    std::optional<std::string> methods;  // comma separated
    std::optional<int> iterations;
};

/// Real-data source: a `date,country,infectious` file.
struct DataSource {
    std::string path;
    std::string country;
    std::string start = "2020-06-01";
    int days = 365;

    RealSeries load() const;
};

struct RunConfig {
    std::optional<ScenarioSpec> scenario;  // exactly one of scenario and data
    std::optional<DataSource> data;
    std::vector<AcquisitionKind> methods;
    int iterations = 50;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    BudgetProfile profile = BudgetProfile::Full;
    nlohmann::json acquisition = nlohmann::json::object();  // overrides on top of the profile preset
    int gp_restarts = 3;
    int gp_max_iter = 60;
    bool record_wall_time = false;
    std::string out = "runs";

    AcquisitionSpec acquisition_for(AcquisitionKind kind) const;
    BOConfig bo_config(AcquisitionKind kind, std::uint64_t seed) const;
    /// Scenario of one seed; the fast profile observes every third day unless
    /// the config sets the spacing.
    ScenarioSpec scenario_for(std::uint64_t seed) const;
    bool every_days_set = false;
};

/// Synthetic real-data-like target generated by a known rate network.
struct SyntheticTarget {
    std::uint64_t seed = 0;
    int days = 120;
    double population = 200.0;
    double initial_infectious = 1.0;
    double beta = 0.3;
    double delta = 0.1;
    double gamma = 0.1;

    /// Teacher network seed.
    std::uint64_t network_seed() const { return 1000 + seed; }
    RealSeries generate() const;
};

struct TwoStageRunConfig {
    std::optional<DataSource> data;  // exactly one of data and synthetic
    std::optional<SyntheticTarget> synthetic;
    AcquisitionKind method = AcquisitionKind::EI;
    BudgetProfile profile = BudgetProfile::Full;
    nlohmann::json acquisition = nlohmann::json::object();
    TwoStageConfig two_stage;
    std::string out = "twostage";
};

/// Both parsers throw ConfigError naming the offending field.
RunConfig parse_run_config(const nlohmann::json& doc, const Overrides& ov = {});
TwoStageRunConfig parse_twostage_config(const nlohmann::json& doc, const Overrides& ov = {});

/// Reads a JSON file; syntax errors are reported with the file name and line.
nlohmann::json read_json_file(const std::string& path);

/// Applies the keys of `overrides` (same names as the AcquisitionSpec fields).
void apply_acquisition_overrides(AcquisitionSpec& spec, const nlohmann::json& overrides,
                                 const std::string& field = "acquisition");

std::vector<AcquisitionKind> parse_method_list(const std::string& text);

}  // namespace epicalib::cli
