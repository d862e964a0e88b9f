#include "commands.hpp"
#include "config.hpp"

#include "epicalib/errors.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>

namespace {

using namespace epicalib;

void add_common(CLI::App* cmd, std::string& config, cli::Overrides& ov) {
    cmd->add_option("--config", config, "JSON config file")->required();
    cmd->add_option("--seed", ov.seed, "single seed replacing the configured list");
    cmd->add_option("--out", ov.out, "output directory");
    cmd->add_option("--profile", ov.profile, "fast or full");
    cmd->add_option("--method", ov.methods, "comma separated acquisition kinds");
    cmd->add_option("--iters", ov.iterations, "BO iterations");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian-optimization calibration of SIQR epidemic models"};
    app.require_subcommand(1);

    std::string run_config, twostage_config, verify_dir;
    cli::Overrides run_ov, twostage_ov;
    auto* run = app.add_subcommand("run", "calibrate a scenario or data set with one or more methods");
    add_common(run, run_config, run_ov);

    auto* twostage = app.add_subcommand("twostage", "two-stage neural calibration of an infectious series");
    add_common(twostage, twostage_config, twostage_ov);

    auto* verify = app.add_subcommand("verify", "recompute the aggregates of a run directory");
    verify->add_option("--out", verify_dir, "output directory of a previous run")->required();

    cli::SimulateOptions sim;
    std::vector<double> rates, init;
    std::string sim_out;
    auto* simulate = app.add_subcommand("simulate", "print a trajectory");
    simulate->add_option("--ground-truth", sim.ground_truth, "linear, noisy or nonlinear");
    simulate->add_option("--rates", rates, "linear rates x1,x2,x3,x4")->delimiter(',')->expected(4);
    simulate->add_option("--init", init, "initial S,I,Q,R")->delimiter(',')->expected(4);
    simulate->add_option("--horizon", sim.horizon, "days");
    simulate->add_flag("--emit-lambda", sim.emit_lambda, "append the infection rate lambda(t)");
    simulate->add_option("--out", sim_out, "output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) {
            const auto config = cli::parse_run_config(cli::read_json_file(run_config), run_ov);
            return cli::cmd_run(config, std::cerr, cli::worker_count());
        }
        if (*twostage) {
            const auto config = cli::parse_twostage_config(cli::read_json_file(twostage_config), twostage_ov);
            return cli::cmd_twostage(config, std::cerr);
        }
        if (*verify) return cli::cmd_verify(verify_dir, std::cout);
        if (*simulate) {
            if (!rates.empty()) sim.rates = std::array<double, 4>{rates[0], rates[1], rates[2], rates[3]};
            if (!init.empty()) sim.init = {init[0], init[1], init[2], init[3]};
            try {
                if (sim_out.empty()) {
                    cli::cmd_simulate(sim, std::cout);
                } else {
                    std::ofstream out(sim_out);
                    if (!out) throw ConfigError(fmt::format("cannot write '{}'", sim_out));
                    cli::cmd_simulate(sim, out);
                }
            } catch (const DomainError& e) {
                throw ConfigError(e.what());
            }
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
