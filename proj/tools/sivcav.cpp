// sivcav: run, validate and fit SiV/cavity experiment protocols.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "sivcav/config.hpp"
#include "sivcav/fitting.hpp"
#include "sivcav/protocols.hpp"

namespace {

using namespace sivcav;

sivcav::Spectrum read_csv(const std::string& path, const std::string& column)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open data file: " + path);
    std::string line;
    std::vector<std::string> header;
    std::size_t col = 1;
    Spectrum s;
    std::size_t lineno = 0;
    auto split = [](const std::string& l) {
        std::vector<std::string> out;
        std::stringstream ss(l);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(cell);
        return out;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto cells = split(line);
        if (header.empty() && s.x.empty()) {
            try {
                std::size_t used = 0;
                std::stod(cells.at(0), &used);
            } catch (const std::exception&) {
                header = cells;
                if (!column.empty()) {
                    const auto it = std::find(header.begin(), header.end(), column);
                    if (it == header.end()) throw InvalidParameter(path + ": no column named '" + column + "'");
                    col = static_cast<std::size_t>(it - header.begin());
                }
                continue;
            }
        }
        if (cells.size() <= col) throw InvalidParameter(path + ":" + std::to_string(lineno) + ": too few columns");
        try {
            s.x.push_back(std::stod(cells[0]));
            s.y.push_back(std::stod(cells[col]));
        } catch (const std::exception&) {
            throw InvalidParameter(path + ":" + std::to_string(lineno) + ": not a number");
        }
    }
    if (s.x.empty()) throw InvalidParameter(path + ": no data rows");
    return s;
}

fitting::FitResult fit_model(const std::string& model, const Spectrum& s)
{
    if (model == "lorentzian") return fitting::fit_lorentzian(s);
    if (model == "cpt_dip") return fitting::fit_cpt_dip(s);
    if (model == "exp_decay") return fitting::fit_exponential(s, fitting::ExpKind::decay);
    if (model == "exp_recovery") return fitting::fit_exponential(s, fitting::ExpKind::recovery);
    if (model == "saturation") return fitting::fit_saturation(s);
    // linear: closed-form start, then the common solver for the covariance
    const double x0 = s.x.front(), x1 = s.x.back();
    Eigen::VectorXd guess(2);
    guess << (s.y.back() - s.y.front()) / (x1 - x0), s.y.front() - (s.y.back() - s.y.front()) / (x1 - x0) * x0;
    return fitting::lm_fit(fitting::linear_model(), s, guess, fitting::Bounds::unbounded(2));
}

config::ProtocolConfig load(const std::string& path, bool verbose)
{
    if (verbose) std::cerr << "loading " << path << '\n';
    if (!std::filesystem::exists(path)) throw Error("config file not found: " + path);
    return config::load_config(path);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"SiV spin-photon interface modelling toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, model, csv_path, column;
    std::int64_t seed = -1;
    bool verbose = false, echo = false;

    auto* run = app.add_subcommand("run", "Run the protocol described by a config file");
    run->add_option("config", config_path, "Protocol config file")->required();
    run->add_option("--out", out_dir, "Output root directory (default: the config's output)");
    run->add_option("--seed", seed, "Override the noise seed")->check(CLI::NonNegativeNumber);
    run->add_flag("--verbose", verbose, "Log progress to standard error");

    auto* validate = app.add_subcommand("validate", "Validate a config file");
    validate->add_option("config", config_path, "Protocol config file")->required();
    validate->add_flag("--echo", echo, "Print the resolved config to standard output");

    auto* fit = app.add_subcommand("fit", "Fit a shipped model to CSV data (x in column 1)");
    fit->add_option("model", model, "Model name")
        ->required()
        ->check(CLI::IsMember({"lorentzian", "cpt_dip", "exp_decay", "exp_recovery", "saturation", "linear"}));
    fit->add_option("csv", csv_path, "CSV file")->required();
    fit->add_option("--column", column, "y column name (default: second column)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*run) {
            config::ProtocolConfig cfg = load(config_path, verbose);
            if (seed >= 0) {
                cfg.seed = static_cast<std::uint64_t>(seed);
                cfg.canonical["seed"] = cfg.seed;
            }
            const std::filesystem::path root = out_dir.empty() ? std::filesystem::path(cfg.output) : std::filesystem::path(out_dir);
            if (verbose) std::cerr << "running " << cfg.protocol << " (seed " << cfg.seed << ")\n";
            const auto manifest = protocols::run_protocol(cfg, root);
            if (verbose) std::cerr << "wrote " << manifest.directory.string() << '\n';
            std::cout << manifest.directory.string() << '\n';
        } else if (*validate) {
            const config::ProtocolConfig cfg = load(config_path, false);
            if (echo) std::cout << config::echo(cfg) << '\n';
            std::cerr << config_path << ": valid " << cfg.protocol << " config\n";
        } else if (*fit) {
            const Spectrum s = read_csv(csv_path, column);
            std::cout << fitting::to_json(fit_model(model, s)).dump(2) << '\n';
        }
    } catch (const InvalidParameter& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
