#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

using l0sign::cli::Settings;

struct Flag {
    const char* name;
    const char* help;
};

constexpr Flag kFlags[] = {
    {"data", "dataset file (label idx[:val] ...)"},
    {"out", "output directory"},
    {"seed", "seed for split, initialization and gate noise"},
    {"lambda1", "L0 penalty weight"},
    {"lambda2", "interaction L2 weight"},
    {"epochs", "training epochs"},
    {"batch", "minibatch size"},
    {"mode", "l0sign, sign-complete or sign-fixed"},
    {"ratios", "comma separated edge ratios for ablate"},
    {"threshold", "gate threshold for predicted edges"},
    {"checkpoint", "checkpoint written by train"},
    {"edges", "edge file for sign-fixed ('i j' per line)"},
    {"truth", "ground_truth.json for edge recovery scoring"},
};

struct Command {
    CLI::App* app;
    int (*run)(const Settings&, std::ostream&);
    std::map<std::string, std::string> flags;
    std::vector<std::string> extra;
    std::string config;
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"L0-SIGN: feature interaction detection with L0 edge gates"};
    app.require_subcommand(1);

    const std::pair<const char*, int (*)(const Settings&, std::ostream&)> table[] = {
        {"synth", l0sign::cli::cmd_synth},   {"train", l0sign::cli::cmd_train},
        {"eval", l0sign::cli::cmd_eval},     {"ablate", l0sign::cli::cmd_ablate},
        {"explain", l0sign::cli::cmd_explain}, {"gradcheck", l0sign::cli::cmd_gradcheck},
    };
    std::vector<Command> commands;
    commands.reserve(std::size(table));
    for (const auto& [name, fn] : table) {
        auto& c = commands.emplace_back(Command{app.add_subcommand(name), fn, {}, {}, {}});
        c.app->add_option("--config", c.config, "key=value settings file (flags take precedence)");
        for (const auto& f : kFlags) c.app->add_option(std::string("--") + f.name, c.flags[f.name], f.help);
        c.app->add_option("--set", c.extra, "any other setting as key=value");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    for (auto& c : commands) {
        if (!c.app->parsed()) continue;
        try {
            Settings settings;
            if (!c.config.empty()) settings.merge_file(c.config);
            Settings flags;
            for (const auto& kv : c.extra) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) throw l0sign::Error("--set expects key=value, got '" + kv + "'");
                flags.set(kv.substr(0, eq), kv.substr(eq + 1));
            }
            for (const auto& f : kFlags) {
                if (c.app->count(std::string("--") + f.name)) flags.set(f.name, c.flags[f.name]);
            }
            settings.overlay(flags);
            return c.run(settings, std::cout);
        } catch (const std::exception& e) {
            std::cerr << "l0sign " << c.app->get_name() << ": " << e.what() << '\n';
            return 2;
        }
    }
    return 2;
}
