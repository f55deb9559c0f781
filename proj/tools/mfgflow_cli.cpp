#include "mfgflow/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"mfgflow: crowd-motion mean-field solver and density operator"};
    std::string config_path;
    std::string out, checkpoint, family, device;
    long long seed = -1;
    app.add_option("--config", config_path, "run configuration (JSON)")->required();
    app.add_option("--seed", seed, "override the configured seed");
    app.add_option("--out", out, "override the output directory");
    app.add_option("--checkpoint", checkpoint, "override the command's primary checkpoint");
    app.add_option("--family", family, "override the scenario family");
    app.add_option("--device", device, "compute device (cpu)");
    CLI11_PARSE(app, argc, argv);

    using namespace mfgflow;
    try {
        RunConfig cfg = load_run_config(config_path);
        CliOverrides ov;
        if (seed >= 0) ov.seed = static_cast<std::uint64_t>(seed);
        if (!out.empty()) ov.out = out;
        if (!checkpoint.empty()) ov.checkpoint = checkpoint;
        if (!family.empty()) ov.family = family;
        if (!device.empty()) ov.device = device;
        apply_overrides(cfg, ov);
        return run(cfg);
    } catch (const InvalidInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kSchemaViolation;
    } catch (const RuntimeFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoFailure;
    }
}
